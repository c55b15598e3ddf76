//! Restarted GMRES(m) with modified Gram-Schmidt Arnoldi and a Givens-rotated
//! Hessenberg least-squares problem.
//!
//! Jacobi preconditioning is applied from the left, so the Arnoldi residual
//! estimate tracks ‖D⁻¹(b - Ax)‖. A solve only counts as converged once both
//! that quantity and the true residual ‖b - Ax‖ are below tolerance relative
//! to their right-hand sides.

use super::{norm2, Preconditioner, SolveStats, SolverConfig, SolverError};
use crate::sparse::CsrMatrix;

/// A restart cycle that shrinks the residual by less than this fraction counts
/// towards stagnation.
const STAGNATION_REDUCTION: f64 = 1e-3;
const STAGNATION_CYCLES: usize = 3;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

struct Operator<'a> {
    a: &'a CsrMatrix,
    /// Inverse diagonal for left Jacobi scaling.
    dinv: Option<Vec<f64>>,
}

impl Operator<'_> {
    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<(), SolverError> {
        self.a.spmv_into(x, y)?;
        self.scale(y);
        Ok(())
    }

    fn scale(&self, y: &mut [f64]) {
        if let Some(d) = &self.dinv {
            for (yi, di) in y.iter_mut().zip(d) {
                *yi *= di;
            }
        }
    }
}

/// Solves `A x = b` from `x0`.
///
/// Returns `Ok` with `stats.converged == false` when the iteration budget is
/// exhausted or stagnation is detected; a non-recoverable Arnoldi breakdown is
/// an error.
pub fn gmres(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    config: &SolverConfig,
) -> Result<(Vec<f64>, SolveStats), SolverError> {
    config.validate()?;
    if !a.is_square() {
        return Err(SolverError::NotSquare {
            nrows: a.nrows,
            ncols: a.ncols,
        });
    }
    let n = a.nrows;
    for len in [b.len(), x0.len()] {
        if len != n {
            return Err(SolverError::DimensionMismatch {
                expected: n,
                found: len,
            });
        }
    }

    let mut stats = SolveStats::default();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        stats.converged = true;
        return Ok((vec![0.0; n], stats));
    }

    let op = Operator {
        a,
        dinv: match config.precondition {
            Preconditioner::None => None,
            Preconditioner::Jacobi => Some(
                a.diagonal()
                    .iter()
                    .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
                    .collect(),
            ),
        },
    };
    let mut bp = b.to_vec();
    op.scale(&mut bp);
    let bpnorm = norm2(&bp);

    let m = config.restart_m.min(n);
    let tol = config.tolerance;
    let max_iters = config.max_total_iters.unwrap_or(10 * n);

    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    let mut basis: Vec<Vec<f64>> = (0..=m).map(|_| vec![0.0; n]).collect();
    // Column-major Hessenberg: h[k] holds column k, length k + 2.
    let mut h: Vec<Vec<f64>> = (0..m).map(|k| vec![0.0; k + 2]).collect();
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    let mut w = vec![0.0; n];

    let mut cycles = 0usize;
    let mut slow_cycles = 0usize;
    let mut prev_cycle_residual: Option<f64> = None;

    loop {
        // True and preconditioned residuals at the cycle start.
        a.spmv_into(&x, &mut r)?;
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let true_rel = norm2(&r) / bnorm;
        op.scale(&mut r);
        let beta = norm2(&r);
        let prec_rel = beta / bpnorm;
        stats.final_relative_residual = true_rel;

        if true_rel <= tol && prec_rel <= tol {
            stats.converged = true;
            break;
        }
        if let Some(prev) = prev_cycle_residual {
            if prev - prec_rel < STAGNATION_REDUCTION * prev {
                slow_cycles += 1;
            } else {
                slow_cycles = 0;
            }
            if slow_cycles >= STAGNATION_CYCLES {
                stats.stagnated = true;
                break;
            }
        }
        if stats.iterations >= max_iters {
            break;
        }
        prev_cycle_residual = Some(prec_rel);

        for (vi, ri) in basis[0].iter_mut().zip(&r) {
            *vi = ri / beta;
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut history = vec![prec_rel];
        let mut k_used = 0;
        let mut breakdown = false;

        for k in 0..m {
            op.apply(&basis[k], &mut w)?;
            let w_norm0 = norm2(&w);
            let col = &mut h[k];
            for (i, v) in basis.iter().enumerate().take(k + 1) {
                col[i] = dot(&w, v);
                axpy(-col[i], v, &mut w);
            }
            col[k + 1] = norm2(&w);
            let h_next = col[k + 1];

            for i in 0..k {
                let (hi, hi1) = (col[i], col[i + 1]);
                col[i] = cs[i] * hi + sn[i] * hi1;
                col[i + 1] = -sn[i] * hi + cs[i] * hi1;
            }
            let denom = col[k].hypot(col[k + 1]);
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = col[k] / denom;
                sn[k] = col[k + 1] / denom;
            }
            col[k] = denom;
            col[k + 1] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];

            stats.iterations += 1;
            k_used = k + 1;
            let est = g[k + 1].abs() / bpnorm;
            history.push(est);

            if h_next <= f64::EPSILON * w_norm0 {
                breakdown = true;
                break;
            }
            if est <= tol || stats.iterations >= max_iters {
                break;
            }
            for (vi, wi) in basis[k + 1].iter_mut().zip(&w) {
                *vi = wi / h_next;
            }
        }

        // Back-substitution on the triangularized Hessenberg.
        let mut y = g[..k_used].to_vec();
        for i in (0..k_used).rev() {
            for j in i + 1..k_used {
                y[i] -= h[j][i] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { y[i] / h[i][i] } else { 0.0 };
        }
        for (yi, v) in y.iter().zip(&basis) {
            axpy(*yi, v, &mut x);
        }
        stats.residual_history.push(history);
        cycles += 1;

        if breakdown {
            a.spmv_into(&x, &mut r)?;
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            let true_rel = norm2(&r) / bnorm;
            op.scale(&mut r);
            let prec_rel = norm2(&r) / bpnorm;
            stats.final_relative_residual = true_rel;
            if true_rel <= tol && prec_rel <= tol {
                stats.converged = true;
                break;
            }
            return Err(SolverError::Breakdown {
                iteration: stats.iterations,
                residual: true_rel,
            });
        }
    }

    stats.restarts = cycles.saturating_sub(1);
    Ok((x, stats))
}

#[cfg(test)]
mod tests {
    use super::super::test_systems::*;
    use super::super::{dense_lu_solve, relative_residual};
    use super::*;
    use crate::sparse::CsrMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plain(m: usize, tol: f64) -> SolverConfig {
        SolverConfig {
            precondition: Preconditioner::None,
            ..SolverConfig::gmres(m, tol)
        }
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let b = vec![1.0, -2.0, 3.5, 0.25];
        let (x, stats) = gmres(&CsrMatrix::identity(4), &b, &[0.0; 4], &plain(30, 1e-10)).unwrap();
        assert_eq!(x, b);
        assert_eq!(stats.iterations, 1);
        assert!(stats.converged);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let (x, stats) = gmres(&spd(5, 1.0), &[0.0; 5], &[1.0; 5], &plain(3, 1e-10)).unwrap();
        assert_eq!(x, vec![0.0; 5]);
        assert!(stats.converged);
    }

    #[test]
    fn spd_residual_is_verified_independently() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 50;
        let a = spd(n, 0.1);
        let b = random_vec(n, &mut rng);
        for config in [plain(10, 1e-10), SolverConfig::gmres(10, 1e-10)] {
            let (x, stats) = gmres(&a, &b, &vec![0.0; n], &config).unwrap();
            assert!(stats.converged);
            let r = relative_residual(&a, &x, &b).unwrap();
            assert!(r <= 1e-10, "residual {r}");
            assert_eq!(r, stats.final_relative_residual);
        }
    }

    #[test]
    fn looser_tolerance_is_never_more_accurate() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let n = 80;
        let a = diag_dominant(n, 6, &mut rng);
        let b = random_vec(n, &mut rng);
        let truth = dense_lu_solve(&a, &b).unwrap();
        let err = |tol: f64| {
            let (x, _) = gmres(&a, &b, &vec![0.0; n], &plain(20, tol)).unwrap();
            norm2(&x.iter().zip(&truth).map(|(u, v)| u - v).collect::<Vec<_>>())
        };
        assert!(err(1e-6) >= err(1e-10) - 1e-14);
    }

    #[test]
    fn residual_estimates_decrease_within_cycles() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let n = 150;
        let a = diag_dominant(n, 8, &mut rng);
        let b = random_vec(n, &mut rng);
        let (_, stats) = gmres(&a, &b, &vec![0.0; n], &SolverConfig::gmres(5, 1e-12)).unwrap();
        assert!(stats.restarts > 0);
        for cycle in &stats.residual_history {
            assert!(cycle.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let a = spd(200, 0.0);
        let b = vec![1.0; 200];
        let config = SolverConfig {
            max_total_iters: Some(7),
            ..plain(3, 1e-12)
        };
        let (_, stats) = gmres(&a, &b, &[0.0; 200], &config).unwrap();
        assert!(!stats.converged);
        assert_eq!(stats.iterations, 7);
        assert!(stats.final_relative_residual > 1e-12);
    }

    #[test]
    fn stagnation_is_flagged() {
        // A cyclic shift: GMRES(1) makes no progress on it.
        let n = 8;
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            dense[i][(i + 1) % n] = 1.0;
        }
        let a = CsrMatrix::from_dense(&dense);
        let mut b = vec![0.0; n];
        b[0] = 1.0;
        let (_, stats) = gmres(&a, &b, &vec![0.0; n], &plain(1, 1e-10)).unwrap();
        assert!(stats.stagnated);
        assert!(!stats.converged);
        assert!(stats.final_relative_residual > 1e-10);
    }

    #[test]
    fn warm_start_at_solution_needs_no_iterations() {
        let a = spd(10, 1.0);
        let x_true: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let b = a.spmv(&x_true).unwrap();
        let (x, stats) = gmres(&a, &b, &x_true, &plain(5, 1e-10)).unwrap();
        assert_eq!(x, x_true);
        assert_eq!(stats.iterations, 0);
    }

    #[test]
    fn deterministic_across_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let a = diag_dominant(90, 5, &mut rng);
        let b = random_vec(90, &mut rng);
        let (x1, s1) = gmres(&a, &b, &[0.0; 90], &SolverConfig::gmres(7, 1e-10)).unwrap();
        let (x2, s2) = gmres(&a, &b, &[0.0; 90], &SolverConfig::gmres(7, 1e-10)).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(s1.iterations, s2.iterations);
    }

    #[test]
    fn rejects_bad_lengths() {
        let a = CsrMatrix::identity(3);
        assert!(matches!(
            gmres(&a, &[1.0; 3], &[0.0; 2], &plain(2, 1e-8)),
            Err(SolverError::DimensionMismatch { expected: 3, found: 2 })
        ));
    }
}
