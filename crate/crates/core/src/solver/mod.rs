//! Linear-system backends behind one `solve` contract.
//!
//! * [`Backend::SparseQr`]: row-oriented Givens QR with an optional RCM column
//!   ordering that a [`SolverSession`] can reuse across calls.
//! * [`Backend::Gmres`]: restarted GMRES(m), modified Gram-Schmidt, optional
//!   Jacobi preconditioning.
//! * [`Backend::DenseLu`]: partial-pivoting LU on a dense copy; the reference.

mod dense;
mod gmres;
mod qr;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::sparse::{CsrMatrix, SparseError};
use crate::trace::{Region, Tracer};

pub use dense::{dense_lu_solve, dense_lu_solve_capped};
pub use gmres::gmres;
pub use qr::{qr_factorize, qr_solve, Givens, QrFactors};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_RESTART: usize = 30;
pub const DEFAULT_DENSE_CAP: usize = 3000;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("matrix is singular: zero pivot at column {pivot}")]
    Singular { pivot: usize },
    #[error("cached factorization rejected: pattern fingerprint {found:#x} does not match {expected:#x}")]
    ReuseRejected { expected: u64, found: u64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix must be square, got {nrows}x{ncols}")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("GMRES breakdown at iteration {iteration} with relative residual {residual:e}")]
    Breakdown { iteration: usize, residual: f64 },
    #[error("GMRES did not converge: relative residual {residual:e} after {iterations} iterations{}", if *.stagnated { " (stagnated)" } else { "" })]
    NotConverged {
        residual: f64,
        iterations: usize,
        stagnated: bool,
    },
    #[error("dense solve of size {n} exceeds the cap of {cap}")]
    SizeCap { n: usize, cap: usize },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    SparseQr,
    Gmres,
    DenseLu,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::SparseQr => "qr",
            Backend::Gmres => "gmres",
            Backend::DenseLu => "dense",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "qr" | "sparseqr" => Ok(Backend::SparseQr),
            "gmres" => Ok(Backend::Gmres),
            "dense" | "lu" | "denselu" => Ok(Backend::DenseLu),
            _ => Err(format!("unknown backend '{s}' (expected qr, gmres or dense)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    Jacobi,
}

impl FromStr for Preconditioner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Preconditioner::None),
            "jacobi" => Ok(Preconditioner::Jacobi),
            _ => Err(format!("unknown preconditioner '{s}' (expected none or jacobi)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ordering {
    None,
    Rcm,
}

impl FromStr for Ordering {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Ordering::None),
            "rcm" => Ok(Ordering::Rcm),
            _ => Err(format!("unknown ordering '{s}' (expected none or rcm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub backend: Backend,
    /// GMRES restart length.
    pub restart_m: usize,
    /// Relative residual bound ‖b - Ax‖₂ / ‖b‖₂.
    pub tolerance: f64,
    /// GMRES iteration budget; `None` means 10·n.
    pub max_total_iters: Option<usize>,
    pub precondition: Preconditioner,
    /// Keep the QR column ordering and symbolic analysis between calls with
    /// an unchanged sparsity pattern.
    pub reuse_ordering: bool,
    pub ordering: Ordering,
    pub dense_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            backend: Backend::SparseQr,
            restart_m: DEFAULT_RESTART,
            tolerance: DEFAULT_TOLERANCE,
            max_total_iters: None,
            precondition: Preconditioner::Jacobi,
            reuse_ordering: false,
            ordering: Ordering::Rcm,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

impl SolverConfig {
    pub fn sparse_qr() -> Self {
        Self::default()
    }

    pub fn gmres(restart_m: usize, tolerance: f64) -> Self {
        Self {
            backend: Backend::Gmres,
            restart_m,
            tolerance,
            ..Self::default()
        }
    }

    pub fn dense_lu() -> Self {
        Self {
            backend: Backend::DenseLu,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if self.restart_m < 1 {
            return Err(SolverError::InvalidConfig("restart_m must be at least 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(SolverError::InvalidConfig(format!(
                "tolerance {} must lie in (0, 1)",
                self.tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    /// Total GMRES inner iterations; 0 for direct backends.
    pub iterations: usize,
    pub restarts: usize,
    pub final_relative_residual: f64,
    pub stagnated: bool,
    pub converged: bool,
    /// Stored entries of R (SparseQR) or n² (DenseLU).
    pub factor_nnz: usize,
    pub wall_ns: u64,
    /// Time spent in ordering + symbolic analysis; 0 when reused.
    pub ordering_ns: u64,
    pub ordering_computed: bool,
    /// Per restart cycle, the relative residual estimate after each inner
    /// iteration (first entry is the cycle's starting residual).
    pub residual_history: Vec<Vec<f64>>,
}

/// Exclusive per-simulation solver state: cached QR analysis plus counters.
#[derive(Debug, Default)]
pub struct SolverSession {
    cached: Option<QrFactors>,
    pub tracer: Tracer,
    /// Trace context of the next solve.
    pub step: u64,
    pub corrector_iter: i64,
    ordering_computations: usize,
    solves: usize,
    total_iterations: usize,
}

impl SolverSession {
    pub fn new(tracer: Tracer) -> Self {
        Self {
            tracer,
            ..Self::default()
        }
    }

    pub fn ordering_computations(&self) -> usize {
        self.ordering_computations
    }

    pub fn solves(&self) -> usize {
        self.solves
    }

    pub fn total_iterations(&self) -> usize {
        self.total_iterations
    }

    pub fn cached_factors(&self) -> Option<&QrFactors> {
        self.cached.as_ref()
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// ‖b - A x‖₂ / ‖b‖₂, or ‖A x‖₂ when b = 0.
pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Result<f64, SolverError> {
    let ax = a.spmv(x)?;
    let r: f64 = ax.iter().zip(b).map(|(u, v)| (v - u) * (v - u)).sum::<f64>().sqrt();
    let bn = norm2(b);
    Ok(if bn > 0.0 { r / bn } else { r })
}

fn check_system(a: &CsrMatrix, b: &[f64]) -> Result<(), SolverError> {
    if !a.is_square() {
        return Err(SolverError::NotSquare {
            nrows: a.nrows,
            ncols: a.ncols,
        });
    }
    if b.len() != a.nrows {
        return Err(SolverError::DimensionMismatch {
            expected: a.nrows,
            found: b.len(),
        });
    }
    Ok(())
}

/// Solves `A x = b` with the configured backend.
///
/// `x0` seeds GMRES and is ignored by the direct backends. With SparseQR and
/// `reuse_ordering`, the session's cached ordering is used whenever the
/// pattern fingerprint is unchanged.
pub fn solve(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    config: &SolverConfig,
    session: &mut SolverSession,
) -> Result<(Vec<f64>, SolveStats), SolverError> {
    config.validate()?;
    check_system(a, b)?;
    let start = Instant::now();
    let tracer = session.tracer.clone();
    let (step, iter) = (session.step, session.corrector_iter);
    let _solve_scope = tracer.scope(Region::Solve, step, iter);

    let (x, mut stats) = match config.backend {
        Backend::DenseLu => {
            let x = dense_lu_solve_capped(a, b, config.dense_cap)?;
            let stats = SolveStats {
                converged: true,
                factor_nnz: a.nrows * a.nrows,
                ..SolveStats::default()
            };
            (x, stats)
        }
        Backend::Gmres => {
            let (x, stats) = gmres(a, b, x0, config)?;
            if !stats.converged {
                return Err(SolverError::NotConverged {
                    residual: stats.final_relative_residual,
                    iterations: stats.iterations,
                    stagnated: stats.stagnated,
                });
            }
            (x, stats)
        }
        Backend::SparseQr => {
            let reuse = if config.reuse_ordering {
                session
                    .cached
                    .take()
                    .filter(|f| f.pattern_fingerprint == a.pattern_fingerprint())
            } else {
                None
            };
            let factors = {
                let _ordering_scope = match reuse {
                    None => Some(tracer.scope(Region::Ordering, step, iter)),
                    Some(_) => None,
                };
                qr_factorize(a, config, reuse.as_ref())?
            };
            let x = qr_solve(&factors, b)?;
            let stats = SolveStats {
                converged: true,
                factor_nnz: factors.r.nnz(),
                ordering_ns: factors.ordering_ns,
                ordering_computed: reuse.is_none(),
                ..SolveStats::default()
            };
            if config.reuse_ordering {
                session.cached = Some(factors);
            }
            (x, stats)
        }
    };

    if config.backend != Backend::Gmres {
        stats.final_relative_residual = relative_residual(a, &x, b)?;
    }
    if stats.ordering_computed {
        session.ordering_computations += 1;
    }
    session.solves += 1;
    session.total_iterations += stats.iterations;
    stats.wall_ns = start.elapsed().as_nanos() as u64;
    Ok((x, stats))
}

#[cfg(test)]
pub(crate) mod test_systems {
    use crate::sparse::{CooMatrix, CsrMatrix};
    use rand::Rng;

    /// Random sparse, strictly diagonally dominant, nonsymmetric matrix.
    pub fn diag_dominant(n: usize, per_row: usize, rng: &mut impl Rng) -> CsrMatrix {
        let mut coo = CooMatrix::new(n, n);
        let mut rowsum = vec![0.0f64; n];
        for i in 0..n {
            for _ in 0..per_row {
                let j = rng.gen_range(0..n);
                if j != i {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    rowsum[i] += v.abs();
                    coo.push(i, j, v).unwrap();
                }
            }
        }
        for (i, s) in rowsum.iter().enumerate() {
            coo.push(i, i, s + 1.0 + rng.gen::<f64>()).unwrap();
        }
        coo.to_csr()
    }

    /// 1-D Laplacian plus a diagonal shift: symmetric positive definite.
    pub fn spd(n: usize, shift: f64) -> CsrMatrix {
        let mut coo = CooMatrix::new(n, n);
        for i in 0..n {
            coo.push(i, i, 2.0 + shift).unwrap();
            if i + 1 < n {
                coo.push(i, i + 1, -1.0).unwrap();
                coo.push(i + 1, i, -1.0).unwrap();
            }
        }
        coo.to_csr()
    }

    pub fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::test_systems::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let mut c = SolverConfig::gmres(0, 1e-8);
        assert!(c.validate().is_err());
        c.restart_m = 5;
        c.tolerance = 1.0;
        assert!(c.validate().is_err());
        c.tolerance = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn parse_enums() {
        assert_eq!("QR".parse::<Backend>().unwrap(), Backend::SparseQr);
        assert_eq!("dense".parse::<Backend>().unwrap(), Backend::DenseLu);
        assert!("cholesky".parse::<Backend>().is_err());
        assert_eq!("rcm".parse::<Ordering>().unwrap(), Ordering::Rcm);
        assert_eq!("none".parse::<Preconditioner>().unwrap(), Preconditioner::None);
    }

    #[test]
    fn reuse_skips_ordering_and_keeps_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = diag_dominant(60, 4, &mut rng);
        let b = random_vec(60, &mut rng);
        let config = SolverConfig {
            reuse_ordering: true,
            ..SolverConfig::sparse_qr()
        };
        let mut session = SolverSession::new(Tracer::enabled());
        let (x1, s1) = solve(&a, &b, &[], &config, &mut session).unwrap();
        let perm1 = session.cached_factors().unwrap().col_perm.clone();
        let (x2, s2) = solve(&a, &b, &[], &config, &mut session).unwrap();
        let perm2 = session.cached_factors().unwrap().col_perm.clone();
        assert!(s1.ordering_computed);
        assert!(!s2.ordering_computed);
        assert_eq!(s2.ordering_ns, 0);
        assert_eq!(perm1, perm2);
        assert_eq!(x1, x2);
        assert_eq!(session.ordering_computations(), 1);
        assert_eq!(session.tracer.count(Region::Ordering), 1);
        assert_eq!(session.tracer.count(Region::Solve), 2);
    }

    #[test]
    fn changed_pattern_recomputes_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = diag_dominant(30, 3, &mut rng);
        let c = diag_dominant(30, 5, &mut rng);
        let b = random_vec(30, &mut rng);
        let config = SolverConfig {
            reuse_ordering: true,
            ..SolverConfig::sparse_qr()
        };
        let mut session = SolverSession::default();
        solve(&a, &b, &[], &config, &mut session).unwrap();
        let (_, s) = solve(&c, &b, &[], &config, &mut session).unwrap();
        assert!(s.ordering_computed);
        assert_eq!(session.ordering_computations(), 2);
    }

    #[test]
    fn dense_cap_is_enforced() {
        let a = CsrMatrix::identity(10);
        let config = SolverConfig {
            dense_cap: 5,
            ..SolverConfig::dense_lu()
        };
        let err = solve(&a, &[1.0; 10], &[0.0; 10], &config, &mut SolverSession::default());
        assert!(matches!(err, Err(SolverError::SizeCap { n: 10, cap: 5 })));
    }

    #[test]
    fn gmres_and_qr_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 120;
        let a = diag_dominant(n, 5, &mut rng);
        let b = random_vec(n, &mut rng);
        let mut session = SolverSession::default();
        let (xq, sq) = solve(&a, &b, &vec![0.0; n], &SolverConfig::sparse_qr(), &mut session).unwrap();
        let (xg, sg) = solve(&a, &b, &vec![0.0; n], &SolverConfig::gmres(30, 1e-10), &mut session).unwrap();
        assert!(max_abs_diff(&xq, &xg) <= 1e-8);
        assert!(sq.final_relative_residual <= 1e-10);
        assert!(sg.final_relative_residual <= 1e-10);
        assert!(sg.iterations > 0);
        assert_eq!(session.solves(), 2);
    }

    #[test]
    fn residual_contract_holds_for_every_backend() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [5, 17, 64] {
            let a = diag_dominant(n, 3, &mut rng);
            let b = random_vec(n, &mut rng);
            for config in [
                SolverConfig::sparse_qr(),
                SolverConfig::gmres(10, 1e-8),
                SolverConfig::dense_lu(),
            ] {
                let (x, stats) = solve(&a, &b, &vec![0.0; n], &config, &mut SolverSession::default()).unwrap();
                let r = relative_residual(&a, &x, &b).unwrap();
                assert!(r <= config.tolerance.max(1e-10) * 10.0, "{:?} {r}", config.backend);
                assert!((r - stats.final_relative_residual).abs() <= 1e-12);
            }
        }
    }
}
