//! Per-step PSNR between two runs and planar slices of nodal fields.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::mesh::TetMesh;
use crate::results::ResultFile;

/// Runs whose step times differ by more than this are flagged.
pub const TIME_MATCH_TOL: f64 = 1e-9;
/// Barycentric slack when locating sample points.
const LOCATE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("field lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty field")]
    EmptyField,
    #[error("MAX(A) must be positive, got {0}")]
    NonPositiveMax(f64),
    #[error("node counts differ: reference {reference}, test {test}")]
    NodeCountMismatch { reference: usize, test: usize },
    #[error("reference run has no steps")]
    NoSteps,
    #[error("invalid plane '{0}', expected <x|y|z>=<value>")]
    BadPlane(String),
    #[error("invalid grid {0}")]
    BadGrid(String),
    #[error("plane {0} does not intersect the mesh")]
    EmptyIntersection(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `20·log10(max_a / √MSE)`; `+∞` when the fields are identical.
pub fn psnr_step(reference: &[f64], test: &[f64], max_a: f64) -> Result<f64, MetricsError> {
    if reference.len() != test.len() {
        return Err(MetricsError::LengthMismatch(reference.len(), test.len()));
    }
    if reference.is_empty() {
        return Err(MetricsError::EmptyField);
    }
    if !(max_a > 0.0) {
        return Err(MetricsError::NonPositiveMax(max_a));
    }
    let sse = neumaier_sum(reference.iter().zip(test).map(|(a, b)| (a - b) * (a - b)));
    let mse = sse / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (max_a / mse.sqrt()).log10())
}

/// Compensated sum; a constant-offset field yields MSE = amplitude² exactly.
fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in values {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
    }
    sum + comp
}

/// PSNR of a field against itself plus a constant offset of `amplitude`.
pub fn control_psnr(max_a: f64, amplitude: f64) -> f64 {
    20.0 * (max_a / amplitude).log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsnrPoint {
    pub step: u32,
    pub time: f64,
    pub psnr_t: f64,
    pub psnr_v: f64,
    /// `(T, V)` control values, one per amplitude of the series.
    pub controls: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsnrSeries {
    pub points: Vec<PsnrPoint>,
    pub control_amplitudes: Vec<f64>,
    pub max_t: f64,
    pub max_v: f64,
    pub reference_steps: usize,
    pub test_steps: usize,
    /// Reference step numbers whose test counterpart has a different time.
    pub time_mismatches: Vec<u32>,
}

impl PsnrSeries {
    pub fn step_count_mismatch(&self) -> bool {
        self.reference_steps != self.test_steps
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,time,psnr_T,psnr_V");
        for a in &self.control_amplitudes {
            let _ = write!(s, ",control_{a:e}_T,control_{a:e}_V");
        }
        s.push('\n');
        for p in &self.points {
            let _ = write!(
                s,
                "{},{},{},{}",
                p.step,
                fmt_f64(p.time),
                fmt_f64(p.psnr_t),
                fmt_f64(p.psnr_v)
            );
            for (t, v) in &p.controls {
                let _ = write!(s, ",{},{}", fmt_f64(*t), fmt_f64(*v));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// 17 significant digits; infinities as `inf` / `-inf`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

fn global_max<'a>(fields: impl Iterator<Item = &'a Vec<f64>>) -> f64 {
    fields.flatten().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// PSNR per step between two runs, aligned by step index over the overlap.
///
/// MAX(A) is the largest value of each field over every step of `reference`.
pub fn psnr_series(
    reference: &ResultFile,
    test: &ResultFile,
    noise_controls: &[f64],
) -> Result<PsnrSeries, MetricsError> {
    if reference.node_count != test.node_count {
        return Err(MetricsError::NodeCountMismatch {
            reference: reference.node_count,
            test: test.node_count,
        });
    }
    if reference.steps.is_empty() {
        return Err(MetricsError::NoSteps);
    }
    let max_t = global_max(reference.steps.iter().map(|s| &s.temperature));
    let max_v = global_max(reference.steps.iter().map(|s| &s.voltage));
    let controls: Vec<(f64, f64)> = noise_controls
        .iter()
        .map(|&a| (control_psnr(max_t, a), control_psnr(max_v, a)))
        .collect();

    let mut points = Vec::new();
    let mut time_mismatches = Vec::new();
    for (r, t) in reference.steps.iter().zip(&test.steps) {
        if (r.time - t.time).abs() > TIME_MATCH_TOL {
            time_mismatches.push(r.step);
        }
        points.push(PsnrPoint {
            step: r.step,
            time: r.time,
            psnr_t: psnr_step(&r.temperature, &t.temperature, max_t)?,
            psnr_v: psnr_step(&r.voltage, &t.voltage, max_v)?,
            controls: controls.clone(),
        });
    }
    Ok(PsnrSeries {
        points,
        control_amplitudes: noise_controls.to_vec(),
        max_t,
        max_v,
        reference_steps: reference.steps.len(),
        test_steps: test.steps.len(),
        time_mismatches,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["x", "y", "z"][self.index()]
    }

    /// The two in-plane axes, in coordinate order.
    fn others(self) -> (usize, usize) {
        match self {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub axis: Axis,
    pub value: f64,
}

impl FromStr for Plane {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MetricsError::BadPlane(s.to_string());
        let (axis, value) = s.split_once('=').ok_or_else(bad)?;
        let axis = match axis.trim().to_ascii_lowercase().as_str() {
            "x" => Axis::X,
            "y" => Axis::Y,
            "z" => Axis::Z,
            _ => return Err(bad()),
        };
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        if !value.is_finite() {
            return Err(bad());
        }
        Ok(Plane { axis, value })
    }
}

impl std::fmt::Display for Plane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}={}", self.axis.name(), self.value)
    }
}

/// Parses `NUxNV`.
pub fn parse_grid(s: &str) -> Result<(usize, usize), MetricsError> {
    let bad = || MetricsError::BadGrid(s.to_string());
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let nu = a.trim().parse().map_err(|_| bad())?;
    let nv = b.trim().parse().map_err(|_| bad())?;
    Ok((nu, nv))
}

/// Samples on a regular grid in a plane; index `j * nu + i` for `(u[i], v[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub plane: Plane,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// `None` outside the mesh.
    pub values: Vec<Option<f64>>,
    /// CSV column name of the sampled quantity.
    pub label: &'static str,
}

impl Slice {
    pub fn nu(&self) -> usize {
        self.u.len()
    }

    pub fn nv(&self) -> usize {
        self.v.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[j * self.nu() + i]
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("u,v,{}\n", self.label);
        for (j, v) in self.v.iter().enumerate() {
            for (i, u) in self.u.iter().enumerate() {
                let val = self.values[j * self.u.len() + i].map(fmt_f64).unwrap_or_default();
                let _ = writeln!(s, "{},{},{}", fmt_f64(*u), fmt_f64(*v), val);
            }
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Location of one sample: tet and barycentric weights.
type Hit = Option<(usize, [f64; 4])>;

struct Located {
    u: Vec<f64>,
    v: Vec<f64>,
    hits: Vec<Hit>,
}

fn barycentric(p: &[[f64; 3]; 4], x: [f64; 3]) -> Option<[f64; 4]> {
    let e: [[f64; 3]; 3] = std::array::from_fn(|r| std::array::from_fn(|c| p[r + 1][c] - p[0][c]));
    let d = [x[0] - p[0][0], x[1] - p[0][1], x[2] - p[0][2]];
    // Solve Eᵀ λ = d by Cramer's rule; columns of Eᵀ are the edge vectors.
    let det3 = |a: [f64; 3], b: [f64; 3], c: [f64; 3]| {
        a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0])
    };
    let det = det3(e[0], e[1], e[2]);
    if det == 0.0 {
        return None;
    }
    let l1 = det3(d, e[1], e[2]) / det;
    let l2 = det3(e[0], d, e[2]) / det;
    let l3 = det3(e[0], e[1], d) / det;
    Some([1.0 - l1 - l2 - l3, l1, l2, l3])
}

fn locate(mesh: &TetMesh, plane: Plane, grid: (usize, usize)) -> Result<Located, MetricsError> {
    let (nu, nv) = grid;
    if nu < 2 || nv < 2 {
        return Err(MetricsError::BadGrid(format!("{nu}x{nv}: need at least 2x2")));
    }
    let w = plane.axis.index();
    let (ua, va) = plane.axis.others();
    let bb = mesh.bounding_box();
    let span = (0..3).map(|a| bb.max[a] - bb.min[a]).fold(0.0, f64::max);
    let slack = LOCATE_TOL * span.max(1.0);

    // Tets crossing the plane, hashed by their in-plane bounding boxes.
    let mut crossing = Vec::new();
    for (t, _) in mesh.tets.iter().enumerate() {
        let p = mesh.tet_points(t);
        let lo = p.iter().map(|q| q[w]).fold(f64::INFINITY, f64::min);
        let hi = p.iter().map(|q| q[w]).fold(f64::NEG_INFINITY, f64::max);
        if lo - slack <= plane.value && plane.value <= hi + slack {
            crossing.push(t);
        }
    }
    if crossing.is_empty() {
        return Err(MetricsError::EmptyIntersection(plane.to_string()));
    }

    let axis_points = |a: usize, n: usize| -> Vec<f64> {
        let (lo, hi) = (bb.min[a], bb.max[a]);
        (0..n)
            .map(|k| {
                if k == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / (n - 1) as f64
                }
            })
            .collect()
    };
    let u = axis_points(ua, nu);
    let v = axis_points(va, nv);

    let cells = (crossing.len() as f64).sqrt().ceil().max(1.0) as usize;
    let cell_u = (bb.max[ua] - bb.min[ua]).max(f64::MIN_POSITIVE) / cells as f64;
    let cell_v = (bb.max[va] - bb.min[va]).max(f64::MIN_POSITIVE) / cells as f64;
    let cell_of = |x: f64, lo: f64, h: f64| (((x - lo) / h).floor().max(0.0) as usize).min(cells - 1);
    let mut hash: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for &t in &crossing {
        let p = mesh.tet_points(t);
        let range = |a: usize, lo: f64, h: f64| {
            let mn = p.iter().map(|q| q[a]).fold(f64::INFINITY, f64::min) - slack;
            let mx = p.iter().map(|q| q[a]).fold(f64::NEG_INFINITY, f64::max) + slack;
            cell_of(mn, lo, h)..=cell_of(mx, lo, h)
        };
        for cu in range(ua, bb.min[ua], cell_u) {
            for cv in range(va, bb.min[va], cell_v) {
                hash.entry((cu, cv)).or_default().push(t);
            }
        }
    }

    let mut hits = Vec::with_capacity(nu * nv);
    for &vv in &v {
        for &uu in &u {
            let mut x = [0.0; 3];
            x[w] = plane.value;
            x[ua] = uu;
            x[va] = vv;
            let key = (cell_of(uu, bb.min[ua], cell_u), cell_of(vv, bb.min[va], cell_v));
            // Candidate lists are in increasing tet order: first hit is the lowest index.
            let hit = hash.get(&key).and_then(|cands| {
                cands.iter().find_map(|&t| {
                    barycentric(&mesh.tet_points(t), x)
                        .filter(|l| l.iter().all(|&li| li >= -LOCATE_TOL))
                        .map(|l| (t, l))
                })
            });
            hits.push(hit);
        }
    }
    if hits.iter().all(Option::is_none) {
        return Err(MetricsError::EmptyIntersection(plane.to_string()));
    }
    Ok(Located { u, v, hits })
}

fn interpolate(mesh: &TetMesh, field: &[f64], hit: &Hit) -> Option<f64> {
    hit.map(|(t, l)| {
        let n = mesh.tets[t].nodes;
        l[0] * field[n[0]] + l[1] * field[n[1]] + l[2] * field[n[2]] + l[3] * field[n[3]]
    })
}

fn check_len(mesh: &TetMesh, field: &[f64]) -> Result<(), MetricsError> {
    if field.len() != mesh.node_count() {
        return Err(MetricsError::LengthMismatch(field.len(), mesh.node_count()));
    }
    Ok(())
}

/// Interpolates a nodal field on a regular grid spanning the mesh's bounding
/// rectangle in `plane`.
pub fn slice_field(mesh: &TetMesh, field: &[f64], plane: Plane, grid: (usize, usize)) -> Result<Slice, MetricsError> {
    check_len(mesh, field)?;
    let loc = locate(mesh, plane, grid)?;
    let values = loc.hits.iter().map(|h| interpolate(mesh, field, h)).collect();
    Ok(Slice {
        plane,
        u: loc.u,
        v: loc.v,
        values,
        label: "value",
    })
}

/// Pointwise `|a − b|` of the interpolated fields.
pub fn slice_diff(
    mesh: &TetMesh,
    field_a: &[f64],
    field_b: &[f64],
    plane: Plane,
    grid: (usize, usize),
) -> Result<Slice, MetricsError> {
    check_len(mesh, field_a)?;
    check_len(mesh, field_b)?;
    let loc = locate(mesh, plane, grid)?;
    let values = loc
        .hits
        .iter()
        .map(|h| Some((interpolate(mesh, field_a, h)? - interpolate(mesh, field_b, h)?).abs()))
        .collect();
    Ok(Slice {
        plane,
        u: loc.u,
        v: loc.v,
        values,
        label: "abs_diff",
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::mesh::{generate_box_mesh, Extent};
    use crate::results::StepRecord;

    #[test]
    fn identical_fields_give_infinity() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(psnr_step(&a, &a, 3.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn constant_noise_closed_form() {
        for n in [1, 7, 1000, 3548, 7096] {
            let a = vec![0.0; n];
            assert_eq!(psnr_step(&a, &vec![1e-5; n], 1.0).unwrap(), 100.0);
            assert_eq!(psnr_step(&a, &vec![1e-12; n], 1.0).unwrap(), 240.0);
        }
    }

    #[test]
    fn mse_by_brute_force() {
        let a = [1.0, -2.0, 0.5, 4.0];
        let b = [1.5, -2.0, 0.0, 3.0];
        // MSE = (0.25 + 0 + 0.25 + 1) / 4 = 0.375
        let want = 20.0 * (5.0f64 / 0.375f64.sqrt()).log10();
        assert!((psnr_step(&a, &b, 5.0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn psnr_errors() {
        assert!(matches!(
            psnr_step(&[1.0], &[1.0, 2.0], 1.0),
            Err(MetricsError::LengthMismatch(1, 2))
        ));
        assert!(matches!(
            psnr_step(&[1.0], &[1.0], 0.0),
            Err(MetricsError::NonPositiveMax(_))
        ));
        assert!(matches!(psnr_step(&[], &[], 1.0), Err(MetricsError::EmptyField)));
    }

    #[test]
    fn control_lines() {
        assert_eq!(control_psnr(100.0, 1e-5), 140.0);
        assert_eq!(control_psnr(1.0, 1e-12) - control_psnr(1.0, 1e-5), 140.0);
        assert_eq!(control_psnr(100.0, 1e-12) - control_psnr(100.0, 1e-5), 140.0);
    }

    fn run(steps: usize, n: usize, seed: u64) -> ResultFile {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = ResultFile::new(n);
        for s in 1..=steps {
            f.steps.push(StepRecord {
                step: s as u32,
                time: s as f64,
                dt: 1.0,
                corrector_iters: 2,
                converged: true,
                temperature: (0..n).map(|_| rng.gen_range(37.0..100.0)).collect(),
                voltage: (0..n).map(|_| rng.gen_range(0.0..25.0)).collect(),
            });
        }
        f
    }

    #[test]
    fn series_of_identical_runs() {
        let r = run(4, 10, 1);
        let s = psnr_series(&r, &r, &[1e-5, 1e-12]).unwrap();
        assert_eq!(s.points.len(), 4);
        assert!(s
            .points
            .iter()
            .all(|p| p.psnr_t == f64::INFINITY && p.psnr_v == f64::INFINITY));
        assert!(s.time_mismatches.is_empty());
        let csv = s.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,time,psnr_T,psnr_V,control_1e-5_T,control_1e-5_V,control_1e-12_T,control_1e-12_V"
        );
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "1");
        assert_eq!(row[2], "inf");
        assert_eq!(row[3], "inf");
    }

    #[test]
    fn series_uses_global_reference_max() {
        let mut r = run(3, 5, 2);
        r.steps[1].temperature[3] = 150.0;
        let mut t = r.clone();
        t.steps[0].temperature[0] += 0.1;
        let s = psnr_series(&r, &t, &[]).unwrap();
        assert_eq!(s.max_t, 150.0);
        let want = psnr_step(&r.steps[0].temperature, &t.steps[0].temperature, 150.0).unwrap();
        assert_eq!(s.points[0].psnr_t, want);
        assert_eq!(s.points[1].psnr_t, f64::INFINITY);
    }

    #[test]
    fn series_overlap_and_time_mismatch() {
        let r = run(5, 4, 3);
        let mut t = run(3, 4, 3);
        t.steps[2].time += 0.5;
        let s = psnr_series(&r, &t, &[]).unwrap();
        assert_eq!(s.points.len(), 3);
        assert!(s.step_count_mismatch());
        assert_eq!(s.time_mismatches, vec![3]);
        assert!(matches!(
            psnr_series(&r, &run(2, 7, 0), &[]),
            Err(MetricsError::NodeCountMismatch { reference: 4, test: 7 })
        ));
    }

    #[test]
    fn csv_floats_have_17_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        let x = 123.456_789_012_345_68;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }

    proptest! {
        #[test]
        fn psnr_is_symmetric(a in prop::collection::vec(-1e3f64..1e3, 1..40), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<f64> = a.iter().map(|x| x + rng.gen_range(-1.0..1.0)).collect();
            prop_assert_eq!(psnr_step(&a, &b, 1e3).unwrap(), psnr_step(&b, &a, 1e3).unwrap());
        }

        #[test]
        fn psnr_is_permutation_invariant(a in prop::collection::vec(-10f64..10.0, 2..40), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<f64> = a.iter().map(|x| x + rng.gen_range(-1e-3..1e-3)).collect();
            let mut idx: Vec<usize> = (0..a.len()).collect();
            for i in (1..idx.len()).rev() {
                idx.swap(i, rng.gen_range(0..=i));
            }
            let pa: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
            let pb: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
            let p0 = psnr_step(&a, &b, 10.0).unwrap();
            let p1 = psnr_step(&pa, &pb, 10.0).unwrap();
            prop_assert!((p0 - p1).abs() <= 1e-9 * p0.abs().max(1.0));
        }

        #[test]
        fn psnr_decreases_with_noise(a in prop::collection::vec(0f64..100.0, 1..50), e in -12i32..-3) {
            let lo = 10f64.powi(e);
            let hi = 10f64.powi(e + 2);
            let b_lo: Vec<f64> = a.iter().map(|x| x + lo).collect();
            let b_hi: Vec<f64> = a.iter().map(|x| x + hi).collect();
            prop_assert!(psnr_step(&a, &b_lo, 100.0).unwrap() > psnr_step(&a, &b_hi, 100.0).unwrap());
        }
    }

    fn mesh() -> TetMesh {
        generate_box_mesh(6, 5, 7, Extent::default()).unwrap()
    }

    fn y0() -> Plane {
        "y=0".parse().unwrap()
    }

    #[test]
    fn plane_and_grid_parsing() {
        assert_eq!(
            y0(),
            Plane {
                axis: Axis::Y,
                value: 0.0
            }
        );
        assert_eq!("Z = -2.5".parse::<Plane>().unwrap().value, -2.5);
        assert!("w=1".parse::<Plane>().is_err());
        assert!("y".parse::<Plane>().is_err());
        assert_eq!(parse_grid("200x100").unwrap(), (200, 100));
        assert!(parse_grid("200").is_err());
    }

    #[test]
    fn constant_field_slice() {
        let m = mesh();
        let s = slice_field(&m, &vec![4.25; m.node_count()], y0(), (13, 9)).unwrap();
        assert_eq!(s.values.len(), 13 * 9);
        assert!(s.values.iter().all(|v| (v.unwrap() - 4.25).abs() < 1e-12));
        assert_eq!((s.u[0], s.u[12], s.v[0], s.v[8]), (-50.0, 50.0, 0.0, 100.0));
    }

    #[test]
    fn linear_fields_are_reproduced() {
        let m = mesh();
        let fx: Vec<f64> = m.nodes.iter().map(|p| p[0]).collect();
        let fz: Vec<f64> = m.nodes.iter().map(|p| 2.0 * p[2] - p[1]).collect();
        let s = slice_field(&m, &fx, y0(), (17, 11)).unwrap();
        let sz = slice_field(&m, &fz, "y=7.5".parse().unwrap(), (17, 11)).unwrap();
        for j in 0..11 {
            for i in 0..17 {
                assert!((s.get(i, j).unwrap() - s.u[i]).abs() < 1e-10);
                assert!((sz.get(i, j).unwrap() - (2.0 * sz.v[j] - 7.5)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn node_coincident_sample_equals_nodal_value() {
        let m = generate_box_mesh(5, 5, 5, Extent::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f: Vec<f64> = (0..m.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // 5 nodes per axis over 100 mm: grid 9 hits every node of the y=0 layer
        let s = slice_field(&m, &f, y0(), (9, 9)).unwrap();
        for (n, p) in m.nodes.iter().enumerate() {
            if p[1] != 0.0 {
                continue;
            }
            let i = s.u.iter().position(|&u| u == p[0]).unwrap();
            let j = s.v.iter().position(|&v| v == p[2]).unwrap();
            assert!((s.get(i, j).unwrap() - f[n]).abs() < 1e-10);
        }
    }

    #[test]
    fn slice_diff_cases() {
        let m = mesh();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..m.node_count()).map(|_| rng.gen_range(30.0..90.0)).collect();
        let b: Vec<f64> = (0..m.node_count()).map(|_| rng.gen_range(30.0..90.0)).collect();
        let same = slice_diff(&m, &a, &a, y0(), (10, 10)).unwrap();
        assert!(same.values.iter().all(|v| v.unwrap() == 0.0));
        assert_eq!(same.label, "abs_diff");
        let shifted: Vec<f64> = a.iter().map(|x| x + 1e-6).collect();
        let d = slice_diff(&m, &a, &shifted, y0(), (10, 10)).unwrap();
        assert!(d.values.iter().all(|v| (v.unwrap() - 1e-6).abs() < 1e-12));
        let d = slice_diff(&m, &a, &b, y0(), (10, 10)).unwrap();
        let sa = slice_field(&m, &a, y0(), (10, 10)).unwrap();
        let sb = slice_field(&m, &b, y0(), (10, 10)).unwrap();
        for k in 0..100 {
            let want = (sa.values[k].unwrap() - sb.values[k].unwrap()).abs();
            assert!((d.values[k].unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_plane_is_empty_intersection() {
        let m = mesh();
        let f = vec![0.0; m.node_count()];
        assert!(matches!(
            slice_field(&m, &f, "y=80".parse().unwrap(), (4, 4)),
            Err(MetricsError::EmptyIntersection(_))
        ));
        assert!(matches!(
            slice_field(&m, &f, y0(), (1, 4)),
            Err(MetricsError::BadGrid(_))
        ));
    }

    #[test]
    fn samples_outside_a_non_convex_mesh_are_missing() {
        use crate::mesh::{Tet, ELECTRODE_NEG, ELECTRODE_POS, OUTER_BOUNDARY};
        use std::collections::BTreeMap;
        // Two tets touching only along the segment x = 0..1 on the z axis plane
        let nodes = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
        ];
        let tets = vec![
            Tet {
                nodes: [0, 1, 2, 3],
                region: 0,
            },
            Tet {
                nodes: [1, 2, 3, 4],
                region: 0,
            },
        ];
        let sets = BTreeMap::from([
            (OUTER_BOUNDARY.to_string(), vec![0, 1, 2, 3, 4]),
            (ELECTRODE_POS.to_string(), vec![4]),
            (ELECTRODE_NEG.to_string(), vec![0]),
        ]);
        let m = TetMesh::new(nodes, tets, sets).unwrap();
        let s = slice_field(&m, &[1.0; 5], "z=0".parse().unwrap(), (3, 3)).unwrap();
        assert_eq!(s.get(0, 0), Some(1.0));
        assert_eq!(s.get(2, 2), None);
        let csv = s.to_csv();
        assert!(csv.starts_with("u,v,value\n"));
        assert!(csv.lines().last().unwrap().ends_with(','));
    }
}
