//! Tetrahedral meshes: text I/O, validation and a structured box generator.
//!
//! Coordinates are in millimeters. Every mesh carries three required node
//! sets: `outer_boundary`, `electrode_pos` and `electrode_neg`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Volume below which a tetrahedron is considered degenerate (mm³).
pub const GEOM_EPS: f64 = 1e-12;

pub const OUTER_BOUNDARY: &str = "outer_boundary";
pub const ELECTRODE_POS: &str = "electrode_pos";
pub const ELECTRODE_NEG: &str = "electrode_neg";

const HEADER: &str = "rafem-mesh v1";

#[derive(Debug, Error)]
pub enum MeshError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("tet {tet} references node {node} but the mesh has {count} nodes")]
    TetIndexOutOfRange { tet: usize, node: usize, count: usize },
    #[error("node set '{set}' references node {node} but the mesh has {count} nodes")]
    NodeSetIndexOutOfRange { set: String, node: usize, count: usize },
    #[error("required node set '{0}' is missing or empty")]
    MissingNodeSet(&'static str),
    #[error("node {0} belongs to both electrode sets")]
    ElectrodesOverlap(usize),
    #[error("tet {tet} is degenerate (volume {volume:e} mm³)")]
    DegenerateTet { tet: usize, volume: f64 },
    #[error("grid dimension {axis} = {value} must be at least 2")]
    BadDimension { axis: char, value: usize },
    #[error("invalid extent: {0}")]
    BadExtent(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tet {
    pub nodes: [usize; 4],
    pub region: i32,
}

/// Axis-aligned box in millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Extent {
    fn default() -> Self {
        Self {
            min: [-50.0, -50.0, 0.0],
            max: [50.0, 50.0, 100.0],
        }
    }
}

impl Extent {
    pub fn volume(&self) -> f64 {
        (0..3).map(|a| self.max[a] - self.min[a]).product()
    }

    /// Parses `xmin,xmax,ymin,ymax,zmin,zmax`.
    pub fn parse(s: &str) -> Result<Self, MeshError> {
        let vals: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| MeshError::BadExtent(format!("{s}: {e}")))?;
        if vals.len() != 6 {
            return Err(MeshError::BadExtent(format!("expected 6 values, got {}", vals.len())));
        }
        let ext = Self {
            min: [vals[0], vals[2], vals[4]],
            max: [vals[1], vals[3], vals[5]],
        };
        if (0..3).any(|a| !(ext.max[a] > ext.min[a])) {
            return Err(MeshError::BadExtent(format!("empty box {s}")));
        }
        Ok(ext)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TetMesh {
    pub nodes: Vec<[f64; 3]>,
    pub tets: Vec<Tet>,
    /// Sorted, deduplicated node indices per set name.
    pub node_sets: BTreeMap<String, Vec<usize>>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn det3(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0])
}

/// Six times the signed volume of the tetrahedron `p`.
pub fn signed_volume6(p: &[[f64; 3]; 4]) -> f64 {
    det3(sub(p[1], p[0]), sub(p[2], p[0]), sub(p[3], p[0]))
}

impl TetMesh {
    /// Builds a mesh, fixing tet orientation and checking every invariant.
    pub fn new(
        nodes: Vec<[f64; 3]>,
        tets: Vec<Tet>,
        node_sets: BTreeMap<String, Vec<usize>>,
    ) -> Result<Self, MeshError> {
        let mut mesh = Self { nodes, tets, node_sets };
        for set in mesh.node_sets.values_mut() {
            set.sort_unstable();
            set.dedup();
        }
        mesh.validate_indices()?;
        mesh.fix_orientation();
        for t in 0..mesh.tets.len() {
            mesh.tet_volume(t)?;
        }
        mesh.validate_sets()?;
        Ok(mesh)
    }

    fn validate_indices(&self) -> Result<(), MeshError> {
        let count = self.nodes.len();
        for (t, tet) in self.tets.iter().enumerate() {
            if let Some(&node) = tet.nodes.iter().find(|&&n| n >= count) {
                return Err(MeshError::TetIndexOutOfRange { tet: t, node, count });
            }
        }
        for (name, set) in &self.node_sets {
            if let Some(&node) = set.iter().find(|&&n| n >= count) {
                return Err(MeshError::NodeSetIndexOutOfRange {
                    set: name.clone(),
                    node,
                    count,
                });
            }
        }
        Ok(())
    }

    fn validate_sets(&self) -> Result<(), MeshError> {
        for name in [OUTER_BOUNDARY, ELECTRODE_POS, ELECTRODE_NEG] {
            if self.node_sets.get(name).is_none_or(|s| s.is_empty()) {
                return Err(MeshError::MissingNodeSet(name));
            }
        }
        let pos = &self.node_sets[ELECTRODE_POS];
        for n in &self.node_sets[ELECTRODE_NEG] {
            if pos.binary_search(n).is_ok() {
                return Err(MeshError::ElectrodesOverlap(*n));
            }
        }
        Ok(())
    }

    /// Swaps the last two vertices of every negatively oriented tet.
    fn fix_orientation(&mut self) {
        for t in 0..self.tets.len() {
            if signed_volume6(&self.tet_points(t)) < 0.0 {
                self.tets[t].nodes.swap(2, 3);
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn tet_points(&self, t: usize) -> [[f64; 3]; 4] {
        self.tets[t].nodes.map(|n| self.nodes[n])
    }

    pub fn tet_volume(&self, t: usize) -> Result<f64, MeshError> {
        let volume = signed_volume6(&self.tet_points(t)).abs() / 6.0;
        if volume <= GEOM_EPS {
            return Err(MeshError::DegenerateTet { tet: t, volume });
        }
        Ok(volume)
    }

    pub fn node_set(&self, name: &str) -> &[usize] {
        self.node_sets.get(name).map_or(&[], |v| v.as_slice())
    }

    pub fn bounding_box(&self) -> Extent {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in &self.nodes {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Extent { min, max }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MeshError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MeshError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Canonical text form. Floats use the shortest round-trip representation.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(32 * (self.nodes.len() + self.tets.len()));
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "nodes {}", self.nodes.len());
        for p in &self.nodes {
            let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
        }
        let _ = writeln!(out, "tets {}", self.tets.len());
        for t in &self.tets {
            let n = t.nodes;
            let _ = writeln!(out, "{} {} {} {} {}", n[0], n[1], n[2], n[3], t.region);
        }
        for (name, set) in &self.node_sets {
            let _ = writeln!(out, "nodeset {name} {}", set.len());
            let ids: Vec<String> = set.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(out, "{}", ids.join(" "));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, MeshError> {
        let mut lines = TokenLines::new(text);
        let (line, header) = lines.next_line().ok_or(MeshError::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
        if header.join(" ") != HEADER {
            return Err(MeshError::Parse {
                line,
                msg: format!("expected header '{HEADER}'"),
            });
        }

        let node_count = lines.keyword_count("nodes")?;
        let mut nodes = Vec::with_capacity(node_count);
        for _ in 0..node_count {
            let (line, toks) = lines.require_line("node coordinates")?;
            if toks.len() != 3 {
                return Err(MeshError::Parse {
                    line,
                    msg: format!("expected 3 coordinates, found {}", toks.len()),
                });
            }
            let mut p = [0.0; 3];
            for (a, tok) in toks.iter().enumerate() {
                p[a] = parse_num(tok, line)?;
            }
            nodes.push(p);
        }

        let tet_count = lines.keyword_count("tets")?;
        let mut tets = Vec::with_capacity(tet_count);
        for _ in 0..tet_count {
            let (line, toks) = lines.require_line("tet record")?;
            if toks.len() != 5 {
                return Err(MeshError::Parse {
                    line,
                    msg: format!("expected 4 node ids and a region tag, found {} fields", toks.len()),
                });
            }
            let mut n = [0usize; 4];
            for (k, tok) in toks[..4].iter().enumerate() {
                n[k] = parse_num(tok, line)?;
            }
            tets.push(Tet {
                nodes: n,
                region: parse_num(toks[4], line)?,
            });
        }

        let mut node_sets = BTreeMap::new();
        while let Some((line, toks)) = lines.next_line() {
            if toks.len() != 3 || toks[0] != "nodeset" {
                return Err(MeshError::Parse {
                    line,
                    msg: "expected 'nodeset <name> <count>'".into(),
                });
            }
            let name = toks[1].to_string();
            let count: usize = parse_num(toks[2], line)?;
            let mut ids = Vec::with_capacity(count);
            while ids.len() < count {
                let (line, toks) = lines.require_line("node set ids")?;
                for tok in toks {
                    ids.push(parse_num(tok, line)?);
                }
            }
            if ids.len() != count {
                return Err(MeshError::Parse {
                    line,
                    msg: format!("node set '{name}' declares {count} ids, found {}", ids.len()),
                });
            }
            node_sets.insert(name, ids);
        }

        Self::new(nodes, tets, node_sets)
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T, MeshError>
where
    T::Err: std::fmt::Display,
{
    tok.parse::<T>().map_err(|e| MeshError::Parse {
        line,
        msg: format!("'{tok}': {e}"),
    })
}

/// Iterates non-empty lines with comments stripped, keeping 1-based line numbers.
struct TokenLines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last_line: usize,
}

impl<'a> TokenLines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            last_line: 0,
        }
    }

    fn next_line(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, raw) in self.inner.by_ref() {
            self.last_line = i + 1;
            let content = raw.split('#').next().unwrap_or("");
            let toks: Vec<&str> = content.split_whitespace().collect();
            if !toks.is_empty() {
                return Some((i + 1, toks));
            }
        }
        None
    }

    fn require_line(&mut self, what: &str) -> Result<(usize, Vec<&'a str>), MeshError> {
        let last = self.last_line;
        self.next_line().ok_or_else(|| MeshError::Parse {
            line: last + 1,
            msg: format!("unexpected end of file, expected {what}"),
        })
    }

    fn keyword_count(&mut self, keyword: &str) -> Result<usize, MeshError> {
        let (line, toks) = self.require_line(keyword)?;
        if toks.len() != 2 || toks[0] != keyword {
            return Err(MeshError::Parse {
                line,
                msg: format!("expected '{keyword} <count>'"),
            });
        }
        parse_num(toks[1], line)
    }
}

/// Kuhn split of a unit cell: vertex offsets walk from corner 000 to 111
/// along the axes in each of the 6 orders.
const KUHN_AXIS_ORDERS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Electrode segments: x offset, y, z range (mm).
const ELECTRODE_X: f64 = 15.0;
const ELECTRODE_Z: (f64, f64) = (40.0, 60.0);

/// Structured box mesh split into Kuhn tetrahedra.
///
/// `electrode_pos` and `electrode_neg` are the grid columns closest to the
/// vertical segments at x = +15 and x = -15 (y = 0, z in [40, 60]).
pub fn generate_box_mesh(nx: usize, ny: usize, nz: usize, extent: Extent) -> Result<TetMesh, MeshError> {
    for (axis, value) in [('x', nx), ('y', ny), ('z', nz)] {
        if value < 2 {
            return Err(MeshError::BadDimension { axis, value });
        }
    }
    let dims = [nx, ny, nz];
    let coord = |a: usize, i: usize| -> f64 {
        let t = i as f64 / (dims[a] - 1) as f64;
        if i == dims[a] - 1 {
            extent.max[a]
        } else {
            extent.min[a] + t * (extent.max[a] - extent.min[a])
        }
    };
    let index = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);

    let mut nodes = Vec::with_capacity(nx * ny * nz);
    let mut boundary = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                nodes.push([coord(0, i), coord(1, j), coord(2, k)]);
                if i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1 {
                    boundary.push(index(i, j, k));
                }
            }
        }
    }

    let mut tets = Vec::with_capacity(6 * (nx - 1) * (ny - 1) * (nz - 1));
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                for order in KUHN_AXIS_ORDERS {
                    let mut c = [i, j, k];
                    let mut n = [index(c[0], c[1], c[2]); 4];
                    for (v, &axis) in order.iter().enumerate() {
                        c[axis] += 1;
                        n[v + 1] = index(c[0], c[1], c[2]);
                    }
                    tets.push(Tet { nodes: n, region: 0 });
                }
            }
        }
    }

    let nearest = |a: usize, target: f64| -> usize {
        (0..dims[a])
            .min_by(|&p, &q| {
                let dp = (coord(a, p) - target).abs();
                let dq = (coord(a, q) - target).abs();
                // ties go to the column closer to the box center line
                dp.total_cmp(&dq).then(coord(a, p).abs().total_cmp(&coord(a, q).abs()))
            })
            .unwrap()
    };
    let i_pos = nearest(0, ELECTRODE_X);
    let mut i_neg = nearest(0, -ELECTRODE_X);
    if i_neg == i_pos {
        // Coarse grids can snap both electrodes onto one column.
        i_neg = if i_pos > 0 { i_pos - 1 } else { i_pos + 1 };
    }
    let j0 = nearest(1, 0.0);
    let mut levels: Vec<usize> = (0..nz)
        .filter(|&k| (ELECTRODE_Z.0..=ELECTRODE_Z.1).contains(&coord(2, k)))
        .collect();
    if levels.is_empty() {
        levels.push(nearest(2, 0.5 * (ELECTRODE_Z.0 + ELECTRODE_Z.1)));
    }

    let mut node_sets = BTreeMap::new();
    node_sets.insert(OUTER_BOUNDARY.to_string(), boundary);
    node_sets.insert(
        ELECTRODE_POS.to_string(),
        levels.iter().map(|&k| index(i_pos, j0, k)).collect(),
    );
    node_sets.insert(
        ELECTRODE_NEG.to_string(),
        levels.iter().map(|&k| index(i_neg, j0, k)).collect(),
    );
    TetMesh::new(nodes, tets, node_sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_tet() -> TetMesh {
        let nodes = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let sets = BTreeMap::from([
            (OUTER_BOUNDARY.to_string(), vec![0]),
            (ELECTRODE_POS.to_string(), vec![1]),
            (ELECTRODE_NEG.to_string(), vec![2]),
        ]);
        TetMesh::new(
            nodes,
            vec![Tet {
                nodes: [0, 1, 2, 3],
                region: 0,
            }],
            sets,
        )
        .unwrap()
    }

    const MINIMAL: &str = "rafem-mesh v1
# smallest valid mesh
nodes 4
0 0 0
1 0 0
0 1 0
0 0 1
tets 1
0 1 2 3 0
nodeset outer_boundary 1
0
nodeset electrode_pos 1
1
nodeset electrode_neg 1
2
";

    #[test]
    fn parses_minimal_file() {
        let mesh = TetMesh::parse(MINIMAL).unwrap();
        assert_eq!(mesh.node_count(), 4);
        assert_eq!(mesh.tets.len(), 1);
        assert_eq!(mesh.node_set(ELECTRODE_NEG), &[2]);
    }

    #[test]
    fn rejects_out_of_range_tet() {
        let text = MINIMAL.replace("0 1 2 3 0", "0 1 2 9 0");
        match TetMesh::parse(&text) {
            Err(MeshError::TetIndexOutOfRange {
                tet: 0,
                node: 9,
                count: 4,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = MINIMAL.replace("0 1 0\n", "0 one 0\n");
        match TetMesh::parse(&text) {
            Err(MeshError::Parse { line: 6, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_overlapping_electrodes() {
        let text = MINIMAL.replace("nodeset electrode_neg 1\n2", "nodeset electrode_neg 1\n1");
        assert!(matches!(TetMesh::parse(&text), Err(MeshError::ElectrodesOverlap(1))));
    }

    #[test]
    fn orientation_is_fixed_on_load() {
        let text = MINIMAL.replace("0 1 2 3 0", "0 2 1 3 0");
        let mesh = TetMesh::parse(&text).unwrap();
        assert!(signed_volume6(&mesh.tet_points(0)) > 0.0);
    }

    #[test]
    fn reference_tet_volume() {
        let mesh = reference_tet();
        assert_eq!(mesh.tet_volume(0).unwrap(), 1.0 / 6.0);
        let mut scaled = mesh.clone();
        for p in &mut scaled.nodes {
            *p = p.map(|c| 2.0 * c);
        }
        assert_eq!(scaled.tet_volume(0).unwrap(), 8.0 / 6.0);
    }

    #[test]
    fn coplanar_points_are_degenerate() {
        let mut mesh = reference_tet();
        mesh.nodes[3] = [1.0, 1.0, 0.0];
        assert!(matches!(
            mesh.tet_volume(0),
            Err(MeshError::DegenerateTet { tet: 0, .. })
        ));
    }

    #[test]
    fn single_cell_box() {
        let mesh = generate_box_mesh(2, 2, 2, Extent::default()).unwrap();
        assert_eq!(mesh.node_count(), 8);
        assert_eq!(mesh.tets.len(), 6);
        assert_eq!(mesh.node_set(OUTER_BOUNDARY).len(), 8);
    }

    #[test]
    fn box_counts_follow_formula() {
        let mesh = generate_box_mesh(11, 11, 11, Extent::default()).unwrap();
        assert_eq!(mesh.node_count(), 1331);
        assert_eq!(mesh.tets.len(), 6000);
        let (nx, ny, nz) = (4, 5, 3);
        let mesh = generate_box_mesh(nx, ny, nz, Extent::default()).unwrap();
        assert_eq!(mesh.node_count(), nx * ny * nz);
        assert_eq!(mesh.tets.len(), 6 * (nx - 1) * (ny - 1) * (nz - 1));
    }

    #[test]
    fn rejects_small_dimension() {
        assert!(matches!(
            generate_box_mesh(2, 1, 2, Extent::default()),
            Err(MeshError::BadDimension { axis: 'y', value: 1 })
        ));
    }

    #[test]
    fn volumes_partition_the_box() {
        for (nx, ny, nz) in [(2, 2, 2), (3, 4, 5), (6, 6, 6)] {
            let ext = Extent {
                min: [-50.0, -50.0, 0.0],
                max: [50.0, 50.0, 100.0],
            };
            let mesh = generate_box_mesh(nx, ny, nz, ext).unwrap();
            let total: f64 = (0..mesh.tets.len()).map(|t| mesh.tet_volume(t).unwrap()).sum();
            assert!((total - ext.volume()).abs() <= 1e-9 * ext.volume());
        }
    }

    #[test]
    fn kuhn_cell_split_is_exact() {
        let ext = Extent {
            min: [0.0, 0.0, 0.0],
            max: [0.3, 0.7, 1.1],
        };
        let mesh = generate_box_mesh(2, 2, 2, ext).unwrap();
        let total: f64 = (0..6).map(|t| mesh.tet_volume(t).unwrap()).sum();
        assert!((total - ext.volume()).abs() <= 1e-12 * ext.volume());
    }

    #[test]
    fn interior_nodes_have_enough_tets() {
        let mesh = generate_box_mesh(5, 4, 6, Extent::default()).unwrap();
        let mut incidence = vec![0usize; mesh.node_count()];
        for t in &mesh.tets {
            for &n in &t.nodes {
                incidence[n] += 1;
            }
        }
        let boundary = mesh.node_set(OUTER_BOUNDARY);
        for (n, &count) in incidence.iter().enumerate() {
            if boundary.binary_search(&n).is_err() {
                assert!(count >= 4, "interior node {n} in {count} tets");
            }
        }
    }

    #[test]
    fn boundary_matches_coordinate_test() {
        let ext = Extent::default();
        let mesh = generate_box_mesh(4, 5, 6, ext).unwrap();
        let boundary = mesh.node_set(OUTER_BOUNDARY);
        for (n, p) in mesh.nodes.iter().enumerate() {
            let on_surface = (0..3).any(|a| p[a] == ext.min[a] || p[a] == ext.max[a]);
            assert_eq!(on_surface, boundary.binary_search(&n).is_ok());
        }
    }

    #[test]
    fn electrodes_sit_near_their_segments() {
        let mesh = generate_box_mesh(11, 11, 11, Extent::default()).unwrap();
        let pos = mesh.node_set(ELECTRODE_POS);
        let neg = mesh.node_set(ELECTRODE_NEG);
        assert_eq!(pos.len(), 3);
        for &n in pos {
            assert_eq!(mesh.nodes[n][0], 10.0);
            assert_eq!(mesh.nodes[n][1], 0.0);
        }
        for &n in neg {
            assert_eq!(mesh.nodes[n][0], -10.0);
        }
        // coarse grid: both segments would snap onto x = 0
        let coarse = generate_box_mesh(3, 3, 3, Extent::default()).unwrap();
        assert_ne!(coarse.node_set(ELECTRODE_POS), coarse.node_set(ELECTRODE_NEG));
    }

    #[test]
    fn text_round_trip() {
        let mesh = generate_box_mesh(3, 4, 3, Extent::default()).unwrap();
        let text = mesh.to_text();
        let back = TetMesh::parse(&text).unwrap();
        assert_eq!(back, mesh);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn extent_parsing() {
        let e = Extent::parse("-1,1,-2,2,0,5").unwrap();
        assert_eq!(e.min, [-1.0, -2.0, 0.0]);
        assert_eq!(e.max, [1.0, 2.0, 5.0]);
        assert!(Extent::parse("1,0,0,1,0,1").is_err());
        assert!(Extent::parse("1,2,3").is_err());
    }
}
