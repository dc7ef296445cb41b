//! P1 finite elements on triangle meshes, mapped to a spatial network by
//! `A = L + M` after eliminating the homogeneous Dirichlet boundary.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{mm::format_real, CsrMatrix};
use crate::network::SpatialNetwork;

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub points: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Sorted Dirichlet nodes.
    pub boundary: Vec<usize>,
    /// Optional per-element coefficient read with the mesh.
    pub coefficients: Option<Vec<f64>>,
}

struct Cursor<'a> {
    path: &'a Path,
    lines: Vec<(usize, &'a str)>,
    pos: usize,
    last: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let item = self.lines.get(self.pos).copied().ok_or_else(|| {
            Error::parse(
                self.path,
                self.last,
                format!("unexpected end of file, expected {what}"),
            )
        })?;
        self.pos += 1;
        Ok(item)
    }

    fn header(&mut self, name: &str) -> Result<usize> {
        let (k, l) = self.next(&format!("'{name}' section"))?;
        let mut it = l.split_whitespace();
        if it.next() != Some(name) {
            return Err(Error::parse(
                self.path,
                k,
                format!("expected '{name} <count>'"),
            ));
        }
        it.next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::parse(self.path, k, format!("bad count in '{name}' header")))
    }

    fn numbers(&mut self, what: &str) -> Result<(usize, Vec<f64>)> {
        let (k, l) = self.next(what)?;
        let vals = l
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::parse(self.path, k, format!("non-numeric {what} line")))?;
        Ok((k, vals))
    }
}

fn as_index(path: &Path, line: usize, v: f64, n: usize) -> Result<usize> {
    if v.fract() != 0.0 || v < 0.0 || v as usize >= n {
        return Err(Error::parse(
            path,
            line,
            format!("node index {v} out of range 0..{n}"),
        ));
    }
    Ok(v as usize)
}

impl TriMesh {
    /// Structured mesh of the unit square with `n × n` cells, each split along
    /// its `(0,0)-(1,1)` diagonal into two right triangles.
    pub fn unit_square(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "need at least one cell per side".into(),
            ));
        }
        let ticks: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        Ok(Self::tensor(&ticks, &ticks, |_, _| true))
    }

    /// L-shaped domain `(0,1)² \ [0.5,1)²` on a tensor grid graded toward the
    /// re-entrant corner: `m` cells per half side whose sizes shrink
    /// geometrically so that coarsest / finest = `ratio`.
    pub fn l_shape_graded(m: usize, ratio: f64) -> Result<Self> {
        if m == 0 || !(ratio >= 1.0) {
            return Err(Error::InvalidArgument("need m >= 1 and ratio >= 1".into()));
        }
        let q = if m > 1 {
            ratio.powf(-1.0 / (m - 1) as f64)
        } else {
            1.0
        };
        let sizes: Vec<f64> = (0..m).map(|k| q.powi(k as i32)).collect();
        let total: f64 = sizes.iter().sum();
        let mut half = vec![0.0];
        for s in &sizes {
            half.push(half.last().unwrap() + 0.5 * s / total);
        }
        half[m] = 0.5;
        let mut ticks = half.clone();
        ticks.extend(half[..m].iter().rev().map(|t| 1.0 - t));
        Ok(Self::tensor(&ticks, &ticks, |cx, cy| {
            !(cx > 0.5 && cy > 0.5)
        }))
    }

    fn tensor(xs: &[f64], ys: &[f64], keep_cell: impl Fn(f64, f64) -> bool) -> Self {
        let (nx, ny) = (xs.len(), ys.len());
        let id = |i: usize, j: usize| j * nx + i;
        let mut used = vec![false; nx * ny];
        let mut triangles = Vec::new();
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                if !keep_cell(0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])) {
                    continue;
                }
                let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
                for v in [a, b, c, d] {
                    used[v] = true;
                }
            }
        }
        let mut new_id = vec![usize::MAX; nx * ny];
        let mut points = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                if used[id(i, j)] {
                    new_id[id(i, j)] = points.len();
                    points.push([xs[i], ys[j]]);
                }
            }
        }
        for t in triangles.iter_mut() {
            for v in t.iter_mut() {
                *v = new_id[*v];
            }
        }
        let mut mesh = TriMesh {
            points,
            triangles,
            boundary: Vec::new(),
            coefficients: None,
        };
        mesh.boundary = mesh.topological_boundary();
        mesh
    }

    /// Nodes on edges that belong to exactly one triangle.
    pub fn topological_boundary(&self) -> Vec<usize> {
        let mut count = std::collections::HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *count.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        let mut nodes: Vec<usize> = count
            .into_iter()
            .filter(|&(_, c)| c == 1)
            .flat_map(|((a, b), _)| [a, b])
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    /// Longest element edge.
    pub fn mesh_size(&self) -> f64 {
        let len = |a: usize, b: usize| {
            let (p, q) = (self.points[a], self.points[b]);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
        };
        self.triangles
            .iter()
            .map(|t| len(t[0], t[1]).max(len(t[1], t[2])).max(len(t[2], t[0])))
            .fold(0.0, f64::max)
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let t = self.triangles[e];
        let p = |k: usize| self.points[t[k]];
        [
            (p(0)[0] + p(1)[0] + p(2)[0]) / 3.0,
            (p(0)[1] + p(1)[1] + p(2)[1]) / 3.0,
        ]
    }

    /// Reads the triangle-list format:
    ///
    /// ```text
    /// nodes <n>
    /// x y                 (n lines)
    /// elements <m>
    /// i j k [coefficient] (m lines, zero-based)
    /// boundary <b>
    /// node                (b lines)
    /// ```
    ///
    /// Blank lines and lines starting with `#` are ignored. The coefficient
    /// column must be present on all element lines or none.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        let mut cur = Cursor {
            path,
            last: text.lines().count().max(1),
            lines,
            pos: 0,
        };

        let n = cur.header("nodes")?;
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let (k, v) = cur.numbers("node")?;
            if v.len() != 2 {
                return Err(Error::parse(path, k, "node line needs 'x y'"));
            }
            points.push([v[0], v[1]]);
        }

        let m = cur.header("elements")?;
        let mut triangles = Vec::with_capacity(m);
        let mut coefficients = Vec::new();
        let mut with_coef = None;
        for _ in 0..m {
            let (k, v) = cur.numbers("element")?;
            if v.len() != 3 && v.len() != 4 {
                return Err(Error::parse(
                    path,
                    k,
                    "element line needs 'i j k [coefficient]'",
                ));
            }
            if *with_coef.get_or_insert(v.len() == 4) != (v.len() == 4) {
                return Err(Error::parse(
                    path,
                    k,
                    "coefficient column must appear on every element or none",
                ));
            }
            triangles.push([
                as_index(path, k, v[0], n)?,
                as_index(path, k, v[1], n)?,
                as_index(path, k, v[2], n)?,
            ]);
            if v.len() == 4 {
                if !(v[3] > 0.0) {
                    return Err(Error::parse(
                        path,
                        k,
                        "element coefficient must be positive",
                    ));
                }
                coefficients.push(v[3]);
            }
        }

        let b = cur.header("boundary")?;
        let mut boundary = Vec::with_capacity(b);
        for _ in 0..b {
            let (k, v) = cur.numbers("boundary")?;
            if v.len() != 1 {
                return Err(Error::parse(path, k, "boundary line holds one node index"));
            }
            boundary.push(as_index(path, k, v[0], n)?);
        }
        if let Some(&(k, _)) = cur.lines.get(cur.pos) {
            return Err(Error::parse(
                path,
                k,
                "trailing content after boundary section",
            ));
        }
        boundary.sort_unstable();
        boundary.dedup();
        Ok(TriMesh {
            points,
            triangles,
            boundary,
            coefficients: if coefficients.is_empty() {
                None
            } else {
                Some(coefficients)
            },
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "nodes {}", self.points.len());
        for p in &self.points {
            let _ = writeln!(s, "{} {}", format_real(p[0]), format_real(p[1]));
        }
        let _ = writeln!(s, "elements {}", self.triangles.len());
        for (e, t) in self.triangles.iter().enumerate() {
            match &self.coefficients {
                Some(k) => {
                    let _ = writeln!(s, "{} {} {} {}", t[0], t[1], t[2], format_real(k[e]));
                }
                None => {
                    let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
                }
            }
        }
        let _ = writeln!(s, "boundary {}", self.boundary.len());
        for b in &self.boundary {
            let _ = writeln!(s, "{b}");
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Piecewise constant coefficient `k`, evaluated at element centroids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientField {
    Constant {
        value: f64,
    },
    /// `contrast` inside any rectangle `[x0, y0, x1, y1]`, `background` elsewhere.
    Rectangles {
        background: f64,
        contrast: f64,
        rects: Vec<[f64; 4]>,
    },
    /// Seeded, non-touching thin strips (horizontal or vertical) of high conductivity.
    RandomStrips {
        background: f64,
        contrast: f64,
        count: usize,
        min_length: f64,
        max_length: f64,
        width: f64,
        seed: u64,
    },
    /// Values supplied with the mesh.
    FromMesh,
}

impl CoefficientField {
    /// The rectangles realized by a strip or rectangle field.
    pub fn rectangles(&self) -> Vec<[f64; 4]> {
        match self {
            CoefficientField::Rectangles { rects, .. } => rects.clone(),
            CoefficientField::RandomStrips {
                count,
                min_length,
                max_length,
                width,
                seed,
                ..
            } => random_strips(*count, *min_length, *max_length, *width, *seed),
            _ => Vec::new(),
        }
    }

    pub fn evaluate(&self, mesh: &TriMesh) -> Result<Vec<f64>> {
        let inside = |rects: &[[f64; 4]], c: [f64; 2]| {
            rects
                .iter()
                .any(|r| r[0] <= c[0] && c[0] <= r[2] && r[1] <= c[1] && c[1] <= r[3])
        };
        let k: Vec<f64> = match self {
            CoefficientField::Constant { value } => vec![*value; mesh.triangles.len()],
            CoefficientField::Rectangles {
                background,
                contrast,
                ..
            }
            | CoefficientField::RandomStrips {
                background,
                contrast,
                ..
            } => {
                let rects = self.rectangles();
                (0..mesh.triangles.len())
                    .map(|e| {
                        if inside(&rects, mesh.centroid(e)) {
                            *contrast
                        } else {
                            *background
                        }
                    })
                    .collect()
            }
            CoefficientField::FromMesh => mesh.coefficients.clone().ok_or_else(|| {
                Error::InvalidArgument("mesh carries no element coefficients".into())
            })?,
        };
        if let Some(bad) = k.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "coefficient {bad} must be positive and finite"
            )));
        }
        Ok(k)
    }
}

/// Strips inside `[0.05, 0.95]²`, kept at least one width apart.
fn random_strips(count: usize, min_len: f64, max_len: f64, width: f64, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rects: Vec<[f64; 4]> = Vec::new();
    let (lo, hi) = (0.05, 0.95);
    let mut attempts = 0;
    while rects.len() < count && attempts < 10_000 {
        attempts += 1;
        let len = if max_len > min_len {
            rng.gen_range(min_len..max_len)
        } else {
            min_len
        };
        let horizontal = rng.gen_bool(0.5);
        let (w, h) = if horizontal {
            (len, width)
        } else {
            (width, len)
        };
        if w > hi - lo || h > hi - lo {
            continue;
        }
        let x0 = rng.gen_range(lo..hi - w);
        let y0 = rng.gen_range(lo..hi - h);
        let r = [x0, y0, x0 + w, y0 + h];
        let gap = width;
        let clear = rects.iter().all(|o| {
            r[2] + gap < o[0] || o[2] + gap < r[0] || r[3] + gap < o[1] || o[3] + gap < r[1]
        });
        if clear {
            rects.push(r);
        }
    }
    rects
}

/// Global P1 stiffness `∫ k ∇φ_a·∇φ_b` and consistent mass `∫ φ_a φ_b`.
pub fn assemble_p1(mesh: &TriMesh, k: &[f64]) -> Result<(CsrMatrix, CsrMatrix)> {
    check_len(mesh.triangles.len(), k.len())?;
    let n = mesh.points.len();
    let mut ts = Vec::with_capacity(9 * mesh.triangles.len());
    let mut tm = Vec::with_capacity(9 * mesh.triangles.len());
    for (e, t) in mesh.triangles.iter().enumerate() {
        let p = t.map(|v| mesh.points[v]);
        let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
        let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
        let det =
            (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let area = 0.5 * det.abs();
        if area == 0.0 {
            return Err(Error::InvalidArgument(format!("element {e} is degenerate")));
        }
        for a in 0..3 {
            for d in 0..3 {
                ts.push((
                    t[a],
                    t[d],
                    k[e] * (b[a] * b[d] + c[a] * c[d]) / (4.0 * area),
                ));
                tm.push((t[a], t[d], area / 12.0 * if a == d { 2.0 } else { 1.0 }));
            }
        }
    }
    Ok((
        CsrMatrix::from_triplets(n, &ts),
        CsrMatrix::from_triplets(n, &tm),
    ))
}

/// Source term for the FEM load `b = M_h g`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FemLoad {
    /// `g = 2π² sin(πx) sin(πy)`.
    #[default]
    Sine,
    Constant {
        value: f64,
    },
}

pub fn sine_source(p: [f64; 2]) -> f64 {
    use std::f64::consts::PI;
    2.0 * PI * PI * (PI * p[0]).sin() * (PI * p[1]).sin()
}

/// A discretized elliptic problem on the free nodes.
#[derive(Clone, Debug)]
pub struct FemProblem {
    /// `A_ff` as a network, with free-node coordinates.
    pub network: SpatialNetwork,
    /// Free-free block of the consistent mass matrix.
    pub mass_matrix: CsrMatrix,
    pub load: Vec<f64>,
    /// `free_nodes[k]` is the mesh node of network node `k`.
    pub free_nodes: Vec<usize>,
    pub mesh: TriMesh,
    pub coefficients: Vec<f64>,
    pub h: f64,
    /// Some stiffness entry was positive off the diagonal, so the network is signed.
    pub non_m_matrix: bool,
}

pub fn gen_fem_p1(mesh: TriMesh, field: &CoefficientField, load: &FemLoad) -> Result<FemProblem> {
    let k = field.evaluate(&mesh)?;
    let (stiff, mass) = assemble_p1(&mesh, &k)?;
    let mut is_bnd = vec![false; mesh.points.len()];
    for &b in &mesh.boundary {
        is_bnd[b] = true;
    }
    let free_nodes: Vec<usize> = (0..mesh.points.len()).filter(|&x| !is_bnd[x]).collect();
    if free_nodes.is_empty() {
        return Err(Error::InvalidArgument("mesh has no interior nodes".into()));
    }
    let a = stiff.principal_submatrix(&free_nodes);
    let mass_ff = mass.principal_submatrix(&free_nodes);
    let g: Vec<f64> = match load {
        FemLoad::Sine => mesh.points.iter().map(|&p| sine_source(p)).collect(),
        FemLoad::Constant { value } => vec![*value; mesh.points.len()],
    };
    // g vanishes on the boundary only for the sine load; use the full mass rows
    let mut full = vec![0.0; mesh.points.len()];
    mass.matvec(&g, &mut full);
    let rhs: Vec<f64> = free_nodes.iter().map(|&x| full[x]).collect();

    let network = SpatialNetwork::from_operator(&a)?;
    let non_m_matrix = network.is_signed();
    if non_m_matrix {
        log::warn!("stiffness matrix is not an M-matrix; using a signed network");
    }
    let coords = free_nodes.iter().map(|&x| mesh.points[x]).collect();
    let network = network.with_coords(coords)?;
    Ok(FemProblem {
        network,
        mass_matrix: mass_ff,
        load: rhs,
        h: mesh.mesh_size(),
        free_nodes,
        mesh,
        coefficients: k,
        non_m_matrix,
    })
}

impl FemProblem {
    /// Zero-extends a free-node vector to all mesh nodes.
    pub fn expand(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.free_nodes.len(), v.len())?;
        let mut out = vec![0.0; self.mesh.points.len()];
        for (k, &x) in self.free_nodes.iter().enumerate() {
            out[x] = v[k];
        }
        Ok(out)
    }
}
