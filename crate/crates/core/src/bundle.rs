//! Network bundle directories: `L.mtx`, `M.txt`, `f.txt`, optional
//! `dirichlet.txt`, `coords.txt` and `Mh.mtx`, plus `manifest.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::linalg::mm::{self, format_real};
use crate::linalg::CsrMatrix;
use crate::network::SpatialNetwork;
use crate::problem::MethodDefaults;

/// Files covered by the content hash, in hashing order.
const HASHED: &[&str] = &[
    "L.mtx",
    "M.txt",
    "f.txt",
    "dirichlet.txt",
    "coords.txt",
    "Mh.mtx",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub node_count: usize,
    pub edge_count: usize,
    /// SHA-256 over the names and bytes of the bundle files.
    pub content_hash: String,
    /// Preset name, or `"import"`.
    pub source: String,
    pub seed: Option<u64>,
    pub contrast: Option<f64>,
    pub signed: bool,
    pub defaults: Option<MethodDefaults>,
    pub tool_version: String,
}

#[derive(Clone, Debug)]
pub struct Bundle {
    pub network: SpatialNetwork,
    pub load: Vec<f64>,
    pub l2_weight: Option<CsrMatrix>,
    pub manifest: Manifest,
}

/// Metadata recorded alongside generated networks.
#[derive(Clone, Debug, Default)]
pub struct BundleMeta {
    pub source: String,
    pub seed: Option<u64>,
    pub contrast: Option<f64>,
    pub defaults: Option<MethodDefaults>,
}

/// Laplacian `L` (zero row sums) as a sparse matrix.
pub fn laplacian(net: &SpatialNetwork) -> CsrMatrix {
    let mut t = Vec::with_capacity(4 * net.edges().len());
    for e in net.edges() {
        t.push((e.x, e.x, e.weight));
        t.push((e.y, e.y, e.weight));
        t.push((e.x, e.y, -e.weight));
        t.push((e.y, e.x, -e.weight));
    }
    CsrMatrix::from_triplets(net.node_count(), &t)
}

fn content_hash(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for name in HASHED {
        let path = dir.join(name);
        if path.exists() {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            h.update(name.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    }
    Ok(h.finalize()
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
}

pub fn write_bundle(
    dir: &Path,
    net: &SpatialNetwork,
    load: &[f64],
    l2_weight: Option<&CsrMatrix>,
    meta: &BundleMeta,
) -> Result<Manifest> {
    check_len(net.node_count(), load.len())?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    mm::write_symmetric(&dir.join("L.mtx"), &laplacian(net))?;
    mm::write_vector(&dir.join("M.txt"), net.masses())?;
    mm::write_vector(&dir.join("f.txt"), load)?;
    for name in ["dirichlet.txt", "coords.txt", "Mh.mtx"] {
        let path = dir.join(name);
        if path.exists() {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    if !net.dirichlet().is_empty() {
        let text: String = net.dirichlet().iter().map(|x| format!("{x}\n")).collect();
        let path = dir.join("dirichlet.txt");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    if let Some(coords) = net.coords() {
        let text: String = coords
            .iter()
            .map(|c| format!("{} {}\n", format_real(c[0]), format_real(c[1])))
            .collect();
        let path = dir.join("coords.txt");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    if let Some(m) = l2_weight {
        check_len(net.node_count(), m.dim())?;
        mm::write_symmetric(&dir.join("Mh.mtx"), m)?;
    }
    let manifest = Manifest {
        node_count: net.node_count(),
        edge_count: net.edges().len(),
        content_hash: content_hash(dir)?,
        source: meta.source.clone(),
        seed: meta.seed,
        contrast: meta.contrast,
        signed: net.is_signed(),
        defaults: meta.defaults.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn read_coords(path: &Path) -> Result<Vec<[f64; 2]>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, k + 1, "coordinates must be numbers"))?;
            if v.len() != 2 {
                return Err(Error::parse(path, k + 1, "expected 'x y'"));
            }
            Ok([v[0], v[1]])
        })
        .collect()
}

/// Reads a bundle. Without a manifest (hand-made bundles) one is synthesized;
/// with one, node count and content hash must match.
pub fn read_bundle(dir: &Path) -> Result<Bundle> {
    let l = mm::read_coordinate(&dir.join("L.mtx"))?;
    if l.nrows != l.ncols {
        return Err(Error::InvalidNetwork("L.mtx must be square".into()));
    }
    let n = l.nrows;
    let masses = mm::read_vector(&dir.join("M.txt"))?;
    check_len(n, masses.len())?;
    let load = mm::read_vector(&dir.join("f.txt"))?;
    check_len(n, load.len())?;

    let mut edges = Vec::new();
    let mut signed = false;
    let mut seen = std::collections::HashSet::new();
    for &(r, c, v) in &l.entries {
        if r == c || v == 0.0 {
            continue;
        }
        let key = (r.min(c), r.max(c));
        // general storage lists both triangles; keep one copy
        if !seen.insert(key) {
            continue;
        }
        signed |= v > 0.0;
        edges.push((key.0, key.1, -v));
    }
    let mut net = if signed {
        SpatialNetwork::new_signed(n, edges, masses)?
    } else {
        SpatialNetwork::new(n, edges, masses)?
    };
    let dpath = dir.join("dirichlet.txt");
    if dpath.exists() {
        let text = fs::read_to_string(&dpath).map_err(|e| Error::io(&dpath, e))?;
        let nodes = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(k, l)| {
                l.trim()
                    .parse()
                    .map_err(|_| Error::parse(&dpath, k + 1, "node index expected"))
            })
            .collect::<Result<Vec<usize>>>()?;
        net = net.with_dirichlet(nodes)?;
    }
    let cpath = dir.join("coords.txt");
    if cpath.exists() {
        net = net.with_coords(read_coords(&cpath)?)?;
    }
    let mpath = dir.join("Mh.mtx");
    let l2_weight = if mpath.exists() {
        let m = mm::read_coordinate(&mpath)?.to_csr()?;
        check_len(n, m.dim())?;
        Some(m)
    } else {
        None
    };

    let hash = content_hash(dir)?;
    let mpath = dir.join("manifest.json");
    let manifest = if mpath.exists() {
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.node_count != n {
            return Err(Error::DimensionMismatch {
                expected: m.node_count,
                actual: n,
            });
        }
        if m.content_hash != hash {
            return Err(Error::InvalidNetwork(format!(
                "bundle content hash {hash} does not match manifest {}",
                m.content_hash
            )));
        }
        m
    } else {
        Manifest {
            node_count: n,
            edge_count: net.edges().len(),
            content_hash: hash,
            source: "import".into(),
            seed: None,
            contrast: None,
            signed,
            defaults: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    };
    Ok(Bundle {
        network: net,
        load,
        l2_weight,
        manifest,
    })
}
