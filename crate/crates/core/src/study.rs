//! Parameter sweeps over (n, l, Nov, ξ) and thread-scaling benchmarks.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{error_report, L2Weight};
use crate::error::{Error, Result};
use crate::linalg::Tolerances;
use crate::partition::{partition_blocks, partition_grow, GrowOptions, Partition};
use crate::pipeline::{fine_solve, run_pipeline, solve_with_aux, MethodConfig};
use crate::problem::{preset, PresetOptions, Problem};
use crate::spectral::{AuxSpace, CpoPolicy};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Hash of the exact bit patterns of a solution vector.
pub fn solution_hash(u: &[f64]) -> String {
    let bytes: Vec<u8> = u.iter().flat_map(|x| x.to_bits().to_le_bytes()).collect();
    sha256_hex(&bytes)
}

/// Block grid for a perfect square on networks with coordinates, greedy growth otherwise.
pub fn partition_for(problem: &Problem, n: usize) -> Result<Partition> {
    let root = (n as f64).sqrt().round() as usize;
    if root * root == n && problem.network.coords().is_some() {
        let (part, warnings) = partition_blocks(&problem.network, root, root)?;
        for w in warnings {
            log::warn!("{w}");
        }
        if part.count() == n {
            return Ok(part);
        }
        log::warn!(
            "block grid gave {} parts instead of {n}; growing instead",
            part.count()
        );
    }
    partition_grow(&problem.network, n, problem.seed, &GrowOptions::default())
}

/// C_po for `n` subgraphs, following the preset's policy.
pub fn c_po_for(problem: &Problem, n: usize) -> CpoPolicy {
    let root = (n as f64).sqrt().round() as usize;
    problem.c_po_for_blocks(root.max(1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyGrid {
    pub n: Vec<usize>,
    pub layers: Vec<usize>,
    pub nov: Vec<usize>,
    pub contrast: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub preset: String,
    pub seed: Option<u64>,
    pub grid: StudyGrid,
    /// Overrides the preset's C_po policy.
    #[serde(default)]
    pub c_po: Option<CpoPolicy>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub n: usize,
    pub l: usize,
    #[serde(rename = "Nov")]
    pub nov: usize,
    pub contrast: f64,
    #[serde(rename = "e_L2")]
    pub e_l2: Option<f64>,
    pub e_a: Option<f64>,
    pub t_aux_s: f64,
    pub t_cem_s: f64,
    pub threads: usize,
    pub seed: u64,
    /// Failure message; the numeric columns are empty when set.
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
    pub config_hash: String,
    pub git_hash: Option<String>,
    pub preset: String,
    pub seed: u64,
    pub tool_version: String,
}

pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(config)?.as_bytes()))
}

/// Commit of the working directory, when run inside a git checkout.
pub fn git_hash() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

fn l2_weight(problem: &Problem) -> (Option<Vec<f64>>, bool) {
    match problem.l2_weight {
        Some(_) => (None, true),
        None => (Some(problem.network.lumped_plus_mass()), false),
    }
}

/// Runs every grid cell in the order (ξ, n, Nov, l). Fine solves, partitions
/// and auxiliary spaces are shared between cells that agree on them. A failing
/// cell is recorded with its message and the sweep continues.
pub fn run_study(config: &StudyConfig) -> Result<StudyTable> {
    let g = &config.grid;
    if g.n.is_empty() || g.layers.is_empty() || g.nov.is_empty() || g.contrast.is_empty() {
        return Err(Error::InvalidArgument(
            "every grid axis needs at least one value".into(),
        ));
    }
    let threads = rayon::current_num_threads();
    let mut rows = Vec::new();
    let mut seed = config.seed.unwrap_or(crate::problem::DEFAULT_SEED);
    for &xi in &g.contrast {
        let problem = preset(
            &config.preset,
            &PresetOptions {
                seed: config.seed,
                contrast: Some(xi),
            },
        )?;
        seed = problem.seed;
        let fail_all = |rows: &mut Vec<StudyRow>, n: usize, nov: Option<usize>, msg: &str| {
            for &nv in g.nov.iter().filter(|&&v| nov.is_none_or(|x| x == v)) {
                for &l in &g.layers {
                    rows.push(StudyRow {
                        n,
                        l,
                        nov: nv,
                        contrast: xi,
                        e_l2: None,
                        e_a: None,
                        t_aux_s: 0.0,
                        t_cem_s: 0.0,
                        threads,
                        seed: problem.seed,
                        error: Some(msg.to_string()),
                    });
                }
            }
        };
        let u_ref = match fine_solve(&problem.network, &problem.load, &config.tolerances) {
            Ok(u) => u,
            Err(e) => {
                for &n in &g.n {
                    fail_all(&mut rows, n, None, &format!("fine solve: {e}"));
                }
                continue;
            }
        };
        let a = problem.network.operator_matrix();
        let (diag, _) = l2_weight(&problem);
        for &n in &g.n {
            let part = match partition_for(&problem, n) {
                Ok(p) => p,
                Err(e) => {
                    fail_all(&mut rows, n, None, &format!("partition: {e}"));
                    continue;
                }
            };
            let c_po = config.c_po.clone().unwrap_or_else(|| c_po_for(&problem, n));
            for &nov in &g.nov {
                let start = Instant::now();
                let aux = match AuxSpace::build(
                    &problem.network,
                    &part,
                    nov,
                    &c_po,
                    config.tolerances.eigen,
                ) {
                    Ok(a) => a,
                    Err(e) => {
                        fail_all(&mut rows, n, Some(nov), &format!("auxiliary space: {e}"));
                        continue;
                    }
                };
                let t_aux = start.elapsed().as_secs_f64();
                for &l in &g.layers {
                    let cfg = MethodConfig {
                        layers: Some(l),
                        nov,
                        c_po: c_po.clone(),
                        tolerances: config.tolerances.clone(),
                        ..Default::default()
                    };
                    let mut row = StudyRow {
                        n,
                        l,
                        nov,
                        contrast: xi,
                        e_l2: None,
                        e_a: None,
                        t_aux_s: t_aux,
                        t_cem_s: 0.0,
                        threads,
                        seed: problem.seed,
                        error: None,
                    };
                    let outcome =
                        solve_with_aux(&problem.network, &part, &aux, &problem.load, &cfg)
                            .and_then(|(_, _, sol, t_cem)| {
                                let weight = match (&problem.l2_weight, &diag) {
                                    (Some(m), _) => L2Weight::Matrix(m),
                                    (None, Some(d)) => L2Weight::Diagonal(d),
                                    (None, None) => unreachable!(),
                                };
                                Ok((error_report(&u_ref, &sol.u, &a, weight)?, t_cem))
                            });
                    match outcome {
                        Ok((r, t_cem)) => {
                            row.e_l2 = Some(r.e_l2);
                            row.e_a = Some(r.e_a);
                            row.t_cem_s = t_cem;
                        }
                        Err(e) => row.error = Some(e.to_string()),
                    }
                    log::info!(
                        "study cell n={n} l={l} Nov={nov} xi={xi:e}: {:?} {:?}",
                        row.e_a,
                        row.error
                    );
                    rows.push(row);
                }
            }
        }
    }
    Ok(StudyTable {
        rows,
        config_hash: config_hash(config)?,
        git_hash: git_hash(),
        preset: config.preset.clone(),
        seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("{}: {other:?}", path.display())),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(crate::linalg::mm::format_real).unwrap_or_default()
}

impl StudyTable {
    pub const COLUMNS: [&'static str; 11] = [
        "n", "l", "Nov", "contrast", "e_L2", "e_a", "t_aux_s", "t_cem_s", "threads", "seed",
        "error",
    ];

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(Self::COLUMNS)
            .map_err(|e| csv_err(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.l.to_string(),
                r.nov.to_string(),
                crate::linalg::mm::format_real(r.contrast),
                fmt_opt(r.e_l2),
                fmt_opt(r.e_a),
                format!("{:.6}", r.t_aux_s),
                format!("{:.6}", r.t_cem_s),
                r.threads.to_string(),
                r.seed.to_string(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub threads: usize,
    pub t_aux: f64,
    pub t_cem: f64,
    pub s_aux: f64,
    pub s_cem: f64,
    pub e_aux: f64,
    pub e_cem: f64,
    pub solution_hash: String,
    /// Relative spread of the repeats exceeded 20%.
    pub noisy: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    pub hashes_agree: bool,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

/// Coefficient of variation above 20%.
fn is_noisy(v: &[f64]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    mean > 0.0 && var.sqrt() / mean > 0.2
}

/// Times the pipeline on dedicated pools of each size. Speedups are relative
/// to the first entry of `threads`, which should be 1.
pub fn run_bench(
    problem: &Problem,
    part: &Partition,
    cfg: &MethodConfig,
    threads: &[usize],
    repeats: usize,
) -> Result<BenchTable> {
    if threads.is_empty() || threads.contains(&0) || repeats == 0 {
        return Err(Error::InvalidArgument(
            "need positive thread counts and repeats".into(),
        ));
    }
    let mut rows: Vec<BenchRow> = Vec::new();
    for &t in threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        let (mut aux_times, mut cem_times) = (Vec::new(), Vec::new());
        let mut hash = String::new();
        for _ in 0..repeats {
            let out = pool.install(|| run_pipeline(&problem.network, part, &problem.load, cfg))?;
            aux_times.push(out.timings.t_aux);
            cem_times.push(out.timings.t_cem);
            let h = solution_hash(&out.solution.u);
            if !hash.is_empty() && h != hash {
                log::warn!("solution hash changed between repeats on {t} threads");
            }
            hash = h;
        }
        let noisy = is_noisy(&aux_times) || is_noisy(&cem_times);
        let (t_aux, t_cem) = (median(&mut aux_times), median(&mut cem_times));
        let (base_aux, base_cem) = rows.first().map_or((t_aux, t_cem), |r| (r.t_aux, r.t_cem));
        let (s_aux, s_cem) = (base_aux / t_aux, base_cem / t_cem);
        rows.push(BenchRow {
            threads: t,
            t_aux,
            t_cem,
            s_aux,
            s_cem,
            e_aux: s_aux / t as f64,
            e_cem: s_cem / t as f64,
            solution_hash: hash,
            noisy,
        });
    }
    let hashes_agree = rows
        .windows(2)
        .all(|w| w[0].solution_hash == w[1].solution_hash);
    Ok(BenchTable { rows, hashes_agree })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_study() {
        let cfg = StudyConfig {
            preset: "lattice-2ch-100".into(),
            seed: None,
            grid: StudyGrid {
                n: vec![4],
                layers: vec![1],
                nov: vec![2],
                contrast: vec![1e6],
            },
            c_po: None,
            tolerances: Tolerances::default(),
        };
        let t = run_study(&cfg).unwrap();
        assert_eq!(t.rows.len(), 1);
        let r = &t.rows[0];
        assert!(r.error.is_none());
        assert!(r.e_a.unwrap() >= 0.0 && r.e_a.unwrap() < 1.0);
        let again = run_study(&cfg).unwrap();
        assert_eq!(again.rows[0].e_a, r.e_a);
        assert_eq!(again.config_hash, t.config_hash);

        let dir = tempfile::tempdir().unwrap();
        t.write_csv(&dir.path().join("s.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
        assert!(text.starts_with("n,l,Nov,contrast,e_L2,e_a,t_aux_s,t_cem_s,threads,seed,error\n"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn failing_cells_are_recorded() {
        let cfg = StudyConfig {
            preset: "lattice-2ch-100".into(),
            seed: None,
            grid: StudyGrid {
                n: vec![4, 1000],
                layers: vec![1, 2],
                nov: vec![1],
                contrast: vec![10.0],
            },
            c_po: None,
            tolerances: Tolerances::default(),
        };
        let t = run_study(&cfg).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert!(t.rows[..2].iter().all(|r| r.error.is_none()));
        assert!(t.rows[2..]
            .iter()
            .all(|r| r.error.is_some() && r.e_a.is_none()));
    }

    #[test]
    fn one_thread_bench_has_unit_speedup() {
        let p = preset("lattice-2ch-100", &PresetOptions::default()).unwrap();
        let part = partition_for(&p, 4).unwrap();
        let b = run_bench(&p, &part, &MethodConfig::default(), &[1, 2], 2).unwrap();
        assert_eq!(b.rows[0].s_aux, 1.0);
        assert_eq!(b.rows[0].s_cem, 1.0);
        assert!(b.hashes_agree);
    }

    #[test]
    fn noise_flag() {
        assert!(!is_noisy(&[1.0, 1.05, 0.98]));
        assert!(is_noisy(&[1.0, 2.0, 1.0]));
    }
}
