//! A resolved run: configuration with every default filled in, the loaded
//! problem and the output directory.

use std::path::{Path, PathBuf};

use serde_json::json;

use netcem::bundle::read_bundle;
use netcem::linalg::{CsrMatrix, Tolerances};
use netcem::network::ReducedNetwork;
use netcem::problem::{preset, MethodDefaults, PresetOptions, Problem, DEFAULT_SEED};
use netcem::study::{c_po_for, config_hash, git_hash, partition_for};
use netcem::{load_partition, CpoPolicy, MethodConfig, Partition};

use crate::config::FileConfig;
use crate::CliError;

pub struct Session {
    pub command: String,
    /// Fully resolved configuration, as written to `run.toml`.
    pub config: FileConfig,
    pub problem: Problem,
    /// Map back to the bundle's numbering when it had Dirichlet nodes.
    pub reduced: Option<ReducedNetwork>,
    pub output: PathBuf,
    /// C_po came from the config rather than the preset.
    pub c_po_explicit: bool,
}

fn restrict_matrix(m: &CsrMatrix, r: &ReducedNetwork) -> CsrMatrix {
    let mut local = vec![usize::MAX; r.full_count];
    for (k, &x) in r.free.iter().enumerate() {
        local[x] = k;
    }
    let t: Vec<_> = m
        .triplets()
        .filter(|&(i, j, _)| local[i] != usize::MAX && local[j] != usize::MAX)
        .map(|(i, j, v)| (local[i], local[j], v))
        .collect();
    CsrMatrix::from_triplets(r.free.len(), &t)
}

fn load_bundle(dir: &Path) -> Result<(Problem, Option<ReducedNetwork>), CliError> {
    let b = read_bundle(dir)?;
    let m = &b.manifest;
    let defaults = m.defaults.clone().unwrap_or(MethodDefaults {
        blocks: (2, 2),
        layers: 3,
        nov: 3,
        c_po: CpoPolicy::default(),
    });
    let (network, load, l2_weight, reduced) = if b.network.dirichlet().is_empty() {
        (b.network, b.load, b.l2_weight, None)
    } else {
        let r = b.network.reduce_dirichlet()?;
        let load = r.restrict(&b.load)?;
        let l2 = match b.l2_weight {
            Some(mh) if mh.dim() == r.full_count => Some(restrict_matrix(&mh, &r)),
            other => other,
        };
        (r.network.clone(), load, l2, Some(r))
    };
    let problem = Problem {
        name: m.source.clone(),
        network,
        load,
        l2_weight,
        fem: None,
        contrast: m.contrast.unwrap_or(1.0),
        seed: m.seed.unwrap_or(DEFAULT_SEED),
        defaults,
    };
    Ok((problem, reduced))
}

impl Session {
    pub fn open(command: &str, cfg: FileConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let (problem, reduced) = match (&cfg.preset, &cfg.bundle) {
            (Some(name), None) => {
                let opts = PresetOptions {
                    seed: cfg.seed,
                    contrast: cfg.contrast,
                };
                (
                    preset(name, &opts).map_err(|e| CliError::Config(e.to_string()))?,
                    None,
                )
            }
            (None, Some(dir)) => {
                if cfg.contrast.is_some() {
                    return Err(CliError::Config(
                        "'contrast' only applies to presets".into(),
                    ));
                }
                load_bundle(dir)?
            }
            _ => return Err(CliError::Config("set 'preset' or 'bundle'".into())),
        };
        let c_po_explicit = cfg.c_po.is_some();
        let d = &problem.defaults;
        let subgraphs = cfg.subgraphs.unwrap_or(d.blocks.0 * d.blocks.1);
        let c_po = cfg
            .c_po
            .clone()
            .unwrap_or_else(|| c_po_for(&problem, subgraphs));
        let config = FileConfig {
            seed: Some(problem.seed),
            contrast: cfg.preset.as_ref().map(|_| problem.contrast),
            subgraphs: Some(subgraphs),
            layers: Some(cfg.layers.unwrap_or(d.layers)),
            global: Some(cfg.global.unwrap_or(false)),
            nov: Some(cfg.nov.unwrap_or(d.nov)),
            output: Some(
                cfg.output
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("netcem-out")),
            ),
            c_po: Some(c_po),
            tolerances: Some(cfg.tolerances.clone().unwrap_or_default()),
            ..cfg
        };
        let output = config.output.clone().expect("resolved");
        std::fs::create_dir_all(&output)
            .map_err(|e| CliError::Io(format!("{}: {e}", output.display())))?;
        Ok(Session {
            command: command.to_string(),
            config,
            problem,
            reduced,
            output,
            c_po_explicit,
        })
    }

    pub fn tolerances(&self) -> Tolerances {
        self.config.tolerances.clone().unwrap_or_default()
    }

    pub fn method(&self) -> MethodConfig {
        let c = &self.config;
        MethodConfig {
            layers: if c.global == Some(true) {
                None
            } else {
                c.layers
            },
            nov: c.nov.expect("resolved"),
            c_po: c.c_po.clone().expect("resolved"),
            tolerances: self.tolerances(),
            ..Default::default()
        }
    }

    pub fn partition(&self) -> Result<(Partition, Vec<String>), CliError> {
        let n = self.config.subgraphs.expect("resolved");
        match &self.config.partition {
            Some(path) => {
                let (part, warnings) = load_partition(&self.problem.network, path)?;
                if self.config.subgraphs.is_some() && part.count() != n {
                    log::info!(
                        "partition file has {} subgraphs; ignoring subgraphs = {n}",
                        part.count()
                    );
                }
                Ok((part, warnings))
            }
            None => Ok((partition_for(&self.problem, n)?, Vec::new())),
        }
    }

    /// Node function in the numbering of the input (Dirichlet nodes zero).
    pub fn expand(&self, v: &[f64]) -> Result<Vec<f64>, CliError> {
        Ok(match &self.reduced {
            Some(r) => r.expand(v)?,
            None => v.to_vec(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.output.join(name)
    }

    pub fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).map_err(netcem::Error::from)?;
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    /// Hash over the settings that determine the numbers (not threads or paths).
    pub fn config_hash(&self) -> Result<String, CliError> {
        let numeric = FileConfig {
            threads: None,
            output: None,
            ..self.config.clone()
        };
        Ok(config_hash(&numeric)?)
    }

    /// `run.toml` (re-runnable with `--config`) and `run.json` provenance.
    pub fn finish(&self, outputs: &[&str], extra: serde_json::Value) -> Result<(), CliError> {
        let toml_text =
            toml::to_string(&self.config).map_err(|e| CliError::Config(e.to_string()))?;
        let path = self.path("run.toml");
        std::fs::write(&path, toml_text)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let manifest = json!({
            "command": self.command,
            "config_hash": self.config_hash()?,
            "seed": self.problem.seed,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "git_hash": git_hash(),
            "threads": rayon::current_num_threads(),
            "outputs": outputs,
            "summary": extra,
        });
        self.write_json("run.json", &manifest)?;
        println!(
            "{}",
            serde_json::to_string(&manifest["summary"]).unwrap_or_default()
        );
        Ok(())
    }
}
