//! Run configuration: TOML file, environment and flags, in increasing precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use netcem::linalg::Tolerances;
use netcem::study::StudyGrid;
use netcem::CpoPolicy;

use crate::CliError;

pub const THREADS_ENV: &str = "NETCEM_THREADS";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub threads: Option<Vec<usize>>,
    pub repeats: Option<usize>,
}

/// Contents of a config file. Every key is optional; unknown keys are errors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    pub bundle: Option<PathBuf>,
    pub seed: Option<u64>,
    pub contrast: Option<f64>,
    /// Number of subgraphs N.
    pub subgraphs: Option<usize>,
    pub partition: Option<PathBuf>,
    pub layers: Option<usize>,
    /// Use the global (non-localized) basis.
    pub global: Option<bool>,
    pub nov: Option<usize>,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
    pub c_po: Option<CpoPolicy>,
    pub tolerances: Option<Tolerances>,
    pub study: Option<StudyGrid>,
    pub bench: Option<BenchSection>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: FileConfig) -> FileConfig {
        macro_rules! pick {
            ($($f:ident),*) => { FileConfig { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            preset, bundle, seed, contrast, subgraphs, partition, layers, global, nov, threads,
            output, c_po, tolerances, study, bench
        )
    }

    /// Range checks on everything that is set.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.preset.is_some() && self.bundle.is_some() {
            return bad("set either 'preset' or 'bundle', not both".into());
        }
        if let Some(c) = self.contrast {
            if !(c.is_finite() && c >= 1.0) {
                return bad(format!("contrast must be a finite number >= 1, got {c}"));
            }
        }
        for (name, v, max) in [
            ("subgraphs", self.subgraphs, 1_000_000),
            ("nov", self.nov, 100_000),
            ("threads", self.threads, 4096),
        ] {
            if let Some(v) = v {
                if v == 0 || v > max {
                    return bad(format!("{name} must be in 1..={max}, got {v}"));
                }
            }
        }
        if let Some(l) = self.layers {
            if l > 10_000 {
                return bad(format!("layers must be at most 10000, got {l}"));
            }
        }
        match &self.c_po {
            Some(CpoPolicy::Computed { fallback })
                if !(*fallback > 0.0 && fallback.is_finite()) =>
            {
                return bad("c_po fallback must be positive".into())
            }
            Some(CpoPolicy::Uniform { value }) if !(*value > 0.0 && value.is_finite()) => {
                return bad("c_po value must be positive".into())
            }
            Some(CpoPolicy::PerSubgraph { values })
                if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) =>
            {
                return bad("c_po values must be positive".into())
            }
            _ => {}
        }
        if let Some(t) = &self.tolerances {
            for (name, v) in [
                ("cg", t.cg),
                ("eigen", t.eigen),
                ("symmetry", t.symmetry),
                ("galerkin", t.galerkin),
            ] {
                if !(v > 0.0 && v < 1.0) {
                    return bad(format!("tolerance {name} must be in (0, 1), got {v}"));
                }
            }
            if t.cg_max_iter == 0 {
                return bad("cg_max_iter must be positive".into());
            }
        }
        if let Some(g) = &self.study {
            if g.n.is_empty() || g.layers.is_empty() || g.nov.is_empty() || g.contrast.is_empty() {
                return bad("every study axis needs at least one value".into());
            }
            if g.n.contains(&0)
                || g.nov.contains(&0)
                || g.contrast.iter().any(|c| !(c.is_finite() && *c >= 1.0))
            {
                return bad("study values out of range".into());
            }
        }
        if let Some(b) = &self.bench {
            if b.threads
                .as_ref()
                .is_some_and(|t| t.is_empty() || t.contains(&0))
                || b.repeats == Some(0)
            {
                return bad("bench threads and repeats must be positive".into());
            }
        }
        Ok(())
    }
}

/// Thread count from the environment, if set.
pub fn env_threads() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            CliError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            ))
        }),
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("presett = \"x\"").is_err());
        assert!(toml::from_str::<FileConfig>("[tolerances]\ncgg = 1e-3").is_err());
        let ok: FileConfig =
            toml::from_str("nov = 4\n[c_po]\nkind = \"uniform\"\nvalue = 2.0").unwrap();
        assert_eq!(ok.nov, Some(4));
        assert_eq!(ok.c_po, Some(CpoPolicy::Uniform { value: 2.0 }));
    }

    #[test]
    fn overlay_prefers_the_top_layer() {
        let file = FileConfig {
            nov: Some(2),
            layers: Some(1),
            ..Default::default()
        };
        let flags = FileConfig {
            nov: Some(5),
            ..Default::default()
        };
        let merged = file.overlay(flags);
        assert_eq!(merged.nov, Some(5));
        assert_eq!(merged.layers, Some(1));
    }

    #[test]
    fn ranges_are_checked() {
        let c = FileConfig {
            nov: Some(0),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = FileConfig {
            contrast: Some(0.5),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = FileConfig {
            preset: Some("a".into()),
            bundle: Some("b".into()),
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
