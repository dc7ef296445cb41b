//! Reproducible test problems: channel lattices and P1 finite element
//! discretizations, plus named presets with their default method parameters.

pub mod fem;
pub mod lattice;
pub mod source;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::network::SpatialNetwork;
use crate::spectral::CpoPolicy;

pub use fem::{assemble_p1, gen_fem_p1, CoefficientField, FemLoad, FemProblem, TriMesh};
pub use lattice::{gen_lattice_network, lattice_index, MassRule, MediumSpec, Region};
pub use source::{gen_source, SourceKind};

/// Method parameters a preset is meant to be run with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodDefaults {
    /// Block grid for the coordinate partition.
    pub blocks: (usize, usize),
    pub layers: usize,
    pub nov: usize,
    pub c_po: CpoPolicy,
}

/// A network problem ready for the pipeline (Dirichlet nodes already eliminated).
#[derive(Clone, Debug)]
pub struct Problem {
    pub name: String,
    pub network: SpatialNetwork,
    pub load: Vec<f64>,
    /// Fine mass matrix for L² errors (FEM problems only).
    pub l2_weight: Option<CsrMatrix>,
    pub fem: Option<FemProblem>,
    pub contrast: f64,
    pub seed: u64,
    pub defaults: MethodDefaults,
}

#[derive(Clone, Debug, Default)]
pub struct PresetOptions {
    pub seed: Option<u64>,
    pub contrast: Option<f64>,
}

pub const PRESETS: &[&str] = &[
    "lattice-2ch-100",
    "lattice-1ch-2500",
    "lattice-2ch-2500",
    "lattice-3ch-2500",
    "lattice-bench-500",
    "fem-square-23k",
    "fem-lshape",
];

/// Default seed of every preset.
pub const DEFAULT_SEED: u64 = 20_240_601;

/// One-node-thick channels of the 50 × 50 presets, eight nodes long and
/// straddling block boundaries of the 5 × 5 block partition.
pub fn channel_regions(count: usize) -> Result<Vec<Region>> {
    let spans: &[(usize, usize)] = match count {
        1 => &[(25, 16)],
        2 => &[(17, 16), (33, 26)],
        3 => &[(12, 6), (25, 21), (38, 36)],
        _ => {
            return Err(Error::InvalidArgument(format!(
                "no 50x50 preset with {count} channels"
            )))
        }
    };
    Ok(spans
        .iter()
        .map(|&(y, x0)| Region::new(x0, y, x0 + 7, y))
        .collect())
}

/// The strip mask of the FEM presets.
pub fn fem_strips(contrast: f64, seed: u64) -> CoefficientField {
    CoefficientField::RandomStrips {
        background: 1.0,
        contrast,
        count: 16,
        min_length: 0.15,
        max_length: 0.45,
        width: 0.02,
        seed,
    }
}

impl Problem {
    /// C_po policy for an `bx`-wide block grid. Uniform FEM values are
    /// `H/h`, so they scale inversely with the block count.
    pub fn c_po_for_blocks(&self, bx: usize) -> CpoPolicy {
        match (&self.defaults.c_po, &self.fem) {
            (CpoPolicy::Uniform { value }, Some(_)) if bx > 0 => CpoPolicy::Uniform {
                value: value * self.defaults.blocks.0 as f64 / bx as f64,
            },
            (c, _) => c.clone(),
        }
    }
}

pub fn preset(name: &str, opts: &PresetOptions) -> Result<Problem> {
    let seed = opts.seed.unwrap_or(DEFAULT_SEED);
    let lattice = |nx: usize,
                   ny: usize,
                   regions: Vec<Region>,
                   xi: f64,
                   defaults: MethodDefaults|
     -> Result<Problem> {
        let medium = MediumSpec {
            contrast: xi,
            regions,
            seed,
            ..Default::default()
        };
        let network = gen_lattice_network(nx, ny, &medium, &MassRule::default())?;
        let load = gen_source(&network, &SourceKind::Uniform)?;
        Ok(Problem {
            name: name.to_string(),
            network,
            load,
            l2_weight: None,
            fem: None,
            contrast: xi,
            seed,
            defaults,
        })
    };
    let lattice_defaults = |blocks| MethodDefaults {
        blocks,
        layers: 3,
        nov: 3,
        c_po: CpoPolicy::default(),
    };
    match name {
        "lattice-2ch-100" => lattice(
            10,
            10,
            vec![Region::new(3, 3, 6, 3), Region::new(3, 6, 6, 6)],
            opts.contrast.unwrap_or(1e6),
            lattice_defaults((2, 2)),
        ),
        "lattice-1ch-2500" | "lattice-2ch-2500" | "lattice-3ch-2500" => {
            let count = name.as_bytes()[8] as usize - b'0' as usize;
            lattice(
                50,
                50,
                channel_regions(count)?,
                opts.contrast.unwrap_or(1e4),
                lattice_defaults((5, 5)),
            )
        }
        "lattice-bench-500" => lattice(
            200,
            100,
            // staggered channels, eight nodes long, one per pair of block rows
            (0..10)
                .flat_map(|k| {
                    (0..8).map(move |c| {
                        Region::new(
                            4 + 24 * c + 6 * (k % 2),
                            5 + 10 * k,
                            11 + 24 * c + 6 * (k % 2),
                            5 + 10 * k,
                        )
                    })
                })
                .collect(),
            opts.contrast.unwrap_or(1e4),
            MethodDefaults {
                blocks: (25, 20),
                layers: 2,
                nov: 3,
                c_po: CpoPolicy::default(),
            },
        ),
        "fem-square-23k" | "fem-lshape" => {
            let contrast = opts.contrast.unwrap_or(1e4);
            let mesh = if name == "fem-square-23k" {
                TriMesh::unit_square(109)?
            } else {
                TriMesh::l_shape_graded(40, 10.0)?
            };
            let fem = gen_fem_p1(mesh, &fem_strips(contrast, seed), &FemLoad::Sine)?;
            let cell = if name == "fem-square-23k" {
                1.0 / 109.0
            } else {
                fem.h / std::f64::consts::SQRT_2
            };
            let blocks = (10, 10);
            Ok(Problem {
                name: name.to_string(),
                network: fem.network.clone(),
                load: fem.load.clone(),
                l2_weight: Some(fem.mass_matrix.clone()),
                contrast,
                seed,
                defaults: MethodDefaults {
                    blocks,
                    layers: 4,
                    nov: 4,
                    c_po: CpoPolicy::Uniform {
                        value: (1.0 / blocks.0 as f64) / cell,
                    },
                },
                fem: Some(fem),
            })
        }
        _ => Err(Error::InvalidArgument(format!(
            "unknown preset '{name}'; available: {}",
            PRESETS.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_presets_are_well_posed() {
        for name in [
            "lattice-2ch-100",
            "lattice-1ch-2500",
            "lattice-2ch-2500",
            "lattice-3ch-2500",
        ] {
            let p = preset(name, &PresetOptions::default()).unwrap();
            assert!(p.network.check_well_posedness().pass(), "{name}");
        }
        let p = preset("lattice-2ch-100", &PresetOptions::default()).unwrap();
        assert_eq!(p.network.node_count(), 100);
        assert_eq!(p.contrast, 1e6);
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(
            preset("nope", &PresetOptions::default()),
            Err(Error::InvalidArgument(_))
        ));
    }
}
