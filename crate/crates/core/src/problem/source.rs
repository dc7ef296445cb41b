use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::SpatialNetwork;
use crate::problem::fem::sine_source;

/// Right-hand sides for network problems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceKind {
    /// `2π² sin(πx) sin(πy)` at the node coordinates.
    FemSine,
    /// One on every free node.
    Uniform,
    /// Unit impulse at one node.
    Point { node: usize },
    /// Independent uniform draws from `[-1, 1]` on free nodes.
    SeededRandom { seed: u64 },
}

pub fn gen_source(net: &SpatialNetwork, kind: &SourceKind) -> Result<Vec<f64>> {
    let n = net.node_count();
    let free = |x: usize| !net.is_dirichlet(x);
    Ok(match kind {
        SourceKind::FemSine => {
            let coords = net.coords().ok_or_else(|| {
                Error::InvalidArgument("fem-sine source needs node coordinates".into())
            })?;
            coords
                .iter()
                .enumerate()
                .map(|(x, &p)| if free(x) { sine_source(p) } else { 0.0 })
                .collect()
        }
        SourceKind::Uniform => (0..n).map(|x| if free(x) { 1.0 } else { 0.0 }).collect(),
        SourceKind::Point { node } => {
            if *node >= n {
                return Err(Error::InvalidArgument(format!(
                    "point source at node {node} out of range"
                )));
            }
            let mut f = vec![0.0; n];
            f[*node] = 1.0;
            f
        }
        SourceKind::SeededRandom { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..n)
                .map(|x| {
                    let v = rng.gen_range(-1.0..1.0);
                    if free(x) {
                        v
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    })
}
