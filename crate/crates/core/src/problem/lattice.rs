//! High-contrast channel media on a 4-neighbour lattice.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::SpatialNetwork;

/// Inclusive rectangle of lattice nodes `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Region { x0, y0, x1, y1 }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    fn overlaps(&self, o: &Region) -> bool {
        self.x0 <= o.x1 && o.x0 <= self.x1 && self.y0 <= o.y1 && o.y0 <= self.y1
    }
}

/// Background weight, contrast and the high-contrast regions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MediumSpec {
    pub base_weight: f64,
    pub contrast: f64,
    pub regions: Vec<Region>,
    /// Region weights are drawn from `[c_inf ξ, c_sup ξ]`.
    pub c_inf: f64,
    pub c_sup: f64,
    /// Minimum distance (in lattice steps) between a region and the lattice border.
    pub margin: usize,
    pub seed: u64,
}

impl Default for MediumSpec {
    fn default() -> Self {
        MediumSpec {
            base_weight: 1.0,
            contrast: 1.0,
            regions: Vec::new(),
            c_inf: 1.0,
            c_sup: 1.0,
            margin: 1,
            seed: 0,
        }
    }
}

impl MediumSpec {
    /// Horizontal one-node-thick channels on the given rows, spanning `[x0, x1]`.
    pub fn channels(rows: &[usize], x0: usize, x1: usize, contrast: f64) -> Self {
        MediumSpec {
            contrast,
            regions: rows.iter().map(|&y| Region::new(x0, y, x1, y)).collect(),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MassRule {
    Constant {
        value: f64,
    },
    /// Independent uniform draws from `[lo, hi]`.
    Uniform {
        lo: f64,
        hi: f64,
        seed: u64,
    },
}

impl Default for MassRule {
    fn default() -> Self {
        MassRule::Constant { value: 1.0 }
    }
}

/// Node index of lattice point `(x, y)`.
pub fn lattice_index(nx: usize, x: usize, y: usize) -> usize {
    y * nx + x
}

/// `nx × ny` lattice. Edges with both endpoints in the same region carry the
/// region weight, all others the base weight. Coordinates are lattice indices.
pub fn gen_lattice_network(
    nx: usize,
    ny: usize,
    medium: &MediumSpec,
    mass: &MassRule,
) -> Result<SpatialNetwork> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidArgument(format!(
            "lattice must be at least 2x2, got {nx}x{ny}"
        )));
    }
    if !(medium.contrast >= 1.0) || !medium.contrast.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "contrast must be >= 1, got {}",
            medium.contrast
        )));
    }
    if !(medium.base_weight > 0.0) || !(medium.c_inf > 0.0) || medium.c_sup < medium.c_inf {
        return Err(Error::InvalidParameter(
            "need base_weight > 0 and 0 < c_inf <= c_sup".into(),
        ));
    }
    let m = medium.margin;
    for (k, r) in medium.regions.iter().enumerate() {
        if r.x0 > r.x1 || r.y0 > r.y1 || r.x1 >= nx || r.y1 >= ny {
            return Err(Error::InvalidArgument(format!(
                "region {k} {r:?} outside the {nx}x{ny} lattice"
            )));
        }
        if r.x0 < m || r.y0 < m || r.x1 + m >= nx || r.y1 + m >= ny {
            return Err(Error::InvalidArgument(format!(
                "region {k} violates the border margin {m}"
            )));
        }
        if let Some(j) = medium.regions[..k].iter().position(|o| o.overlaps(r)) {
            return Err(Error::InvalidArgument(format!(
                "regions {j} and {k} overlap"
            )));
        }
    }
    let region_of = |x: usize, y: usize| medium.regions.iter().position(|r| r.contains(x, y));

    let mut rng = ChaCha8Rng::seed_from_u64(medium.seed);
    let mut edges = Vec::with_capacity(2 * nx * ny);
    let weight = |a: Option<usize>, b: Option<usize>, rng: &mut ChaCha8Rng| match (a, b) {
        (Some(p), Some(q)) if p == q => {
            let c = if medium.c_sup > medium.c_inf {
                rng.gen_range(medium.c_inf..medium.c_sup)
            } else {
                medium.c_inf
            };
            c * medium.contrast
        }
        _ => medium.base_weight,
    };
    for y in 0..ny {
        for x in 0..nx {
            let here = region_of(x, y);
            if x + 1 < nx {
                let w = weight(here, region_of(x + 1, y), &mut rng);
                edges.push((lattice_index(nx, x, y), lattice_index(nx, x + 1, y), w));
            }
            if y + 1 < ny {
                let w = weight(here, region_of(x, y + 1), &mut rng);
                edges.push((lattice_index(nx, x, y), lattice_index(nx, x, y + 1), w));
            }
        }
    }
    let n = nx * ny;
    let masses = match *mass {
        MassRule::Constant { value } => vec![value; n],
        MassRule::Uniform { lo, hi, seed } => {
            if !(0.0 <= lo && lo <= hi) {
                return Err(Error::InvalidParameter(format!(
                    "bad mass range [{lo}, {hi}]"
                )));
            }
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| if hi > lo { r.gen_range(lo..hi) } else { lo })
                .collect()
        }
    };
    let coords = (0..n).map(|k| [(k % nx) as f64, (k / nx) as f64]).collect();
    let net = SpatialNetwork::new(n, edges, masses)?.with_coords(coords)?;

    let background: Vec<bool> = (0..n)
        .map(|k| region_of(k % nx, k / nx).is_none())
        .collect();
    let (_, comps) = net.components(Some(&background));
    if comps > 1 {
        return Err(Error::InvalidArgument(format!(
            "regions split the background into {comps} pieces"
        )));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_contrast_is_homogeneous() {
        let medium = MediumSpec::channels(&[2], 1, 3, 1.0);
        let net = gen_lattice_network(5, 5, &medium, &MassRule::default()).unwrap();
        assert_eq!(net.edges().len(), 40);
        assert!(net.edges().iter().all(|e| e.weight == 1.0));
        assert!(net.check_well_posedness().pass());
    }

    #[test]
    fn channel_edges_carry_contrast() {
        let medium = MediumSpec::channels(&[3, 6], 3, 6, 1e6);
        let net = gen_lattice_network(10, 10, &medium, &MassRule::default()).unwrap();
        let heavy: Vec<_> = net.edges().iter().filter(|e| e.weight == 1e6).collect();
        assert_eq!(heavy.len(), 6);
        for e in heavy {
            assert_eq!(e.y, e.x + 1);
            assert!([3, 6].contains(&(e.x / 10)));
        }
    }

    #[test]
    fn drawn_weights_stay_in_range() {
        let medium = MediumSpec {
            c_inf: 0.5,
            c_sup: 2.0,
            contrast: 100.0,
            regions: vec![Region::new(2, 2, 6, 4)],
            ..Default::default()
        };
        let net = gen_lattice_network(10, 8, &medium, &MassRule::default()).unwrap();
        for e in net.edges() {
            assert!(e.weight == 1.0 || (50.0..=200.0).contains(&e.weight));
        }
        let again = gen_lattice_network(10, 8, &medium, &MassRule::default()).unwrap();
        assert_eq!(net.edges(), again.edges());
    }

    #[test]
    fn rejects_bad_regions() {
        let mass = MassRule::default();
        let outside = MediumSpec::channels(&[12], 1, 3, 10.0);
        assert!(matches!(
            gen_lattice_network(10, 10, &outside, &mass),
            Err(Error::InvalidArgument(_))
        ));
        let overlap = MediumSpec {
            regions: vec![Region::new(2, 2, 4, 4), Region::new(4, 4, 6, 6)],
            ..Default::default()
        };
        assert!(gen_lattice_network(10, 10, &overlap, &mass).is_err());
        let wall = MediumSpec {
            regions: vec![Region::new(1, 4, 8, 4)],
            margin: 1,
            ..Default::default()
        };
        // leaves the border columns free, so the background stays connected
        assert!(gen_lattice_network(10, 10, &wall, &mass).is_ok());
        let ring = MediumSpec {
            regions: vec![
                Region::new(2, 2, 6, 2),
                Region::new(2, 6, 6, 6),
                Region::new(2, 3, 2, 5),
                Region::new(6, 3, 6, 5),
            ],
            ..Default::default()
        };
        assert!(gen_lattice_network(10, 10, &ring, &mass).is_err());
    }
}
