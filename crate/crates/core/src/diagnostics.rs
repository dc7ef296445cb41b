//! Measurable consequences of the convergence theory: errors, small
//! eigenvalue counts, basis decay, partitions of unity and cutoff functions.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{dense_sym_geig, lanczos_smallest_geig, CsrMatrix, DENSE_EIGEN_LIMIT};
use crate::network::{NodeSubset, SpatialNetwork};
use crate::partition::{hop_distances, Partition};
use crate::spectral::AuxSpace;

/// Weight of the L² norm in an error report.
pub enum L2Weight<'a> {
    /// Fine mass matrix `M_h` (FEM problems).
    Matrix(&'a CsrMatrix),
    /// Diagonal weights, e.g. the `s` diagonal for pure networks.
    Diagonal(&'a [f64]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Relative errors, or absolute norms when `relative` is false.
    #[serde(rename = "e_L2")]
    pub e_l2: f64,
    pub e_a: f64,
    pub reference_l2: f64,
    pub reference_a: f64,
    /// `"mass_matrix"` or `"diagonal"`.
    pub l2_weight: String,
    /// False when the reference vanishes and absolute norms are reported.
    pub relative: bool,
}

type NormFn<'a> = dyn Fn(&[f64]) -> f64 + 'a;

pub fn error_report(
    u_ref: &[f64],
    u_ms: &[f64],
    a: &CsrMatrix,
    l2: L2Weight<'_>,
) -> Result<ErrorReport> {
    check_len(a.dim(), u_ref.len())?;
    check_len(a.dim(), u_ms.len())?;
    let diff: Vec<f64> = u_ref.iter().zip(u_ms).map(|(r, u)| r - u).collect();
    let (l2_norm, kind): (Box<NormFn>, &str) = match l2 {
        L2Weight::Matrix(m) => {
            check_len(a.dim(), m.dim())?;
            (
                Box::new(move |v: &[f64]| m.quad_form(v).max(0.0).sqrt()),
                "mass_matrix",
            )
        }
        L2Weight::Diagonal(d) => {
            check_len(a.dim(), d.len())?;
            (
                Box::new(move |v: &[f64]| {
                    v.iter().zip(d).map(|(x, w)| w * x * x).sum::<f64>().sqrt()
                }),
                "diagonal",
            )
        }
    };
    let a_norm = |v: &[f64]| a.quad_form(v).max(0.0).sqrt();
    let (ref_l2, ref_a) = (l2_norm(u_ref), a_norm(u_ref));
    let (d_l2, d_a) = (l2_norm(&diff), a_norm(&diff));
    let relative = ref_a > 0.0 && ref_l2 > 0.0;
    Ok(ErrorReport {
        e_l2: if relative { d_l2 / ref_l2 } else { d_l2 },
        e_a: if relative { d_a / ref_a } else { d_a },
        reference_l2: ref_l2,
        reference_a: ref_a,
        l2_weight: kind.to_string(),
        relative,
    })
}

/// Threshold `factor · (C̃ + M̄) / (C_L^inf ξ)` for "small" eigenvalues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdPolicy {
    pub contrast: f64,
    pub factor: f64,
    pub c_l_inf: f64,
}

impl ThresholdPolicy {
    pub fn new(contrast: f64) -> Self {
        ThresholdPolicy {
            contrast,
            factor: 10.0,
            c_l_inf: 1.0,
        }
    }

    pub fn threshold(&self, net: &SpatialNetwork) -> f64 {
        let c_tilde = net.max_degree() as f64;
        let m_bar = net.masses().iter().fold(0.0, |a: f64, &b| a.max(b));
        self.factor * (c_tilde + m_bar) / (self.c_l_inf * self.contrast)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub count: usize,
    pub threshold: f64,
    /// Smallest eigenvalues of `A ψ = λ diag(L̃ + M) ψ`, ascending.
    pub eigenvalues: Vec<f64>,
    /// `λ_{count+1} / λ_count` (undefined when count is zero).
    pub gap_ratio: Option<f64>,
}

/// Counts eigenvalues of `(L + M) ψ = λ diag(L̃ + M) ψ` below the policy
/// threshold, computing `probe` of the smallest ones. Grows the probe until
/// the count is followed by at least one eigenvalue above the threshold.
pub fn spectral_gap_count(
    net: &SpatialNetwork,
    policy: &ThresholdPolicy,
    probe: usize,
) -> Result<GapReport> {
    let n = net.node_count();
    let a = net.operator_matrix();
    let d = net.lumped_plus_mass();
    if let Some(x) = d.iter().position(|&w| !(w > 0.0)) {
        return Err(Error::InvalidNetwork(format!(
            "node {x} has zero lumped weight and mass"
        )));
    }
    let threshold = policy.threshold(net);
    let mut k = probe.clamp(1, n);
    loop {
        let eig = if n <= DENSE_EIGEN_LIMIT {
            dense_sym_geig(&a.to_dense(), &d, k)?
        } else {
            let shift = if net.check_well_posedness().pass() {
                0.0
            } else {
                -1e-8
            };
            lanczos_smallest_geig(&a, &d, k, shift, 1e-10)?
        };
        let count = eig.values.iter().take_while(|&&l| l < threshold).count();
        if count < k || k == n {
            let gap_ratio = if count > 0 && count < eig.values.len() {
                Some(eig.values[count] / eig.values[count - 1])
            } else {
                None
            };
            return Ok(GapReport {
                count,
                threshold,
                eigenvalues: eig.values,
                gap_ratio,
            });
        }
        k = (2 * k).min(n);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayProfile {
    /// `tail[l] = ‖ψ‖²_{a(N \ N_i^l)} + ‖πψ‖²_{s(N \ N_i^l)}`.
    pub tails: Vec<f64>,
    /// `exp` of the least-squares slope of `ln tail` over the fitted layers.
    pub theta: f64,
    pub r_squared: f64,
    pub fit_layers: (usize, usize),
}

/// Least-squares line through `(x, y)`: `(slope, intercept, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    (slope, my - slope * mx, r2)
}

/// Layer tails of a global basis function `psi` of subgraph `i`, with the
/// geometric rate fitted over layers `fit.0..=fit.1` (clipped to `l_max`).
pub fn decay_profile(
    net: &SpatialNetwork,
    part: &Partition,
    aux: &AuxSpace,
    psi: &[f64],
    i: usize,
    l_max: usize,
    fit: (usize, usize),
) -> Result<DecayProfile> {
    check_len(net.node_count(), psi.len())?;
    let n = net.node_count();
    let pi_psi = aux.project(psi)?;
    let mut tails = Vec::with_capacity(l_max + 1);
    for l in 0..=l_max {
        let inside = part.oversample(i, l)?;
        let mut outside = vec![true; n];
        for x in inside.iter() {
            outside[x] = false;
        }
        let rest = NodeSubset::new(n, (0..n).filter(|&x| outside[x]).collect())?;
        let a = net.inner_a(psi, psi, Some(&rest))?;
        let s: f64 = rest
            .iter()
            .map(|x| aux.s_weights[x] * pi_psi[x] * pi_psi[x])
            .sum();
        tails.push(a + s);
    }
    let (lo, hi) = (fit.0, fit.1.min(l_max));
    let pts: Vec<(f64, f64)> = (lo..=hi)
        .filter(|&l| tails[l] > 0.0)
        .map(|l| (l as f64, tails[l].ln()))
        .collect();
    let (theta, r_squared) = if pts.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let (slope, _, r2) = linear_fit(&xs, &ys);
        (slope.exp(), r2)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(DecayProfile {
        tails,
        theta,
        r_squared,
        fit_layers: (lo, hi),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionOfUnity {
    /// Sparse `η_i` as sorted `(node, value)` pairs.
    pub eta: Vec<Vec<(usize, f64)>>,
    /// `max_x |Σ_i η_i(x) - 1|`.
    pub sum_error: f64,
    /// `max_i max_{x~y} |η_i(x) - η_i(y)|`.
    pub max_jump: f64,
    /// Every `supp η_i ⊆ N_i^1`.
    pub support_ok: bool,
}

impl PartitionOfUnity {
    /// `η_i` as a dense node function.
    pub fn dense(&self, i: usize, node_count: usize) -> Vec<f64> {
        let mut v = vec![0.0; node_count];
        for &(x, e) in &self.eta[i] {
            v[x] = e;
        }
        v
    }

    /// `U_i = supp η_i`.
    pub fn support(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.eta[i].iter().map(|&(x, _)| x)
    }
}

/// `η_i = r_i / Σ_j r_j` with `r_i(x) = max(0, 2 - hop(x, N_i))`.
pub fn build_pou(net: &SpatialNetwork, part: &Partition) -> Result<PartitionOfUnity> {
    let n = net.node_count();
    check_len(n, part.assignment().len())?;
    let mut raw: Vec<Vec<(usize, u32)>> = Vec::with_capacity(part.count());
    let mut total = vec![0u32; n];
    for i in 0..part.count() {
        let dist = hop_distances(net, part.nodes(i));
        let r: Vec<(usize, u32)> = (0..n)
            .filter(|&x| dist[x] < 2)
            .map(|x| (x, 2 - dist[x] as u32))
            .collect();
        for &(x, v) in &r {
            total[x] += v;
        }
        raw.push(r);
    }
    if let Some(x) = total.iter().position(|&t| t == 0) {
        return Err(Error::InvalidNetwork(format!(
            "node {x} is covered by no subgraph"
        )));
    }
    let eta: Vec<Vec<(usize, f64)>> = raw
        .iter()
        .map(|r| {
            r.iter()
                .map(|&(x, v)| (x, v as f64 / total[x] as f64))
                .collect()
        })
        .collect();

    let mut sum = vec![0.0; n];
    let mut support_ok = true;
    let mut max_jump = 0.0f64;
    let mut dense = vec![0.0; n];
    for (i, e) in eta.iter().enumerate() {
        let closure = part.oversample(i, 1)?;
        for &(x, v) in e {
            sum[x] += v;
            dense[x] = v;
            support_ok &= closure.contains(x);
        }
        for &(x, _) in e {
            for &(y, _) in net.neighbors(x) {
                max_jump = max_jump.max((dense[x] - dense[y]).abs());
            }
        }
        for &(x, _) in e {
            dense[x] = 0.0;
        }
    }
    let sum_error = sum.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    Ok(PartitionOfUnity {
        eta,
        sum_error,
        max_jump,
        support_ok,
    })
}

/// `χ_i^{M,m} = Σ_j η_j` over all `j` whose support meets `N_i^m`.
pub fn cutoff(
    net: &SpatialNetwork,
    part: &Partition,
    pou: &PartitionOfUnity,
    i: usize,
    outer: usize,
    inner: usize,
) -> Result<Vec<f64>> {
    if outer < inner + 2 {
        return Err(Error::InvalidArgument(format!(
            "cutoff needs M - m >= 2, got M = {outer}, m = {inner}"
        )));
    }
    let n = net.node_count();
    let core = part.oversample(i, inner)?;
    let mut chi = vec![0.0; n];
    for e in &pou.eta {
        if e.iter().any(|&(x, _)| core.contains(x)) {
            for &(x, v) in e {
                chi[x] += v;
            }
        }
    }
    // clauses: 1 on N_i^m, 0 outside N_i^M, within [0, 1]
    let shell = part.oversample(i, outer)?;
    for (x, &c) in chi.iter().enumerate() {
        let ok = if core.contains(x) {
            (c - 1.0).abs() <= 1e-14
        } else if !shell.contains(x) {
            c == 0.0
        } else {
            (-1e-14..=1.0 + 1e-14).contains(&c)
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "cutoff value {} at node {x} violates its clauses",
                c
            )));
        }
    }
    Ok(chi)
}

/// `‖f‖_{s*} = sup (f, v) / ‖v‖_s = ‖S^{-1/2} f‖₂` for diagonal `s`.
pub fn dual_s_norm(aux: &AuxSpace, f: &[f64]) -> Result<f64> {
    check_len(aux.node_count, f.len())?;
    Ok(f.iter()
        .zip(&aux.s_weights)
        .map(|(v, s)| v * v / s)
        .sum::<f64>()
        .sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalBoundCheck {
    /// `‖u - u_glo‖_a`.
    pub error_a: f64,
    /// `Λ^{-1/2} ‖f‖_{s*}`.
    pub bound: f64,
    /// `‖π(u - u_glo)‖_s / ‖u‖_s`.
    pub kernel_defect: f64,
}

/// Compares the global-basis error with its a priori bound.
pub fn global_bound_check(
    net: &SpatialNetwork,
    aux: &AuxSpace,
    f: &[f64],
    u: &[f64],
    u_glo: &[f64],
) -> Result<GlobalBoundCheck> {
    let lambda = aux.spectral_gap().ok_or_else(|| {
        Error::InvalidArgument("spectral gap undefined: some subgraph is fully resolved".into())
    })?;
    let diff: Vec<f64> = u.iter().zip(u_glo).map(|(a, b)| a - b).collect();
    let error_a = net.inner_a(&diff, &diff, None)?.max(0.0).sqrt();
    let pd = aux.project(&diff)?;
    let u_s = aux.s_inner(u, u).sqrt();
    Ok(GlobalBoundCheck {
        error_a,
        bound: dual_s_norm(aux, f)? / lambda.sqrt(),
        kernel_defect: if u_s > 0.0 {
            aux.s_inner(&pd, &pd).sqrt() / u_s
        } else {
            0.0
        },
    })
}
