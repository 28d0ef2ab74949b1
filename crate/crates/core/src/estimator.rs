//! Approximate PML end to end, an exhaustive grid oracle, and plug-in
//! estimates of symmetric properties.

use serde::{Deserialize, Serialize};

use crate::discretization::{build_discretization_with_eps, default_eps};
use crate::error::{invalid, Error, Result};
use crate::numeric::compensated_sum;
use crate::profile::{profile_probability_grouped, Profile, PseudoDistribution};
use crate::rounding::{round_allocation, RoundingTrace};
use crate::solver::{maximize_log_g, SOLVER_MAX_ITER, SOLVER_TOL};

/// Overrides for the pipeline; `None` picks the defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmlOptions {
    /// Grid ratio parameter; default ln n/√n (1 when n = 1).
    pub eps: Option<f64>,
    /// Rounding threshold; default 1/√n (1/2 when n = 1).
    pub gamma: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PmlOptions {
    fn default() -> Self {
        Self {
            eps: None,
            gamma: None,
            tol: SOLVER_TOL,
            max_iter: SOLVER_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmlParams {
    pub n: usize,
    pub eps: f64,
    pub gamma: f64,
    /// Number of grid levels.
    pub ell: usize,
    /// Number of distinct frequencies.
    pub k: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PmlResult {
    /// Normalized, one entry per symbol.
    pub distribution: PseudoDistribution,
    pub log_profile_probability: f64,
    pub solver_log_g: f64,
    pub solver_gap: f64,
    pub converged: bool,
    pub params: PmlParams,
    pub trace: RoundingTrace,
}

fn default_gamma(n: usize) -> f64 {
    if n == 1 {
        0.5
    } else {
        1.0 / (n as f64).sqrt()
    }
}

pub fn approximate_pml(p: &Profile) -> Result<PmlResult> {
    approximate_pml_with(p, &PmlOptions::default())
}

/// Grid → convex relaxation → rounding → normalized distribution. A solver
/// that hits its iteration cap still yields a result, with `converged` false.
pub fn approximate_pml_with(p: &Profile, opts: &PmlOptions) -> Result<PmlResult> {
    let n = p.n();
    let eps = opts
        .eps
        .unwrap_or(if n == 1 { 1.0 } else { default_eps(n) });
    let gamma = opts.gamma.unwrap_or_else(|| default_gamma(n));
    if !(gamma > 0.0 && gamma < 1.0) {
        return invalid(format!("gamma must lie in (0, 1), got {gamma}"));
    }
    let grid = build_discretization_with_eps(n, eps)?;
    let sol = maximize_log_g(p, &grid, opts.tol, opts.max_iter)?;
    let trace = round_allocation(&sol.allocation, gamma)?;
    let q = trace.final_.pruned().pseudo_distribution_of()?;
    let distribution = q.normalized()?;
    let log_profile_probability = profile_probability_grouped(&distribution, p)?;
    Ok(PmlResult {
        distribution,
        log_profile_probability,
        solver_log_g: sol.log_g,
        solver_gap: sol.gap,
        converged: sol.converged,
        params: PmlParams {
            n,
            eps,
            gamma,
            ell: grid.len(),
            k: p.k(),
        },
        trace,
    })
}

pub const ORACLE_MAX_N: usize = 8;
pub const ORACLE_MAX_SUPPORT: usize = 8;
pub const ORACLE_GRID_STEP: f64 = 0.02;

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub distribution: PseudoDistribution,
    pub log_profile_probability: f64,
    pub grid_step: f64,
    pub max_support: usize,
}

/// Default support cap: twice the number of observed symbols, at most
/// [`ORACLE_MAX_SUPPORT`].
pub fn default_oracle_support(p: &Profile) -> usize {
    (2 * p.distinct()).min(ORACLE_MAX_SUPPORT)
}

/// Best distribution among those with support 1..=max_support whose
/// probabilities are multiples of grid_step (listed non-increasing, since
/// ln P is symmetric). The value is a lower bound on the PML value.
pub fn exact_pml_oracle(p: &Profile, max_support: usize, grid_step: f64) -> Result<OracleResult> {
    if p.n() > ORACLE_MAX_N {
        return Err(Error::SizeLimit {
            what: "oracle sample size",
            got: p.n(),
            limit: ORACLE_MAX_N,
        });
    }
    if max_support == 0 || max_support > ORACLE_MAX_SUPPORT {
        return Err(Error::SizeLimit {
            what: "oracle support",
            got: max_support,
            limit: ORACLE_MAX_SUPPORT,
        });
    }
    let units = (1.0 / grid_step).round();
    if !(grid_step > 0.0 && grid_step <= 1.0) || (units * grid_step - 1.0).abs() > 1e-9 {
        return invalid("grid_step must be 1/m for a positive integer m");
    }
    let units = units as usize;
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut parts = Vec::new();
    for support in p.distinct().max(1)..=max_support.min(units) {
        compositions(units, support, units, &mut parts, &mut |c| {
            let q = PseudoDistribution::new(c.iter().map(|&u| u as f64 / units as f64).collect())
                .expect("grid point");
            let v = profile_probability_grouped(&q, p).expect("small instance");
            if best.as_ref().is_none_or(|b| v > b.1) {
                best = Some((c.to_vec(), v));
            }
        });
    }
    let (c, v) = best
        .ok_or_else(|| Error::Invalid("grid holds no distribution with enough symbols".into()))?;
    Ok(OracleResult {
        distribution: PseudoDistribution::new(
            c.iter().map(|&u| u as f64 / units as f64).collect(),
        )?,
        log_profile_probability: v,
        grid_step,
        max_support,
    })
}

/// Calls f on every non-increasing sequence of `parts` positive integers
/// summing to `total`, each at most `cap`.
fn compositions(
    total: usize,
    parts: usize,
    cap: usize,
    acc: &mut Vec<usize>,
    f: &mut dyn FnMut(&[usize]),
) {
    if parts == 0 {
        if total == 0 {
            f(acc);
        }
        return;
    }
    if total < parts {
        return;
    }
    let hi = cap.min(total - (parts - 1));
    let lo = total.div_ceil(parts);
    for v in (lo..=hi).rev() {
        acc.push(v);
        compositions(total - v, parts - 1, v, acc, f);
        acc.pop();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Entropy,
    SupportSize,
    SupportCoverage,
    DistanceToUniformity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyEstimate {
    pub property: Property,
    pub value: f64,
    /// Sample size of the profile the estimate came from.
    pub n: usize,
}

/// −Σ p ln p.
pub fn entropy(p: &PseudoDistribution) -> f64 {
    compensated_sum(p.probs().iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()))
}

pub fn support_size(p: &PseudoDistribution) -> usize {
    p.support()
}

/// Expected number of distinct symbols in m draws: Σ 1 − (1 − p_x)^m.
pub fn support_coverage(p: &PseudoDistribution, m: usize) -> f64 {
    compensated_sum(
        p.probs()
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| -((m as f64) * (-x).ln_1p()).exp_m1()),
    )
}

/// Σ |p_x − 1/K| over the K symbols with p_x > 0.
pub fn distance_to_uniformity(p: &PseudoDistribution) -> f64 {
    let k = p.support() as f64;
    compensated_sum(
        p.probs()
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| (x - 1.0 / k).abs()),
    )
}

/// Plug-in estimate from the PML distribution; support coverage uses m = n.
pub fn estimate_property(res: &PmlResult, which: Property) -> PropertyEstimate {
    let p = &res.distribution;
    let value = match which {
        Property::Entropy => entropy(p),
        Property::SupportSize => support_size(p) as f64,
        Property::SupportCoverage => support_coverage(p, res.params.n),
        Property::DistanceToUniformity => distance_to_uniformity(p),
    };
    PropertyEstimate {
        property: which,
        value,
        n: res.params.n,
    }
}
