//! Geometric grids of probability values.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::profile::PseudoDistribution;

/// Strictly decreasing values r_1 = 1 > r_2 > ... with r_{i+1} = r_i/(1+eps),
/// ending at the first value ≤ 1/(2n²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationSet {
    pub values: Vec<f64>,
    pub eps: f64,
    pub n: usize,
}

/// ln n/√n, the default grid ratio parameter.
pub fn default_eps(n: usize) -> f64 {
    let x = n as f64;
    x.ln() / x.sqrt()
}

/// 1/√n, the alternative grid ratio parameter.
pub fn sqrt_eps(n: usize) -> f64 {
    1.0 / (n as f64).sqrt()
}

/// Grid for n samples with ratio parameter ln n/√n.
pub fn build_discretization(n: usize) -> Result<DiscretizationSet> {
    if n < 2 {
        return invalid("grid construction needs n >= 2");
    }
    build_discretization_with_eps(n, default_eps(n))
}

/// Grid with an explicit ratio parameter eps ∈ (0, 1].
pub fn build_discretization_with_eps(n: usize, eps: f64) -> Result<DiscretizationSet> {
    if n == 0 {
        return invalid("n must be positive");
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return invalid(format!("eps must lie in (0, 1], got {eps}"));
    }
    let floor = 1.0 / (2.0 * (n as f64).powi(2));
    let ratio = 1.0 + eps;
    let mut values = vec![1.0];
    let mut i = 1;
    while *values.last().unwrap() > floor {
        values.push(ratio.powi(-i));
        i += 1;
    }
    Ok(DiscretizationSet { values, eps, n })
}

impl DiscretizationSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn smallest(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Rounds each positive probability down to the largest grid value not above it.
pub fn discretize(p: &PseudoDistribution, r: &DiscretizationSet) -> Result<PseudoDistribution> {
    let mut out = Vec::with_capacity(p.len());
    for &x in p.probs() {
        if x == 0.0 {
            out.push(0.0);
            continue;
        }
        if x < r.smallest() {
            return invalid(format!(
                "probability {x} lies below the smallest grid value {}",
                r.smallest()
            ));
        }
        // values are decreasing: first index whose value is ≤ x.
        let idx = r.values.partition_point(|&v| v > x);
        out.push(r.values[idx]);
    }
    PseudoDistribution::new(out)
}
