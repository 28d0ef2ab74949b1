//! Allocation matrices coupling probability levels to profile frequencies.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{compensated_sum, xlogx, CompensatedSum};
use crate::profile::{Profile, PseudoDistribution};

/// Rows are probability levels, column 0 is the unseen frequency m_0 = 0 and
/// column j ≥ 1 is the profile frequency m_j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationMatrix {
    pub levels: Vec<f64>,
    pub entries: Vec<Vec<f64>>,
    pub profile: Profile,
}

impl AllocationMatrix {
    pub fn new(levels: Vec<f64>, entries: Vec<Vec<f64>>, profile: Profile) -> Result<Self> {
        if levels.len() != entries.len() {
            return Err(Error::Dimension(format!(
                "{} levels but {} rows",
                levels.len(),
                entries.len()
            )));
        }
        let width = profile.k() + 1;
        if entries.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension(format!("every row needs {width} entries")));
        }
        if entries
            .iter()
            .flatten()
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return invalid("entries must be finite and non-negative");
        }
        if levels.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return invalid("levels must be finite and non-negative");
        }
        Ok(Self {
            levels,
            entries,
            profile,
        })
    }

    pub fn zeros(levels: Vec<f64>, profile: Profile) -> Self {
        let entries = vec![vec![0.0; profile.k() + 1]; levels.len()];
        Self {
            levels,
            entries,
            profile,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.profile.k() + 1
    }

    /// m_j, with m_0 = 0.
    pub fn exponent(&self, j: usize) -> usize {
        if j == 0 {
            0
        } else {
            self.profile.freqs()[j - 1]
        }
    }

    /// Required column sum for j ≥ 1.
    pub fn phi(&self, j: usize) -> f64 {
        self.profile.counts()[j - 1] as f64
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries
            .iter()
            .map(|r| compensated_sum(r.iter().copied()))
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.n_cols())
            .map(|j| compensated_sum(self.entries.iter().map(|r| r[j])))
            .collect()
    }

    pub fn total(&self) -> f64 {
        compensated_sum(self.entries.iter().flatten().copied())
    }

    /// Σ_i r_i·(row sum)_i, the probability mass of the encoded pseudo-distribution.
    pub fn mass(&self) -> f64 {
        compensated_sum(self.levels.iter().zip(self.row_sums()).map(|(r, s)| r * s))
    }

    /// Largest deviation of a column sum from φ_j over j ≥ 1.
    pub fn column_error(&self) -> f64 {
        let cs = self.col_sums();
        (1..self.n_cols())
            .map(|j| (cs[j] - self.phi(j)).abs())
            .fold(0.0, f64::max)
    }

    /// Column sums match the profile and mass ≤ 1, both within `tol`.
    pub fn is_fractionally_feasible(&self, tol: f64) -> bool {
        self.column_error() <= tol && self.mass() <= 1.0 + tol
    }

    /// Every row sum is within `tol` of a non-negative integer.
    pub fn has_integral_rows(&self, tol: f64) -> bool {
        self.row_sums().iter().all(|s| (s - s.round()).abs() <= tol)
    }

    pub fn log_g(&self) -> f64 {
        log_g(self)
    }

    pub fn log_h(&self) -> f64 {
        log_h(self)
    }

    /// ∂ log g/∂S_ij = m_j ln r_i + ln(rowsum_i/S_ij); zero entries are clamped to 1e-300.
    pub fn gradient_log_g(&self) -> Vec<Vec<f64>> {
        let rs = self.row_sums();
        self.entries
            .iter()
            .enumerate()
            .map(|(i, row)| {
                (0..row.len())
                    .map(|j| {
                        let m = self.exponent(j) as f64;
                        let lr = if m == 0.0 {
                            0.0
                        } else {
                            m * self.levels[i].ln()
                        };
                        lr + rs[i].max(1e-300).ln() - row[j].max(1e-300).ln()
                    })
                    .collect()
            })
            .collect()
    }

    /// Copy without all-zero rows.
    pub fn pruned(&self) -> Self {
        let keep: Vec<usize> = (0..self.n_levels())
            .filter(|&i| self.entries[i].iter().any(|&x| x > 0.0))
            .collect();
        Self {
            levels: keep.iter().map(|&i| self.levels[i]).collect(),
            entries: keep.iter().map(|&i| self.entries[i].clone()).collect(),
            profile: self.profile.clone(),
        }
    }

    /// Pseudo-distribution with rowsum_i symbols at probability r_i.
    pub fn pseudo_distribution_of(&self) -> Result<PseudoDistribution> {
        let mut probs = Vec::new();
        for (r, s) in self.levels.iter().zip(self.row_sums()) {
            let c = s.round();
            if (s - c).abs() > 1e-9 {
                return invalid(format!("row sum {s} is not integral"));
            }
            probs.extend(std::iter::repeat_n(*r, c as usize));
        }
        PseudoDistribution::new(probs)
    }
}

/// log g(S) = Σ S_ij (m_j ln r_i − ln S_ij) + Σ_i rowsum_i ln rowsum_i.
pub fn log_g(s: &AllocationMatrix) -> f64 {
    let mut acc = CompensatedSum::new();
    for (i, row) in s.entries.iter().enumerate() {
        let lr = s.levels[i].ln();
        for (j, &x) in row.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let m = s.exponent(j);
            if m > 0 {
                acc.add(x * m as f64 * lr);
            }
            acc.add(-xlogx(x));
        }
        acc.add(xlogx(compensated_sum(row.iter().copied())));
    }
    acc.value()
}

/// log h(S) = log g(S) + Σ_{j∈[0,k]} (φ_j ln φ_j − φ_j), φ_j the column sums.
pub fn log_h(s: &AllocationMatrix) -> f64 {
    log_g(s) + s.col_sums().iter().map(|&c| xlogx(c) - c).sum::<f64>()
}
