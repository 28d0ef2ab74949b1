//! Maximization of log g over the fractional feasible set: column sums equal
//! the profile counts for j ≥ 1, column 0 free, Σ_i r_i·rowsum_i ≤ 1.
//!
//! Solved through the Lagrangian dual. log g is positively homogeneous in
//! every row, so the dual is
//!
//!   min_β Φ(β) = Σ_j φ_j β_j + max_i ψ_i(β),  ψ_i(β) = ln(1 + Σ_j r_i^{m_j} e^{−β_j}) / r_i,
//!
//! a convex problem in k variables. The max is smoothed to τ·ln Σ_i e^{ψ_i/τ}
//! and minimized by Newton's method while τ shrinks geometrically. With
//! softmax weights π and p_ij = r_i^{m_j} e^{−β_j − ψ_i r_i} (p_i0 = e^{−ψ_i r_i}),
//! the allocation S_ij = π_i p_ij / r_i has mass exactly 1 and column sums
//! φ_j − ∂_j, so it is feasible once the smoothed gradient vanishes. Its
//! objective is Σ_j φ_j β_j + Σ_i π_i ψ_i, which is within τ ln ℓ of Φ(β):
//! every stage certifies itself. The stages follow the path of
//! max log g + τ·H(row masses), along which log g cannot decrease; the
//! iterate is the best allocation recovered so far.

use nalgebra::{DMatrix, DVector};

use crate::allocation::AllocationMatrix;
use crate::discretization::DiscretizationSet;
use crate::error::{invalid, Result};
use crate::numeric::{compensated_sum, log_sum_exp};
use crate::profile::Profile;

pub const SOLVER_TOL: f64 = 1e-8;
pub const SOLVER_MAX_ITER: usize = 100_000;

const TAU_START: f64 = 1.0;
const TAU_FLOOR: f64 = 1e-14;
/// Newton stops once every column sum is this close to φ_j, relative to n.
const GRAD_TOL: f64 = 1e-13;
const STAGE_MAX_STEPS: usize = 200;
/// Largest column or mass violation of an allocation the solver will return.
const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ConvexSolution {
    pub allocation: AllocationMatrix,
    pub log_g: f64,
    /// log g of the current iterate after every smoothing stage.
    pub history: Vec<f64>,
    /// Lagrangian upper bound on the maximum of log g.
    pub dual_bound: f64,
    /// dual_bound − log_g.
    pub gap: f64,
    /// Largest column-sum or mass violation over the recovered allocations.
    pub max_infeasibility: f64,
    pub newton_steps: usize,
    pub converged: bool,
}

pub fn maximize_log_g_default(p: &Profile, r: &DiscretizationSet) -> Result<ConvexSolution> {
    maximize_log_g(p, r, SOLVER_TOL, SOLVER_MAX_ITER)
}

pub fn maximize_log_g(
    p: &Profile,
    r: &DiscretizationSet,
    tol: f64,
    max_iter: usize,
) -> Result<ConvexSolution> {
    maximize_log_g_on_levels(p, &r.values, tol, max_iter)
}

/// Same as [`maximize_log_g`] for an arbitrary list of positive levels.
pub fn maximize_log_g_on_levels(
    p: &Profile,
    levels: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<ConvexSolution> {
    if !(tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    if levels.is_empty() || levels.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
        return invalid("levels must lie in (0, 1]");
    }
    // The dual is bounded below exactly when the smallest level can host
    // every observed symbol with mass to spare.
    let rmin = levels.iter().cloned().fold(f64::INFINITY, f64::min);
    if rmin * p.distinct() as f64 >= 1.0 {
        return invalid(
            "no strictly feasible allocation: smallest level too large for the profile",
        );
    }
    Problem::new(p, levels).solve(tol, max_iter)
}

struct Problem<'a> {
    profile: &'a Profile,
    levels: &'a [f64],
    l: usize,
    k: usize,
    phi: Vec<f64>,
    scale: f64,
    /// m_j ln r_i for j ≥ 1, row-major l×k.
    lr: Vec<f64>,
}

/// Per-row quantities of the dual at a given β.
struct Rows {
    psi: Vec<f64>,
    /// p_ij for j ≥ 1, row-major l×k.
    p: Vec<f64>,
    /// p_i0.
    p0: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(profile: &'a Profile, levels: &'a [f64]) -> Self {
        let l = levels.len();
        let k = profile.k();
        let phi: Vec<f64> = profile.counts().iter().map(|&c| c as f64).collect();
        let mut lr = vec![0.0; l * k];
        for i in 0..l {
            for j in 0..k {
                lr[i * k + j] = profile.freqs()[j] as f64 * levels[i].ln();
            }
        }
        let scale = profile.n() as f64;
        Self {
            profile,
            levels,
            l,
            k,
            phi,
            scale,
            lr,
        }
    }

    fn rows(&self, beta: &[f64]) -> Rows {
        let (l, k) = (self.l, self.k);
        let mut psi = vec![0.0; l];
        let mut p = vec![0.0; l * k];
        let mut p0 = vec![0.0; l];
        let mut terms = vec![0.0; k + 1];
        for i in 0..l {
            terms[0] = 0.0;
            for j in 0..k {
                terms[j + 1] = self.lr[i * k + j] - beta[j];
            }
            let z = log_sum_exp(&terms);
            psi[i] = z / self.levels[i];
            p0[i] = (-z).exp();
            for j in 0..k {
                p[i * k + j] = (terms[j + 1] - z).exp();
            }
        }
        Rows { psi, p, p0 }
    }

    fn linear(&self, beta: &[f64]) -> f64 {
        compensated_sum(self.phi.iter().zip(beta).map(|(a, b)| a * b))
    }

    /// Φ(β), an upper bound on log g over the feasible set for every β.
    fn dual_bound(&self, beta: &[f64]) -> f64 {
        let rows = self.rows(beta);
        self.linear(beta) + rows.psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    fn softmax(&self, psi: &[f64], tau: f64) -> (f64, Vec<f64>) {
        let top = psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = psi.iter().map(|v| (v - top) / tau).collect();
        let lse = log_sum_exp(&scaled);
        (
            top + tau * lse,
            scaled.iter().map(|v| (v - lse).exp()).collect(),
        )
    }

    fn smoothed(&self, beta: &[f64], tau: f64) -> f64 {
        let rows = self.rows(beta);
        self.linear(beta) + self.softmax(&rows.psi, tau).0
    }

    /// Value, gradient and Hessian of the smoothed dual.
    fn smoothed_newton(
        &self,
        beta: &[f64],
        tau: f64,
    ) -> (f64, DVector<f64>, DMatrix<f64>, Rows, Vec<f64>) {
        let (l, k) = (self.l, self.k);
        let rows = self.rows(beta);
        let (smax, pi) = self.softmax(&rows.psi, tau);
        let val = self.linear(beta) + smax;
        // ∇ψ_i = −p_i/r_i, ∇²ψ_i = (diag p_i − p_i p_iᵀ)/r_i
        let mut mean = vec![0.0; k];
        for i in 0..l {
            for j in 0..k {
                mean[j] -= pi[i] * rows.p[i * k + j] / self.levels[i];
            }
        }
        let grad = DVector::from_fn(k, |j, _| self.phi[j] + mean[j]);
        let mut curv = DMatrix::<f64>::zeros(k, k);
        let mut spread = DMatrix::<f64>::zeros(k, k);
        let mut d = vec![0.0; k];
        for i in 0..l {
            if pi[i] == 0.0 {
                continue;
            }
            let r = self.levels[i];
            let pr = &rows.p[i * k..(i + 1) * k];
            for a in 0..k {
                d[a] = -pr[a] / r - mean[a];
            }
            for a in 0..k {
                curv[(a, a)] += pi[i] * pr[a] / r;
                for b in 0..k {
                    curv[(a, b)] -= pi[i] * pr[a] * pr[b] / r;
                    spread[(a, b)] += pi[i] * d[a] * d[b];
                }
            }
        }
        (val, grad, curv + spread / tau, rows, pi)
    }

    /// Allocation S_ij = π_i p_ij / r_i with columns rescaled to φ_j and, if
    /// that pushed the mass above 1, column 0 trimmed.
    fn recover(&self, rows: &Rows, pi: &[f64]) -> AllocationMatrix {
        let (l, k) = (self.l, self.k);
        let mut entries: Vec<Vec<f64>> = (0..l)
            .map(|i| {
                let w = pi[i] / self.levels[i];
                let mut row = Vec::with_capacity(k + 1);
                row.push(w * rows.p0[i]);
                row.extend((0..k).map(|j| w * rows.p[i * k + j]));
                row
            })
            .collect();
        for j in 1..=k {
            let s = compensated_sum(entries.iter().map(|r| r[j]));
            if s > 0.0 {
                let c = self.phi[j - 1] / s;
                entries.iter_mut().for_each(|r| r[j] *= c);
            }
        }
        let mut alloc = AllocationMatrix {
            levels: self.levels.to_vec(),
            entries,
            profile: self.profile.clone(),
        };
        let over = alloc.mass() - 1.0;
        if over > 0.0 {
            let m0 = compensated_sum(
                alloc
                    .levels
                    .iter()
                    .zip(&alloc.entries)
                    .map(|(r, e)| r * e[0]),
            );
            let c = ((m0 - over) / m0).max(0.0);
            alloc.entries.iter_mut().for_each(|r| r[0] *= c);
        }
        alloc
    }

    /// Every observed symbol on the smallest level; feasible because
    /// r_min·distinct < 1.
    fn fallback(&self) -> AllocationMatrix {
        let low = (0..self.l)
            .min_by(|&a, &b| self.levels[a].total_cmp(&self.levels[b]))
            .unwrap();
        let mut alloc = AllocationMatrix::zeros(self.levels.to_vec(), self.profile.clone());
        for j in 1..=self.k {
            alloc.entries[low][j] = self.phi[j - 1];
        }
        alloc
    }

    fn infeasibility(&self, s: &AllocationMatrix) -> f64 {
        s.column_error().max(s.mass() - 1.0)
    }

    fn solve(&self, tol: f64, max_iter: usize) -> Result<ConvexSolution> {
        let k = self.k;
        let mut beta = vec![0.0; k];
        let mut tau = TAU_START;
        let mut history = Vec::new();
        let mut newton_steps = 0;
        let mut max_infeasibility: f64 = 0.0;
        let start = self.fallback();
        let start_g = start.log_g();
        let mut best = (start, start_g);
        let mut dual = f64::INFINITY;
        let mut converged = false;
        while tau >= TAU_FLOOR && newton_steps < max_iter {
            let (mut rows, mut pi);
            let stage_start = newton_steps;
            loop {
                let (val, grad, hess, r, w) = self.smoothed_newton(&beta, tau);
                rows = r;
                pi = w;
                if newton_steps >= max_iter || newton_steps - stage_start >= STAGE_MAX_STEPS {
                    break;
                }
                let neg = -&grad;
                let Some(dir) = hess
                    .clone()
                    .cholesky()
                    .map(|c| c.solve(&neg))
                    .or_else(|| hess.lu().solve(&neg))
                else {
                    break;
                };
                let dec = -grad.dot(&dir);
                let gnorm = grad.amax();
                if !(dec > 0.0) || gnorm <= GRAD_TOL * self.scale {
                    break;
                }
                newton_steps += 1;
                let mut s = 1.0;
                let mut moved = false;
                for _ in 0..60 {
                    let nb: Vec<f64> = beta
                        .iter()
                        .zip(dir.iter())
                        .map(|(x, y)| x + s * y)
                        .collect();
                    let nv = self.smoothed(&nb, tau);
                    // Once the value stops resolving the decrease, a full step
                    // that shrinks the gradient is accepted instead.
                    let resolvable = 0.25 * s * dec > 4.0 * f64::EPSILON * val.abs();
                    let armijo = resolvable && nv <= val - 0.25 * s * dec;
                    let flat = !resolvable && self.smoothed_newton(&nb, tau).1.amax() < gnorm;
                    if armijo || flat {
                        beta = nb;
                        moved = true;
                        break;
                    }
                    s *= 0.5;
                }
                if !moved {
                    break;
                }
            }
            dual = dual.min(self.dual_bound(&beta));
            let alloc = self.recover(&rows, &pi);
            let infeasible = self.infeasibility(&alloc);
            max_infeasibility = max_infeasibility.max(infeasible);
            let lg = alloc.log_g();
            // Below τ ≈ 1e-7 roundoff in ψ, amplified by 1/τ, can make a later
            // recovery slightly worse; the iterate only moves when it improves.
            // A stage cut short can leave too much mass to trim from column 0.
            if lg > best.1 && infeasible <= FEASIBILITY_TOL {
                best = (alloc, lg);
            }
            history.push(best.1);
            if dual - best.1 <= tol {
                converged = true;
                break;
            }
            tau *= 0.1;
        }
        let (allocation, log_g) = best;
        let gap = dual - log_g;
        Ok(ConvexSolution {
            allocation,
            log_g,
            history,
            dual_bound: dual,
            gap,
            max_infeasibility,
            newton_steps,
            converged: converged && gap <= tol,
        })
    }
}
