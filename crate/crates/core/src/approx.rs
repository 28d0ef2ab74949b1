//! Sinkhorn, scaled Sinkhorn and Bethe approximations of the permanent.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::max_weight_assignment;
use crate::error::{invalid, Error, Result};
use crate::matrix::NonNegMatrix;
use crate::numeric::{xlogx, CompensatedSum};

pub const SINKHORN_TOL: f64 = 1e-10;
pub const SINKHORN_MAX_ITER: usize = 100_000;
pub const BETHE_TOL: f64 = 1e-8;
pub const BETHE_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sinkhorn,
    ScaledSinkhorn,
    Bethe,
}

/// A doubly stochastic matrix found by an optimizer. For Sinkhorn scaling
/// `q = diag(row_scalers)·a·diag(col_scalers)`; the Bethe optimizer leaves
/// both scaler vectors empty.
#[derive(Debug, Clone)]
pub struct DoublyStochasticWitness {
    pub q: NonNegMatrix,
    pub row_scalers: Vec<f64>,
    pub col_scalers: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ApproximationReport {
    pub method: Method,
    pub log_value: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Frank–Wolfe duality gap at the returned point (Bethe only).
    #[serde(skip)]
    pub gap: Option<f64>,
    /// Objective after every accepted step (Bethe only), accumulated from the
    /// per-step gains evaluated on the cells each step touches.
    #[serde(skip)]
    pub history: Vec<f64>,
    #[serde(skip)]
    pub witness: DoublyStochasticWitness,
}

fn check_same_shape(a: &NonNegMatrix, q: &NonNegMatrix) -> Result<usize> {
    let n = a.require_square()?;
    if q.rows() != a.rows() || q.cols() != a.cols() {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            q.rows(),
            q.cols()
        )));
    }
    Ok(n)
}

#[inline]
fn u_term(a: f64, q: f64) -> f64 {
    if q == 0.0 {
        0.0
    } else if a == 0.0 {
        f64::NEG_INFINITY
    } else {
        q * (a / q).ln()
    }
}

#[inline]
fn v_term(q: f64) -> f64 {
    xlogx((1.0 - q).max(0.0))
}

/// U(A,Q) = Σ Q ln(A/Q).
pub fn functional_u(a: &NonNegMatrix, q: &NonNegMatrix) -> Result<f64> {
    check_same_shape(a, q)?;
    let mut s = CompensatedSum::new();
    for (&x, &y) in a.data().iter().zip(q.data()) {
        let t = u_term(x, y);
        if t == f64::NEG_INFINITY {
            return Ok(t);
        }
        s.add(t);
    }
    Ok(s.value())
}

/// V(Q) = Σ (1 − Q) ln(1 − Q).
pub fn functional_v(q: &NonNegMatrix) -> Result<f64> {
    q.require_square()?;
    if let Some(x) = q.data().iter().find(|&&x| x > 1.0 + 1e-12) {
        return invalid(format!("entry {x} exceeds 1"));
    }
    let mut s = CompensatedSum::new();
    q.data().iter().for_each(|&x| s.add(v_term(x)));
    Ok(s.value())
}

/// F = U + V, the Bethe free energy functional.
pub fn functional_f(a: &NonNegMatrix, q: &NonNegMatrix) -> Result<f64> {
    Ok(functional_u(a, q)? + functional_v(q)?)
}

fn ds_residual(q: &NonNegMatrix) -> f64 {
    q.row_sums()
        .iter()
        .chain(q.col_sums().iter())
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Alternating row/column normalization.
pub fn sinkhorn_scale(
    a: &NonNegMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<DoublyStochasticWitness> {
    let n = a.require_square()?;
    if a.row_sums()
        .iter()
        .chain(a.col_sums().iter())
        .any(|&s| s <= 0.0)
    {
        return Err(Error::Support);
    }
    if !(tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    let mut l = vec![1.0; n];
    let mut r = vec![1.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        for i in 0..n {
            let s: f64 = (0..n).map(|j| a.get(i, j) * r[j]).sum();
            l[i] = 1.0 / s;
        }
        for j in 0..n {
            let s: f64 = (0..n).map(|i| a.get(i, j) * l[i]).sum();
            r[j] = 1.0 / s;
        }
        let res = (0..n)
            .map(|i| ((0..n).map(|j| a.get(i, j) * r[j]).sum::<f64>() * l[i] - 1.0).abs())
            .fold(0.0, f64::max);
        if res <= tol {
            converged = true;
            break;
        }
    }
    let q = NonNegMatrix::from_fn(n, n, |i, j| l[i] * a.get(i, j) * r[j])?;
    let residual = ds_residual(&q);
    Ok(DoublyStochasticWitness {
        q,
        row_scalers: l,
        col_scalers: r,
        iterations,
        residual,
        converged,
    })
}

fn sinkhorn_report(a: &NonNegMatrix, tol: f64, method: Method) -> Result<ApproximationReport> {
    let w = sinkhorn_scale(a, tol, SINKHORN_MAX_ITER)?;
    let mut log_value = functional_u(a, &w.q)?;
    if method == Method::ScaledSinkhorn {
        log_value -= a.rows() as f64;
    }
    Ok(ApproximationReport {
        method,
        log_value,
        iterations: w.iterations,
        residual: w.residual,
        converged: w.converged,
        gap: None,
        history: Vec::new(),
        witness: w,
    })
}

/// ln of max_Q exp U(A,Q).
pub fn sinkhorn_permanent(a: &NonNegMatrix, tol: f64) -> Result<ApproximationReport> {
    sinkhorn_report(a, tol, Method::Sinkhorn)
}

/// ln of max_Q exp(U(A,Q) − N), a lower bound on ln perm(A).
pub fn scaled_sinkhorn_permanent(a: &NonNegMatrix, tol: f64) -> Result<ApproximationReport> {
    sinkhorn_report(a, tol, Method::ScaledSinkhorn)
}

#[inline]
fn f_term(a: f64, q: f64) -> f64 {
    u_term(a, q) + v_term(q)
}

#[inline]
fn f_grad(a: f64, q: f64) -> f64 {
    a.ln() - q.max(1e-300).ln() - (1.0 - q).max(1e-300).ln() - 2.0
}

/// Entries touched by a permutation-difference direction.
struct Direction {
    cells: Vec<(usize, usize, f64)>,
}

impl Direction {
    fn new(n: usize, plus: &[usize], minus: Option<&[usize]>, q: &[Vec<f64>]) -> Self {
        let mut cells: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * n * n);
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            d[i][plus[i]] += 1.0;
        }
        match minus {
            Some(m) => {
                for i in 0..n {
                    d[i][m[i]] -= 1.0;
                }
            }
            None => {
                for i in 0..n {
                    for j in 0..n {
                        d[i][j] -= q[i][j];
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                if d[i][j] != 0.0 {
                    cells.push((i, j, d[i][j]));
                }
            }
        }
        Self { cells }
    }

    fn from_dense(d: &[Vec<f64>]) -> Self {
        let mut cells = Vec::new();
        for (i, row) in d.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    cells.push((i, j, v));
                }
            }
        }
        Self { cells }
    }

    /// Largest step keeping every touched entry inside [0, 1].
    fn max_step(&self, q: &[Vec<f64>]) -> f64 {
        let mut s = f64::INFINITY;
        for &(i, j, d) in &self.cells {
            if d < 0.0 {
                s = s.min(-q[i][j] / d);
            } else {
                s = s.min((1.0 - q[i][j]) / d);
            }
        }
        s
    }

    fn slope(&self, a: &NonNegMatrix, q: &[Vec<f64>], t: f64) -> f64 {
        self.cells
            .iter()
            .map(|&(i, j, d)| d * f_grad(a.get(i, j), (q[i][j] + t * d).max(0.0)))
            .sum()
    }

    fn gain(&self, a: &NonNegMatrix, q: &[Vec<f64>], t: f64) -> f64 {
        let mut s = CompensatedSum::new();
        for &(i, j, d) in &self.cells {
            let x = q[i][j];
            s.add(f_term(a.get(i, j), (x + t * d).max(0.0)) - f_term(a.get(i, j), x));
        }
        let direct = s.value();
        if direct.abs() > 1e-12 {
            return direct;
        }
        // Differences of O(1) terms lose all digits here; integrate the slope instead.
        t / 6.0 * (self.slope(a, q, 0.0) + 4.0 * self.slope(a, q, 0.5 * t) + self.slope(a, q, t))
    }

    // Exact maximization of the concave restriction by bisection on its slope.
    fn line_search(&self, a: &NonNegMatrix, q: &[Vec<f64>], tmax: f64) -> (f64, f64) {
        if tmax <= 0.0 {
            return (0.0, 0.0);
        }
        let t = if self.slope(a, q, tmax) >= 0.0 {
            tmax
        } else {
            let (mut lo, mut hi) = (0.0, tmax);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if self.slope(a, q, mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        (t, self.gain(a, q, t))
    }

    fn apply(&self, q: &mut [Vec<f64>], t: f64) {
        for &(i, j, d) in &self.cells {
            q[i][j] = (q[i][j] + t * d).max(0.0);
        }
    }
}

/// ln of max_Q exp F(A,Q) over doubly stochastic Q supported on supp(A).
///
/// Conditional gradient starting from the Sinkhorn witness, with the
/// assignment-problem duality gap as stopping certificate. Each iteration
/// line-searches three directions and keeps the best: the Frank–Wolfe vertex,
/// a pairwise step off the worst permutation inside supp(Q), and a Newton step
/// on the face of the polytope containing Q.
pub fn bethe_permanent(a: &NonNegMatrix, tol: f64, max_iter: usize) -> Result<ApproximationReport> {
    let n = a.require_square()?;
    if !(tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    let start = sinkhorn_scale(a, SINKHORN_TOL.min(tol), SINKHORN_MAX_ITER)?;
    let mut q: Vec<Vec<f64>> = (0..n).map(|i| start.q.row(i).to_vec()).collect();
    let to_matrix = |q: &[Vec<f64>]| NonNegMatrix::from_rows(q);
    let mut f = functional_f(a, &start.q)?;
    let mut history = vec![f];
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let g: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if a.get(i, j) > 0.0 {
                            f_grad(a.get(i, j), q[i][j])
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect()
            })
            .collect();
        let Some(fw) = max_weight_assignment(&g) else {
            return Err(Error::Invalid(
                "support of the matrix contains no permutation".into(),
            ));
        };
        let mut lin = CompensatedSum::new();
        for i in 0..n {
            lin.add(g[i][fw[i]]);
            for j in 0..n {
                if q[i][j] > 0.0 {
                    lin.add(-g[i][j] * q[i][j]);
                }
            }
        }
        gap = lin.value().max(0.0);
        if gap <= tol {
            break;
        }
        iterations += 1;

        let d_fw = Direction::new(n, &fw, None, &q);
        let mut best = (d_fw.line_search(a, &q, 1.0), d_fw);

        let neg: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if q[i][j] > 0.0 {
                            -g[i][j]
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect()
            })
            .collect();
        if let Some(away) = max_weight_assignment(&neg) {
            let tmax = (0..n).map(|i| q[i][away[i]]).fold(f64::INFINITY, f64::min);
            let d_pw = Direction::new(n, &fw, Some(&away), &q);
            let cand = d_pw.line_search(a, &q, tmax);
            if cand.1 > best.0 .1 {
                best = (cand, d_pw);
            }
        }
        if let Some(d_nt) = newton_direction(a, &q, &g) {
            let tmax = d_nt.max_step(&q);
            let cand = d_nt.line_search(a, &q, (0.999 * tmax).min(1.0));
            if cand.1 > best.0 .1 {
                best = (cand, d_nt);
            }
        }
        let ((t, gain), dir) = best;
        if !(t > 0.0 && gain >= 0.0) {
            break;
        }
        dir.apply(&mut q, t);
        f += gain;
        history.push(f);
    }
    let qm = to_matrix(&q)?;
    let log_value = functional_f(a, &qm)?;
    let residual = ds_residual(&qm);
    let converged = gap <= tol;
    Ok(ApproximationReport {
        method: Method::Bethe,
        log_value,
        iterations,
        residual,
        converged,
        gap: Some(gap),
        history,
        witness: DoublyStochasticWitness {
            q: qm,
            row_scalers: Vec::new(),
            col_scalers: Vec::new(),
            iterations,
            residual,
            converged,
        },
    })
}

/// Newton direction for F on the doubly stochastic matrices supported where
/// Q > 0. F is separable, so the Hessian is diag(−1/q − 1/(1−q)) and the step
/// is Δ_ij = D_ij (g_ij − u_i − v_j) with D = q(1−q) and (u, v) chosen so that
/// every row and column of Δ sums to zero.
fn newton_direction(a: &NonNegMatrix, q: &[Vec<f64>], g: &[Vec<f64>]) -> Option<Direction> {
    let n = q.len();
    let dw: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if a.get(i, j) > 0.0 && q[i][j] > 0.0 {
                        q[i][j] * (1.0 - q[i][j])
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    // Unknowns u_0..u_{n-1}, v_0..v_{n-2}; v_{n-1} = 0.
    let m = 2 * n - 1;
    let mut sys = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for i in 0..n {
        for j in 0..n {
            let d = dw[i][j];
            if d == 0.0 {
                continue;
            }
            sys[(i, i)] += d;
            rhs[i] += d * g[i][j];
            if j < n - 1 {
                sys[(i, n + j)] += d;
                sys[(n + j, i)] += d;
                sys[(n + j, n + j)] += d;
                rhs[n + j] += d * g[i][j];
            }
        }
    }
    let sol = sys.lu().solve(&rhs)?;
    let u = |i: usize| sol[i];
    let v = |j: usize| if j < n - 1 { sol[n + j] } else { 0.0 };
    let d: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if dw[i][j] > 0.0 {
                        dw[i][j] * (g[i][j] - u(i) - v(j))
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    if d.iter().flatten().any(|x| !x.is_finite()) {
        return None;
    }
    Some(Direction::from_dense(&d))
}

/// Block-diagonal matrix of k all-ones blocks of size ⌊n/k⌋ plus one
/// all-ones remainder block of size n − k⌊n/k⌋ when that is non-zero.
pub fn block_ones_matrix(n: usize, k: usize) -> Result<NonNegMatrix> {
    if k == 0 || k > n {
        return invalid(format!("need 1 <= k <= n, got n={n}, k={k}"));
    }
    let b = n / k;
    let block = |i: usize| if i < k * b { i / b } else { k };
    NonNegMatrix::from_fn(n, n, |i, j| if block(i) == block(j) { 1.0 } else { 0.0 })
}

/// n×n matrix with exactly k distinct random positive columns. Returns the
/// matrix and the multiplicity of each distinct column.
pub fn k_distinct_column_matrix(
    n: usize,
    k: usize,
    seed: u64,
) -> Result<(NonNegMatrix, Vec<usize>)> {
    if k == 0 || k > n {
        return invalid(format!("need 1 <= k <= n, got n={n}, k={k}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n).map(|_| rng.gen_range(0.05..1.0)).collect())
        .collect();
    let mut cuts: Vec<usize> = (1..n)
        .collect::<Vec<_>>()
        .choose_multiple(&mut rng, k - 1)
        .copied()
        .collect();
    cuts.sort_unstable();
    cuts.insert(0, 0);
    cuts.push(n);
    let mult: Vec<usize> = cuts.windows(2).map(|w| w[1] - w[0]).collect();
    let mut order: Vec<usize> = mult
        .iter()
        .enumerate()
        .flat_map(|(c, &m)| std::iter::repeat_n(c, m))
        .collect();
    order.shuffle(&mut rng);
    let m = NonNegMatrix::from_fn(n, n, |i, j| columns[order[j]][i])?;
    Ok((m, mult))
}
