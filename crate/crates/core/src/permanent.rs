//! Exact permanents.

use crate::error::{Error, Result};
use crate::matrix::NonNegMatrix;
use crate::numeric::CompensatedSum;

pub const NAIVE_LIMIT: usize = 10;
pub const RYSER_LIMIT: usize = 24;

/// Sum over all n! permutations (Heap's algorithm), compensated.
pub fn permanent_naive(m: &NonNegMatrix) -> Result<f64> {
    let n = m.require_square()?;
    if n > NAIVE_LIMIT {
        return Err(Error::SizeLimit {
            what: "naive permanent size",
            got: n,
            limit: NAIVE_LIMIT,
        });
    }
    if n == 0 {
        return Ok(1.0);
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    let mut acc = CompensatedSum::new();
    let term = |p: &[usize]| {
        p.iter()
            .enumerate()
            .map(|(i, &j)| m.get(i, j))
            .product::<f64>()
    };
    acc.add(term(&perm));
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            acc.add(term(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(acc.value())
}

/// Ryser's formula with Gray-code enumeration, returned on the natural scale.
/// May overflow or underflow for extreme inputs; see [`log_permanent`].
pub fn permanent_ryser(m: &NonNegMatrix) -> Result<f64> {
    let (v, log_scale) = ryser_scaled(m)?;
    Ok(v * log_scale.exp())
}

/// ln perm(m); −∞ when the permanent is zero.
pub fn log_permanent(m: &NonNegMatrix) -> Result<f64> {
    let (v, log_scale) = ryser_scaled(m)?;
    if v <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(v.ln() + log_scale)
}

/// Returns (p, s) with perm(m) = p·e^s. Rows and columns are divided by their
/// maxima first so that the Gray-code products stay near unit scale.
fn ryser_scaled(m: &NonNegMatrix) -> Result<(f64, f64)> {
    let n = m.require_square()?;
    if n > RYSER_LIMIT {
        return Err(Error::SizeLimit {
            what: "Ryser permanent size",
            got: n,
            limit: RYSER_LIMIT,
        });
    }
    if n == 0 {
        return Ok((1.0, 0.0));
    }
    if !has_perfect_matching(m) {
        return Ok((0.0, 0.0));
    }
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let mut log_scale = 0.0;
    for row in a.iter_mut() {
        let mx = row.iter().cloned().fold(0.0, f64::max);
        log_scale += mx.ln();
        row.iter_mut().for_each(|x| *x /= mx);
    }
    for j in 0..n {
        let mx = (0..n).map(|i| a[i][j]).fold(0.0, f64::max);
        log_scale += mx.ln();
        for row in a.iter_mut() {
            row[j] /= mx;
        }
    }
    Ok((ryser_core(&a), log_scale))
}

// perm(A) = (−1)^{n−1}·2·Σ_{S⊆[n−1]} (−1)^{|S|} Π_i (x_i + Σ_{j∈S} a_ij),
// x_i = a_{i,n−1} − ½ Σ_j a_ij.
fn ryser_core(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut x: Vec<f64> = a
        .iter()
        .map(|row| {
            let mut s = CompensatedSum::new();
            row.iter().for_each(|&v| s.add(v));
            row[n - 1] - 0.5 * s.value()
        })
        .collect();
    let mut acc = CompensatedSum::new();
    acc.add(x.iter().product());
    let mut gray: u64 = 0;
    for g in 1u64..(1u64 << (n - 1)) {
        let j = g.trailing_zeros() as usize;
        gray ^= 1 << j;
        if gray & (1 << j) != 0 {
            for i in 0..n {
                x[i] += a[i][j];
            }
        } else {
            for i in 0..n {
                x[i] -= a[i][j];
            }
        }
        let p: f64 = x.iter().product();
        if gray.count_ones().is_multiple_of(2) {
            acc.add(p);
        } else {
            acc.add(-p);
        }
    }
    let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
    (sign * 2.0 * acc.value()).max(0.0)
}

/// Whether the support of a square matrix contains a permutation (Kuhn's algorithm).
pub fn has_perfect_matching(m: &NonNegMatrix) -> bool {
    let n = m.rows();
    let mut match_col: Vec<Option<usize>> = vec![None; n];
    fn augment(
        m: &NonNegMatrix,
        i: usize,
        seen: &mut [bool],
        match_col: &mut [Option<usize>],
    ) -> bool {
        for j in 0..m.cols() {
            if m.get(i, j) > 0.0 && !seen[j] {
                seen[j] = true;
                if match_col[j].is_none_or(|i2| augment(m, i2, seen, match_col)) {
                    match_col[j] = Some(i);
                    return true;
                }
            }
        }
        false
    }
    (0..n).all(|i| {
        let mut seen = vec![false; n];
        augment(m, i, &mut seen, &mut match_col)
    })
}
