//! Rounding a fractional allocation to one with integral row sums.
//!
//! `round_allocation` runs three steps. Step 1 floors the high rows. Step 2
//! scales each low row down to an integral sum. Step 3 rounds the diagonal
//! rows left over from step 2. Each step's displaced mass is collected into
//! new rows by `create_new_probability_values`.

use serde::{Serialize, Serializer};

use crate::allocation::AllocationMatrix;
use crate::error::{invalid, Error, Result};
use crate::numeric::{compensated_sum, CompensatedSum};

/// Distance to an integer below which a value counts as that integer.
pub const INTEGRALITY_TOL: f64 = 1e-9;

/// Floor that treats values within [`INTEGRALITY_TOL`] of an integer as that integer.
pub fn snapped_floor(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= INTEGRALITY_TOL {
        r
    } else {
        x.floor()
    }
}

fn serialize_pruned<S: Serializer>(
    m: &AllocationMatrix,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    m.pruned().serialize(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundingTrace {
    /// The allocation handed to step 1: the input with column 0 scaled to an integral sum.
    #[serde(serialize_with = "serialize_pruned")]
    pub input: AllocationMatrix,
    #[serde(serialize_with = "serialize_pruned")]
    pub stage1: AllocationMatrix,
    #[serde(serialize_with = "serialize_pruned")]
    pub stage2: AllocationMatrix,
    #[serde(rename = "final", serialize_with = "serialize_pruned")]
    pub final_: AllocationMatrix,
    pub gamma: f64,
    /// log g decrease of: column-0 adjustment plus step 1, step 2, step 3.
    pub log_g_drops: [f64; 3],
}

/// Distributes x (entries in [0,1), integral sum a) over rows so that every
/// row of z sums to 0 or 1 and column j of z sums to x_j. Rows are filled in
/// order of non-increasing w, each one taking mass from the columns that follow
/// it, so a row's weight is never smaller than the weights it absorbs.
///
/// Returns z over the original indices and the indices of the rows summing to 1.
pub fn structured_rounding(x: &[f64], w: &[f64], a: usize) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if x.len() != w.len() {
        return Err(Error::Dimension(format!(
            "x has {} entries but w has {}",
            x.len(),
            w.len()
        )));
    }
    if x.iter().any(|v| !(v.is_finite() && *v >= 0.0 && *v < 1.0)) {
        return invalid("x entries must lie in [0, 1)");
    }
    let total = compensated_sum(x.iter().copied());
    if (total - a as f64).abs() > INTEGRALITY_TOL {
        return invalid(format!("x sums to {total}, not {a}"));
    }
    let b = x.len();
    let mut z = vec![vec![0.0; b]; b];
    if a == 0 {
        return Ok((z, Vec::new()));
    }
    // Zeros are dropped; the rest is sorted by weight, ties kept in index order.
    let mut order: Vec<usize> = (0..b).filter(|&j| x[j] > 0.0).collect();
    order.sort_by(|&p, &q| w[q].partial_cmp(&w[p]).unwrap_or(std::cmp::Ordering::Equal));
    let xs: Vec<f64> = order.iter().map(|&j| x[j]).collect();
    let m = xs.len();
    let mut cum = Vec::with_capacity(m);
    let mut acc = CompensatedSum::new();
    for &v in &xs {
        acc.add(v);
        cum.push(acc.value());
    }
    // The last partial sum is a up to roundoff; make it exact.
    cum[m - 1] = a as f64;
    let mut s = Vec::with_capacity(a + 1);
    for i in 1..=a {
        let target = (i - 1) as f64;
        let idx = cum.iter().position(|&c| c > target).unwrap_or(m - 1);
        s.push(idx);
    }
    s.push(m - 1);
    let mut zs = vec![vec![0.0; m]; m];
    for i in 0..a {
        let (lo, hi) = (s[i], s[i + 1]);
        zs[lo][lo] = cum[lo] - i as f64;
        if hi > lo + 1 {
            zs[lo][lo + 1..hi].copy_from_slice(&xs[lo + 1..hi]);
        }
        if hi > lo {
            // cum[hi − 1] ≤ i + 1 by the choice of hi, so this is never negative.
            zs[lo][hi] = (i + 1) as f64 - cum[hi - 1];
        }
    }
    for (p, &op) in order.iter().enumerate() {
        for (q, &oq) in order.iter().enumerate() {
            z[op][oq] = zs[p][q];
        }
    }
    let rows = s[..a].iter().map(|&p| order[p]).collect();
    Ok((z, rows))
}

/// Keeps the rows of c and appends one row per column j holding Σ_i (b − c)_ij
/// on the diagonal, at the (b − c)-weighted mean of the levels. A column with
/// nothing removed gets an empty row at level 0.
pub fn create_new_probability_values(
    b: &AllocationMatrix,
    c: &AllocationMatrix,
) -> Result<AllocationMatrix> {
    if b.levels != c.levels || b.profile != c.profile || b.entries.len() != c.entries.len() {
        return Err(Error::Dimension(
            "b and c must share levels and profile".into(),
        ));
    }
    let cols = b.n_cols();
    for (rb, rc) in b.entries.iter().zip(&c.entries) {
        if rb.iter().zip(rc).any(|(x, y)| *y > *x + INTEGRALITY_TOL) {
            return invalid("c exceeds b");
        }
    }
    let mut levels = c.levels.clone();
    let mut entries = c.entries.clone();
    for j in 0..cols {
        let diff: Vec<f64> = b
            .entries
            .iter()
            .zip(&c.entries)
            .map(|(rb, rc)| (rb[j] - rc[j]).max(0.0))
            .collect();
        let mass = compensated_sum(diff.iter().copied());
        let level = if mass > 0.0 {
            compensated_sum(diff.iter().zip(&b.levels).map(|(d, r)| d * r)) / mass
        } else {
            0.0
        };
        levels.push(level);
        let mut row = vec![0.0; cols];
        row[j] = mass;
        entries.push(row);
    }
    Ok(AllocationMatrix {
        levels,
        entries,
        profile: b.profile.clone(),
    })
}

/// Scales column 0 so that it sums to ⌊Σ_i S_i0⌋. Steps 1 to 3 need every
/// column sum integral, and column 0 carries no constraint of its own.
fn floor_unseen_column(s: &AllocationMatrix) -> AllocationMatrix {
    let mut out = s.clone();
    let phi0 = compensated_sum(s.entries.iter().map(|r| r[0]));
    let target = snapped_floor(phi0);
    let c = if phi0 > 0.0 { target / phi0 } else { 0.0 };
    out.entries.iter_mut().for_each(|r| r[0] *= c);
    out
}

pub fn round_allocation(s: &AllocationMatrix, gamma: f64) -> Result<RoundingTrace> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return invalid("gamma must lie in (0, 1)");
    }
    if s.column_error() > 1e-6 || s.mass() > 1.0 + 1e-9 {
        return invalid("allocation is not fractionally feasible");
    }
    let input = floor_unseen_column(s);
    let cols = input.n_cols();

    // Step 1.
    let mut a = AllocationMatrix::zeros(input.levels.clone(), input.profile.clone());
    let low: Vec<usize> = (0..input.n_levels())
        .filter(|&i| input.levels[i] <= gamma)
        .collect();
    for (i, row) in input.entries.iter().enumerate() {
        if input.levels[i] > gamma {
            a.entries[i] = row.iter().map(|&v| snapped_floor(v)).collect();
        }
    }
    for j in 0..cols {
        let sum = compensated_sum(low.iter().map(|&i| input.entries[i][j]));
        if sum > 0.0 {
            let c = snapped_floor(sum) / sum;
            for &i in &low {
                a.entries[i][j] = input.entries[i][j] * c;
            }
        }
    }
    let stage1 = create_new_probability_values(&input, &a)?;

    // Step 2.
    let mut a1 = stage1.clone();
    for (i, row) in a1.entries.iter_mut().enumerate() {
        if stage1.levels[i] <= gamma {
            let rs = compensated_sum(row.iter().copied());
            if rs > 0.0 {
                let c = snapped_floor(rs) / rs;
                row.iter_mut().for_each(|v| *v *= c);
            }
        }
    }
    let stage2 = create_new_probability_values(&stage1, &a1)?;

    // Step 3: round the fractional parts of the diagonal rows just appended.
    let base = stage1.n_levels();
    let diag: Vec<f64> = (0..cols).map(|j| stage2.entries[base + j][j]).collect();
    let x: Vec<f64> = diag
        .iter()
        .map(|&d| (d - snapped_floor(d)).max(0.0))
        .collect();
    let w: Vec<f64> = (0..cols).map(|j| stage2.levels[base + j]).collect();
    let a_units = compensated_sum(x.iter().copied()).round() as usize;
    let (z, _) = structured_rounding(&x, &w, a_units)?;
    let mut fin = stage2.clone();
    for j in 0..cols {
        for jp in 0..cols {
            let fl = if jp == j { snapped_floor(diag[j]) } else { 0.0 };
            fin.entries[base + j][jp] = fl + z[j][jp];
        }
    }
    fin.levels.iter_mut().for_each(|r| *r /= 1.0 + gamma);

    let g0 = s.log_g();
    let g1 = stage1.log_g();
    let g2 = stage2.log_g();
    let g3 = fin.log_g();
    Ok(RoundingTrace {
        input,
        stage1,
        stage2,
        final_: fin,
        gamma,
        log_g_drops: [g0 - g1, g1 - g2, g2 - g3],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::Profile;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn structured_rounding_two_halves() {
        let (z, s) = structured_rounding(&[0.5, 0.5], &[0.3, 0.2], 1).unwrap();
        assert_eq!(s, vec![0]);
        assert!(close(z[0][0], 0.5) && close(z[0][1], 0.5));
        assert!(z[1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn structured_rounding_three_columns() {
        let (z, s) = structured_rounding(&[0.5, 0.7, 0.8], &[0.3, 0.2, 0.1], 2).unwrap();
        assert_eq!(s, vec![0, 1]);
        let want = [[0.5, 0.5, 0.0], [0.0, 0.2, 0.8], [0.0, 0.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!(close(z[i][j], want[i][j]), "{z:?}");
            }
        }
    }

    #[test]
    fn structured_rounding_maps_back_unsorted_weights() {
        // Same input with weights reversed: processing order is 2, 1, 0.
        let (z, s) = structured_rounding(&[0.8, 0.7, 0.5], &[0.1, 0.2, 0.3], 2).unwrap();
        assert_eq!(s, vec![2, 1]);
        assert!(close(z[2][2], 0.5) && close(z[2][1], 0.5));
        assert!(close(z[1][1], 0.2) && close(z[1][0], 0.8));
    }

    #[test]
    fn structured_rounding_rejects_bad_sum() {
        assert!(structured_rounding(&[0.5, 0.4], &[0.1, 0.1], 1).is_err());
        assert!(structured_rounding(&[1.0], &[0.1], 1).is_err());
    }

    fn one_col(levels: Vec<f64>, col1: Vec<f64>, col0: Vec<f64>, phi: usize) -> AllocationMatrix {
        let p = Profile::new(vec![1], vec![phi]).unwrap();
        let entries = col0
            .into_iter()
            .zip(col1)
            .map(|(a, b)| vec![a, b])
            .collect();
        AllocationMatrix::new(levels, entries, p).unwrap()
    }

    #[test]
    fn create_with_c_equal_b_adds_empty_rows() {
        let b = one_col(vec![0.2, 0.4], vec![1.0, 1.0], vec![0.0, 0.0], 2);
        let out = create_new_probability_values(&b, &b).unwrap();
        assert_eq!(out.n_levels(), 4);
        assert_eq!(&out.entries[..2], &b.entries[..]);
        assert!(out.entries[2..].iter().flatten().all(|&v| v == 0.0));
        assert_eq!(out.pruned().entries, b.entries);
    }

    #[test]
    fn create_merges_removed_mass_at_mean_level() {
        let b = one_col(vec![0.2, 0.4], vec![1.0, 1.0], vec![0.0, 0.0], 2);
        let c = AllocationMatrix::zeros(b.levels.clone(), b.profile.clone());
        let out = create_new_probability_values(&b, &c).unwrap();
        assert!(close(out.levels[3], 0.3));
        assert!(close(out.entries[3][1], 2.0));
        assert_eq!(out.levels[2], 0.0);
        assert!(create_new_probability_values(&c, &b).is_err());
    }

    #[test]
    fn single_low_row_hand_trace() {
        // One low row holding 1.6 units of the only seen column, nothing unseen.
        let p = Profile::new(vec![1], vec![2]).unwrap();
        let s =
            AllocationMatrix::new(vec![0.4, 0.1], vec![vec![0.0, 0.4], vec![0.0, 1.6]], p).unwrap();
        let t = round_allocation(&s, 0.2).unwrap();
        // Step 1: H = {0.4} floors 0.4 to 0; the low column sum 1.6 floors to 1.
        assert!(close(t.stage1.entries[1][1], 1.0));
        assert!(close(t.stage1.entries[3][1], 1.0));
        // The new row's level is (0.4·0.4 + 0.6·0.1)/1 = 0.22 > γ.
        assert!(close(t.stage1.levels[3], 0.22));
        assert!(t.final_.has_integral_rows(1e-9));
        assert!((t.final_.column_error()) < 1e-12);
        assert!(t.final_.mass() <= 1.0 + 1e-12);
    }

    #[test]
    fn integral_high_rows_only_rescale_levels() {
        let p = Profile::new(vec![1, 2], vec![1, 1]).unwrap();
        let s = AllocationMatrix::new(
            vec![0.5, 0.25],
            vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            p,
        )
        .unwrap();
        let gamma = 0.1;
        let t = round_allocation(&s, gamma).unwrap();
        let f = t.final_.pruned();
        assert_eq!(f.entries, s.entries);
        for (a, b) in f.levels.iter().zip(&s.levels) {
            assert!(close(*a, b / (1.0 + gamma)));
        }
        // Only the level rescaling costs anything: m_j ln(1+γ) per unit.
        assert!(close(
            t.log_g_drops.iter().sum::<f64>(),
            3.0 * (1.0 + gamma).ln()
        ));
    }

    #[test]
    fn rejects_bad_gamma() {
        let s = one_col(vec![0.5], vec![1.0], vec![0.0], 1);
        assert!(round_allocation(&s, 0.0).is_err());
        assert!(round_allocation(&s, 1.0).is_err());
    }

    #[test]
    fn trace_json_names_final_and_prunes() {
        let s = one_col(vec![0.5], vec![1.0], vec![0.0], 1);
        let t = round_allocation(&s, 0.3).unwrap();
        let v = serde_json::to_value(&t).unwrap();
        assert!(v.get("final").is_some());
        assert_eq!(v["final"]["levels"].as_array().unwrap().len(), 1);
        assert_eq!(v["log_g_drops"].as_array().unwrap().len(), 3);
    }

    fn fractional_x() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize)> {
        (2usize..8).prop_flat_map(|b| {
            (
                prop::collection::vec(0.01f64..0.99, b),
                prop::collection::vec(0.001f64..1.0, b),
                1usize..b,
            )
                .prop_map(|(raw, w, a)| {
                    // Rescale to sum a; skip draws that leave [0,1).
                    let s: f64 = raw.iter().sum();
                    let mut x: Vec<f64> = raw.iter().map(|v| v * a as f64 / s).collect();
                    if x.iter().any(|&v| v >= 1.0) {
                        x = vec![0.5; 2];
                        return (x, vec![0.2, 0.1], 1);
                    }
                    let fix = a as f64 - x[..x.len() - 1].iter().sum::<f64>();
                    let last = x.len() - 1;
                    x[last] = fix;
                    (x, w, a)
                })
        })
    }

    proptest! {
        #[test]
        fn structured_rounding_conditions((x, w, a) in fractional_x(), m in prop::collection::vec(1u32..5, 8)) {
            prop_assume!(x.iter().all(|&v| (0.0..1.0).contains(&v)));
            let (z, s) = structured_rounding(&x, &w, a).unwrap();
            let b = x.len();
            prop_assert_eq!(s.len(), a);
            for i in 0..b {
                let rs: f64 = z[i].iter().sum();
                prop_assert!(rs.abs() < 1e-9 || (rs - 1.0).abs() < 1e-9);
            }
            for j in 0..b {
                let cs: f64 = (0..b).map(|i| z[i][j]).sum();
                prop_assert!((cs - x[j]).abs() < 1e-9);
            }
            let wmax = w.iter().cloned().fold(0.0, f64::max);
            let lhs: f64 = (0..b).map(|i| z[i].iter().sum::<f64>() * w[i]).sum();
            let rhs: f64 = (0..b).map(|j| x[j] * w[j]).sum::<f64>() + wmax;
            prop_assert!(lhs <= rhs + 1e-12);
            let before: f64 = (0..b).map(|j| m[j] as f64 * x[j] * w[j].ln()).sum();
            let after: f64 = (0..b).flat_map(|i| (0..b).map(move |j| (i, j))).map(|(i, j)| m[j] as f64 * z[i][j] * w[i].ln()).sum();
            prop_assert!(before <= after + 1e-9);
        }
    }
}
