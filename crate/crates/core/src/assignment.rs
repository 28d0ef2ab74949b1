//! Maximum-weight perfect assignment (Hungarian method, O(n³)).

/// Returns `p` with `p[i]` the column assigned to row `i`, maximizing
/// Σ w[i][p[i]]. Entries equal to −∞ are forbidden. Returns `None` when no
/// assignment avoids forbidden entries.
pub fn max_weight_assignment(w: &[Vec<f64>]) -> Option<Vec<usize>> {
    let n = w.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let finite_max = w
        .iter()
        .flatten()
        .filter(|x| x.is_finite())
        .fold(0.0f64, |a, &b| a.max(b.abs()));
    // A forbidden entry costs more than any full assignment through allowed ones.
    let big = (finite_max + 1.0) * (n as f64 + 1.0) * 4.0;
    let cost = |i: usize, j: usize| if w[i][j].is_finite() { -w[i][j] } else { big };

    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rowcol = vec![0usize; n];
    for j in 1..=n {
        rowcol[p[j] - 1] = j - 1;
    }
    if rowcol
        .iter()
        .enumerate()
        .any(|(i, &j)| !w[i][j].is_finite())
    {
        return None;
    }
    Some(rowcol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(w: &[Vec<f64>]) -> f64 {
        fn rec(w: &[Vec<f64>], i: usize, used: &mut Vec<bool>) -> f64 {
            if i == w.len() {
                return 0.0;
            }
            let mut best = f64::NEG_INFINITY;
            for j in 0..w.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.max(w[i][j] + rec(w, i + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(w, 0, &mut vec![false; w.len()])
    }

    #[test]
    fn matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in 1..7 {
            for _ in 0..20 {
                let w: Vec<Vec<f64>> = (0..n)
                    .map(|_| {
                        (0..n)
                            .map(|_| {
                                if rng.gen_bool(0.2) {
                                    f64::NEG_INFINITY
                                } else {
                                    rng.gen_range(-5.0..5.0)
                                }
                            })
                            .collect()
                    })
                    .collect();
                let best = brute(&w);
                match max_weight_assignment(&w) {
                    Some(p) => {
                        let got: f64 = p.iter().enumerate().map(|(i, &j)| w[i][j]).sum();
                        assert!((got - best).abs() < 1e-9, "{got} vs {best}");
                    }
                    None => assert_eq!(best, f64::NEG_INFINITY),
                }
            }
        }
    }
}
