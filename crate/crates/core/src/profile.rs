//! Profiles, profile probability matrices and exact profile probabilities.

use std::collections::HashMap;
use std::hash::Hash;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::NonNegMatrix;
use crate::numeric::{compensated_sum, ln_factorial, log_add, CompensatedSum};
use crate::permanent::log_permanent;

/// Distinct non-zero frequencies `freqs` (strictly increasing) and how many
/// symbols appear with each of them (`counts`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawProfile")]
pub struct Profile {
    freqs: Vec<usize>,
    counts: Vec<usize>,
}

#[derive(Deserialize)]
struct RawProfile {
    freqs: Vec<usize>,
    counts: Vec<usize>,
}

impl TryFrom<RawProfile> for Profile {
    type Error = Error;
    fn try_from(r: RawProfile) -> Result<Self> {
        Profile::new(r.freqs, r.counts)
    }
}

impl Profile {
    pub fn new(freqs: Vec<usize>, counts: Vec<usize>) -> Result<Self> {
        if freqs.is_empty() {
            return invalid("profile has no frequencies");
        }
        if freqs.len() != counts.len() {
            return invalid("freqs and counts differ in length");
        }
        if freqs[0] == 0 || freqs.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("freqs must be positive and strictly increasing");
        }
        if counts.contains(&0) {
            return invalid("counts must be positive");
        }
        Ok(Self { freqs, counts })
    }

    /// Profile of a list of per-symbol frequencies; zeros are ignored.
    pub fn from_frequencies(fs: &[usize]) -> Result<Self> {
        let mut fs: Vec<usize> = fs.iter().copied().filter(|&f| f > 0).collect();
        fs.sort_unstable();
        let mut freqs = Vec::new();
        let mut counts = Vec::new();
        for f in fs {
            if freqs.last() == Some(&f) {
                *counts.last_mut().unwrap() += 1;
            } else {
                freqs.push(f);
                counts.push(1);
            }
        }
        Self::new(freqs, counts)
    }

    pub fn freqs(&self) -> &[usize] {
        &self.freqs
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Number of samples, Σ m_j φ_j.
    pub fn n(&self) -> usize {
        self.freqs
            .iter()
            .zip(&self.counts)
            .map(|(m, c)| m * c)
            .sum()
    }

    /// Number of distinct frequencies.
    pub fn k(&self) -> usize {
        self.freqs.len()
    }

    /// Number of distinct observed symbols, Σ φ_j.
    pub fn distinct(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Per-symbol frequencies in non-decreasing order.
    pub fn frequencies(&self) -> Vec<usize> {
        self.freqs
            .iter()
            .zip(&self.counts)
            .flat_map(|(&m, &c)| std::iter::repeat_n(m, c))
            .collect()
    }
}

/// All profiles of sequences of length n (one per integer partition of n).
pub fn profiles_of_length(n: usize) -> Vec<Profile> {
    fn parts(rest: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest == 0 {
            out.push(cur.clone());
            return;
        }
        for p in (1..=rest.min(max)).rev() {
            cur.push(p);
            parts(rest - p, p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        parts(n, n, &mut Vec::new(), &mut out);
    }
    out.iter()
        .map(|p| Profile::from_frequencies(p).unwrap())
        .collect()
}

/// Non-negative weights with total mass at most one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PseudoDistribution {
    probs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for PseudoDistribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        PseudoDistribution::new(v)
    }
}

impl From<PseudoDistribution> for Vec<f64> {
    fn from(p: PseudoDistribution) -> Self {
        p.probs
    }
}

impl PseudoDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some(x) = probs.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return invalid(format!(
                "probability {x} is not a finite non-negative number"
            ));
        }
        let mass = compensated_sum(probs.iter().copied());
        if mass > 1.0 + 1e-12 {
            return invalid(format!("total mass {mass} exceeds 1"));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn mass(&self) -> f64 {
        compensated_sum(self.probs.iter().copied())
    }

    /// Number of strictly positive entries.
    pub fn support(&self) -> usize {
        self.probs.iter().filter(|&&p| p > 0.0).count()
    }

    pub fn normalized(&self) -> Result<Self> {
        let m = self.mass();
        if m <= 0.0 {
            return invalid("cannot normalize a zero vector");
        }
        Ok(Self {
            probs: self.probs.iter().map(|p| (p / m).min(1.0)).collect(),
        })
    }
}

/// Profile of a sequence of opaque tokens.
pub fn profile_of_sequence<T: Eq + Hash>(seq: &[T]) -> Result<Profile> {
    if seq.is_empty() {
        return invalid("empty sequence");
    }
    let mut freq: HashMap<&T, usize> = HashMap::new();
    for s in seq {
        *freq.entry(s).or_insert(0) += 1;
    }
    Profile::from_frequencies(&freq.into_values().collect::<Vec<_>>())
}

/// ln C_φ = ln n! − Σ_j φ_j ln m_j!.
pub fn log_c_phi(p: &Profile) -> f64 {
    ln_factorial(p.n() as u64)
        - p.freqs()
            .iter()
            .zip(p.counts())
            .map(|(&m, &c)| c as f64 * ln_factorial(m as u64))
            .sum::<f64>()
}

/// The N×N matrix with entries q_x^{f_y}: `phi0` all-ones columns (frequency
/// zero, with 0^0 = 1) followed by φ_j copies of (q_x^{m_j})_x for ascending m_j.
pub fn profile_probability_matrix(
    q: &PseudoDistribution,
    p: &Profile,
    phi0: usize,
) -> Result<NonNegMatrix> {
    let n = phi0 + p.distinct();
    if q.len() != n {
        return Err(Error::Dimension(format!(
            "distribution has {} entries, profile needs {}",
            q.len(),
            n
        )));
    }
    let col_freq: Vec<i32> = std::iter::repeat_n(0, phi0)
        .chain(p.frequencies().into_iter().map(|m| m as i32))
        .collect();
    NonNegMatrix::from_fn(n, n, |x, y| q.probs()[x].powi(col_freq[y]))
}

/// ln P(q, φ) via the permanent of the profile probability matrix.
pub fn profile_probability_exact(q: &PseudoDistribution, p: &Profile, phi0: usize) -> Result<f64> {
    let a = profile_probability_matrix(q, p, phi0)?;
    let lp = log_permanent(&a)?;
    let fact: f64 = ln_factorial(phi0 as u64)
        + p.counts()
            .iter()
            .map(|&c| ln_factorial(c as u64))
            .sum::<f64>();
    Ok(log_c_phi(p) - fact + lp)
}

pub const BRUTE_MAX_N: usize = 8;
pub const BRUTE_MAX_DOMAIN: usize = 5;

/// ln P(q, φ) by summing over every sequence of length n whose profile is φ.
pub fn profile_probability_bruteforce(q: &PseudoDistribution, p: &Profile) -> Result<f64> {
    let n = p.n();
    let d = q.len();
    if n > BRUTE_MAX_N {
        return Err(Error::SizeLimit {
            what: "sequence length",
            got: n,
            limit: BRUTE_MAX_N,
        });
    }
    if d > BRUTE_MAX_DOMAIN {
        return Err(Error::SizeLimit {
            what: "domain size",
            got: d,
            limit: BRUTE_MAX_DOMAIN,
        });
    }
    if d == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let target = p.frequencies();
    let mut seq = vec![0usize; n];
    let mut acc = CompensatedSum::new();
    loop {
        let mut f = vec![0usize; d];
        seq.iter().for_each(|&s| f[s] += 1);
        let mut fs: Vec<usize> = f.into_iter().filter(|&x| x > 0).collect();
        fs.sort_unstable();
        if fs == target {
            acc.add(seq.iter().map(|&s| q.probs()[s]).product());
        }
        let mut i = 0;
        while i < n {
            seq[i] += 1;
            if seq[i] < d {
                break;
            }
            seq[i] = 0;
            i += 1;
        }
        if i == n {
            break;
        }
    }
    let v = acc.value();
    Ok(if v > 0.0 { v.ln() } else { f64::NEG_INFINITY })
}

/// ln P(q, φ) by grouping symbols with equal probability.
///
/// With value classes v_i of size c_i this is
/// C_φ Σ_T Π_i c_i!/(T_{i0}! Π_j T_ij!) Π_j v_i^{m_j T_ij} over tables T whose
/// column j ≥ 1 sums to φ_j. Exact like [`profile_probability_exact`] but
/// usable when the support is far beyond the permanent size limit, provided
/// q takes few distinct values. Symbols beyond the observed ones are unseen.
pub fn profile_probability_grouped(q: &PseudoDistribution, p: &Profile) -> Result<f64> {
    let mut vals: Vec<f64> = q.probs().to_vec();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut classes: Vec<(f64, usize)> = Vec::new();
    for v in vals {
        match classes.last_mut() {
            Some((w, c)) if *w == v => *c += 1,
            _ => classes.push((v, 1)),
        }
    }
    let k = p.k();
    let phi = p.counts();
    let mut radix = vec![1usize; k + 1];
    for j in 0..k {
        radix[j + 1] = radix[j] * (phi[j] + 1);
    }
    let states = radix[k];
    if states > 50_000_000 {
        return Err(Error::SizeLimit {
            what: "profile state space",
            got: states,
            limit: 50_000_000,
        });
    }
    let decode =
        |s: usize| -> Vec<usize> { (0..k).map(|j| (s / radix[j]) % (phi[j] + 1)).collect() };
    let mut dp = vec![f64::NEG_INFINITY; states];
    dp[states - 1] = 0.0;
    let lf: Vec<f64> = (0..=q.len().max(p.n()))
        .map(|i| ln_factorial(i as u64))
        .collect();

    for &(v, c) in &classes {
        let lv = v.ln();
        let mut next = vec![f64::NEG_INFINITY; states];
        for s in 0..states {
            if dp[s] == f64::NEG_INFINITY {
                continue;
            }
            let rem = decode(s);
            let mut t = vec![0usize; k];
            // Enumerate t ≤ rem with Σ t ≤ c.
            loop {
                let used: usize = t.iter().sum();
                if used <= c {
                    let expo: usize = t.iter().zip(p.freqs()).map(|(a, m)| a * m).sum();
                    let pw = if expo == 0 {
                        0.0
                    } else if v == 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        expo as f64 * lv
                    };
                    if pw > f64::NEG_INFINITY {
                        let w = lf[c] - lf[c - used] - t.iter().map(|&a| lf[a]).sum::<f64>() + pw;
                        let dst = s - t.iter().zip(&radix).map(|(a, r)| a * r).sum::<usize>();
                        next[dst] = log_add(next[dst], dp[s] + w);
                    }
                }
                let mut j = 0;
                while j < k {
                    t[j] += 1;
                    if t[j] <= rem[j] && t.iter().sum::<usize>() <= c {
                        break;
                    }
                    t[j] = 0;
                    j += 1;
                }
                if j == k {
                    break;
                }
            }
        }
        dp = next;
    }
    let v = dp[0];
    Ok(if v == f64::NEG_INFINITY {
        v
    } else {
        log_c_phi(p) + v
    })
}

/// n i.i.d. draws from q, as symbol indices. Reproducible from `seed`.
pub fn sample_sequence(q: &PseudoDistribution, n: usize, seed: u64) -> Result<Vec<usize>> {
    if (q.mass() - 1.0).abs() > 1e-9 {
        return invalid(format!("distribution sums to {}, not 1", q.mass()));
    }
    let dist = WeightedIndex::new(q.probs()).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Token for symbol index i: a, b, ..., z, aa, ab, ...
pub fn symbol_token(mut i: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'a' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    s.reverse();
    String::from_utf8(s).unwrap()
}
