//! Locally private rank release by randomized response on pairwise
//! comparisons, and copula correlation estimation from the released ranks.

mod kendall;
mod omega;

pub use kendall::{kendall_tau, kendall_tau_brute, kendall_tau_values};
pub use omega::{
    estimate_omega, estimate_omega_with_floor, psd_project, raw_omega, spearman_to_corr,
    tau_to_corr, OmegaEstimate, DEFAULT_PSD_FLOOR,
};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::open_unit;

/// Largest comparison vector we are willing to materialize.
pub const MAX_PAIRS: u128 = 1 << 31;

/// Upper-triangle comparison bits of one variable, row-major over `i < i'`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairwiseComparisons {
    pub n: usize,
    pub bits: Vec<bool>,
}

impl PairwiseComparisons {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[pair_index(self.n, i, j)]
    }
}

/// Rank vector released for one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedRanks {
    /// Dataset rows the ranks refer to, ascending.
    pub rows: Vec<usize>,
    pub values: Vec<f64>,
    pub theta: f64,
    pub debiased: bool,
}

/// Flip probability for a per-variable budget: `1 / (1 + e^eps)`.
pub fn flip_probability(eps: f64) -> f64 {
    if eps == f64::INFINITY {
        0.0
    } else {
        1.0 / (1.0 + eps.exp())
    }
}

/// Position of pair `(i, j)`, `i < j`, in the comparison vector.
#[inline]
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

fn pair_count(n: usize) -> Result<usize> {
    let pairs = n as u128 * (n as u128).saturating_sub(1) / 2;
    if pairs > MAX_PAIRS {
        return Err(Error::TooManyPairs { pairs });
    }
    Ok(pairs as usize)
}

/// Sample size whose comparison vector has `len` entries.
fn size_from_pairs(len: usize) -> Result<usize> {
    let n = ((1.0 + (1.0 + 8.0 * len as f64).sqrt()) / 2.0).round() as usize;
    for cand in n.saturating_sub(1)..=n + 1 {
        if cand * cand.saturating_sub(1) / 2 == len {
            return Ok(cand.max(1));
        }
    }
    Err(Error::MalformedComparisons(len))
}

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if (0.0..0.5).contains(&theta) {
        Ok(())
    } else {
        Err(Error::InvalidTheta(theta))
    }
}

/// Bit `(i, i')` is set iff `x_i > x_{i'}`; ties stay 0.
pub fn encode_pairwise(x: &[f64]) -> Result<PairwiseComparisons> {
    check_finite(x)?;
    let n = x.len();
    let mut bits = Vec::with_capacity(pair_count(n)?);
    for i in 0..n {
        for j in i + 1..n {
            bits.push(x[i] > x[j]);
        }
    }
    Ok(PairwiseComparisons { n, bits })
}

fn flip_threshold(theta: f64) -> u64 {
    (theta * 18_446_744_073_709_551_616.0) as u64
}

/// Flips each bit independently with probability `theta`.
pub fn rr_perturb<R: RngCore + ?Sized>(
    v: &PairwiseComparisons,
    theta: f64,
    rng: &mut R,
) -> Result<PairwiseComparisons> {
    check_theta(theta)?;
    if theta == 0.0 {
        return Ok(v.clone());
    }
    let thr = flip_threshold(theta);
    let bits = v.bits.iter().map(|&b| b ^ (rng.next_u64() < thr)).collect();
    Ok(PairwiseComparisons { n: v.n, bits })
}

/// Unbiased comparisons `(v - theta) / (1 - 2 theta)`.
pub fn debias(v: &PairwiseComparisons, theta: f64) -> Result<Vec<f64>> {
    check_theta(theta)?;
    let scale = 1.0 - 2.0 * theta;
    Ok(v
        .bits
        .iter()
        .map(|&b| (f64::from(u8::from(b)) - theta) / scale)
        .collect())
}

/// Comparison bits as reals, without correction.
pub fn bits_as_reals(v: &PairwiseComparisons) -> Vec<f64> {
    v.bits.iter().map(|&b| f64::from(u8::from(b))).collect()
}

/// `R_i = 1 + sum_{i' != i} c_{ii'}` with the lower triangle implied by `1 - c`.
pub fn recover_ranks(c: &[f64]) -> Result<Vec<f64>> {
    let n = size_from_pairs(c.len())?;
    let mut r = vec![1.0; n];
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            r[i] += c[k];
            r[j] += 1.0 - c[k];
            k += 1;
        }
    }
    Ok(r)
}

/// Streaming equivalent of encode, perturb, optional debias and recover.
///
/// Produces the same values bit for bit as the materialized path with the
/// same generator state, without allocating the comparison vector.
pub fn privatize_ranks<R: RngCore + ?Sized>(
    x: &[f64],
    theta: f64,
    debiased: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_finite(x)?;
    check_theta(theta)?;
    let n = x.len();
    let (c1, c0) = if debiased {
        let scale = 1.0 - 2.0 * theta;
        ((1.0 - theta) / scale, (0.0 - theta) / scale)
    } else {
        (1.0, 0.0)
    };
    let thr = flip_threshold(theta);
    let mut r = vec![1.0; n];
    // Draws for one row are taken up front so the accumulation loop is free
    // of generator calls; with theta = 0 they stay 0 and never flip.
    let mut draws = vec![0u64; n];
    let table = [c0, c1];
    for i in 0..n {
        let d = &mut draws[..n - i - 1];
        if theta > 0.0 {
            for u in d.iter_mut() {
                *u = rng.next_u64();
            }
        }
        let xi = x[i];
        let mut acc = r[i];
        for ((rj, &xj), &u) in r[i + 1..].iter_mut().zip(&x[i + 1..]).zip(d.iter()) {
            let c = table[((xi > xj) ^ (u < thr)) as usize];
            acc += c;
            *rj += 1.0 - c;
        }
        r[i] = acc;
    }
    Ok(r)
}

/// Adds uniform noise on `(0, 1e-6)` so integer-valued columns have a.s.
/// distinct values before ranking.
pub fn jitter<R: Rng + ?Sized>(values: &mut [f64], rng: &mut R) {
    for v in values {
        *v += 1e-6 * open_unit(rng);
    }
}

/// Row indices sorted by value, ties broken by position.
pub fn argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::substream;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        let v = encode_pairwise(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(v.bits, vec![true, true, false]);
        assert!(encode_pairwise(&[1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .bits
            .iter()
            .all(|b| !b));
        assert_eq!(encode_pairwise(&[5.0, 5.0]).unwrap().bits, vec![false]);
        assert!(matches!(
            encode_pairwise(&[1.0, f64::NAN]),
            Err(Error::NonFinite(1))
        ));
    }

    #[test]
    fn pair_index_is_row_major() {
        let n = 6;
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                assert_eq!(pair_index(n, i, j), k);
                k += 1;
            }
        }
    }

    #[test]
    fn theta_formula_and_dp_ratio() {
        assert!((flip_probability(1.0) - 0.268_941_421_369_995_1).abs() < 1e-15);
        assert_eq!(flip_probability(f64::INFINITY), 0.0);
        for eps in [0.1, 1.0, 3.0, 7.5] {
            let t = flip_probability(eps);
            assert!(((1.0 - t) / t - f64::exp(eps)).abs() < 1e-12 * f64::exp(eps));
        }
    }

    #[test]
    fn rr_identity_at_zero_and_rejects_half() {
        let v = encode_pairwise(&[0.3, 0.1, 0.7, 0.2]).unwrap();
        let mut rng = substream(1, &[]);
        assert_eq!(rr_perturb(&v, 0.0, &mut rng).unwrap(), v);
        assert!(matches!(rr_perturb(&v, 0.5, &mut rng), Err(Error::InvalidTheta(_))));
        assert!(debias(&v, 0.5).is_err());
    }

    #[test]
    fn empirical_flip_fraction() {
        let n = 448; // 100_128 pairs
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let v = encode_pairwise(&x).unwrap();
        let theta = flip_probability(1.0);
        let out = rr_perturb(&v, theta, &mut substream(2, &[])).unwrap();
        let flips = v.bits.iter().zip(&out.bits).filter(|(a, b)| a != b).count();
        let frac = flips as f64 / v.bits.len() as f64;
        assert!((frac - theta).abs() < 0.01, "{frac}");
    }

    #[test]
    fn debias_examples() {
        let v = PairwiseComparisons {
            n: 2,
            bits: vec![true],
        };
        assert_eq!(debias(&v, 0.25).unwrap(), vec![1.5]);
        let v = PairwiseComparisons {
            n: 2,
            bits: vec![false],
        };
        assert_eq!(debias(&v, 0.25).unwrap(), vec![-0.5]);
    }

    #[test]
    fn debiased_mean_is_unbiased() {
        let theta = flip_probability(1.0);
        let v = PairwiseComparisons {
            n: 2,
            bits: vec![true],
        };
        let mut rng = substream(3, &[]);
        let trials = 100_000;
        let mut sum = 0.0;
        for _ in 0..trials {
            sum += debias(&rr_perturb(&v, theta, &mut rng).unwrap(), theta).unwrap()[0];
        }
        assert!((sum / trials as f64 - 1.0).abs() < 0.01);
    }

    #[test]
    fn recover_examples() {
        let v = encode_pairwise(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(recover_ranks(&bits_as_reals(&v)).unwrap(), vec![3.0, 1.0, 2.0]);
        assert_eq!(recover_ranks(&[1.5]).unwrap(), vec![2.5, 0.5]);
        assert!(matches!(
            recover_ranks(&[0.0, 1.0]),
            Err(Error::MalformedComparisons(2))
        ));
        assert_eq!(recover_ranks(&[]).unwrap(), vec![1.0]);
    }

    #[test]
    fn mean_recovered_rank_matches_truth() {
        let x = [0.4, -1.0, 2.5, 0.0, 1.1];
        let truth = recover_ranks(&bits_as_reals(&encode_pairwise(&x).unwrap())).unwrap();
        let theta = flip_probability(1.0);
        let mut rng = substream(4, &[]);
        let trials = 40_000;
        let mut acc = vec![0.0; x.len()];
        for _ in 0..trials {
            for (a, r) in acc.iter_mut().zip(privatize_ranks(&x, theta, true, &mut rng).unwrap()) {
                *a += r;
            }
        }
        for (a, t) in acc.iter().zip(&truth) {
            assert!((a / trials as f64 - t).abs() < 0.05, "{a} {t}");
        }
    }

    #[test]
    fn memory_guard() {
        assert!(matches!(pair_count(70_000), Err(Error::TooManyPairs { .. })));
        assert!(pair_count(60_000).is_ok());
    }

    #[test]
    fn debiased_ranks_are_affine_in_raw_ranks() {
        let x: Vec<f64> = (0..60).map(|i| ((i * 37) % 61) as f64).collect();
        let theta = 0.3;
        let raw = privatize_ranks(&x, theta, false, &mut substream(5, &[])).unwrap();
        let deb = privatize_ranks(&x, theta, true, &mut substream(5, &[])).unwrap();
        let n = x.len() as f64;
        for (r, d) in raw.iter().zip(&deb) {
            let expect = 1.0 + ((r - 1.0) - theta * (n - 1.0)) / (1.0 - 2.0 * theta);
            assert!((d - expect).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn fused_matches_materialized(
            x in prop::collection::vec(-5.0f64..5.0, 0..40),
            theta in 0.0f64..0.49,
            debiased: bool,
            seed: u64,
        ) {
            let v = encode_pairwise(&x).unwrap();
            let mut rng = substream(seed, &[]);
            let p = rr_perturb(&v, theta, &mut rng).unwrap();
            let c = if debiased { debias(&p, theta).unwrap() } else { bits_as_reals(&p) };
            let slow = if x.is_empty() { vec![] } else { recover_ranks(&c).unwrap() };
            let fast = privatize_ranks(&x, theta, debiased, &mut substream(seed, &[])).unwrap();
            prop_assert_eq!(slow, fast);
        }

        #[test]
        fn exact_ranks_at_theta_zero(x in prop::collection::vec(-100i32..100, 1..50)) {
            let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            let r = recover_ranks(&bits_as_reals(&encode_pairwise(&xf).unwrap())).unwrap();
            for (i, &ri) in r.iter().enumerate() {
                // A tie credits the later row only.
                let less = xf.iter().filter(|&&v| v < xf[i]).count();
                let earlier_ties = xf[..i].iter().filter(|&&v| v == xf[i]).count();
                prop_assert_eq!(ri, (1 + less + earlier_ties) as f64);
            }
        }
    }
}
