//! Gaussian latent draws, rank-constrained sequential adjustment and
//! conditional imputation of missing latent blocks.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;

use crate::data::{ClientPartition, MissingMask};
use crate::error::{Error, Result};
use crate::numeric::{normal_cdf, normal_quantile, open_unit, std_normal};
use crate::rank::{argsort, PerturbedRanks};

/// `n` rows i.i.d. `N(0, omega)`, as an `n x d` matrix.
pub fn mvn_sample<R: Rng + ?Sized>(omega: &DMatrix<f64>, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let d = omega.nrows();
    let l = Cholesky::new(omega.clone())
        .ok_or(Error::NotPositiveDefinite)?
        .unpack();
    let mut z = DMatrix::zeros(n, d);
    let mut e = vec![0.0; d];
    for i in 0..n {
        for v in e.iter_mut() {
            *v = std_normal(rng);
        }
        for j in 0..d {
            let mut s = 0.0;
            for (k, ek) in e.iter().enumerate().take(j + 1) {
                s += l[(j, k)] * ek;
            }
            z[(i, j)] = s;
        }
    }
    Ok(z)
}

/// A truncated normal draw; `degenerate` marks the midpoint fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedDraw {
    pub value: f64,
    pub degenerate: bool,
}

/// Draw from `N(mu, sigma^2)` restricted to `[lo, hi]` by inverse CDF,
/// working in whichever tail keeps the CDF values small.
pub fn truncated_normal<R: Rng + ?Sized>(
    mu: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> Result<TruncatedDraw> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma = {sigma} must be positive")));
    }
    if !(lo <= hi) {
        return Err(Error::InvalidArgument(format!("empty interval [{lo}, {hi}]")));
    }
    let a = (lo - mu) / sigma;
    let b = (hi - mu) / sigma;
    // Reflect so the interval sits on the lower side: x in [a, b] with a <= -b.
    let flip = a > -b;
    let (a, b) = if flip { (-b, -a) } else { (a, b) };
    let pa = normal_cdf(a);
    let pb = normal_cdf(b);
    let u = open_unit(rng);
    let x = if pb > pa {
        normal_quantile(pa + u * (pb - pa)).clamp(a, b)
    } else if b < -30.0 && b > a {
        // Both CDF values underflow. Near b the density is proportional to
        // exp(-|b| t) for t = b - x, so sample a truncated exponential.
        let lam = -b;
        let t = -(u * (-lam * (b - a)).exp_m1()).ln_1p() / lam;
        (b - t).clamp(a, b)
    } else if b > a {
        // Interval too narrow for the CDF to resolve: density is flat on it.
        a + u * (b - a)
    } else {
        return Ok(TruncatedDraw {
            value: midpoint(lo, hi),
            degenerate: true,
        });
    };
    let x = if flip { -x } else { x };
    Ok(TruncatedDraw {
        value: (mu + sigma * x).clamp(lo, hi),
        degenerate: false,
    })
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => 0.0,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AdjustStats {
    pub degenerate_intervals: usize,
}

/// Rearranges `z` so each column's order on ranked rows follows the
/// released ranks, keeping the Gaussian dependence as far as possible.
///
/// Column 0 is sorted to match its ranks. Each later column `j` is first
/// sorted into rank order, then every row (by index) is redrawn from the
/// conditional normal given the already adjusted columns `0..j`, truncated
/// to the interval between its rank-order neighbours. Unranked rows are
/// drawn from the untruncated conditional.
pub fn rank_adjust<R: Rng + ?Sized>(
    z: &DMatrix<f64>,
    ranks: &[PerturbedRanks],
    omega: &DMatrix<f64>,
    rng: &mut R,
) -> Result<(DMatrix<f64>, AdjustStats)> {
    let (n, d) = z.shape();
    if ranks.len() != d || omega.nrows() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            got: ranks.len(),
        });
    }
    let l = Cholesky::new(omega.clone())
        .ok_or(Error::NotPositiveDefinite)?
        .unpack();
    let mut out = z.clone();
    let mut e = DMatrix::<f64>::zeros(n, d);
    let mut stats = AdjustStats::default();

    for j in 0..d {
        let r = &ranks[j];
        if r.rows.len() != r.values.len() || r.rows.iter().any(|&i| i >= n) {
            return Err(Error::InvalidArgument(format!("rank rows for column {j} do not fit {n} rows")));
        }
        // Rank order of ranked rows and each row's position in it.
        let order: Vec<usize> = argsort(&r.values).into_iter().map(|k| r.rows[k]).collect();
        let mut pos = vec![usize::MAX; n];
        for (k, &i) in order.iter().enumerate() {
            pos[i] = k;
        }
        let mut current: Vec<f64> = order.iter().map(|&i| out[(i, j)]).collect();
        current.sort_by(f64::total_cmp);
        for (k, &i) in order.iter().enumerate() {
            out[(i, j)] = current[k];
        }

        let mu: Vec<f64> = (0..n)
            .map(|i| (0..j).map(|k| l[(j, k)] * e[(i, k)]).sum())
            .collect();
        let sigma = l[(j, j)].max(1e-5);
        if j > 0 {
            for i in 0..n {
                let v = if pos[i] == usize::MAX {
                    mu[i] + sigma * std_normal(rng)
                } else {
                    let k = pos[i];
                    let lo = if k == 0 { f64::NEG_INFINITY } else { current[k - 1] };
                    let hi = current.get(k + 1).copied().unwrap_or(f64::INFINITY);
                    let draw = truncated_normal(mu[i], sigma, lo, hi, rng)?;
                    stats.degenerate_intervals += usize::from(draw.degenerate);
                    let mut v = draw.value;
                    // Keep the order strict so ties cannot reorder rows.
                    if v <= lo {
                        v = lo.next_up();
                    }
                    if v >= hi {
                        v = hi.next_down();
                    }
                    current[k] = v;
                    v
                };
                out[(i, j)] = v;
            }
        }
        for i in 0..n {
            e[(i, j)] = (out[(i, j)] - mu[i]) / sigma;
        }
    }
    Ok((out, stats))
}

/// Fills the latent cells of clients masked for a row with a draw from the
/// conditional normal given the row's observed cells. Observed cells are
/// untouched; column 0 is always observed.
pub fn conditional_impute<R: Rng + ?Sized>(
    z: &DMatrix<f64>,
    mask: &MissingMask,
    partition: &ClientPartition,
    omega: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (n, d) = z.shape();
    if mask.n_rows() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: mask.n_rows(),
        });
    }
    let owners: Vec<usize> = (0..d).map(|c| partition.owner_of_column(c)).collect();
    let mut patterns: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let missing: Vec<bool> = (0..d).map(|c| c > 0 && mask.is_missing(i, owners[c])).collect();
        if missing.iter().any(|&m| m) {
            patterns.entry(missing).or_default().push(i);
        }
    }
    let mut out = z.clone();
    for (missing, rows) in patterns {
        let mis: Vec<usize> = (0..d).filter(|&c| missing[c]).collect();
        let obs: Vec<usize> = (0..d).filter(|&c| !missing[c]).collect();
        let sub = |r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |a, b| omega[(r[a], c[b])]);
        let s_oo = sub(&obs, &obs);
        let s_mo = sub(&mis, &obs);
        let s_mm = sub(&mis, &mis);
        let chol_oo = Cholesky::new(s_oo).ok_or(Error::NotPositiveDefinite)?;
        // B = S_mo S_oo^{-1}, conditional covariance S_mm - B S_om.
        let b = chol_oo.solve(&s_mo.transpose()).transpose();
        let mut cond = &s_mm - &b * s_mo.transpose();
        cond = (&cond + cond.transpose()) * 0.5;
        for k in 0..mis.len() {
            cond[(k, k)] = cond[(k, k)].max(1e-10);
        }
        let lc = match Cholesky::new(cond.clone()) {
            Some(c) => c.unpack(),
            None => Cholesky::new(cond + DMatrix::identity(mis.len(), mis.len()) * 1e-8)
                .ok_or(Error::NotPositiveDefinite)?
                .unpack(),
        };
        for i in rows {
            let zo = DVector::from_iterator(obs.len(), obs.iter().map(|&c| z[(i, c)]));
            let mu = &b * zo;
            let eps = DVector::from_iterator(mis.len(), (0..mis.len()).map(|_| std_normal(rng)));
            let draw = mu + &lc * eps;
            for (k, &c) in mis.iter().enumerate() {
                out[(i, c)] = draw[k];
            }
        }
    }
    Ok(out)
}
