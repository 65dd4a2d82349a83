use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use super::kendall::tau_from_sorted;
use super::{PairwiseComparisons, PerturbedRanks};
use crate::error::{Error, Result};

pub const DEFAULT_PSD_FLOOR: f64 = 1e-4;

/// Greiner's relation `r = sin(pi tau / 2)`.
pub fn tau_to_corr(tau: f64) -> Result<f64> {
    if !(tau.abs() <= 1.0) {
        return Err(Error::InvalidArgument(format!("|tau| = {tau} exceeds 1")));
    }
    Ok((std::f64::consts::FRAC_PI_2 * tau).sin().clamp(-1.0, 1.0))
}

/// `r = 2 sin(pi rho / 6)`.
pub fn spearman_to_corr(rho: f64) -> Result<f64> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::InvalidArgument(format!("|rho| = {rho} exceeds 1")));
    }
    Ok((2.0 * (std::f64::consts::PI * rho / 6.0).sin()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaEstimate {
    pub omega: DMatrix<f64>,
    /// Sine-transformed tau matrix before projection.
    pub unprojected: DMatrix<f64>,
    pub projected: bool,
}

struct Prepared {
    /// Full-length values, NaN where the variable is not ranked.
    full: Vec<f64>,
    /// Ranked rows sorted by value, ties by row.
    order: Vec<usize>,
}

fn prepare(r: &PerturbedRanks, n_rows: usize) -> Result<Prepared> {
    if r.rows.len() != r.values.len() {
        return Err(Error::LengthMismatch {
            expected: r.rows.len(),
            got: r.values.len(),
        });
    }
    let mut full = vec![f64::NAN; n_rows];
    for (&i, &v) in r.rows.iter().zip(&r.values) {
        if i >= n_rows {
            return Err(Error::InvalidArgument(format!("rank row {i} >= {n_rows}")));
        }
        if !v.is_finite() {
            return Err(Error::NonFinite(i));
        }
        full[i] = v;
    }
    let mut order = r.rows.clone();
    order.sort_by(|&a, &b| full[a].total_cmp(&full[b]).then(a.cmp(&b)));
    Ok(Prepared { full, order })
}

fn pair_tau(a: &Prepared, b: &Prepared) -> Option<f64> {
    let mut order: Vec<usize> = a.order.iter().copied().filter(|&i| !b.full[i].is_nan()).collect();
    if order.len() < 2 {
        return None;
    }
    // Within runs of equal `a`, order by `b` as Knight's algorithm requires.
    let mut s = 0;
    while s < order.len() {
        let mut e = s + 1;
        while e < order.len() && a.full[order[e]] == a.full[order[s]] {
            e += 1;
        }
        if e - s > 1 {
            order[s..e].sort_by(|&p, &q| b.full[p].total_cmp(&b.full[q]));
        }
        s = e;
    }
    Some(tau_from_sorted(&order, &a.full, &b.full))
}

/// Copula correlation from released ranks with the default eigenvalue floor.
pub fn estimate_omega(ranks: &[PerturbedRanks], n_rows: usize) -> Result<OmegaEstimate> {
    estimate_omega_with_floor(ranks, n_rows, DEFAULT_PSD_FLOOR)
}

/// Entry `(j1, j2)` is `sin(pi tau / 2)` over rows ranked in both variables.
pub fn estimate_omega_with_floor(
    ranks: &[PerturbedRanks],
    n_rows: usize,
    floor: f64,
) -> Result<OmegaEstimate> {
    let d = ranks.len();
    let prepared = ranks
        .iter()
        .map(|r| prepare(r, n_rows))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|a| (a + 1..d).map(move |b| (a, b)))
        .collect();
    let taus = pairs
        .par_iter()
        .map(|&(a, b)| {
            pair_tau(&prepared[a], &prepared[b]).ok_or(Error::InsufficientJointRows(a, b))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut m = DMatrix::identity(d, d);
    for (&(a, b), &t) in pairs.iter().zip(&taus) {
        let r = tau_to_corr(t)?;
        m[(a, b)] = r;
        m[(b, a)] = r;
    }
    let (omega, projected) = psd_project(&m, floor)?;
    Ok(OmegaEstimate {
        omega,
        unprojected: m,
        projected,
    })
}

/// Correlation estimate built from perturbed comparison bits without any
/// debiasing: tau is the mean product of the signed bits.
pub fn raw_omega(bits: &[PairwiseComparisons], floor: f64) -> Result<OmegaEstimate> {
    let d = bits.len();
    let mut m = DMatrix::identity(d, d);
    for a in 0..d {
        for b in a + 1..d {
            let (x, y) = (&bits[a], &bits[b]);
            if x.n != y.n {
                return Err(Error::LengthMismatch {
                    expected: x.n,
                    got: y.n,
                });
            }
            if x.bits.is_empty() {
                return Err(Error::InsufficientJointRows(a, b));
            }
            let agree = x.bits.iter().zip(&y.bits).filter(|(p, q)| p == q).count() as f64;
            let tau = (2.0 * agree - x.bits.len() as f64) / x.bits.len() as f64;
            let r = tau_to_corr(tau)?;
            m[(a, b)] = r;
            m[(b, a)] = r;
        }
    }
    let (omega, projected) = psd_project(&m, floor)?;
    Ok(OmegaEstimate {
        omega,
        unprojected: m,
        projected,
    })
}

/// Eigen-clip at `floor`, rescale to unit diagonal, then shrink toward the
/// identity just enough that the result clears the floor. Returns the input
/// unchanged when its smallest eigenvalue is already at least `floor`.
pub fn psd_project(m: &DMatrix<f64>, floor: f64) -> Result<(DMatrix<f64>, bool)> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            got: m.ncols(),
        });
    }
    if !(floor > 0.0 && floor < 1.0) {
        return Err(Error::InvalidArgument(format!("PSD floor {floor} outside (0, 1)")));
    }
    let asym = (m - m.transpose()).abs().max();
    if !(asym <= 1e-9) {
        return Err(Error::NotSymmetric(asym));
    }
    if d == 0 {
        return Ok((m.clone(), false));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.min() >= floor {
        return Ok((m.clone(), false));
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let scale: Vec<f64> = (0..d).map(|i| 1.0 / rebuilt[(i, i)].sqrt()).collect();
    let mut c = DMatrix::from_fn(d, d, |i, j| rebuilt[(i, j)] * scale[i] * scale[j]);
    c = (&c + c.transpose()) * 0.5;
    let target = floor * (1.0 + 1e-6) + 1e-12;
    let lmin = SymmetricEigen::new(c.clone()).eigenvalues.min();
    if lmin < target {
        let w = (target - lmin) / (1.0 - lmin);
        c = c * (1.0 - w) + DMatrix::identity(d, d) * w;
    }
    for i in 0..d {
        c[(i, i)] = 1.0;
    }
    Ok((c, true))
}
