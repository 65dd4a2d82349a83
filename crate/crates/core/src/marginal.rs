//! Marginal CDF estimation and Bernstein-polynomial privatization.
//!
//! Every CDF lives on a rescaled unit domain: raw values map to
//! `(x - shift) / scale`, where the affine map pads the observed range by 1%
//! on each side.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::VariableKind;
use crate::error::{Error, Result};
use crate::numeric::{laplace, normal_cdf};
use crate::rank::argsort;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginalKind {
    EcdfSmoothed,
    MarginAdjusted,
    BernsteinPrivatized,
}

/// Raw value `x` maps to `(x - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainAffine {
    pub shift: f64,
    pub scale: f64,
}

impl DomainAffine {
    /// Observed range padded by 1% on both sides.
    pub fn from_range(lo: f64, hi: f64) -> Self {
        let range = hi - lo;
        let pad = if range > 0.0 {
            0.01 * range
        } else {
            0.5f64.max(1e-6 * lo.abs())
        };
        DomainAffine {
            shift: lo - pad,
            scale: range + 2.0 * pad,
        }
    }

    pub fn to_unit(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }

    pub fn from_unit(&self, t: f64) -> f64 {
        self.shift + t * self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCdf {
    pub kind: MarginalKind,
    pub value_kind: VariableKind,
    /// Strictly increasing unit-domain abscissae with non-decreasing levels.
    pub knots: Vec<(f64, f64)>,
    slopes: Vec<f64>,
    pub domain: DomainAffine,
    /// Bernstein degree `l` and order `h`; zero unless privatized.
    pub degree: usize,
    pub order: usize,
    /// Effective repaired coefficients `c_0..c_l`; empty unless privatized.
    pub coefficients: Vec<f64>,
    /// Privatized CDF on a uniform unit grid, made non-decreasing.
    table: Vec<f64>,
}

/// Cells of the evaluation table of a privatized CDF.
const TABLE_CELLS: usize = 8192;

/// Fritsch–Carlson slopes for a monotone piecewise cubic Hermite interpolant.
fn pchip_slopes(knots: &[(f64, f64)]) -> Vec<f64> {
    let n = knots.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let h: Vec<f64> = knots.windows(2).map(|w| w[1].0 - w[0].0).collect();
    let d: Vec<f64> = knots
        .windows(2)
        .zip(&h)
        .map(|(w, h)| (w[1].1 - w[0].1) / h)
        .collect();
    let mut m = vec![0.0; n];
    m[0] = d[0];
    m[n - 1] = d[n - 2];
    for k in 1..n - 1 {
        if d[k - 1] <= 0.0 || d[k] <= 0.0 {
            m[k] = 0.0;
        } else {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            m[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k]);
        }
    }
    m
}

/// Unit-domain points for a sorted sample and its CDF levels.
///
/// Discrete kinds use the continuous extension: level `L` (the rounded
/// value) spreads its mass over `[L - 0.5, L + 0.5]`, so the point sits at
/// `L + 0.5` and the curve starts from zero half a unit below the smallest
/// level.
fn knot_points(
    sorted: &[f64],
    levels: impl Iterator<Item = f64>,
    value_kind: VariableKind,
) -> (Vec<(f64, f64)>, DomainAffine) {
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if !value_kind.is_discrete() {
        let domain = DomainAffine::from_range(lo, hi);
        let pts = sorted.iter().zip(levels).map(|(&x, f)| (domain.to_unit(x), f)).collect();
        return (pts, domain);
    }
    let domain = DomainAffine::from_range(lo.round() - 0.5, hi.round() + 0.5);
    let mut pts = vec![(domain.to_unit(lo.round() - 0.5), 0.0)];
    pts.extend(
        sorted
            .iter()
            .zip(levels)
            .map(|(&x, f)| (domain.to_unit(x.round() + 0.5), f)),
    );
    (pts, domain)
}

/// Builds knots from (unit abscissa, level) pairs: sorts, merges duplicate
/// abscissae keeping the largest level, and adds the (0,0) and (1,1) ends.
fn finish_knots(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut knots: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    for (x, y) in pts {
        let (lx, ly) = *knots.last().unwrap();
        if x <= lx {
            knots.last_mut().unwrap().1 = ly.max(y);
        } else {
            knots.push((x, y.max(ly)));
        }
    }
    let last = knots.last_mut().unwrap();
    if last.0 >= 1.0 {
        last.1 = 1.0;
    } else {
        knots.push((1.0, 1.0));
    }
    knots
}

fn bernstein_basis(l: usize, t: f64, out: &mut Vec<f64>) {
    out.clear();
    let t = t.clamp(0.0, 1.0);
    let s = 1.0 - t;
    // b_{v,l}(t) by the recurrence b_{v+1} = b_v * (l-v)/(v+1) * t/s, done in
    // the stable direction depending on which half t falls in.
    out.resize(l + 1, 0.0);
    if t <= 0.5 {
        out[0] = s.powi(l as i32);
        for v in 0..l {
            out[v + 1] = if s > 0.0 {
                out[v] * (l - v) as f64 / (v + 1) as f64 * t / s
            } else {
                0.0
            };
        }
    } else {
        out[l] = t.powi(l as i32);
        for v in (0..l).rev() {
            out[v] = out[v + 1] * (v + 1) as f64 / (l - v) as f64 * s / t;
        }
    }
}

impl MarginalCdf {
    fn interpolated(
        kind: MarginalKind,
        value_kind: VariableKind,
        knots: Vec<(f64, f64)>,
        domain: DomainAffine,
    ) -> Self {
        let slopes = pchip_slopes(&knots);
        MarginalCdf {
            kind,
            value_kind,
            knots,
            slopes,
            domain,
            degree: 0,
            order: 0,
            coefficients: Vec::new(),
            table: Vec::new(),
        }
    }

    fn polynomial(&self, t: f64, basis: &mut Vec<f64>) -> f64 {
        bernstein_basis(self.degree, t, basis);
        let v: f64 = basis.iter().zip(&self.coefficients).map(|(b, c)| b * c).sum();
        v.clamp(0.0, 1.0)
    }

    /// CDF on the unit domain.
    ///
    /// Privatized CDFs interpolate linearly in their table, which is exact at
    /// the grid points and keeps evaluation non-decreasing in floating point.
    pub fn eval_unit(&self, t: f64) -> f64 {
        if self.kind == MarginalKind::BernsteinPrivatized {
            let x = t.clamp(0.0, 1.0) * TABLE_CELLS as f64;
            let k = (x.floor() as usize).min(TABLE_CELLS - 1);
            let (f0, f1) = (self.table[k], self.table[k + 1]);
            return (f0 + (x - k as f64) * (f1 - f0)).clamp(f0, f1);
        }
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        if t >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        let seg = k.partition_point(|p| p.0 <= t) - 1;
        self.hermite(seg, t)
    }

    fn hermite(&self, seg: usize, t: f64) -> f64 {
        let (x0, y0) = self.knots[seg];
        let (x1, y1) = self.knots[seg + 1];
        let h = x1 - x0;
        let s = (t - x0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * h * self.slopes[seg]
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * h * self.slopes[seg + 1];
        v.clamp(y0, y1)
    }

    /// CDF at a raw value.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_unit(self.domain.to_unit(x))
    }

    /// Unit-domain point where the CDF reaches `u`, by bisection.
    fn inverse_unit(&self, u: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        if self.kind != MarginalKind::BernsteinPrivatized {
            // Narrow to the knot segment first.
            let k = &self.knots;
            let seg = k.partition_point(|p| p.1 < u).clamp(1, k.len() - 1);
            lo = k[seg - 1].0;
            hi = k[seg].0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let f = self.eval_unit(mid);
            if (f - u).abs() <= 1e-9 || hi - lo <= 1e-12 {
                return mid;
            }
            if f < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Quantile at `u`; discrete kinds return the smallest valid level `L`
    /// with `F(L + 0.5) >= u`, i.e. the continuous quantile rounded to the
    /// nearest level.
    pub fn inverse(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidArgument(format!("quantile level {u} outside (0, 1)")));
        }
        let Some(max_level) = self.max_level() else {
            return Ok(self.domain.from_unit(self.inverse_unit(u)));
        };
        let reaches = |level: f64| self.eval(level + 0.5) >= u;
        let (mut lo, mut hi) = (0.0f64, max_level);
        if reaches(lo) {
            return Ok(0.0);
        }
        if !reaches(hi) {
            return Ok(hi);
        }
        while hi - lo > 1.0 {
            let mid = ((lo + hi) / 2.0).floor();
            if reaches(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    fn max_level(&self) -> Option<f64> {
        match self.value_kind {
            VariableKind::Continuous => None,
            VariableKind::Binary => Some(1.0),
            VariableKind::Categorical { levels } => Some((levels - 1) as f64),
            VariableKind::Count => Some(self.domain.from_unit(1.0).floor().max(0.0)),
        }
    }

    /// Quantiles at many levels at once. Discrete kinds agree exactly with
    /// [`MarginalCdf::inverse`]; continuous Bernstein CDFs are inverted by
    /// linear inversion of the evaluation table.
    pub fn inverse_many(&self, us: &[f64]) -> Result<Vec<f64>> {
        if let Some(&u) = us.iter().find(|u| !(**u > 0.0 && **u < 1.0)) {
            return Err(Error::InvalidArgument(format!("quantile level {u} outside (0, 1)")));
        }
        if let Some(max_level) = self.max_level() {
            let cdf: Vec<f64> = (0..=max_level as usize)
                .map(|l| self.eval(l as f64 + 0.5))
                .collect();
            return Ok(us
                .iter()
                .map(|&u| cdf.partition_point(|&f| f < u).min(max_level as usize) as f64)
                .collect());
        }
        if self.kind != MarginalKind::BernsteinPrivatized {
            return us.iter().map(|&u| self.inverse(u)).collect();
        }
        const CELLS: usize = TABLE_CELLS;
        let grid = &self.table;
        Ok(us
            .iter()
            .map(|&u| {
                let k = grid.partition_point(|&f| f < u);
                let t = if k == 0 {
                    0.0
                } else if k > CELLS {
                    1.0
                } else {
                    let (f0, f1) = (grid[k - 1], grid[k]);
                    let w = if f1 > f0 { (u - f0) / (f1 - f0) } else { 1.0 };
                    (k as f64 - 1.0 + w) / CELLS as f64
                };
                self.domain.from_unit(t)
            })
            .collect())
    }

    /// True if the CDF is non-decreasing on an `n`-point unit grid.
    pub fn is_monotone(&self, n: usize) -> bool {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=n {
            let f = self.eval_unit(i as f64 / n as f64);
            if f < prev || !(0.0..=1.0).contains(&f) {
                return false;
            }
            prev = f;
        }
        true
    }
}

/// ECDF at the distinct observed values, smoothed by monotone cubic
/// interpolation through the knots.
pub fn ecdf_smooth(x_obs: &[f64], value_kind: VariableKind) -> Result<MarginalCdf> {
    let m = x_obs.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "ECDF needs at least 2 observations, got {m}"
        )));
    }
    if let Some(i) = x_obs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let mut sorted = x_obs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let levels = (1..=m).map(|i| i as f64 / m as f64);
    let (pts, domain) = knot_points(&sorted, levels, value_kind);
    Ok(MarginalCdf::interpolated(
        MarginalKind::EcdfSmoothed,
        value_kind,
        finish_knots(pts),
        domain,
    ))
}

/// Default degree `max(1, (eps2 m / ln(1/delta))^(1/(h+1)))`, rounded and
/// capped at 400.
pub fn bernstein_degree(eps2: f64, m: usize, h: usize, delta: f64) -> usize {
    let raw = (eps2 * m as f64 / (1.0 / delta).ln()).powf(1.0 / (h as f64 + 1.0));
    if raw.is_finite() {
        raw.max(1.0).round().min(400.0) as usize
    } else {
        400
    }
}

/// Pool-adjacent-violators isotonic regression with unit weights.
pub fn isotonic(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().unwrap();
            *last = ((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, n)| std::iter::repeat_n(v, n))
        .collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Iterated Bernstein approximation of `f` with Laplace-noised coefficients.
///
/// Coefficients `F(v/l)` receive `Laplace(sensitivity (l+1) / eps2)` noise and
/// are mapped through `sum_{i=1}^h C(h,i) (-1)^(i-1) M^(i-1)`, where
/// `M[w][u] = b_{u,l}(w/l)`; the result is made monotone by isotonic
/// regression, clamped to [0, 1] and pinned to 0 and 1 at the ends.
pub fn bernstein_privatize<R: Rng + ?Sized>(
    f: &MarginalCdf,
    l: usize,
    h: usize,
    eps2: f64,
    sensitivity: f64,
    rng: &mut R,
) -> Result<MarginalCdf> {
    if l < 1 || h < 1 {
        return Err(Error::InvalidArgument(format!(
            "Bernstein degree and order must be >= 1 (l={l}, h={h})"
        )));
    }
    if !(eps2 > 0.0) {
        return Err(Error::InvalidArgument(format!("eps2 = {eps2} must be positive")));
    }
    let scale = sensitivity * (l + 1) as f64 / eps2;
    let noisy: Vec<f64> = (0..=l)
        .map(|v| f.eval_unit(v as f64 / l as f64) + laplace(rng, scale))
        .collect();

    let mut basis = Vec::new();
    let m: Vec<Vec<f64>> = (0..=l)
        .map(|w| {
            bernstein_basis(l, w as f64 / l as f64, &mut basis);
            basis.clone()
        })
        .collect();
    let mut power = noisy.clone();
    let mut effective = vec![0.0; l + 1];
    for i in 1..=h {
        let w = binomial(h, i) * if i % 2 == 1 { 1.0 } else { -1.0 };
        for (e, p) in effective.iter_mut().zip(&power) {
            *e += w * p;
        }
        if i < h {
            power = m
                .iter()
                .map(|row| row.iter().zip(&power).map(|(a, b)| a * b).sum())
                .collect();
        }
    }
    let mut coefficients: Vec<f64> = isotonic(&effective)
        .into_iter()
        .map(|c| c.clamp(0.0, 1.0))
        .collect();
    coefficients[0] = 0.0;
    coefficients[l] = 1.0;
    let mut out = MarginalCdf {
        kind: MarginalKind::BernsteinPrivatized,
        value_kind: f.value_kind,
        knots: Vec::new(),
        slopes: Vec::new(),
        domain: f.domain,
        degree: l,
        order: h,
        coefficients,
        table: Vec::new(),
    };
    let mut level = 0.0f64;
    out.table = (0..=TABLE_CELLS)
        .map(|i| {
            // Rounding can dent flat stretches by an ulp; the running max
            // removes it.
            level = level.max(out.polynomial(i as f64 / TABLE_CELLS as f64, &mut basis));
            level
        })
        .collect();
    Ok(out)
}

/// Margin-adjusted CDF values `Phi(max{z_i : R_i <= r})` at each query rank
/// `r`; queries below every rank use the latent at the minimal rank.
pub fn margin_adjust_values(z_obs: &[f64], ranks: &[f64], query_ranks: &[f64]) -> Result<Vec<f64>> {
    if z_obs.len() != ranks.len() {
        return Err(Error::LengthMismatch {
            expected: ranks.len(),
            got: z_obs.len(),
        });
    }
    if z_obs.is_empty() {
        return Err(Error::InvalidArgument("margin adjustment needs observed rows".into()));
    }
    let order = argsort(ranks);
    let sorted_r: Vec<f64> = order.iter().map(|&i| ranks[i]).collect();
    let mut run_max = Vec::with_capacity(order.len());
    let mut cur = f64::NEG_INFINITY;
    for &i in &order {
        cur = cur.max(z_obs[i]);
        run_max.push(cur);
    }
    Ok(query_ranks
        .iter()
        .map(|&q| {
            let k = sorted_r.partition_point(|&r| r <= q);
            normal_cdf(run_max[k.saturating_sub(1)])
        })
        .collect())
}

/// Margin-adjusted CDF built on the perturbed-reordered sample: the `k`-th
/// smallest observed value carries `Phi` of the running maximum of the
/// latents up to the `k`-th smallest perturbed rank.
pub fn margin_adjust(
    x_obs: &[f64],
    z_obs: &[f64],
    ranks: &[f64],
    value_kind: VariableKind,
) -> Result<MarginalCdf> {
    if x_obs.len() != ranks.len() {
        return Err(Error::LengthMismatch {
            expected: ranks.len(),
            got: x_obs.len(),
        });
    }
    let levels = margin_adjust_values(z_obs, ranks, &{
        let mut r = ranks.to_vec();
        r.sort_by(f64::total_cmp);
        r
    })?;
    if let Some(i) = x_obs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let mut sorted = x_obs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (pts, domain) = knot_points(&sorted, levels.into_iter(), value_kind);
    Ok(MarginalCdf::interpolated(
        MarginalKind::MarginAdjusted,
        value_kind,
        finish_knots(pts),
        domain,
    ))
}

/// Sorted sample re-indexed by the perturbed rank order: the row with the
/// `k`-th smallest perturbed rank receives the `k`-th smallest value.
pub fn perturbed_reorder(x: &[f64], ranks: &[f64]) -> Result<Vec<f64>> {
    if x.len() != ranks.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: ranks.len(),
        });
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = vec![0.0; x.len()];
    for (k, i) in argsort(ranks).into_iter().enumerate() {
        out[i] = sorted[k];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{normal_quantile, open_unit, std_normal, substream};
    use crate::rank::{flip_probability, privatize_ranks};
    use proptest::prelude::*;

    const CONT: VariableKind = VariableKind::Continuous;

    /// CDF whose knots sample `g` densely on the unit domain.
    fn from_fn(g: impl Fn(f64) -> f64) -> MarginalCdf {
        let knots = (0..=1000).map(|i| (i as f64 / 1000.0, g(i as f64 / 1000.0))).collect();
        MarginalCdf::interpolated(
            MarginalKind::EcdfSmoothed,
            CONT,
            knots,
            DomainAffine {
                shift: 0.0,
                scale: 1.0,
            },
        )
    }

    #[test]
    fn ecdf_examples() {
        let f = ecdf_smooth(&[1.0, 2.0, 3.0], CONT).unwrap();
        assert!((f.eval(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((f.eval(1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((f.eval(3.0) - 1.0).abs() < 1e-15);
        assert!(ecdf_smooth(&[1.0], CONT).is_err());
        let mut rng = substream(1, &[]);
        let mut c = vec![4.0; 50];
        crate::rank::jitter(&mut c, &mut rng);
        assert!(ecdf_smooth(&c, CONT).unwrap().is_monotone(10_000));
    }

    #[test]
    fn ecdf_is_strictly_increasing_between_data_knots() {
        let f = ecdf_smooth(&[0.0, 1.0, 5.0, 6.0], CONT).unwrap();
        let grid: Vec<f64> = (0..=600).map(|i| i as f64 / 100.0).collect();
        for w in grid.windows(2) {
            assert!(f.eval(w[1]) > f.eval(w[0]), "{w:?}");
        }
    }

    #[test]
    fn bernstein_reproduces_linear() {
        let f = from_fn(|t| t);
        let mut rng = substream(2, &[]);
        for l in [1, 3, 10] {
            let b = bernstein_privatize(&f, l, 1, f64::INFINITY, 0.0, &mut rng).unwrap();
            for t in [0.1, 0.37, 0.8] {
                assert!((b.eval_unit(t) - t).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bernstein_square_at_half() {
        let f = from_fn(|t| t * t);
        let b = bernstein_privatize(&f, 2, 1, f64::INFINITY, 0.0, &mut substream(3, &[])).unwrap();
        // Direct basis sum: 0*b0 + 0.25*b1 + 1*b2 at 0.5.
        let oracle = 0.25 * 2.0 * 0.5 * 0.5 + 0.5 * 0.5;
        assert!((b.eval_unit(0.5) - oracle).abs() < 1e-12);
        assert!((oracle - 0.375).abs() < 1e-15);
    }

    #[test]
    fn order_one_is_plain_bernstein() {
        let f = from_fn(|t| t.powf(1.7));
        let mut basis = Vec::new();
        for l in [2, 5, 9] {
            let b = bernstein_privatize(&f, l, 1, f64::INFINITY, 0.0, &mut substream(4, &[])).unwrap();
            // A grid point of the evaluation table.
            let t = 0.296875;
            bernstein_basis(l, t, &mut basis);
            let direct: f64 = (0..=l).map(|v| basis[v] * f.eval_unit(v as f64 / l as f64)).sum();
            assert!((b.eval_unit(t) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn iterated_order_improves_smooth_approximation() {
        let g = |t: f64| t * t;
        let f = from_fn(g);
        let mut rng = substream(5, &[]);
        let b1 = bernstein_privatize(&f, 8, 1, f64::INFINITY, 0.0, &mut rng).unwrap();
        let b2 = bernstein_privatize(&f, 8, 2, f64::INFINITY, 0.0, &mut rng).unwrap();
        let err = |b: &MarginalCdf| (1..10).map(|i| (b.eval_unit(i as f64 / 10.0) - g(i as f64 / 10.0)).abs()).fold(0.0, f64::max);
        assert!(err(&b2) < err(&b1));
    }

    #[test]
    fn bernstein_rejects_bad_args() {
        let f = from_fn(|t| t);
        let mut rng = substream(6, &[]);
        assert!(bernstein_privatize(&f, 3, 1, 0.0, 0.1, &mut rng).is_err());
        assert!(bernstein_privatize(&f, 0, 1, 1.0, 0.1, &mut rng).is_err());
    }

    #[test]
    fn degree_rule() {
        assert_eq!(bernstein_degree(1e-9, 10, 2, 0.05), 1);
        let l = bernstein_degree(5.0, 2000, 2, 0.05);
        assert_eq!(l, ((5.0f64 * 2000.0 / 20f64.ln()).powf(1.0 / 3.0)).round() as usize);
    }

    #[test]
    fn isotonic_pools_violators() {
        assert_eq!(isotonic(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(isotonic(&[3.0, 2.0, 1.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn inverse_identity_and_round_trip() {
        let f = from_fn(|t| t);
        assert!((f.inverse(0.3).unwrap() - 0.3).abs() < 1e-9);
        let g = from_fn(|t| t.powi(3) * 0.5 + t * 0.5);
        for q in [0.1, 0.25, 0.5, 0.9] {
            assert!((g.inverse(g.eval(q)).unwrap() - q).abs() < 1e-6);
        }
        assert!(f.inverse(0.0).is_err());
        assert!(f.inverse(1.0).is_err());
    }

    #[test]
    fn discrete_inverse_hits_levels() {
        let x: Vec<f64> = [0.0, 0.0, 1.0, 2.0, 2.0, 2.0]
            .iter()
            .enumerate()
            .map(|(i, v)| v + 1e-7 * (i + 1) as f64)
            .collect();
        let f = ecdf_smooth(&x, VariableKind::Categorical { levels: 3 }).unwrap();
        assert_eq!(f.inverse(0.2).unwrap(), 0.0);
        assert_eq!(f.inverse(0.5).unwrap(), 1.0);
        assert_eq!(f.inverse(0.9).unwrap(), 2.0);
    }

    #[test]
    fn low_degree_bernstein_keeps_binary_mass() {
        let x: Vec<f64> = (0..1000).map(|i| if i % 10 < 7 { 0.0 } else { 1.0 }).collect();
        let f = ecdf_smooth(&x, VariableKind::Binary).unwrap();
        let mut rng = substream(3, &[]);
        for l in [4, 6, 40] {
            let b = bernstein_privatize(&f, l, 2, 1e12, 1e-3, &mut rng).unwrap();
            let zeros = (1..2000)
                .filter(|&i| b.inverse(i as f64 / 2000.0).unwrap() == 0.0)
                .count();
            let frac = zeros as f64 / 1999.0;
            assert!((frac - 0.7).abs() < 0.05, "l={l} frac={frac}");
        }
    }

    #[test]
    fn bulk_inverse_matches_pointwise() {
        let mut rng = substream(4, &[]);
        let data: Vec<f64> = (0..500).map(|_| std_normal(&mut rng)).collect();
        let f = ecdf_smooth(&data, CONT).unwrap();
        let b = bernstein_privatize(&f, 60, 2, 2.0, 1.0 / 500.0, &mut rng).unwrap();
        let us: Vec<f64> = (1..200).map(|i| i as f64 / 200.0).collect();
        for (u, x) in us.iter().zip(b.inverse_many(&us).unwrap()) {
            assert!((x - b.inverse(*u).unwrap()).abs() < 2e-3 * f.domain.scale);
        }
        let counts: Vec<f64> = (0..300).map(|i| (i % 7) as f64).collect();
        let c = ecdf_smooth(&counts, VariableKind::Count).unwrap();
        let cb = bernstein_privatize(&c, 20, 2, 1.0, 1.0 / 300.0, &mut rng).unwrap();
        for g in [&c, &cb] {
            let bulk = g.inverse_many(&us).unwrap();
            for (u, x) in us.iter().zip(bulk) {
                assert_eq!(x, g.inverse(*u).unwrap());
            }
        }
        assert!(b.inverse_many(&[0.5, 1.0]).is_err());
    }

    #[test]
    fn private_uniform_inverse_sampling_ks() {
        let mut rng = substream(7, &[]);
        let data: Vec<f64> = (0..2000).map(|_| open_unit(&mut rng)).collect();
        let f = ecdf_smooth(&data, CONT).unwrap();
        let l = bernstein_degree(5.0, 2000, 2, 0.05);
        let b = bernstein_privatize(&f, l, 2, 5.0, 1.0 / 2000.0, &mut rng).unwrap();
        let mut draws: Vec<f64> = (0..10_000)
            .map(|_| b.inverse(open_unit(&mut rng)).unwrap())
            .collect();
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let u = x.clamp(0.0, 1.0);
                (u - i as f64 / n).abs().max(((i + 1) as f64 / n - u).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks <= 0.08, "ks={ks}");
    }

    #[test]
    fn margin_adjust_examples() {
        let x = [0.3, -1.2, 2.0, 0.1];
        let z = [0.5, -1.0, 1.5, 0.2];
        let ranks = [3.0, 1.0, 4.0, 2.0];
        let f = margin_adjust(&x, &z, &ranks, CONT).unwrap();
        for (xi, zi) in x.iter().zip(&z) {
            assert!((f.eval(*xi) - normal_cdf(*zi)).abs() < 1e-15);
        }
        let single = margin_adjust(&[4.0], &[0.7], &[1.0], CONT).unwrap();
        assert!((single.eval(4.0) - normal_cdf(0.7)).abs() < 1e-15);
        assert!(margin_adjust_values(&[], &[], &[1.0]).is_err());
        let v = margin_adjust_values(&z, &ranks, &[0.5]).unwrap();
        assert_eq!(v[0], normal_cdf(-1.0));
    }

    #[test]
    fn margin_adjust_recovers_normal_cdf() {
        let mut rng = substream(8, &[]);
        let x: Vec<f64> = (0..4000).map(|_| std_normal(&mut rng)).collect();
        let ranks = privatize_ranks(&x, 0.0, true, &mut rng).unwrap();
        let f = margin_adjust(&x, &x, &ranks, CONT).unwrap();
        let sup = x.iter().map(|&v| (f.eval(v) - normal_cdf(v)).abs()).fold(0.0, f64::max);
        assert!(sup <= 0.05, "{sup}");
    }

    #[test]
    fn reorder_examples() {
        assert_eq!(
            perturbed_reorder(&[10.0, 20.0, 30.0], &[3.0, 2.0, 1.0]).unwrap(),
            vec![30.0, 20.0, 10.0]
        );
        let x = [0.4, -2.0, 1.0];
        assert_eq!(perturbed_reorder(&x, &[2.0, 1.0, 3.0]).unwrap(), x.to_vec());
        assert!(perturbed_reorder(&x, &[1.0]).is_err());
    }

    #[test]
    fn normal_quantile_feeds_margin_adjust_monotonically() {
        let mut rng = substream(9, &[]);
        let x: Vec<f64> = (0..300).map(|_| std_normal(&mut rng)).collect();
        let theta = flip_probability(1.0);
        let ranks = privatize_ranks(&x, theta, true, &mut rng).unwrap();
        // Latents consistent with the perturbed ordering.
        let order = argsort(&ranks);
        let mut z = vec![0.0; x.len()];
        for (k, &i) in order.iter().enumerate() {
            z[i] = normal_quantile((k as f64 + 0.5) / x.len() as f64);
        }
        let xt = perturbed_reorder(&x, &ranks).unwrap();
        let vals = margin_adjust_values(&z, &ranks, &ranks).unwrap();
        let mut pairs: Vec<(f64, f64)> = xt.iter().copied().zip(vals).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(pairs.windows(2).all(|w| w[1].1 >= w[0].1));
    }

    proptest! {
        #[test]
        fn reorder_preserves_multiset(
            x in prop::collection::vec(-1e3f64..1e3, 1..60),
            seed: u64,
        ) {
            let mut rng = substream(seed, &[]);
            let ranks = privatize_ranks(&x, 0.3, true, &mut rng).unwrap();
            let mut a = perturbed_reorder(&x, &ranks).unwrap();
            let mut b = x.clone();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn reordered_margin_adjust_is_monotone(
            x in prop::collection::vec(-5.0f64..5.0, 2..80),
            z in prop::collection::vec(-3.0f64..3.0, 80),
            seed: u64,
        ) {
            let z = &z[..x.len()];
            let mut rng = substream(seed, &[]);
            let ranks = privatize_ranks(&x, 0.4, true, &mut rng).unwrap();
            let xt = perturbed_reorder(&x, &ranks).unwrap();
            let vals = margin_adjust_values(z, &ranks, &ranks).unwrap();
            let order = argsort(&ranks);
            for w in order.windows(2) {
                prop_assert!(xt[w[1]] >= xt[w[0]]);
                prop_assert!(vals[w[1]] >= vals[w[0]]);
            }
        }

        #[test]
        fn privatized_cdfs_are_monotone(
            data in prop::collection::vec(-10.0f64..10.0, 2..200),
            eps2 in 0.01f64..10.0,
            h in 1usize..4,
            seed: u64,
        ) {
            let f = ecdf_smooth(&data, CONT).unwrap();
            prop_assert!(f.is_monotone(10_000));
            let l = bernstein_degree(eps2, data.len(), h, 0.05);
            let mut rng = substream(seed, &[]);
            let b = bernstein_privatize(&f, l, h, eps2, 1.0 / data.len() as f64, &mut rng).unwrap();
            prop_assert!(b.is_monotone(10_000));
        }
    }
}
