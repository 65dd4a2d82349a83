//! Sparse GLM fitting over vertically partitioned data: ADMM over client
//! blocks, SCAD/MCP through local linear approximation, BIC along a lambda
//! grid, and the noisy-embedding baseline.

use std::str::FromStr;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::MixedDataset;
use crate::error::{Error, Result};
use crate::federation::{Federation, Message};
use crate::numeric::{stage, std_normal, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Gaussian,
    Logistic,
}

impl FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "linear" => Ok(Link::Gaussian),
            "logistic" | "binomial" => Ok(Link::Logistic),
            _ => Err(Error::Config(format!("unknown link {s:?}"))),
        }
    }
}

impl Link {
    /// Cumulant `psi` with `psi'` the inverse link.
    pub fn psi(self, t: f64) -> f64 {
        match self {
            Link::Gaussian => 0.5 * t * t,
            Link::Logistic => {
                if t > 0.0 {
                    t + (-t).exp().ln_1p()
                } else {
                    t.exp().ln_1p()
                }
            }
        }
    }

    pub fn mean(self, t: f64) -> f64 {
        match self {
            Link::Gaussian => t,
            Link::Logistic => sigmoid(t),
        }
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum PenaltyFamily {
    Scad { a: f64 },
    Mcp { a: f64 },
    Lasso,
}

impl PenaltyFamily {
    pub fn scad() -> Self {
        PenaltyFamily::Scad { a: 3.7 }
    }

    pub fn mcp() -> Self {
        PenaltyFamily::Mcp { a: 3.0 }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            PenaltyFamily::Scad { a } if !(a > 2.0) => Err(Error::Config(format!("SCAD needs a > 2, got {a}"))),
            PenaltyFamily::Mcp { a } if !(a > 1.0) => Err(Error::Config(format!("MCP needs a > 1, got {a}"))),
            _ => Ok(()),
        }
    }
}

impl FromStr for PenaltyFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scad" => Ok(PenaltyFamily::scad()),
            "mcp" => Ok(PenaltyFamily::mcp()),
            "lasso" => Ok(PenaltyFamily::Lasso),
            _ => Err(Error::Config(format!("unknown penalty {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub family: PenaltyFamily,
    pub lambda: f64,
}

impl PenaltySpec {
    pub fn new(family: PenaltyFamily, lambda: f64) -> Result<Self> {
        family.validate()?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda {lambda} must be finite and non-negative")));
        }
        Ok(PenaltySpec { family, lambda })
    }
}

/// `P'_lambda(|beta|)`.
pub fn penalty_deriv(spec: PenaltySpec, beta_abs: f64) -> f64 {
    let l = spec.lambda;
    match spec.family {
        PenaltyFamily::Lasso => l,
        PenaltyFamily::Scad { a } => {
            if beta_abs <= l {
                l
            } else {
                (a * l - beta_abs).max(0.0) / (a - 1.0)
            }
        }
        PenaltyFamily::Mcp { a } => (a * l - beta_abs).max(0.0) / a,
    }
}

/// `P_lambda(|beta|)`.
pub fn penalty_value(spec: PenaltySpec, beta_abs: f64) -> f64 {
    let l = spec.lambda;
    let b = beta_abs;
    match spec.family {
        PenaltyFamily::Lasso => l * b,
        PenaltyFamily::Scad { a } => {
            if b <= l {
                l * b
            } else if b <= a * l {
                (2.0 * a * l * b - b * b - l * l) / (2.0 * (a - 1.0))
            } else {
                l * l * (a + 1.0) / 2.0
            }
        }
        PenaltyFamily::Mcp { a } => {
            if b <= a * l {
                l * b - b * b / (2.0 * a)
            } else {
                a * l * l / 2.0
            }
        }
    }
}

/// One client's standardized design block with its Gram matrix.
#[derive(Debug, Clone)]
pub struct Block {
    pub x: DMatrix<f64>,
    pub gram: DMatrix<f64>,
}

impl Block {
    pub fn new(x: DMatrix<f64>) -> Self {
        let gram = x.tr_mul(&x);
        Block { x, gram }
    }

    pub fn width(&self) -> usize {
        self.x.ncols()
    }
}

fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Client update: minimizes
/// `lambda ||alpha o b||_1 + <gamma, X b> + phi/2 ||h - X b_old + X b||^2
///  + prox phi/2 ||X (b - b_old)||^2`
/// by cyclic coordinate descent until the KKT residual is at most `tol`.
#[allow(clippy::too_many_arguments)]
pub fn beta_update(
    block: &Block,
    beta_old: &DVector<f64>,
    h: &DVector<f64>,
    gamma: &DVector<f64>,
    alpha: &[f64],
    phi: f64,
    prox: f64,
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<DVector<f64>> {
    let p = block.width();
    if beta_old.len() != p || alpha.len() != p {
        return Err(Error::LengthMismatch {
            expected: p,
            got: alpha.len().min(beta_old.len()),
        });
    }
    if !(phi > 0.0) {
        return Err(Error::InvalidArgument(format!("phi {phi} must be positive")));
    }
    if !(prox >= 0.0) {
        return Err(Error::InvalidArgument(format!("proximal weight {prox} must be non-negative")));
    }
    let g = &block.gram;
    let c = (1.0 + prox) * phi;
    // Linear term X^T (gamma + phi h - c X b_old).
    let q = block.x.tr_mul(gamma) + block.x.tr_mul(h) * phi - (g * beta_old) * c;
    let mut beta = beta_old.clone();
    let mut gb = g * &beta;
    let kkt = |beta: &DVector<f64>, gb: &DVector<f64>| -> f64 {
        (0..p)
            .map(|j| {
                let grad = q[j] + c * gb[j];
                let t = lambda * alpha[j];
                if beta[j] != 0.0 {
                    (grad + t * beta[j].signum()).abs()
                } else {
                    (grad.abs() - t).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    };
    let mut residual = kkt(&beta, &gb);
    let mut sweeps = 0;
    while residual > tol {
        if sweeps == max_sweeps {
            return Err(Error::SubproblemNotConverged { sweeps, residual });
        }
        for j in 0..p {
            let gjj = g[(j, j)];
            if gjj <= 0.0 {
                continue;
            }
            let r = q[j] + c * (gb[j] - gjj * beta[j]);
            let new = -soft(r, lambda * alpha[j]) / (c * gjj);
            let delta = new - beta[j];
            if delta != 0.0 {
                gb.axpy(delta, &g.column(j), 1.0);
                beta[j] = new;
            }
        }
        sweeps += 1;
        residual = kkt(&beta, &gb);
    }
    Ok(beta)
}

/// Server update of the auxiliary predictor: per coordinate minimizer of
/// `-y eta / n + psi(eta) / n - gamma eta + phi/2 (a - eta)^2`.
pub fn eta_update(y: &[f64], a: &[f64], gamma: &[f64], phi: f64, link: Link) -> Result<Vec<f64>> {
    let n = y.len() as f64;
    if a.len() != y.len() || gamma.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            got: a.len().min(gamma.len()),
        });
    }
    (0..y.len())
        .map(|i| match link {
            Link::Gaussian => Ok((y[i] / n + gamma[i] + phi * a[i]) / (1.0 / n + phi)),
            Link::Logistic => logistic_eta(y[i], a[i], gamma[i], phi, n).ok_or(Error::EtaNotConverged(i)),
        })
        .collect()
}

/// Safeguarded Newton on the increasing derivative, scaled by `n`.
fn logistic_eta(y: f64, a: f64, gamma: f64, phi: f64, n: f64) -> Option<f64> {
    let grad = |t: f64| -y + sigmoid(t) - n * gamma - n * phi * (a - t);
    let tol = 1e-10 * n;
    // Bracket the root by doubling outwards from a.
    let (mut lo, mut hi) = (a - 1.0, a + 1.0);
    let mut step = 1.0;
    while grad(lo) > 0.0 {
        step *= 2.0;
        lo = a - step;
        if step > 1e300 {
            return None;
        }
    }
    step = 1.0;
    while grad(hi) < 0.0 {
        step *= 2.0;
        hi = a + step;
        if step > 1e300 {
            return None;
        }
    }
    let mut t = a.clamp(lo, hi);
    for _ in 0..100 {
        let g = grad(t);
        if g.abs() <= tol {
            return Some(t);
        }
        if g > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let s = sigmoid(t);
        let next = t - g / (s * (1.0 - s) + n * phi);
        t = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        let g = grad(mid);
        if g.abs() <= tol || hi - lo <= f64::EPSILON * mid.abs().max(1.0) {
            return Some(mid);
        }
        if g > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Penalty parameter of the N-scaled problem; the paper-scale value is
    /// `phi / N`.
    pub phi: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub lla_rounds: usize,
    pub cd_tol: f64,
    pub cd_max_sweeps: usize,
    /// Proximal weight on each client's own embedding change; `None` uses
    /// `K - 1`, which makes the parallel block update a sharing ADMM.
    /// `Some(0.0)` is the plain Jacobi update.
    pub prox: Option<f64>,
    /// Standard deviation of Gaussian noise added to each transmitted
    /// embedding; such fits run exactly `dp_iterations` iterations.
    pub dp_noise: Option<f64>,
    pub dp_iterations: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            phi: 1.0,
            eps_abs: 1e-3,
            eps_rel: 1e-3,
            max_iter: 5000,
            lla_rounds: 3,
            cd_tol: 1e-8,
            cd_max_sweeps: 10_000,
            prox: None,
            dp_noise: None,
            dp_iterations: 200,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.eps_abs > 0.0 && self.eps_rel >= 0.0 && self.cd_tol > 0.0) {
            return Err(Error::Config("phi, tolerances must be positive".into()));
        }
        if self.prox.is_some_and(|t| !(t >= 0.0 && t.is_finite())) {
            return Err(Error::Config("proximal weight must be finite and non-negative".into()));
        }
        if self.max_iter == 0 || self.cd_max_sweeps == 0 {
            return Err(Error::Config("iteration caps must be positive".into()));
        }
        if let Some(s) = self.dp_noise {
            if !(s >= 0.0 && s.is_finite()) || self.dp_iterations == 0 {
                return Err(Error::Config(format!("dp noise {s} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Standardized, client-partitioned design with the response.
#[derive(Debug, Clone)]
pub struct Design {
    pub link: Link,
    pub blocks: Vec<Block>,
    /// Covariate index of each block column; `None` is the intercept column.
    pub columns: Vec<Vec<Option<usize>>>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Response as used by the solver (centered for the Gaussian link).
    pub y: DVector<f64>,
    pub y_mean: f64,
}

impl Design {
    /// Builds the design from a complete dataset: covariates standardized to
    /// mean 0 and variance 1, constant columns zeroed.
    pub fn from_dataset(ds: &MixedDataset, link: Link) -> Result<Self> {
        if ds.mask.any_missing() {
            return Err(Error::InvalidDataset("fitting needs a dataset without missing cells".into()));
        }
        let p = ds.n_covariates();
        let blocks: Vec<Vec<Vec<f64>>> = ds
            .partition
            .blocks
            .iter()
            .map(|b| b.clone().map(|c| ds.columns[c + 1].values.clone()).collect())
            .collect();
        let cols: Vec<Vec<usize>> = ds.partition.blocks.iter().map(|b| b.clone().collect()).collect();
        Design::new(blocks, cols, p, ds.response().to_vec(), link, ds.partition.response_owner)
    }

    /// `blocks[k][j]` is covariate `cols[k][j]` held by client `k`.
    pub fn new(
        blocks: Vec<Vec<Vec<f64>>>,
        cols: Vec<Vec<usize>>,
        p: usize,
        y: Vec<f64>,
        link: Link,
        server: usize,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::InvalidDataset("fitting needs at least 2 rows".into()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if link == Link::Logistic && y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidDataset("logistic response must be 0/1".into()));
        }
        let mut means = vec![0.0; p];
        let mut sds = vec![0.0; p];
        let mut out_blocks = Vec::with_capacity(blocks.len());
        let mut out_cols = Vec::with_capacity(blocks.len());
        for (k, (vals, idx)) in blocks.into_iter().zip(cols).enumerate() {
            let intercept = link == Link::Logistic && k == server;
            let width = vals.len() + usize::from(intercept);
            let mut x = DMatrix::zeros(n, width);
            let mut col_ids = Vec::with_capacity(width);
            for (j, (v, &c)) in vals.iter().zip(&idx).enumerate() {
                if v.len() != n {
                    return Err(Error::LengthMismatch { expected: n, got: v.len() });
                }
                if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(i));
                }
                let m = v.iter().sum::<f64>() / n as f64;
                let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
                means[c] = m;
                sds[c] = sd;
                if sd > 1e-12 {
                    for i in 0..n {
                        x[(i, j)] = (v[i] - m) / sd;
                    }
                }
                col_ids.push(Some(c));
            }
            if intercept {
                x.column_mut(width - 1).fill(1.0);
                col_ids.push(None);
            }
            out_blocks.push(Block::new(x));
            out_cols.push(col_ids);
        }
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let y = match link {
            Link::Gaussian => DVector::from_iterator(n, y.iter().map(|v| v - y_mean)),
            Link::Logistic => DVector::from_vec(y),
        };
        Ok(Design {
            link,
            blocks: out_blocks,
            columns: out_cols,
            means,
            sds,
            y,
            y_mean,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.means.len()
    }

    /// Penalty weights of 1 except for the unpenalized intercept.
    pub fn unit_weights(&self) -> Vec<Vec<f64>> {
        self.columns
            .iter()
            .map(|c| c.iter().map(|j| if j.is_some() { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    /// Largest lambda with a non-trivial lasso path.
    pub fn lambda_max(&self) -> f64 {
        let n = self.n_rows() as f64;
        let ybar = self.y.mean();
        let yc = self.y.map(|v| v - ybar);
        self.blocks
            .iter()
            .zip(&self.columns)
            .flat_map(|(b, cols)| {
                let g = b.x.tr_mul(&yc);
                cols.iter()
                    .zip(g.iter())
                    .filter(|(c, _)| c.is_some())
                    .map(|(_, v)| v.abs() / n)
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// `count` log-spaced values from `lambda_max` down to
    /// `ratio * lambda_max`.
    pub fn lambda_grid(&self, count: usize, ratio: f64) -> Vec<f64> {
        let top = self.lambda_max().max(1e-12);
        if count <= 1 {
            return vec![top];
        }
        (0..count)
            .map(|i| top * ratio.powf(i as f64 / (count - 1) as f64))
            .collect()
    }

    /// Mean negative log-likelihood at linear predictor `eta`.
    pub fn loss(&self, eta: &DVector<f64>) -> f64 {
        let n = self.n_rows() as f64;
        self.y
            .iter()
            .zip(eta.iter())
            .map(|(y, e)| -y * e + self.link.psi(*e))
            .sum::<f64>()
            / n
    }

    /// Likelihood part of the BIC: `ln(RSS / N) / 2` for the Gaussian link,
    /// the mean loss for the logistic link.
    pub fn fit_term(&self, eta: &DVector<f64>) -> f64 {
        match self.link {
            Link::Gaussian => {
                let rss = (&self.y - eta).norm_squared() / self.n_rows() as f64;
                0.5 * rss.max(f64::MIN_POSITIVE).ln()
            }
            Link::Logistic => self.loss(eta),
        }
    }

    fn predictor(&self, beta: &[DVector<f64>]) -> DVector<f64> {
        let mut eta = DVector::zeros(self.n_rows());
        for (b, bk) in self.blocks.iter().zip(beta) {
            eta.gemv(1.0, &b.x, bk, 1.0);
        }
        eta
    }
}

/// Solver iterate, reusable as a warm start.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub beta: Vec<DVector<f64>>,
    pub eta: DVector<f64>,
    pub gamma: DVector<f64>,
}

impl AdmmState {
    pub fn zeros(design: &Design) -> Self {
        let n = design.n_rows();
        AdmmState {
            beta: design.blocks.iter().map(|b| DVector::zeros(b.width())).collect(),
            eta: DVector::zeros(n),
            gamma: DVector::zeros(n),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdmmTrace {
    pub iterations: usize,
    pub primal: Vec<f64>,
    pub dual: Vec<f64>,
}

/// Runs ADMM for fixed penalty weights `lambda * alpha` from `state`.
pub fn admm_solve(
    design: &Design,
    lambda: f64,
    alpha: &[Vec<f64>],
    cfg: &SolverConfig,
    fed: &Federation,
    state: AdmmState,
) -> Result<(AdmmState, AdmmTrace)> {
    let n = design.n_rows();
    let nf = n as f64;
    let k = design.blocks.len();
    let p_total: usize = design.blocks.iter().map(Block::width).sum();
    let phi = cfg.phi / nf;
    let link = design.link;
    let y: Vec<f64> = design.y.iter().copied().collect();

    let betas: Vec<Mutex<DVector<f64>>> = state.beta.into_iter().map(Mutex::new).collect();
    let mut eta = state.eta;
    let mut gamma = state.gamma;
    let mut a = design.predictor(&betas.iter().map(|b| b.lock().unwrap().clone()).collect::<Vec<_>>());
    let mut trace = AdmmTrace::default();
    let fixed = cfg.dp_noise.map(|_| cfg.dp_iterations);
    let prox = cfg.prox.unwrap_or(k.saturating_sub(1) as f64);

    for it in 0..cfg.max_iter.max(fixed.unwrap_or(0)) {
        let h = &a - &eta;
        let delivered = fed.send(Message::BroadcastState {
            h: h.iter().copied().collect(),
            gamma: gamma.iter().copied().collect(),
        })?;
        let Message::BroadcastState { h, gamma: g } = delivered else {
            return Err(Error::InvalidArgument("unexpected broadcast".into()));
        };
        let (h, g) = (DVector::from_vec(h), DVector::from_vec(g));

        let client_step = |c: usize| -> Result<Vec<Message>> {
            let block = &design.blocks[c];
            let old = betas[c].lock().unwrap().clone();
            let new = beta_update(block, &old, &h, &g, &alpha[c], phi, prox, lambda, cfg.cd_tol, cfg.cd_max_sweeps)?;
            let mut zeta = &block.x * &new;
            if let Some(sigma) = cfg.dp_noise {
                let mut rng = substream(cfg.seed, &[c as u64, it as u64, stage::DP_NOISE]);
                for z in zeta.iter_mut() {
                    *z += sigma * std_normal(&mut rng);
                }
            }
            *betas[c].lock().unwrap() = new;
            Ok(vec![Message::EmbeddingShare {
                client: c,
                zeta: zeta.iter().copied().collect(),
            }])
        };
        a = fed.run_round(k, client_step, |inbox| {
            let mut sum = DVector::zeros(n);
            for msg in inbox.into_iter().flatten() {
                if let Message::EmbeddingShare { zeta, .. } = msg {
                    sum += DVector::from_vec(zeta);
                }
            }
            Ok(sum)
        })?;

        let eta_new = DVector::from_vec(eta_update(
            &y,
            a.as_slice(),
            gamma.as_slice(),
            phi,
            link,
        )?);
        let r = &a - &eta_new;
        gamma += &r * phi;
        // Residuals and tolerances on the N-scaled problem.
        let s = (&eta_new - &eta).norm() * cfg.phi;
        let r_norm = r.norm();
        eta = eta_new;
        trace.primal.push(r_norm);
        trace.dual.push(s);
        trace.iterations = it + 1;
        let eps_pri = nf.sqrt() * cfg.eps_abs + cfg.eps_rel * a.norm().max(eta.norm());
        let eps_dual = (p_total as f64).sqrt() * cfg.eps_abs + cfg.eps_rel * gamma.norm() * nf;
        match fixed {
            Some(t) if it + 1 >= t => break,
            Some(_) => {}
            None if r_norm <= eps_pri && s <= eps_dual => break,
            None if it + 1 == cfg.max_iter => {
                return Err(Error::AdmmNotConverged {
                    iterations: it + 1,
                    primal: r_norm,
                    dual: s,
                    primal_trace: trace.primal,
                    dual_trace: trace.dual,
                });
            }
            None => {}
        }
    }
    let beta = betas.into_iter().map(|b| b.into_inner().unwrap()).collect();
    Ok((AdmmState { beta, eta, gamma }, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Coefficients on the original covariate scale.
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub support: Vec<usize>,
    pub lambda: f64,
    /// Mean negative log-likelihood at the fit.
    pub loss: f64,
    pub bic: f64,
    pub iterations: usize,
    pub lla_rounds: usize,
    pub primal_trace: Vec<f64>,
    pub dual_trace: Vec<f64>,
}

/// BIC divided by `2N`: `f + df log(N) / (2N)`, with `f` the mean
/// negative log-likelihood (profiled over the noise variance for the
/// Gaussian link, see [`Design::fit_term`]).
pub fn bic_value(fit_term: f64, df: usize, n: usize) -> f64 {
    fit_term + df as f64 * (n as f64).ln() / (2.0 * n as f64)
}

fn support_of(state: &AdmmState, design: &Design) -> Vec<usize> {
    let mut s: Vec<usize> = state
        .beta
        .iter()
        .zip(&design.columns)
        .flat_map(|(b, cols)| {
            cols.iter()
                .zip(b.iter())
                .filter_map(|(c, v)| c.filter(|_| *v != 0.0))
                .collect::<Vec<_>>()
        })
        .collect();
    s.sort_unstable();
    s
}

fn finish(design: &Design, state: &AdmmState, lambda: f64, trace: AdmmTrace, rounds: usize) -> FitResult {
    let p = design.n_covariates();
    let mut beta = vec![0.0; p];
    let mut intercept = match design.link {
        Link::Gaussian => design.y_mean,
        Link::Logistic => 0.0,
    };
    for (b, cols) in state.beta.iter().zip(&design.columns) {
        for (v, c) in b.iter().zip(cols) {
            match c {
                Some(c) if design.sds[*c] > 1e-12 => beta[*c] = v / design.sds[*c],
                Some(_) => {}
                None => intercept += v,
            }
        }
    }
    for (j, b) in beta.iter().enumerate() {
        intercept -= b * design.means[j];
    }
    let eta = design.predictor(&state.beta);
    let loss = design.loss(&eta);
    let support = support_of(state, design);
    let bic = bic_value(design.fit_term(&eta), support.len(), design.n_rows());
    FitResult {
        beta,
        intercept,
        support,
        lambda,
        loss,
        bic,
        iterations: trace.iterations,
        lla_rounds: rounds,
        primal_trace: trace.primal,
        dual_trace: trace.dual,
    }
}

/// Penalized fit at one lambda: a lasso pass, then LLA reweighting rounds
/// until the support repeats or `cfg.lla_rounds` is reached.
pub fn admm_fit(
    design: &Design,
    spec: PenaltySpec,
    cfg: &SolverConfig,
    fed: &Federation,
    warm: Option<AdmmState>,
) -> Result<(FitResult, AdmmState)> {
    spec.family.validate()?;
    cfg.validate()?;
    let base = design.unit_weights();
    let state = warm.unwrap_or_else(|| AdmmState::zeros(design));
    let (mut state, mut trace) = admm_solve(design, spec.lambda, &base, cfg, fed, state)?;
    let mut rounds = 0;
    if spec.family != PenaltyFamily::Lasso && spec.lambda > 0.0 {
        let mut support = support_of(&state, design);
        for _ in 0..cfg.lla_rounds {
            let alpha: Vec<Vec<f64>> = state
                .beta
                .iter()
                .zip(&base)
                .map(|(b, w)| {
                    b.iter()
                        .zip(w)
                        .map(|(v, w)| w * penalty_deriv(spec, v.abs()) / spec.lambda)
                        .collect()
                })
                .collect();
            let (next, t) = admm_solve(design, spec.lambda, &alpha, cfg, fed, state)?;
            state = next;
            trace.iterations += t.iterations;
            trace.primal.extend(t.primal);
            trace.dual.extend(t.dual);
            rounds += 1;
            let s = support_of(&state, design);
            if s == support {
                break;
            }
            support = s;
        }
    }
    Ok((finish(design, &state, spec.lambda, trace, rounds), state))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BicPath {
    pub lambdas: Vec<f64>,
    pub bic: Vec<f64>,
    pub loss: Vec<f64>,
    pub df: Vec<usize>,
}

/// Fits every lambda of a descending grid with warm starts and returns the
/// fit minimizing BIC.
pub fn bic_select(
    design: &Design,
    family: PenaltyFamily,
    grid: &[f64],
    cfg: &SolverConfig,
    fed: &Federation,
) -> Result<(FitResult, BicPath)> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Config("lambda grid must be sorted descending".into()));
    }
    let mut path = BicPath::default();
    let mut best: Option<FitResult> = None;
    let mut warm = None;
    for &lambda in grid {
        let (fit, state) = admm_fit(design, PenaltySpec::new(family, lambda)?, cfg, fed, warm)?;
        warm = Some(state);
        path.lambdas.push(lambda);
        path.bic.push(fit.bic);
        path.loss.push(fit.loss);
        path.df.push(fit.support.len());
        if best.as_ref().is_none_or(|b| fit.bic < b.bic) {
            best = Some(fit);
        }
    }
    Ok((best.expect("grid is non-empty"), path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub link: Link,
    pub penalty: PenaltyFamily,
    pub grid_size: usize,
    pub grid_ratio: f64,
    pub solver: SolverConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            link: Link::Gaussian,
            penalty: PenaltyFamily::scad(),
            grid_size: 50,
            grid_ratio: 1e-3,
            solver: SolverConfig::default(),
        }
    }
}

/// Standardizes `ds`, builds the default grid and selects by BIC.
pub fn fit_dataset(ds: &MixedDataset, cfg: &FitConfig, fed: &Federation) -> Result<(FitResult, BicPath)> {
    let design = Design::from_dataset(ds, cfg.link)?;
    let grid = design.lambda_grid(cfg.grid_size, cfg.grid_ratio);
    bic_select(&design, cfg.penalty, &grid, &cfg.solver, fed)
}
