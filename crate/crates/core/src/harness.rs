//! Simulation study: mixture data generation, missingness injection,
//! selection and classification metrics, copula KL, and the replicated
//! experiment runner behind the `simulate` command.

use std::io::{Read, Write};
use std::path::PathBuf;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClientPartition, Column, MissingMask, MixedDataset, VariableKind};
use crate::error::{Error, Result};
use crate::federation::{Federation, TransportKind};
use crate::glm::{fit_dataset, FitConfig, FitResult, Link, PenaltyFamily, SolverConfig};
use crate::marginal::{ecdf_smooth, MarginalCdf};
use crate::numeric::{stage, std_normal, substream};
use crate::pipeline::{self, BernsteinConfig, BudgetMode, Method, PrivatizationConfig};
use crate::rank::{estimate_omega, PerturbedRanks};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    /// Common mean of every coordinate in each component.
    pub means: Vec<f64>,
    pub within_block: f64,
    pub cross_block: f64,
    pub toeplitz: f64,
    /// Lag-1 and lag-2 correlations of the banded third component.
    pub band: [f64; 2],
}

impl Default for MixtureParams {
    fn default() -> Self {
        MixtureParams {
            weights: vec![0.4, 0.3, 0.3],
            means: vec![0.0, -1.0, 1.0],
            within_block: 0.3,
            cross_block: 0.1,
            toeplitz: 0.5,
            band: [0.5, 0.25],
        }
    }
}

/// Client-wise missingness mechanism.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mechanism {
    #[default]
    None,
    /// Independent per-client missing probabilities.
    Mcar { rates: Vec<f64> },
    MarSimple,
    MarComplex,
}

impl Mechanism {
    /// Five-client MCAR preset; the published 0.95..0.75 are read as
    /// observation probabilities.
    pub fn mcar_preset() -> Self {
        Mechanism::Mcar {
            rates: vec![0.05, 0.10, 0.15, 0.20, 0.25],
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            Mechanism::None => "none",
            Mechanism::Mcar { .. } => "mcar",
            Mechanism::MarSimple => "mar_simple",
            Mechanism::MarComplex => "mar_complex",
        }
    }
}

/// Missing-data treatment applied before privatization or fitting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    None,
    /// Complete cases only.
    Cc,
    MeanImpute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivateArm {
    pub method: Method,
    /// Total per-client budget, split evenly between ranks and marginals.
    pub eps: f64,
    #[serde(default = "one")]
    pub iterations: usize,
    #[serde(default = "total_budget")]
    pub budget_mode: BudgetMode,
    #[serde(default)]
    pub bernstein: BernsteinConfig,
}

fn one() -> usize {
    1
}

fn total_budget() -> BudgetMode {
    BudgetMode::TotalOverIterations
}

/// One compared method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub name: String,
    #[serde(default)]
    pub baseline: Baseline,
    #[serde(default)]
    pub privatize: Option<PrivateArm>,
    /// Noise sd on transmitted embeddings (VFL-ADMM-DP).
    #[serde(default)]
    pub dp_noise: Option<f64>,
}

impl Arm {
    pub fn original() -> Self {
        Arm {
            name: "original-vfl".into(),
            baseline: Baseline::None,
            privatize: None,
            dp_noise: None,
        }
    }

    pub fn private(name: &str, method: Method, eps: f64, iterations: usize) -> Self {
        Arm {
            name: name.into(),
            baseline: Baseline::None,
            privatize: Some(PrivateArm {
                method,
                eps,
                iterations,
                budget_mode: BudgetMode::TotalOverIterations,
                bernstein: BernsteinConfig::default(),
            }),
            dp_noise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    /// Continuous, multinomial, count and binary covariate counts.
    pub q: [usize; 4],
    #[serde(default = "three")]
    pub levels: u32,
    #[serde(default)]
    pub mixture: MixtureParams,
    pub s: f64,
    pub link: Link,
    #[serde(default)]
    pub missing: Mechanism,
    pub arms: Vec<Arm>,
    #[serde(default = "PenaltyFamily::scad")]
    pub penalty: PenaltyFamily,
    #[serde(default = "fifty")]
    pub grid_size: usize,
    #[serde(default = "milli")]
    pub grid_ratio: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Held-out fraction for classification metrics (logistic link only).
    #[serde(default = "fifth")]
    pub holdout: f64,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn three() -> u32 {
    3
}

fn fifty() -> usize {
    50
}

fn milli() -> f64 {
    1e-3
}

fn fifth() -> f64 {
    0.2
}

impl ExperimentConfig {
    /// Five clients of twenty covariates, 25 of each type, s = 0.6, one
    /// replication of Original-VFL.
    pub fn paper(n: usize, link: Link) -> Self {
        ExperimentConfig {
            n,
            p: 100,
            k: 5,
            q: [25; 4],
            levels: 3,
            mixture: MixtureParams::default(),
            s: 0.6,
            link,
            missing: Mechanism::None,
            arms: vec![Arm::original()],
            penalty: PenaltyFamily::scad(),
            grid_size: 50,
            grid_ratio: 1e-3,
            solver: SolverConfig::default(),
            holdout: 0.2,
            replications: 1,
            seed: 0,
            out: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.q.iter().sum::<usize>() != self.p {
            return bad(format!("type counts {:?} do not sum to p = {}", self.q, self.p));
        }
        if self.k == 0 || self.k > self.p {
            return bad(format!("need 1 <= k <= p, got k = {}", self.k));
        }
        if self.n < 4 {
            return bad(format!("n = {} is too small", self.n));
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if !(self.s > 0.0 && self.s <= 1.0) {
            return bad(format!("sparsity s = {} outside (0, 1]", self.s));
        }
        if self.levels < 2 {
            return bad(format!("multinomial needs at least 2 levels, got {}", self.levels));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad(format!("holdout {} outside [0, 1)", self.holdout));
        }
        let m = &self.mixture;
        if m.weights.len() != 3 || m.means.len() != 3 {
            return bad("mixture needs three weights and three means".into());
        }
        if m.weights.iter().any(|w| !(*w >= 0.0)) || (m.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("mixture weights {:?} must be non-negative and sum to 1", m.weights));
        }
        if let Mechanism::Mcar { rates } = &self.missing {
            if rates.len() != self.k {
                return bad(format!("{} MCAR rates for {} clients", rates.len(), self.k));
            }
            if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return bad(format!("MCAR rates {rates:?} outside [0, 1]"));
            }
        }
        if self.arms.is_empty() {
            return bad("no arms configured".into());
        }
        for arm in &self.arms {
            if let Some(pa) = &arm.privatize {
                if !(pa.eps > 0.0) {
                    return bad(format!("arm {}: eps must be positive", arm.name));
                }
                self.privatization(pa, 0).validate(self.k)?;
            }
            if let Some(sd) = arm.dp_noise {
                if !(sd >= 0.0 && sd.is_finite()) {
                    return bad(format!("arm {}: dp_noise must be finite and >= 0", arm.name));
                }
            }
        }
        self.solver.validate()?;
        self.penalty.validate()
    }

    fn privatization(&self, pa: &PrivateArm, seed: u64) -> PrivatizationConfig {
        let mut cfg = PrivatizationConfig::uniform(pa.method, self.k, pa.eps / 2.0, pa.eps / 2.0, seed);
        cfg.iterations = pa.iterations;
        cfg.budget_mode = pa.budget_mode;
        cfg.bernstein = pa.bernstein.clone();
        cfg
    }

    fn partition(&self) -> ClientPartition {
        ClientPartition::even(self.p, self.k)
    }
}

fn toeplitz(p: usize, f: impl Fn(usize) -> f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |a, b| f(a.abs_diff(b)))
}

/// The three component covariances in final covariate order.
pub fn mixture_covariances(cfg: &ExperimentConfig) -> [DMatrix<f64>; 3] {
    let part = cfg.partition();
    let m = &cfg.mixture;
    let owner: Vec<usize> = (0..cfg.p).map(|c| part.owner_of_column(c + 1)).collect();
    let s1 = DMatrix::from_fn(cfg.p, cfg.p, |a, b| {
        if a == b {
            1.0
        } else if owner[a] == owner[b] {
            m.within_block
        } else {
            m.cross_block
        }
    });
    let s2 = toeplitz(cfg.p, |d| m.toeplitz.powi(d as i32));
    let s3 = toeplitz(cfg.p, |d| match d {
        0 => 1.0,
        1 => m.band[0],
        2 => m.band[1],
        _ => 0.0,
    });
    [s1, s2, s3]
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Latent mixture draws transformed to mixed types. Types are assigned to
/// shuffled positions so every client holds a mix; the response column is
/// zero until [`gen_response`] fills it.
pub fn generate_mixture<R: Rng + ?Sized>(cfg: &ExperimentConfig, rng: &mut R) -> Result<MixedDataset> {
    cfg.validate()?;
    let (n, p) = (cfg.n, cfg.p);
    let chols = mixture_covariances(cfg)
        .into_iter()
        .map(|s| Cholesky::new(s).map(|c| c.l()).ok_or(Error::NotPositiveDefinite))
        .collect::<Result<Vec<_>>>()?;

    let mut kinds: Vec<VariableKind> = [
        VariableKind::Continuous,
        VariableKind::Categorical { levels: cfg.levels },
        VariableKind::Count,
        VariableKind::Binary,
    ]
    .iter()
    .zip(cfg.q)
    .flat_map(|(k, q)| std::iter::repeat_n(*k, q))
    .collect();
    for i in (1..p).rev() {
        kinds.swap(i, rng.random_range(0..=i));
    }

    let m = &cfg.mixture;
    let mut cols = vec![vec![0.0; n]; p];
    let mut z = DVector::zeros(p);
    let c_levels = cfg.levels as usize;
    let mut logits = vec![0.0; c_levels];
    for i in 0..n {
        let t: f64 = rng.random();
        let comp = if t < m.weights[0] {
            0
        } else if t < m.weights[0] + m.weights[1] {
            1
        } else {
            2
        };
        for v in z.iter_mut() {
            *v = std_normal(rng);
        }
        let u = &chols[comp] * &z;
        for j in 0..p {
            let uj = u[j] + m.means[comp];
            cols[j][i] = match kinds[j] {
                VariableKind::Continuous => uj,
                VariableKind::Categorical { .. } => {
                    for (c, l) in logits.iter_mut().enumerate() {
                        *l = (c + 1) as f64 / c_levels as f64 * uj;
                    }
                    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let total: f64 = logits.iter().map(|l| (l - top).exp()).sum();
                    let mut draw = rng.random::<f64>() * total;
                    let mut level = c_levels - 1;
                    for (c, l) in logits.iter().enumerate() {
                        draw -= (l - top).exp();
                        if draw < 0.0 {
                            level = c;
                            break;
                        }
                    }
                    level as f64
                }
                VariableKind::Count => {
                    let rate = 2.0 + 0.3 * uj;
                    if rate > 0.0 {
                        Poisson::new(rate).expect("positive rate").sample(rng)
                    } else {
                        0.0
                    }
                }
                VariableKind::Binary => f64::from(rng.random::<f64>() < logistic(0.5 * uj)),
            };
        }
    }
    let mut columns = vec![Column::new("y", VariableKind::Continuous, vec![0.0; n])];
    columns.extend(
        cols.into_iter()
            .zip(kinds)
            .enumerate()
            .map(|(j, (v, k))| Column::new(format!("x{}", j + 1), k, v)),
    );
    MixedDataset::new(columns, cfg.partition(), MissingMask::none(n, cfg.k))
}

/// Per client, `(-1)^j / 3` on the first `ceil(s p_k)` covariates.
pub fn make_beta(cfg: &ExperimentConfig) -> Vec<f64> {
    let mut beta = vec![0.0; cfg.p];
    for block in &cfg.partition().blocks {
        let active = ((cfg.s * block.len() as f64).ceil() as usize).min(block.len());
        for (j, c) in block.clone().take(active).enumerate() {
            beta[c] = if (j + 1) % 2 == 0 { 1.0 / 3.0 } else { -1.0 / 3.0 };
        }
    }
    beta
}

/// Gaussian: `x'beta + N(0, 1)`; logistic: Bernoulli of `logistic(x'beta)`.
pub fn gen_response<R: Rng + ?Sized>(ds: &MixedDataset, beta: &[f64], link: Link, rng: &mut R) -> Result<Vec<f64>> {
    if beta.len() != ds.n_covariates() {
        return Err(Error::LengthMismatch {
            expected: ds.n_covariates(),
            got: beta.len(),
        });
    }
    Ok((0..ds.n_rows())
        .map(|i| {
            let eta: f64 = ds.columns[1..].iter().zip(beta).map(|(c, b)| c.values[i] * b).sum();
            match link {
                Link::Gaussian => eta + std_normal(rng),
                Link::Logistic => f64::from(rng.random::<f64>() < logistic(eta)),
            }
        })
        .collect())
}

/// Replaces the response column.
pub fn with_response(mut ds: MixedDataset, y: Vec<f64>, link: Link) -> Result<MixedDataset> {
    let kind = match link {
        Link::Gaussian => VariableKind::Continuous,
        Link::Logistic => VariableKind::Binary,
    };
    ds.columns[0] = Column::new("y", kind, y);
    MixedDataset::new(ds.columns, ds.partition, ds.mask)
}

/// MAR linear index `1 + sum_j (-1)^j zeta_j' x^j` over always-observed
/// clients, with `zeta_ja = 1 / (j a)` and 1-based `j`, `a`.
fn mar_index(ds: &MixedDataset, row: usize, observed: &[usize]) -> f64 {
    let mut t = 1.0;
    for &k in observed {
        let j = (k + 1) as f64;
        let sign = if (k + 1) % 2 == 0 { 1.0 } else { -1.0 };
        for (a, c) in ds.partition.blocks[k].clone().enumerate() {
            t += sign * ds.columns[c + 1].values[row] / (j * (a + 1) as f64);
        }
    }
    t
}

/// Masks whole client blocks; the response is never masked.
pub fn inject_missing<R: Rng + ?Sized>(ds: &MixedDataset, mech: &Mechanism, rng: &mut R) -> Result<MixedDataset> {
    let n = ds.n_rows();
    let k = ds.partition.n_clients();
    let mut mask = MissingMask::none(n, k);
    match mech {
        Mechanism::None => {}
        Mechanism::Mcar { rates } => {
            if rates.len() != k {
                return Err(Error::Config(format!("{} MCAR rates for {k} clients", rates.len())));
            }
            if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Error::Config(format!("MCAR rates {rates:?} outside [0, 1]")));
            }
            for i in 0..n {
                for (c, &r) in rates.iter().enumerate() {
                    mask.set(i, c, rng.random::<f64>() < r);
                }
            }
        }
        Mechanism::MarSimple | Mechanism::MarComplex => {
            let eligible: Vec<bool> = (0..k).map(|_| rng.random::<f64>() < 0.5).collect();
            let observed: Vec<usize> = (0..k).filter(|&c| !eligible[c]).collect();
            let complex = matches!(mech, Mechanism::MarComplex);
            let y = ds.response();
            for i in 0..n {
                let base = mar_index(ds, i, &observed) - if complex { y[i] } else { 0.0 };
                for c in (0..k).filter(|&c| eligible[c]) {
                    let mut t = base;
                    if complex {
                        for prior in (0..c).filter(|&j| eligible[j]) {
                            let sign = if (prior + 1) % 2 == 0 { 1.0 } else { -1.0 };
                            t += sign * f64::from(u8::from(mask.is_missing(i, prior)));
                        }
                    }
                    mask.set(i, c, rng.random::<f64>() < logistic(t));
                }
            }
        }
    }
    MixedDataset::new(ds.columns.clone(), ds.partition.clone(), mask)
}

/// Rows with every client observed, mask cleared.
pub fn complete_cases(ds: &MixedDataset) -> Result<MixedDataset> {
    let rows = ds.complete_rows();
    if rows.len() < 4 {
        return Err(Error::InvalidDataset(format!("only {} complete cases", rows.len())));
    }
    Ok(ds.select_rows(&rows))
}

/// Masked cells replaced by the observed column mean, rounded to the
/// nearest legal value for discrete kinds.
pub fn mean_impute(ds: &MixedDataset) -> Result<MixedDataset> {
    let mut columns = ds.columns.clone();
    for (c, col) in columns.iter_mut().enumerate().skip(1) {
        let rows = ds.observed_rows(c);
        if rows.is_empty() {
            return Err(Error::InvalidDataset(format!("column {c} has no observed cells")));
        }
        let mut mean = rows.iter().map(|&i| col.values[i]).sum::<f64>() / rows.len() as f64;
        if col.kind.is_discrete() {
            mean = mean.round();
        }
        for i in 0..ds.n_rows() {
            if !ds.is_observed(i, c) {
                col.values[i] = mean;
            }
        }
    }
    MixedDataset::new(
        columns,
        ds.partition.clone(),
        MissingMask::none(ds.n_rows(), ds.partition.n_clients()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub rmse: f64,
    pub sen: f64,
    pub spe: f64,
    pub gmeans: f64,
    pub fdr: f64,
}

/// Sensitivity with no true signals, and specificity with no true nulls,
/// are vacuously 1.
pub fn metrics(beta_hat: &[f64], beta_star: &[f64]) -> Result<SelectionMetrics> {
    if beta_hat.len() != beta_star.len() {
        return Err(Error::LengthMismatch {
            expected: beta_star.len(),
            got: beta_hat.len(),
        });
    }
    let p = beta_star.len();
    let (mut tp, mut pos, mut tn, mut neg, mut fp) = (0usize, 0usize, 0usize, 0usize, 0usize);
    let mut sq = 0.0;
    for (&h, &s) in beta_hat.iter().zip(beta_star) {
        sq += (h - s).powi(2);
        if s != 0.0 {
            pos += 1;
            tp += usize::from(h != 0.0);
        } else {
            neg += 1;
            tn += usize::from(h == 0.0);
            fp += usize::from(h != 0.0);
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let sen = ratio(tp, pos);
    let spe = ratio(tn, neg);
    Ok(SelectionMetrics {
        rmse: (sq / p.max(1) as f64).sqrt(),
        sen,
        spe,
        gmeans: (sen * spe).sqrt(),
        fdr: fp as f64 / (tp + fp).max(1) as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    /// Recall at threshold 0.5; `None` without positives.
    pub recall: Option<f64>,
    /// `None` unless both classes occur.
    pub auc: Option<f64>,
}

pub fn classification_metrics(scores: &[f64], labels: &[f64]) -> Result<ClassificationMetrics> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if let Some(i) = labels.iter().position(|&l| l != 0.0 && l != 1.0) {
        return Err(Error::InvalidArgument(format!("label {} at {i} is not 0/1", labels[i])));
    }
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| **l == 1.0).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| **l == 0.0).map(|(s, _)| *s).collect();
    let recall = (!pos.is_empty()).then(|| pos.iter().filter(|&&s| s >= 0.5).count() as f64 / pos.len() as f64);
    let auc = (!pos.is_empty() && !neg.is_empty()).then(|| {
        let mut wins = 0.0;
        for &a in &pos {
            for &b in &neg {
                wins += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        wins / (pos.len() * neg.len()) as f64
    });
    Ok(ClassificationMetrics { recall, auc })
}

/// Gaussian copula: correlation of `(Y, X)` and one marginal per column.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaModel {
    pub omega: DMatrix<f64>,
    pub marginals: Vec<MarginalCdf>,
}

impl CopulaModel {
    pub fn new(omega: DMatrix<f64>, marginals: Vec<MarginalCdf>) -> Result<Self> {
        let d = omega.nrows();
        if omega.ncols() != d || marginals.len() != d {
            return Err(Error::LengthMismatch {
                expected: d,
                got: marginals.len(),
            });
        }
        let asym = (&omega - omega.transpose()).abs().max();
        if asym > 1e-12 {
            return Err(Error::NotSymmetric(asym));
        }
        if (0..d).any(|i| (omega[(i, i)] - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidArgument("correlation diagonal is not 1".into()));
        }
        if Cholesky::new(omega.clone()).is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(CopulaModel { omega, marginals })
    }

    /// Non-private fit on observed cells: Kendall-based correlation and
    /// smoothed ECDF marginals.
    pub fn fit(ds: &MixedDataset) -> Result<Self> {
        let ranks: Vec<PerturbedRanks> = (0..ds.columns.len())
            .map(|c| {
                let rows = ds.observed_rows(c);
                let values = rows.iter().map(|&i| ds.columns[c].values[i]).collect();
                PerturbedRanks {
                    rows,
                    values,
                    theta: 0.0,
                    debiased: false,
                }
            })
            .collect();
        let omega = estimate_omega(&ranks, ds.n_rows())?.omega;
        let marginals = ranks
            .iter()
            .zip(&ds.columns)
            .map(|(r, col)| ecdf_smooth(&r.values, col.kind))
            .collect::<Result<Vec<_>>>()?;
        CopulaModel::new(omega, marginals)
    }
}

/// KL divergence between the Gaussian copula densities of `a` and `b`:
/// `(tr(Ob^-1 Oa) - d + ln det Ob - ln det Oa) / 2`.
pub fn copula_kl(a: &CopulaModel, b: &CopulaModel) -> Result<f64> {
    let d = a.omega.nrows();
    if b.omega.nrows() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            got: b.omega.nrows(),
        });
    }
    let cb = Cholesky::new(b.omega.clone()).ok_or(Error::NotPositiveDefinite)?;
    let ca = Cholesky::new(a.omega.clone()).ok_or(Error::NotPositiveDefinite)?;
    let logdet = |c: &Cholesky<f64, nalgebra::Dyn>| 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let tr = cb.solve(&a.omega).trace();
    Ok((0.5 * (tr - d as f64 + logdet(&cb) - logdet(&ca))).max(0.0))
}

/// Mean over columns of `sup |F_a - F_b|` on `points` raw values spanning
/// both domains.
pub fn marginal_sup_distance(a: &CopulaModel, b: &CopulaModel, points: usize) -> Result<f64> {
    if a.marginals.len() != b.marginals.len() {
        return Err(Error::LengthMismatch {
            expected: a.marginals.len(),
            got: b.marginals.len(),
        });
    }
    let points = points.max(2);
    let mut total = 0.0;
    for (fa, fb) in a.marginals.iter().zip(&b.marginals) {
        let lo = fa.domain.from_unit(0.0).min(fb.domain.from_unit(0.0));
        let hi = fa.domain.from_unit(1.0).max(fb.domain.from_unit(1.0));
        let sup = (0..points)
            .map(|g| lo + (hi - lo) * g as f64 / (points - 1) as f64)
            .map(|x| (fa.eval(x) - fb.eval(x)).abs())
            .fold(0.0, f64::max);
        total += sup;
    }
    Ok(total / a.marginals.len().max(1) as f64)
}

/// One CSV row: a replication of one arm, or a `mean` / `sd` summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub replication: String,
    pub arm: String,
    pub mechanism: String,
    pub n_train: Option<f64>,
    pub full_obs: Option<f64>,
    pub rmse: Option<f64>,
    pub sen: Option<f64>,
    pub spe: Option<f64>,
    pub gmeans: Option<f64>,
    pub fdr: Option<f64>,
    pub df: Option<f64>,
    pub lambda: Option<f64>,
    pub recall: Option<f64>,
    pub auc: Option<f64>,
    pub copula_kl: Option<f64>,
    pub margin_sup: Option<f64>,
    pub error: String,
}

impl ResultRow {
    fn empty(replication: String, arm: &str, mechanism: &str) -> Self {
        ResultRow {
            replication,
            arm: arm.into(),
            mechanism: mechanism.into(),
            n_train: None,
            full_obs: None,
            rmse: None,
            sen: None,
            spe: None,
            gmeans: None,
            fdr: None,
            df: None,
            lambda: None,
            recall: None,
            auc: None,
            copula_kl: None,
            margin_sup: None,
            error: String::new(),
        }
    }

    fn fields_mut(&mut self) -> [&mut Option<f64>; 13] {
        [
            &mut self.n_train,
            &mut self.full_obs,
            &mut self.rmse,
            &mut self.sen,
            &mut self.spe,
            &mut self.gmeans,
            &mut self.fdr,
            &mut self.df,
            &mut self.lambda,
            &mut self.recall,
            &mut self.auc,
            &mut self.copula_kl,
            &mut self.margin_sup,
        ]
    }

    pub fn is_summary(&self) -> bool {
        self.replication == "mean" || self.replication == "sd"
    }
}

/// Simulated data for one replication: the training set with missingness,
/// its complete version, the held-out rows and `beta*`.
pub struct Replicate {
    pub train: MixedDataset,
    pub complete: MixedDataset,
    pub test: Option<MixedDataset>,
    pub beta: Vec<f64>,
}

pub fn simulate_replicate(cfg: &ExperimentConfig, rep: usize) -> Result<Replicate> {
    let r = rep as u64;
    let x = generate_mixture(cfg, &mut substream(cfg.seed, &[r, 0, 0, stage::DATA]))?;
    let beta = make_beta(cfg);
    let y = gen_response(&x, &beta, cfg.link, &mut substream(cfg.seed, &[r, 0, 0, stage::RESPONSE]))?;
    let full = with_response(x, y, cfg.link)?;
    let (complete, test) = if cfg.link == Link::Logistic && cfg.holdout > 0.0 {
        let mut rng = substream(cfg.seed, &[r, 0, 0, stage::SPLIT]);
        let mut idx: Vec<usize> = (0..cfg.n).collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let n_test = ((cfg.n as f64 * cfg.holdout).round() as usize).clamp(1, cfg.n - 2);
        let (test, train) = idx.split_at(n_test);
        let (mut test, mut train) = (test.to_vec(), train.to_vec());
        test.sort_unstable();
        train.sort_unstable();
        (full.select_rows(&train), Some(full.select_rows(&test)))
    } else {
        (full, None)
    };
    let train = inject_missing(&complete, &cfg.missing, &mut substream(cfg.seed, &[r, 0, 0, stage::MISSING]))?;
    Ok(Replicate {
        train,
        complete,
        test,
        beta,
    })
}

fn arm_seed(cfg: &ExperimentConfig, rep: usize, arm: usize) -> u64 {
    substream(cfg.seed, &[rep as u64, arm as u64, 0, stage::RANKS]).next_u64()
}

fn run_arm(cfg: &ExperimentConfig, data: &Replicate, rep: usize, a: usize, row: &mut ResultRow) -> Result<()> {
    let arm = &cfg.arms[a];
    let seed = arm_seed(cfg, rep, a);
    let fed = Federation::new(TransportKind::Memory);
    let treated = match arm.baseline {
        Baseline::None => data.train.clone(),
        Baseline::Cc => complete_cases(&data.train)?,
        Baseline::MeanImpute => mean_impute(&data.train)?,
    };
    row.n_train = Some(treated.n_rows() as f64);
    let fit_data = match &arm.privatize {
        Some(pa) => {
            let (synth, _) = pipeline::run(&treated, &cfg.privatization(pa, seed), &fed)?;
            let reference = CopulaModel::fit(&data.complete)?;
            let model = CopulaModel::fit(&synth)?;
            row.copula_kl = Some(copula_kl(&reference, &model)?);
            row.margin_sup = Some(marginal_sup_distance(&reference, &model, 512)?);
            synth
        }
        None => treated,
    };
    let mut solver = cfg.solver.clone();
    solver.seed = seed;
    solver.dp_noise = arm.dp_noise;
    let fit_cfg = FitConfig {
        link: cfg.link,
        penalty: cfg.penalty,
        grid_size: cfg.grid_size,
        grid_ratio: cfg.grid_ratio,
        solver,
    };
    let (fit, _) = fit_dataset(&fit_data, &fit_cfg, &fed)?;
    let m = metrics(&fit.beta, &data.beta)?;
    row.rmse = Some(m.rmse);
    row.sen = Some(m.sen);
    row.spe = Some(m.spe);
    row.gmeans = Some(m.gmeans);
    row.fdr = Some(m.fdr);
    row.df = Some(fit.support.len() as f64);
    row.lambda = Some(fit.lambda);
    if let Some(test) = &data.test {
        let c = classification_metrics(&predict(&fit, test), test.response())?;
        row.recall = c.recall;
        row.auc = c.auc;
    }
    Ok(())
}

/// Fitted success probabilities on a complete dataset.
pub fn predict(fit: &FitResult, ds: &MixedDataset) -> Vec<f64> {
    (0..ds.n_rows())
        .map(|i| {
            let eta = fit.intercept
                + ds.columns[1..]
                    .iter()
                    .zip(&fit.beta)
                    .map(|(c, b)| c.values[i] * b)
                    .sum::<f64>();
            logistic(eta)
        })
        .collect()
}

fn replicate_rows(cfg: &ExperimentConfig, rep: usize) -> Vec<ResultRow> {
    let mech = cfg.missing.tag();
    let data = simulate_replicate(cfg, rep);
    cfg.arms
        .iter()
        .enumerate()
        .map(|(a, arm)| {
            let mut row = ResultRow::empty(rep.to_string(), &arm.name, mech);
            let outcome = data.as_ref().map_err(|e| e.to_string()).and_then(|d| {
                let n = d.train.n_rows() as f64;
                row.full_obs = Some(d.train.complete_rows().len() as f64 / n);
                run_arm(cfg, d, rep, a, &mut row).map_err(|e| e.to_string())
            });
            if let Err(e) = outcome {
                let keep = (row.n_train, row.full_obs);
                row = ResultRow::empty(rep.to_string(), &arm.name, mech);
                (row.n_train, row.full_obs) = keep;
                row.error = e;
            }
            row
        })
        .collect()
}

/// Per-replication rows in replication-then-arm order, followed by
/// `mean` and `sd` rows for each arm over the successful replications.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows: Vec<ResultRow> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| replicate_rows(cfg, rep))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let summary = summarize(&rows);
    rows.extend(summary);
    Ok(rows)
}

/// `mean` and `sd` rows per arm, in first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<ResultRow> {
    let mut arms: Vec<&str> = Vec::new();
    for r in rows.iter().filter(|r| !r.is_summary()) {
        if !arms.contains(&r.arm.as_str()) {
            arms.push(&r.arm);
        }
    }
    let mut out = Vec::new();
    for arm in arms {
        let group: Vec<&ResultRow> = rows.iter().filter(|r| !r.is_summary() && r.arm == arm).collect();
        let ok: Vec<ResultRow> = group.iter().filter(|r| r.error.is_empty()).map(|r| (*r).clone()).collect();
        let failed = group.len() - ok.len();
        let mech = group[0].mechanism.clone();
        let mut mean = ResultRow::empty("mean".into(), arm, &mech);
        let mut sd = ResultRow::empty("sd".into(), arm, &mech);
        for f in 0..13 {
            let vals: Vec<f64> = ok
                .iter()
                .filter_map(|r| {
                    let mut r = r.clone();
                    *r.fields_mut()[f]
                })
                .collect();
            if vals.is_empty() {
                continue;
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            *mean.fields_mut()[f] = Some(m);
            if vals.len() > 1 {
                let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
                *sd.fields_mut()[f] = Some(v.sqrt());
            }
        }
        if failed > 0 {
            mean.error = format!("{failed} of {} replications failed", group.len());
            sd.error = mean.error.clone();
        }
        out.push(mean);
        out.push(sd);
    }
    out
}

pub fn write_results<W: Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Text table of per-arm `mean (sd)` for RMSE, G-Means and FDR, plus
/// recall and AUC when present.
pub fn report(rows: &[ResultRow]) -> String {
    let summary: Vec<ResultRow> = if rows.iter().any(ResultRow::is_summary) {
        rows.iter().filter(|r| r.is_summary()).cloned().collect()
    } else {
        summarize(rows)
    };
    let cell = |m: Option<f64>, s: Option<f64>| match (m, s) {
        (Some(m), Some(s)) => format!("{m:.4} ({s:.4})"),
        (Some(m), None) => format!("{m:.4}"),
        _ => "-".into(),
    };
    let classify = summary.iter().any(|r| r.auc.is_some());
    let mut out = format!("{:<24} {:<12} {:>18} {:>18} {:>18}", "arm", "mechanism", "RMSE", "G-Means", "FDR");
    if classify {
        out.push_str(&format!(" {:>18} {:>18}", "Recall", "AUC"));
    }
    out.push('\n');
    for pair in summary.chunks(2) {
        let (m, s) = (&pair[0], pair.get(1).unwrap_or(&pair[0]));
        out.push_str(&format!(
            "{:<24} {:<12} {:>18} {:>18} {:>18}",
            m.arm,
            m.mechanism,
            cell(m.rmse, s.rmse),
            cell(m.gmeans, s.gmeans),
            cell(m.fdr, s.fdr)
        ));
        if classify {
            out.push_str(&format!(" {:>18} {:>18}", cell(m.recall, s.recall), cell(m.auc, s.auc)));
        }
        if !m.error.is_empty() {
            out.push_str(&format!("  [{}]", m.error));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::paper(n, Link::Gaussian);
        cfg.p = 12;
        cfg.k = 3;
        cfg.q = [3; 4];
        cfg.grid_size = 8;
        cfg
    }

    #[test]
    fn pure_continuous_mixture_mean_is_zero() {
        let mut cfg = small(10_000);
        cfg.q = [12, 0, 0, 0];
        let ds = generate_mixture(&cfg, &mut substream(1, &[0])).unwrap();
        for c in &ds.columns[1..] {
            let m = c.values.iter().sum::<f64>() / c.values.len() as f64;
            assert!(m.abs() < 0.05, "{m}");
        }
    }

    #[test]
    fn generated_types_are_legal_and_mixed_per_client() {
        let cfg = small(500);
        let ds = generate_mixture(&cfg, &mut substream(2, &[0])).unwrap();
        let counts = ds.columns.iter().filter(|c| c.kind == VariableKind::Count);
        for c in counts {
            assert!(c.values.iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
        }
        assert_eq!(ds.columns.iter().filter(|c| c.kind == VariableKind::Binary).count(), 3);
        let det = generate_mixture(&cfg, &mut substream(2, &[0])).unwrap();
        assert_eq!(ds, det);
    }

    #[test]
    fn beta_pattern() {
        let cfg = ExperimentConfig::paper(100, Link::Gaussian);
        let b = make_beta(&cfg);
        assert_eq!(b.iter().filter(|v| **v != 0.0).count(), 60);
        assert_eq!(&b[..3], &[-1.0 / 3.0, 1.0 / 3.0, -1.0 / 3.0]);
        assert_eq!(b[11], 1.0 / 3.0);
        assert_eq!(b[12], 0.0);
        let mut tiny = cfg.clone();
        tiny.s = 1e-9;
        assert_eq!(make_beta(&tiny).iter().filter(|v| **v != 0.0).count(), 5);
    }

    #[test]
    fn null_response_moments() {
        let cfg = small(10_000);
        let ds = generate_mixture(&cfg, &mut substream(3, &[0])).unwrap();
        let zero = vec![0.0; cfg.p];
        let y = gen_response(&ds, &zero, Link::Gaussian, &mut substream(3, &[1])).unwrap();
        let m = y.iter().sum::<f64>() / y.len() as f64;
        let v = y.iter().map(|x| (x - m).powi(2)).sum::<f64>() / y.len() as f64;
        assert!(m.abs() < 0.04 && (v - 1.0).abs() < 0.05);
        let y = gen_response(&ds, &zero, Link::Logistic, &mut substream(3, &[2])).unwrap();
        assert!((y.iter().sum::<f64>() / y.len() as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn mcar_boundaries_and_arity() {
        let cfg = small(200);
        let ds = generate_mixture(&cfg, &mut substream(4, &[0])).unwrap();
        let mut rng = substream(4, &[1]);
        let none = inject_missing(&ds, &Mechanism::Mcar { rates: vec![0.0; 3] }, &mut rng).unwrap();
        assert!(!none.mask.any_missing());
        let one = inject_missing(&ds, &Mechanism::Mcar { rates: vec![0.0, 1.0, 0.0] }, &mut rng).unwrap();
        assert_eq!(one.mask.missing_fraction(1), 1.0);
        assert_eq!(one.mask.missing_fraction(0), 0.0);
        assert!(inject_missing(&ds, &Mechanism::Mcar { rates: vec![0.1; 2] }, &mut rng).is_err());
    }

    #[test]
    fn mar_simple_matches_model_expectation() {
        let mut cfg = small(10_000);
        cfg.k = 4;
        let ds = generate_mixture(&cfg, &mut substream(5, &[0])).unwrap();
        let beta = make_beta(&cfg);
        let y = gen_response(&ds, &beta, Link::Gaussian, &mut substream(5, &[1])).unwrap();
        let ds = with_response(ds, y, Link::Gaussian).unwrap();
        for seed in 0..6 {
            let mut rng = substream(6, &[seed]);
            let masked = inject_missing(&ds, &Mechanism::MarSimple, &mut rng).unwrap();
            // Same draws give the eligibility mask back.
            let mut rng = substream(6, &[seed]);
            let eligible: Vec<bool> = (0..4).map(|_| rng.random::<f64>() < 0.5).collect();
            let observed: Vec<usize> = (0..4).filter(|&c| !eligible[c]).collect();
            let expect = (0..ds.n_rows()).map(|i| logistic(mar_index(&ds, i, &observed))).sum::<f64>() / 10_000.0;
            for c in 0..4 {
                let got = masked.mask.missing_fraction(c);
                if eligible[c] {
                    assert!((got - expect).abs() < 0.03, "client {c}: {got} vs {expect}");
                } else {
                    assert_eq!(got, 0.0);
                }
            }
        }
    }

    #[test]
    fn mar_complex_depends_on_response() {
        let cfg = small(4000);
        let ds = generate_mixture(&cfg, &mut substream(7, &[0])).unwrap();
        let y = gen_response(&ds, &make_beta(&cfg), Link::Gaussian, &mut substream(7, &[1])).unwrap();
        let ds = with_response(ds, y, Link::Gaussian).unwrap();
        let masked = (0..20)
            .map(|s| inject_missing(&ds, &Mechanism::MarComplex, &mut substream(8, &[s])).unwrap())
            .find(|m| (0..3).any(|c| m.mask.missing_fraction(c) > 0.0))
            .unwrap();
        let c = (0..3).find(|&c| masked.mask.missing_fraction(c) > 0.0).unwrap();
        let (mut miss, mut obs) = (Vec::new(), Vec::new());
        for i in 0..4000 {
            let yv = masked.response()[i];
            if masked.mask.is_missing(i, c) { miss.push(yv) } else { obs.push(yv) }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&miss) < mean(&obs));
    }

    #[test]
    fn metric_examples() {
        let star = [1.0, 0.0, 1.0, 0.0];
        let m = metrics(&star, &star).unwrap();
        assert_eq!((m.rmse, m.gmeans, m.fdr), (0.0, 1.0, 0.0));
        let m = metrics(&[0.0; 4], &star).unwrap();
        assert_eq!((m.sen, m.gmeans, m.fdr), (0.0, 0.0, 0.0));
        let m = metrics(&[1.0, 1.0, 0.0, 0.0], &star).unwrap();
        assert_eq!((m.sen, m.spe, m.gmeans, m.fdr), (0.5, 0.5, 0.5, 0.5));
        assert!(metrics(&[1.0], &star).is_err());
    }

    #[test]
    fn classification_examples() {
        let c = classification_metrics(&[0.9, 0.8, 0.3], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(c.auc, Some(0.5));
        assert_eq!(c.recall, Some(0.5));
        let c = classification_metrics(&[0.9, 0.7, 0.2, 0.1], &[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!((c.auc, c.recall), (Some(1.0), Some(1.0)));
        let c = classification_metrics(&[0.4; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(c.auc, Some(0.5));
        let c = classification_metrics(&[0.4, 0.6], &[0.0, 0.0]).unwrap();
        assert_eq!((c.auc, c.recall), (None, None));
    }

    fn model(r: f64) -> CopulaModel {
        let m = ecdf_smooth(&[0.0, 1.0, 2.0], VariableKind::Continuous).unwrap();
        CopulaModel::new(DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]), vec![m.clone(), m]).unwrap()
    }

    #[test]
    fn copula_kl_formula() {
        assert_eq!(copula_kl(&model(0.3), &model(0.3)).unwrap(), 0.0);
        let kl = copula_kl(&model(0.0), &model(0.5)).unwrap();
        let oracle = 0.5 * (2.0 / 0.75 - 2.0 + 0.75f64.ln());
        assert!((kl - oracle).abs() < 1e-12);
        assert!((oracle - 0.18955).abs() < 1e-4);
        assert!(CopulaModel::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]), model(0.0).marginals).is_err());
        assert_eq!(marginal_sup_distance(&model(0.0), &model(0.5), 64).unwrap(), 0.0);
    }

    #[test]
    fn baselines() {
        let cfg = small(300);
        let ds = generate_mixture(&cfg, &mut substream(9, &[0])).unwrap();
        let masked = inject_missing(&ds, &Mechanism::Mcar { rates: vec![0.3; 3] }, &mut substream(9, &[1])).unwrap();
        let cc = complete_cases(&masked).unwrap();
        assert_eq!(cc.n_rows(), masked.complete_rows().len());
        assert!(!cc.mask.any_missing());
        let imp = mean_impute(&masked).unwrap();
        assert!(!imp.mask.any_missing());
        let c = 1;
        let rows = masked.observed_rows(c);
        let mean = rows.iter().map(|&i| masked.columns[c].values[i]).sum::<f64>() / rows.len() as f64;
        let i = (0..300).find(|&i| !masked.is_observed(i, c)).unwrap();
        let expect = if masked.columns[c].kind.is_discrete() { mean.round() } else { mean };
        assert_eq!(imp.columns[c].values[i], expect);
    }

    #[test]
    fn experiment_rows_are_deterministic() {
        let mut cfg = small(300);
        cfg.replications = 2;
        cfg.missing = Mechanism::Mcar { rates: vec![0.1; 3] };
        cfg.arms = vec![
            Arm::original(),
            Arm {
                name: "cc".into(),
                baseline: Baseline::Cc,
                privatize: None,
                dp_noise: None,
            },
            Arm::private("vcds", Method::Vcds, 5.0, 1),
        ];
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 2 * 3 + 2 * 3);
        // Raw data still has missing cells, so the plain fit fails and is tagged.
        assert!(!rows[0].error.is_empty());
        assert!(rows[1].error.is_empty() && rows[2].error.is_empty(), "{rows:?}");
        assert!(rows[2].copula_kl.is_some());
        assert!(rows[1].n_train.unwrap() < 300.0);
        let again = run_experiment(&cfg).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_results(&rows, &mut a).unwrap();
        write_results(&again, &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(read_results(a.as_slice()).unwrap(), rows);
        let text = report(&rows);
        assert!(text.contains("vcds") && text.contains("RMSE"));
    }

    #[test]
    fn original_vfl_single_row() {
        let cfg = small(400);
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].error.is_empty());
        assert!(rows[0].gmeans.unwrap() > 0.5);
    }

    #[test]
    fn config_round_trip_and_errors() {
        let text = r#"
            n = 200
            p = 8
            k = 2
            q = [2, 2, 2, 2]
            s = 0.5
            link = "logistic"
            replications = 1
            seed = 3
            missing = { kind = "mcar", rates = [0.1, 0.2] }
            [[arms]]
            name = "ievcds"
            privatize = { method = "ievcds", eps = 1.0, iterations = 3 }
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.arms[0].privatize.as_ref().unwrap().budget_mode, BudgetMode::TotalOverIterations);
        assert_eq!(cfg.penalty, PenaltyFamily::scad());
        let back = ExperimentConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        for bad in [
            text.replace("q = [2, 2, 2, 2]", "q = [2, 2, 2, 3]"),
            text.replace("[0.1, 0.2]", "[0.1]"),
            text.replace("replications = 1", "replications = 0"),
            text.replace("eps = 1.0", "eps = 0.0"),
            text.replace("seed = 3", "seed = 3\nbogus = 1"),
        ] {
            let e = ExperimentConfig::from_toml(&bad).unwrap_err();
            assert!(e.is_config_error(), "{e}");
        }
    }
}
