//! The three synthesis pipelines, each run as a sequence of federation
//! rounds: clients release perturbed ranks, the server fits the copula
//! correlation and hands out latent blocks, clients invert their marginals.

use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Column, MissingMask, MixedDataset};
use crate::error::{Error, Result};
use crate::federation::{Federation, Message};
use crate::latent::{conditional_impute, mvn_sample, rank_adjust};
use crate::marginal::{bernstein_degree, bernstein_privatize, ecdf_smooth, margin_adjust, MarginalCdf};
use crate::numeric::{normal_cdf, stage, substream, StreamRng};
use crate::privacy::PrivacyLedger;
use crate::rank::{
    estimate_omega_with_floor, flip_probability, jitter, privatize_ranks, PerturbedRanks, DEFAULT_PSD_FLOOR,
};

/// Stream tag used for draws made by the server.
const SERVER: u64 = 1 << 32;

/// Latent probabilities are kept this far from 0 and 1 before inversion.
const U_EDGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Vcds,
    Evcds,
    Ievcds,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vcds" => Ok(Method::Vcds),
            "evcds" => Ok(Method::Evcds),
            "ievcds" => Ok(Method::Ievcds),
            _ => Err(Error::Config(format!("unknown method {s:?}"))),
        }
    }
}

/// How `eps1` is read for iterated synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// `eps1` is spent in every iteration.
    #[default]
    PerIteration,
    /// `eps1` is the total over all iterations, spent as `eps1 / T` each.
    TotalOverIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BernsteinConfig {
    pub order: usize,
    pub delta: f64,
    /// Fixed degree; the budget-driven rule is used when absent.
    pub degree: Option<usize>,
}

impl Default for BernsteinConfig {
    fn default() -> Self {
        BernsteinConfig {
            order: 2,
            delta: 0.05,
            degree: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivatizationConfig {
    pub method: Method,
    /// Per-client rank budgets.
    pub eps1: Vec<f64>,
    /// Per-client marginal budgets; infinity skips Bernstein privatization.
    pub eps2: Vec<f64>,
    #[serde(default = "one")]
    pub iterations: usize,
    #[serde(default)]
    pub budget_mode: BudgetMode,
    /// Synthetic row count; defaults to the input row count.
    #[serde(default)]
    pub n_synth: Option<usize>,
    #[serde(default)]
    pub bernstein: BernsteinConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_floor")]
    pub psd_floor: f64,
}

fn one() -> usize {
    1
}

fn default_floor() -> f64 {
    DEFAULT_PSD_FLOOR
}

impl PrivatizationConfig {
    /// Same budgets for every client.
    pub fn uniform(method: Method, n_clients: usize, eps1: f64, eps2: f64, seed: u64) -> Self {
        PrivatizationConfig {
            method,
            eps1: vec![eps1; n_clients],
            eps2: vec![eps2; n_clients],
            iterations: 1,
            budget_mode: BudgetMode::PerIteration,
            n_synth: None,
            bernstein: BernsteinConfig::default(),
            seed,
            psd_floor: DEFAULT_PSD_FLOOR,
        }
    }

    pub fn validate(&self, n_clients: usize) -> Result<()> {
        if self.eps1.len() != n_clients || self.eps2.len() != n_clients {
            return Err(Error::Config(format!(
                "budgets given for {} and {} clients, dataset has {n_clients}",
                self.eps1.len(),
                self.eps2.len()
            )));
        }
        if let Some(e) = self.eps1.iter().chain(&self.eps2).find(|e| !(**e > 0.0)) {
            return Err(Error::Config(format!("budget {e} must be positive")));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.method != Method::Ievcds && self.iterations != 1 {
            return Err(Error::Config(format!(
                "{:?} runs a single iteration, got {}",
                self.method, self.iterations
            )));
        }
        if self.n_synth == Some(0) {
            return Err(Error::Config("n_synth must be at least 1".into()));
        }
        if self.bernstein.order == 0 || self.bernstein.degree == Some(0) {
            return Err(Error::Config("Bernstein order and degree must be at least 1".into()));
        }
        if !(self.bernstein.delta > 0.0 && self.bernstein.delta < 1.0) {
            return Err(Error::Config(format!("delta {} outside (0, 1)", self.bernstein.delta)));
        }
        if !(self.psd_floor > 0.0 && self.psd_floor < 1.0) {
            return Err(Error::Config(format!("psd floor {} outside (0, 1)", self.psd_floor)));
        }
        Ok(())
    }

    /// Rank budget spent by client `k` in one iteration.
    pub fn eps1_per_iteration(&self) -> Vec<f64> {
        match self.budget_mode {
            BudgetMode::PerIteration => self.eps1.clone(),
            BudgetMode::TotalOverIterations => self.eps1.iter().map(|e| e / self.iterations as f64).collect(),
        }
    }

    pub fn ledger(&self) -> Result<PrivacyLedger> {
        PrivacyLedger::new(&self.eps1_per_iteration(), &self.eps2, self.iterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub ledger: PrivacyLedger,
    /// Correlation matrix behind the synthetic latents.
    pub omega: DMatrix<f64>,
    pub degenerate_intervals: usize,
    /// True if any correlation estimate needed the PSD repair.
    pub psd_projected: bool,
    /// `||Omega_t - Omega_{t-1}||_F` for each iteration after the first.
    pub omega_deltas: Vec<f64>,
    /// Per-variable flip probability used by each client.
    pub thetas: Vec<f64>,
}

/// Runs the pipeline named by `cfg.method`.
pub fn run(ds: &MixedDataset, cfg: &PrivatizationConfig, fed: &Federation) -> Result<(MixedDataset, SynthesisReport)> {
    match cfg.method {
        Method::Vcds => run_vcds(ds, cfg, fed),
        Method::Evcds => run_evcds(ds, cfg, fed),
        Method::Ievcds => run_ievcds(ds, cfg, fed),
    }
}

/// Ranks and marginals from observed cells; latents drawn freely.
pub fn run_vcds(ds: &MixedDataset, cfg: &PrivatizationConfig, fed: &Federation) -> Result<(MixedDataset, SynthesisReport)> {
    let s = Setup::new(ds, cfg, Method::Vcds)?;
    let mut report = s.report()?;
    let ranks = s.rank_round(fed, 0, &s.values(), &s.observed)?;
    let est = estimate_omega_with_floor(&ranks, s.n, cfg.psd_floor)?;
    report.psd_projected = est.projected;

    let margins = s.per_column(|k, c| {
        let x = s.observed_values(c);
        let f = ecdf_smooth(&x, s.ds.columns[c].kind)?;
        s.privatize_margin(k, c, &f, x.len())
    })?;

    let z = mvn_sample(&est.omega, s.n_synth, &mut s.stream(SERVER, 0, 0, stage::SYNTH_LATENT))?;
    let latents = s.distribute(fed, &z)?;
    let out = s.invert(&margins, &latents)?;
    report.omega = est.omega;
    Ok((s.finish(out)?, report))
}

/// Margin-adjusted synthesis: latents follow the released rank order.
pub fn run_evcds(ds: &MixedDataset, cfg: &PrivatizationConfig, fed: &Federation) -> Result<(MixedDataset, SynthesisReport)> {
    let s = Setup::new(ds, cfg, Method::Evcds)?;
    let mut report = s.report()?;
    let ranks = s.rank_round(fed, 0, &s.values(), &s.observed)?;
    let est = estimate_omega_with_floor(&ranks, s.n, cfg.psd_floor)?;
    report.psd_projected = est.projected;

    let z = mvn_sample(&est.omega, s.n, &mut s.stream(SERVER, 0, 0, stage::LATENT))?;
    let (z, stats) = rank_adjust(&z, &ranks, &est.omega, &mut s.stream(SERVER, 0, 0, stage::ADJUST))?;
    report.degenerate_intervals += stats.degenerate_intervals;
    let latents = s.distribute(fed, &z)?;
    let margins = s.per_column(|_, c| s.adjusted_margin(c, &latents[c], &ranks[c]))?;
    let margins = s.per_column(|k, c| s.privatize_margin(k, c, &margins[c], s.observed[c].len()))?;

    let (out, degenerate) = s.synthesize(fed, &est.omega, &ranks, &margins)?;
    report.degenerate_intervals += degenerate;
    report.omega = est.omega;
    Ok((s.finish(out)?, report))
}

/// Iterated synthesis: missing cells are imputed from the current copula
/// fit and the pseudo-complete data re-ranked each iteration; margins are
/// privatized only once, after the last iteration.
pub fn run_ievcds(ds: &MixedDataset, cfg: &PrivatizationConfig, fed: &Federation) -> Result<(MixedDataset, SynthesisReport)> {
    let s = Setup::new(ds, cfg, Method::Ievcds)?;
    let mut report = s.report()?;
    let d = s.owners.len();
    let all_rows: Vec<usize> = (0..s.n).collect();
    let mut x = s.values();
    let mut state: Option<(DMatrix<f64>, Vec<PerturbedRanks>, Vec<MarginalCdf>)> = None;

    for it in 0..cfg.iterations {
        let rows = if it == 0 {
            s.observed.clone()
        } else {
            vec![all_rows.clone(); d]
        };
        let ranks = s.rank_round(fed, it, &x, &rows)?;
        let est = estimate_omega_with_floor(&ranks, s.n, cfg.psd_floor)?;
        report.psd_projected |= est.projected;
        if let Some((prev, _, _)) = &state {
            report.omega_deltas.push((&est.omega - prev).norm());
        }
        let obs_ranks: Vec<PerturbedRanks> = if it == 0 {
            ranks.clone()
        } else {
            ranks.iter().zip(&s.observed).map(|(r, rows)| restrict(r, rows)).collect()
        };

        let it64 = it as u64;
        let z = mvn_sample(&est.omega, s.n, &mut s.stream(SERVER, 0, it64, stage::LATENT))?;
        let (z, stats) = rank_adjust(&z, &obs_ranks, &est.omega, &mut s.stream(SERVER, 0, it64, stage::ADJUST))?;
        report.degenerate_intervals += stats.degenerate_intervals;
        let z = conditional_impute(
            &z,
            &ds.mask,
            &ds.partition,
            &est.omega,
            &mut s.stream(SERVER, 0, it64, stage::IMPUTE),
        )?;
        let latents = s.distribute(fed, &z)?;
        let margins = s.per_column(|_, c| s.adjusted_margin(c, &latents[c], &obs_ranks[c]))?;

        let imputed = s.per_column(|_, c| {
            let missing: Vec<usize> = missing_rows(&s.observed[c], s.n);
            let us: Vec<f64> = missing.iter().map(|&i| latent_level(latents[c][i])).collect();
            Ok((missing, margins[c].inverse_many(&us)?))
        })?;
        for (c, (rows, vals)) in imputed.into_iter().enumerate() {
            for (i, v) in rows.into_iter().zip(vals) {
                x[c][i] = v;
            }
        }
        state = Some((est.omega, ranks, margins));
    }

    let (omega, ranks, margins) = state.expect("at least one iteration");
    let margins = s.per_column(|k, c| s.privatize_margin(k, c, &margins[c], s.observed[c].len()))?;
    let (out, degenerate) = s.synthesize(fed, &omega, &ranks, &margins)?;
    report.degenerate_intervals += degenerate;
    report.omega = omega;
    Ok((s.finish(out)?, report))
}

/// Quantile level for a latent value, kept inside the open unit interval.
fn latent_level(z: f64) -> f64 {
    normal_cdf(z).clamp(U_EDGE, 1.0 - U_EDGE)
}

fn missing_rows(observed: &[usize], n: usize) -> Vec<usize> {
    let mut seen = vec![false; n];
    for &i in observed {
        seen[i] = true;
    }
    (0..n).filter(|&i| !seen[i]).collect()
}

/// Keeps the released ranks of `rows` only.
fn restrict(r: &PerturbedRanks, rows: &[usize]) -> PerturbedRanks {
    let mut keep = vec![false; r.rows.iter().max().map_or(0, |m| m + 1)];
    for &i in rows {
        if i < keep.len() {
            keep[i] = true;
        }
    }
    let (rows, values) = r
        .rows
        .iter()
        .zip(&r.values)
        .filter(|(i, _)| keep[**i])
        .map(|(i, v)| (*i, *v))
        .unzip();
    PerturbedRanks {
        rows,
        values,
        theta: r.theta,
        debiased: r.debiased,
    }
}

/// Rank constraints for `n_synth` rows: synthetic row `i` reuses the rank
/// of input row `i mod n`.
fn tile(r: &PerturbedRanks, n: usize, n_synth: usize) -> PerturbedRanks {
    if n_synth == n {
        return r.clone();
    }
    let mut at = vec![None; n];
    for (k, &i) in r.rows.iter().enumerate() {
        at[i] = Some(r.values[k]);
    }
    let (rows, values) = (0..n_synth)
        .filter_map(|i| at[i % n].map(|v| (i, v)))
        .unzip();
    PerturbedRanks {
        rows,
        values,
        theta: r.theta,
        debiased: r.debiased,
    }
}

struct Setup<'a> {
    ds: &'a MixedDataset,
    cfg: &'a PrivatizationConfig,
    n: usize,
    n_synth: usize,
    owners: Vec<usize>,
    client_cols: Vec<Vec<usize>>,
    theta: Vec<f64>,
    eps2_var: Vec<f64>,
    observed: Vec<Vec<usize>>,
}

impl<'a> Setup<'a> {
    fn new(ds: &'a MixedDataset, cfg: &'a PrivatizationConfig, method: Method) -> Result<Self> {
        if cfg.method != method {
            return Err(Error::Config(format!("config is for {:?}, not {method:?}", cfg.method)));
        }
        let k = ds.partition.n_clients();
        cfg.validate(k)?;
        let d = ds.columns.len();
        let client_cols: Vec<Vec<usize>> = (0..k).map(|c| ds.partition.columns_of(c)).collect();
        let eps1 = cfg.eps1_per_iteration();
        // Each client splits its budgets evenly over the variables it holds.
        let theta = (0..k)
            .map(|c| flip_probability(eps1[c] / client_cols[c].len() as f64))
            .collect();
        let eps2_var = (0..k).map(|c| cfg.eps2[c] / client_cols[c].len() as f64).collect();
        Ok(Setup {
            ds,
            cfg,
            n: ds.n_rows(),
            n_synth: cfg.n_synth.unwrap_or(ds.n_rows()),
            owners: (0..d).map(|c| ds.partition.owner_of_column(c)).collect(),
            client_cols,
            theta,
            eps2_var,
            observed: (0..d).map(|c| ds.observed_rows(c)).collect(),
        })
    }

    fn report(&self) -> Result<SynthesisReport> {
        let d = self.owners.len();
        Ok(SynthesisReport {
            ledger: self.cfg.ledger()?,
            omega: DMatrix::identity(d, d),
            degenerate_intervals: 0,
            psd_projected: false,
            omega_deltas: Vec::new(),
            thetas: self.theta.clone(),
        })
    }

    fn stream(&self, who: u64, col: u64, iter: u64, stage: u64) -> StreamRng {
        substream(self.cfg.seed, &[who, col, iter, stage])
    }

    fn values(&self) -> Vec<Vec<f64>> {
        self.ds.columns.iter().map(|c| c.values.clone()).collect()
    }

    fn observed_values(&self, c: usize) -> Vec<f64> {
        self.observed[c].iter().map(|&i| self.ds.columns[c].values[i]).collect()
    }

    /// Runs `f(client, column)` for every column, clients in parallel.
    fn per_column<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, usize) -> Result<T> + Sync,
    {
        let per_client: Vec<Vec<(usize, T)>> = self
            .client_cols
            .par_iter()
            .enumerate()
            .map(|(k, cols)| cols.iter().map(|&c| f(k, c).map(|v| (c, v))).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let mut slots: Vec<Option<T>> = (0..self.owners.len()).map(|_| None).collect();
        for (c, v) in per_client.into_iter().flatten() {
            slots[c] = Some(v);
        }
        Ok(slots.into_iter().map(|v| v.expect("every column has an owner")).collect())
    }

    /// Clients release debiased perturbed ranks of `values[c]` on
    /// `rows[c]`; returns what the server received, indexed by column.
    fn rank_round(
        &self,
        fed: &Federation,
        iter: usize,
        values: &[Vec<f64>],
        rows: &[Vec<usize>],
    ) -> Result<Vec<PerturbedRanks>> {
        let d = self.owners.len();
        let client_step = |k: usize| {
            let cols = self.client_cols[k].clone();
            let ranks = cols
                .iter()
                .map(|&c| self.client_ranks(k, c, iter, &values[c], &rows[c]))
                .collect::<Result<Vec<_>>>()?;
            Ok(vec![Message::rank_share(k, cols, &ranks)])
        };
        fed.run_round(self.client_cols.len(), client_step, |inbox| {
            let mut out: Vec<Option<PerturbedRanks>> = (0..d).map(|_| None).collect();
            for msg in inbox.into_iter().flatten() {
                if let Message::RankShare {
                    variables,
                    rows,
                    ranks,
                    theta,
                    debiased,
                    ..
                } = msg
                {
                    for (((c, rows), values), theta) in variables.into_iter().zip(rows).zip(ranks).zip(theta) {
                        if c < d {
                            out[c] = Some(PerturbedRanks {
                                rows,
                                values,
                                theta,
                                debiased,
                            });
                        }
                    }
                }
            }
            out.into_iter()
                .enumerate()
                .map(|(c, r)| r.ok_or_else(|| Error::InvalidArgument(format!("no ranks received for column {c}"))))
                .collect()
        })
    }

    fn client_ranks(&self, k: usize, c: usize, iter: usize, values: &[f64], rows: &[usize]) -> Result<PerturbedRanks> {
        let (c64, it64) = (c as u64, iter as u64);
        let mut x: Vec<f64> = rows.iter().map(|&i| values[i]).collect();
        if self.ds.columns[c].kind.is_discrete() {
            jitter(&mut x, &mut self.stream(k as u64, c64, it64, stage::JITTER));
        }
        let theta = self.theta[k];
        let ranks = privatize_ranks(&x, theta, true, &mut self.stream(k as u64, c64, it64, stage::RANKS))?;
        Ok(PerturbedRanks {
            rows: rows.to_vec(),
            values: ranks,
            theta,
            debiased: true,
        })
    }

    /// Sends each client the latent columns it owns; returns the delivered
    /// columns indexed globally.
    fn distribute(&self, fed: &Federation, z: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
        let n_rows = z.nrows();
        let mut out = vec![Vec::new(); z.ncols()];
        for (k, cols) in self.client_cols.iter().enumerate() {
            let values = cols.iter().flat_map(|&c| z.column(c).iter().copied().collect::<Vec<_>>()).collect();
            let msg = fed.send(Message::LatentBlock {
                client: k,
                columns: cols.clone(),
                n_rows,
                values,
            })?;
            if let Message::LatentBlock { columns, values, .. } = msg {
                for (&c, chunk) in columns.iter().zip(values.chunks(n_rows.max(1))) {
                    out[c] = chunk.to_vec();
                }
            }
        }
        Ok(out)
    }

    /// Margin-adjusted CDF of column `c` from its ranked observed cells.
    fn adjusted_margin(&self, c: usize, latent: &[f64], ranks: &PerturbedRanks) -> Result<MarginalCdf> {
        let col = &self.ds.columns[c];
        let x: Vec<f64> = ranks.rows.iter().map(|&i| col.values[i]).collect();
        let z: Vec<f64> = ranks.rows.iter().map(|&i| latent[i]).collect();
        margin_adjust(&x, &z, &ranks.values, col.kind)
    }

    fn privatize_margin(&self, k: usize, c: usize, f: &MarginalCdf, m: usize) -> Result<MarginalCdf> {
        let eps2 = self.eps2_var[k];
        if eps2.is_infinite() {
            return Ok(f.clone());
        }
        let b = &self.cfg.bernstein;
        let l = b
            .degree
            .unwrap_or_else(|| bernstein_degree(eps2, m, b.order, b.delta));
        let mut rng = self.stream(k as u64, c as u64, 0, stage::BERNSTEIN);
        bernstein_privatize(f, l, b.order, eps2, 1.0 / m as f64, &mut rng)
    }

    /// Final draw: fresh latents arranged by the released ranks, then
    /// inverted through the (privatized) marginals.
    fn synthesize(
        &self,
        fed: &Federation,
        omega: &DMatrix<f64>,
        ranks: &[PerturbedRanks],
        margins: &[MarginalCdf],
    ) -> Result<(Vec<Column>, usize)> {
        let z = mvn_sample(omega, self.n_synth, &mut self.stream(SERVER, 0, 0, stage::SYNTH_LATENT))?;
        let tiled: Vec<PerturbedRanks> = ranks.iter().map(|r| tile(r, self.n, self.n_synth)).collect();
        let (z, stats) = rank_adjust(&z, &tiled, omega, &mut self.stream(SERVER, 0, 0, stage::SYNTH_ADJUST))?;
        let latents = self.distribute(fed, &z)?;
        Ok((self.invert(margins, &latents)?, stats.degenerate_intervals))
    }

    fn invert(&self, margins: &[MarginalCdf], latents: &[Vec<f64>]) -> Result<Vec<Column>> {
        self.per_column(|_, c| {
            let us: Vec<f64> = latents[c].iter().map(|&z| latent_level(z)).collect();
            let src = &self.ds.columns[c];
            Ok(Column::new(src.name.clone(), src.kind, margins[c].inverse_many(&us)?))
        })
    }

    fn finish(&self, columns: Vec<Column>) -> Result<MixedDataset> {
        let k = self.client_cols.len();
        MixedDataset::new(columns, self.ds.partition.clone(), MissingMask::none(self.n_synth, k))
    }
}
