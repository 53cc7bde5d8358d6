//! The walk conditioned to stay nonnegative: the Doob h-transform
//! `dP+_n = U(S_n) 1{L_n >= 0} dP`.
//!
//! Two samplers realize `P+` and cross-validate each other:
//!
//! - *Weighting*: plain paths reweighted by `U(S_n) 1{L_n >= 0}`; unbiased
//!   for any `U` source but degenerate once `P(L_n >= 0)` is small.
//! - *Kernel*: the Markov chain with transition
//!   `P+(x; dy) = P(x + X in dy) U(y) / U(x)`. Exact for lattice walks with
//!   exact `U`; for continuous laws an acceptance-rejection step with a
//!   per-state envelope `U(x + x_cap)` is used, and a proposal beyond the
//!   envelope aborts the path rather than biasing it.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::environment::EnvironmentDriver;
use crate::fluctuation::{LatticeWalkSpec, RenewalTable, WalkPath};
use crate::heavy_tail::StepLaw;
use crate::mc::{
    chi_square_p_value, mix_seed, run_chunks, weighted_quantile, Accum, StepSampler,
    DEFAULT_CHUNK_SIZE,
};

#[derive(Debug, Error)]
pub enum ConditionedError {
    #[error(
        "kernel envelope exceeded at x = {x}: proposal y = {y} has U(y) = {u_y} > envelope {env}"
    )]
    EnvelopeExceeded { x: f64, y: f64, u_y: f64, env: f64 },
    #[error("kernel rejection loop exceeded {0} proposals")]
    RejectionLoop(u64),
    #[error("kernel start must be nonnegative (got {0})")]
    NegativeStart(f64),
    #[error("no kernel path survived: {aborted} of {trials} aborted")]
    AllAborted { aborted: u64, trials: u64 },
}

/// Where `U` values come from.
#[derive(Clone)]
pub enum USource {
    /// A closed-form renewal function (lattice oracles).
    Exact(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// A Monte Carlo table with standard errors.
    Table(Arc<RenewalTable>),
}

impl USource {
    pub fn exact(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        USource::Exact(Arc::new(f))
    }

    pub fn table(t: RenewalTable) -> Self {
        USource::Table(Arc::new(t))
    }

    pub fn u_at(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match self {
            USource::Exact(f) => f(x),
            USource::Table(t) => t.u_at(x),
        }
    }

    pub fn u_stderr_at(&self, x: f64) -> f64 {
        match self {
            USource::Exact(_) => 0.0,
            USource::Table(t) => t.u_stderr_at(x),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, USource::Exact(_))
    }
}

/// The driving step distribution.
#[derive(Clone)]
pub enum StepModel {
    Lattice(LatticeWalkSpec),
    Law(StepLaw),
}

impl StepSampler for StepModel {
    fn step(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            StepModel::Lattice(w) => w.step(rng),
            StepModel::Law(l) => l.step(rng),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerMode {
    Weighting,
    Kernel,
}

/// Sampler configuration for the conditioned walk.
#[derive(Clone)]
pub struct PlusSampler {
    pub steps: StepModel,
    pub u: USource,
    pub mode: SamplerMode,
    /// Envelope offset for the continuous kernel: the `0.9999`-quantile of
    /// positive jumps unless overridden.
    x_cap: f64,
    max_proposals: u64,
}

/// An estimate under `P+` with its diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct PlusEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Mean of the h-transform weight (weighting mode only; 1 by
    /// construction in kernel mode). Should sit within noise of 1.
    pub mean_weight: f64,
    pub mean_weight_stderr: f64,
    pub trials: u64,
    /// Kernel paths aborted by the envelope; excluded from the mean and
    /// reported rather than silently truncated.
    pub aborts: u64,
}

impl PlusSampler {
    pub fn new(steps: StepModel, u: USource, mode: SamplerMode) -> Self {
        let x_cap = match &steps {
            StepModel::Law(law) => law.positive_jump_quantile(0.9999),
            StepModel::Lattice(w) => w.max_abs_step() as f64,
        };
        Self {
            steps,
            u,
            mode,
            x_cap,
            max_proposals: 10_000_000,
        }
    }

    pub fn with_envelope_offset(mut self, x_cap: f64) -> Self {
        self.x_cap = x_cap;
        self
    }

    /// One row of the exact lattice kernel at state `x`:
    /// `(y, p(x -> y))` pairs over the reachable nonnegative states.
    pub fn kernel_row(&self, x: f64) -> Vec<(f64, f64)> {
        let StepModel::Lattice(walk) = &self.steps else {
            panic!("kernel_row is defined for lattice models");
        };
        let ux = self.u.u_at(x);
        walk.support()
            .iter()
            .zip(walk.probs())
            .filter_map(|(&step, &p)| {
                let y = x + step as f64;
                let uy = self.u.u_at(y);
                if y >= 0.0 && uy > 0.0 {
                    Some((y, p * uy / ux))
                } else {
                    None
                }
            })
            .collect()
    }

    fn kernel_step(&self, x: f64, rng: &mut ChaCha8Rng) -> Result<f64, ConditionedError> {
        match &self.steps {
            StepModel::Lattice(walk) => {
                // two passes over the support keep this allocation-free
                let mut total = 0.0f64;
                for (&step, &p) in walk.support().iter().zip(walk.probs()) {
                    let y = x + step as f64;
                    if y >= 0.0 {
                        total += p * self.u.u_at(y);
                    }
                }
                let mut target: f64 = rng.random::<f64>() * total;
                let mut fallback = x;
                for (&step, &p) in walk.support().iter().zip(walk.probs()) {
                    let y = x + step as f64;
                    if y >= 0.0 {
                        let w = p * self.u.u_at(y);
                        if w > 0.0 {
                            fallback = y;
                            target -= w;
                            if target <= 0.0 {
                                return Ok(y);
                            }
                        }
                    }
                }
                Ok(fallback)
            }
            StepModel::Law(law) => {
                let env = self.u.u_at(x + self.x_cap);
                for _ in 0..self.max_proposals {
                    let y = x + law.step(rng);
                    if y < 0.0 {
                        continue;
                    }
                    let uy = self.u.u_at(y);
                    if uy > env {
                        return Err(ConditionedError::EnvelopeExceeded {
                            x,
                            y,
                            u_y: uy,
                            env,
                        });
                    }
                    if rng.random::<f64>() * env < uy {
                        return Ok(y);
                    }
                }
                Err(ConditionedError::RejectionLoop(self.max_proposals))
            }
        }
    }

    /// Sample an `n`-step path of the conditioned chain started at `x0`.
    pub fn sample_plus_kernel(
        &self,
        x0: f64,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<WalkPath, ConditionedError> {
        if x0 < 0.0 {
            return Err(ConditionedError::NegativeStart(x0));
        }
        let mut s = Vec::with_capacity(n + 1);
        s.push(x0);
        let mut x = x0;
        for _ in 0..n {
            x = self.kernel_step(x, rng)?;
            s.push(x);
        }
        // paths are reported relative to the start
        if x0 != 0.0 {
            for v in &mut s {
                *v -= x0;
            }
        }
        Ok(WalkPath::from_positions(s))
    }

    /// `E+[f]` for a path functional `f`, by the sampler's mode.
    pub fn plus_expectation<F>(
        &self,
        f: F,
        n: usize,
        trials: u64,
        seed: u64,
    ) -> Result<PlusEstimate, ConditionedError>
    where
        F: Fn(&WalkPath) -> f64 + Sync,
    {
        match self.mode {
            SamplerMode::Weighting => {
                let partials = run_chunks(seed, trials, DEFAULT_CHUNK_SIZE, |rng, count| {
                    let mut val = Accum::default();
                    let mut wgt = Accum::default();
                    for _ in 0..count {
                        let path = WalkPath::simulate(&self.steps, n, rng);
                        let w = if path.final_min() >= 0.0 {
                            self.u.u_at(*path.positions().last().unwrap())
                        } else {
                            0.0
                        };
                        wgt.push(w);
                        val.push(if w > 0.0 { w * f(&path) } else { 0.0 });
                    }
                    (val, wgt)
                });
                let mut val = Accum::default();
                let mut wgt = Accum::default();
                for (v, w) in &partials {
                    val.merge(v);
                    wgt.merge(w);
                }
                Ok(PlusEstimate {
                    value: val.mean(),
                    stderr: val.stderr(),
                    mean_weight: wgt.mean(),
                    mean_weight_stderr: wgt.stderr(),
                    trials,
                    aborts: 0,
                })
            }
            SamplerMode::Kernel => {
                let partials = run_chunks(seed, trials, DEFAULT_CHUNK_SIZE, |rng, count| {
                    let mut val = Accum::default();
                    let mut aborts = 0u64;
                    for _ in 0..count {
                        match self.sample_plus_kernel(0.0, n, rng) {
                            Ok(path) => val.push(f(&path)),
                            Err(_) => aborts += 1,
                        }
                    }
                    (val, aborts)
                });
                let mut val = Accum::default();
                let mut aborts = 0u64;
                for (v, a) in &partials {
                    val.merge(v);
                    aborts += a;
                }
                if val.n == 0 {
                    return Err(ConditionedError::AllAborted {
                        aborted: aborts,
                        trials,
                    });
                }
                Ok(PlusEstimate {
                    value: val.mean(),
                    stderr: val.stderr(),
                    mean_weight: 1.0,
                    mean_weight_stderr: 0.0,
                    trials,
                    aborts,
                })
            }
        }
    }

    /// Residuals of the harmonicity identity `E[U(x+X); x+X >= 0] = U(x)`.
    pub fn harmonicity_residual(
        &self,
        xs: &[f64],
        trials: u64,
        seed: u64,
    ) -> Vec<HarmonicityPoint> {
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                if let (StepModel::Lattice(walk), true) = (&self.steps, self.u.is_exact()) {
                    // exact finite sum over the support
                    let expect: f64 = walk
                        .support()
                        .iter()
                        .zip(walk.probs())
                        .map(|(&step, &p)| {
                            let y = x + step as f64;
                            if y >= 0.0 {
                                p * self.u.u_at(y)
                            } else {
                                0.0
                            }
                        })
                        .sum();
                    return HarmonicityPoint {
                        x,
                        residual: expect - self.u.u_at(x),
                        stderr: 0.0,
                        exact: true,
                    };
                }
                let partials = run_chunks(
                    mix_seed(seed, i as u64),
                    trials,
                    DEFAULT_CHUNK_SIZE,
                    |rng, count| {
                        let mut acc = Accum::default();
                        let mut query_se = Accum::default();
                        for _ in 0..count {
                            let y = x + self.steps.step(rng);
                            if y >= 0.0 {
                                acc.push(self.u.u_at(y));
                                query_se.push(self.u.u_stderr_at(y));
                            } else {
                                acc.push(0.0);
                                query_se.push(0.0);
                            }
                        }
                        (acc, query_se)
                    },
                );
                let mut acc = Accum::default();
                let mut query_se = Accum::default();
                for (a, q) in &partials {
                    acc.merge(a);
                    query_se.merge(q);
                }
                // conservative combination: Monte Carlo noise plus fully
                // correlated table errors at the anchor and query points
                let stderr = acc.stderr() + self.u.u_stderr_at(x) + query_se.mean();
                HarmonicityPoint {
                    x,
                    residual: acc.mean() - self.u.u_at(x),
                    stderr,
                    exact: false,
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HarmonicityPoint {
    pub x: f64,
    pub residual: f64,
    pub stderr: f64,
    pub exact: bool,
}

/// A prospective-minimum epoch: the walk never goes below `height` again
/// within the observed horizon.
#[derive(Clone, Copy, Debug)]
pub struct ProspectiveEpoch {
    pub epoch: usize,
    pub height: f64,
    /// Steps of future actually observed past the epoch.
    pub lookahead: usize,
    /// False when the lookahead is shorter than the confirmation window.
    pub confirmed: bool,
}

/// All prospective minima of a path within its horizon. An epoch `m >= 1`
/// qualifies when `S_{m+i} >= S_m` for every observed `i`.
pub fn prospective_minima(path: &WalkPath, w_min: usize) -> Vec<ProspectiveEpoch> {
    let s = path.positions();
    let h = path.len();
    if h == 0 {
        return Vec::new();
    }
    // suffix minima over S_m..S_H
    let mut suffix_min = vec![0.0f64; h + 1];
    suffix_min[h] = s[h];
    for m in (0..h).rev() {
        suffix_min[m] = s[m].min(suffix_min[m + 1]);
    }
    let mut out = Vec::new();
    for m in 1..=h {
        if s[m] <= suffix_min[m] {
            let lookahead = h - m;
            out.push(ProspectiveEpoch {
                epoch: m,
                height: s[m],
                lookahead,
                confirmed: lookahead >= w_min,
            });
        }
    }
    out
}

/// One cell of the Tanaka comparison histogram.
#[derive(Clone, Copy, Debug)]
pub struct TanakaCell {
    pub epoch: usize,
    pub height_bin: i64,
    pub plus_count: u64,
    pub p_count: u64,
}

/// Joint histograms of `(nu, S_nu)` under `P+` and `(iota, S_iota)` under
/// `P`, with a two-sample chi-square comparison.
#[derive(Clone, Debug)]
pub struct TanakaReport {
    pub cells: Vec<TanakaCell>,
    pub statistic: f64,
    pub dof: u64,
    pub p_value: f64,
    pub trials: u64,
    pub censor_rate_plus: f64,
    pub censor_rate_p: f64,
}

/// Settings for [`tanaka_compare`].
#[derive(Clone, Copy, Debug)]
pub struct TanakaConfig {
    pub trials: u64,
    /// Horizon of each `P+` kernel path; `nu` needs `horizon/4` of
    /// confirmation lookahead.
    pub horizon_plus: usize,
    /// Horizon for the plain-walk search for `iota`.
    pub horizon_p: usize,
    /// Epochs above this value pool into one overflow cell.
    pub epoch_cap: usize,
    pub height_bin_width: f64,
    pub seed: u64,
}

impl TanakaConfig {
    pub fn new(trials: u64, seed: u64) -> Self {
        Self {
            trials,
            horizon_plus: 16_384,
            horizon_p: 4096,
            epoch_cap: 24,
            height_bin_width: 1.0,
            seed,
        }
    }
}

/// Empirically compare `P+{nu = k, S_nu in dx}` with `P{iota = k, S_iota in dx}`.
pub fn tanaka_compare(sampler: &PlusSampler, config: TanakaConfig) -> Result<TanakaReport, ConditionedError> {
    let w_min = config.horizon_plus / 4;
    let bw = config.height_bin_width;
    let cap = config.epoch_cap;
    type Key = (usize, i64);
    let overflow: Key = (usize::MAX, 0);

    // P+ side: first prospective minimum of kernel paths
    let plus_parts = run_chunks(
        mix_seed(config.seed, 1),
        config.trials,
        256,
        |rng, count| {
            let mut counts: Vec<(Key, u64)> = Vec::new();
            let mut censored = 0u64;
            for _ in 0..count {
                match sampler.sample_plus_kernel(0.0, config.horizon_plus, rng) {
                    Ok(path) => {
                        let epochs = prospective_minima(&path, w_min);
                        match epochs.first() {
                            Some(e) if e.confirmed => {
                                let key = if e.epoch > cap {
                                    overflow
                                } else {
                                    (e.epoch, (e.height / bw).floor() as i64)
                                };
                                bump(&mut counts, key);
                            }
                            _ => censored += 1,
                        }
                    }
                    Err(_) => censored += 1,
                }
            }
            (counts, censored)
        },
    );

    // P side: first weak ascent of plain paths
    let p_parts = run_chunks(
        mix_seed(config.seed, 2),
        config.trials,
        DEFAULT_CHUNK_SIZE,
        |rng, count| {
            let mut counts: Vec<(Key, u64)> = Vec::new();
            let mut censored = 0u64;
            for _ in 0..count {
                let mut pos = 0.0f64;
                let mut hit = None;
                for m in 1..=config.horizon_p {
                    pos += sampler.steps.step(rng);
                    if pos >= 0.0 {
                        hit = Some((m, pos));
                        break;
                    }
                }
                match hit {
                    Some((m, h)) => {
                        let key = if m > cap {
                            overflow
                        } else {
                            (m, (h / bw).floor() as i64)
                        };
                        bump(&mut counts, key);
                    }
                    None => censored += 1,
                }
            }
            (counts, censored)
        },
    );

    fn bump(counts: &mut Vec<((usize, i64), u64)>, key: (usize, i64)) {
        match counts.binary_search_by(|c| c.0.cmp(&key)) {
            Ok(i) => counts[i].1 += 1,
            Err(i) => counts.insert(i, (key, 1)),
        }
    }

    let mut merged: std::collections::BTreeMap<Key, (u64, u64)> = std::collections::BTreeMap::new();
    let mut censored_plus = 0u64;
    for (counts, c) in &plus_parts {
        censored_plus += c;
        for &(k, v) in counts {
            merged.entry(k).or_default().0 += v;
        }
    }
    let mut censored_p = 0u64;
    for (counts, c) in &p_parts {
        censored_p += c;
        for &(k, v) in counts {
            merged.entry(k).or_default().1 += v;
        }
    }

    // pool sparse cells (pooled count < 5) into the overflow cell
    let mut pooled: (u64, u64) = merged.remove(&overflow).unwrap_or((0, 0));
    let mut cells: Vec<TanakaCell> = Vec::new();
    for (&(k, hb), &(a, b)) in &merged {
        if a + b < 5 {
            pooled.0 += a;
            pooled.1 += b;
        } else {
            cells.push(TanakaCell {
                epoch: k,
                height_bin: hb,
                plus_count: a,
                p_count: b,
            });
        }
    }
    if pooled.0 + pooled.1 > 0 {
        cells.push(TanakaCell {
            epoch: usize::MAX,
            height_bin: 0,
            plus_count: pooled.0,
            p_count: pooled.1,
        });
    }

    let n_a: u64 = cells.iter().map(|c| c.plus_count).sum();
    let n_b: u64 = cells.iter().map(|c| c.p_count).sum();
    let (na, nb) = (n_a as f64, n_b as f64);
    let mut statistic = 0.0;
    for c in &cells {
        let a = c.plus_count as f64;
        let b = c.p_count as f64;
        let term = (a * (nb / na).sqrt() - b * (na / nb).sqrt()).powi(2) / (a + b);
        statistic += term;
    }
    let dof = cells.len().saturating_sub(1) as u64;
    Ok(TanakaReport {
        cells,
        statistic,
        dof,
        p_value: chi_square_p_value(statistic, dof),
        trials: config.trials,
        censor_rate_plus: censored_plus as f64 / config.trials as f64,
        censor_rate_p: censored_p as f64 / config.trials as f64,
    })
}

/// Stabilization diagnostic for `sum_k eta_{k+1} e^{-S_k}` under `P+`,
/// estimated with h-transform weighting of plain environments.
#[derive(Clone, Copy, Debug)]
pub struct EtaSumReport {
    pub k_total: usize,
    pub trials: u64,
    pub mean_weight: f64,
    /// Weighted median of the partial sum at `k_total`.
    pub total_median: f64,
    pub total_p99: f64,
    /// Weighted median / 99th percentile of the increment accrued over the
    /// last decade `(k_total/10, k_total]`.
    pub last_decade_median: f64,
    pub last_decade_p99: f64,
}

impl EtaSumReport {
    /// The headline diagnostic: the extreme last-decade increment relative
    /// to the typical total.
    pub fn stabilization_ratio(&self) -> f64 {
        self.last_decade_p99 / self.total_median
    }
}

pub fn eta_exponential_sum(
    driver: &EnvironmentDriver,
    u: &USource,
    k_total: usize,
    trials: u64,
    seed: u64,
) -> EtaSumReport {
    let k_early = (k_total / 10).max(1);
    let partials = run_chunks(seed, trials, 64, |rng, count| {
        let mut samples = Vec::with_capacity(count as usize);
        let mut weights = Accum::default();
        for _ in 0..count {
            let mut s = 0.0f64;
            let mut min = 0.0f64;
            let mut total = 0.0f64;
            let mut early = 0.0f64;
            for k in 0..k_total {
                // eta_{k+1} e^{-S_k} accrues before the step to S_{k+1}
                let x = driver.step_law.step(rng);
                let law = driver.make(x).expect("family covers the step range");
                total += law.eta() * (-s).exp();
                if k == k_early {
                    early = total;
                }
                s += law.log_mean();
                if s < min {
                    min = s;
                }
            }
            let w = if min >= 0.0 { u.u_at(s) } else { 0.0 };
            weights.push(w);
            if w > 0.0 {
                samples.push((total, total - early, w));
            }
        }
        (samples, weights)
    });
    let mut weights = Accum::default();
    let mut totals: Vec<(f64, f64)> = Vec::new();
    let mut increments: Vec<(f64, f64)> = Vec::new();
    for (samples, w) in &partials {
        weights.merge(w);
        for &(t, i, wt) in samples {
            totals.push((t, wt));
            increments.push((i, wt));
        }
    }
    EtaSumReport {
        k_total,
        trials,
        mean_weight: weights.mean(),
        total_median: weighted_quantile(&mut totals, 0.5),
        total_p99: weighted_quantile(&mut totals, 0.99),
        last_decade_median: weighted_quantile(&mut increments, 0.5),
        last_decade_p99: weighted_quantile(&mut increments, 0.99),
    }
}
