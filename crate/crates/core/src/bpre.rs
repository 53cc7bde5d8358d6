//! Quenched and annealed survival of the branching process.
//!
//! Everything is organized around generating-function iteration
//! `f_{0,n}(0) = f_1(f_2(...(f_n(0))))`: the quenched extinction probability
//! given the environment. Linear-fractional families compose exactly through
//! the affine action on `w = 1/(1-s)` (a triangular projective 2x2 chain):
//!
//! ```text
//!   1/(1 - f_{0,n}(0)) = e^{-S_n} + sum_{k=1}^{n} (eta_k / 2) e^{-S_{k-1}},
//! ```
//!
//! so annealed survival estimates are Rao-Blackwellized means of exact
//! quenched survivals; no population is ever simulated on the hot path.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::environment::{EnvironmentDriver, EnvironmentError, EnvironmentFamily, EnvironmentSequence};
use crate::mc::{mix_seed, run_chunks, weighted_line_fit, Accum, PairAccum, StepSampler, DEFAULT_CHUNK_SIZE};

#[derive(Debug, Error)]
pub enum BpreError {
    #[error("generating function escaped [0,1] at composition step {step}: {value}")]
    GfOutOfRange { step: usize, value: f64 },
    #[error("environment shorter than n: have {have}, need {need}")]
    EnvironmentTooShort { have: usize, need: usize },
    #[error("p must differ from q for theorem experiments")]
    SymmetricLaw,
    #[error("linear-fractional driver needs eta0 >= 2 to cover unbounded means (got {0})")]
    EtaTooSmall(f64),
    #[error("insufficient trials at n = {n}: {events} positive events, need >= {needed}")]
    InsufficientTrials { n: u64, events: u64, needed: u64 },
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
}

/// How to evaluate `f_{0,n}(0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComposeMode {
    /// Backward numeric composition through each family's `gf`.
    Generic,
    /// Exact affine / projective composition; requires every law in the
    /// environment to be linear-fractional.
    Moebius,
}

/// `f_{0,n}(0)`: quenched extinction probability by generation `n`.
pub fn quenched_extinction(
    env: &EnvironmentSequence,
    n: usize,
    mode: ComposeMode,
) -> Result<f64, BpreError> {
    Ok(1.0 - quenched_survival(env, n, mode)?)
}

/// Backward evaluation `s <- f_n(0), s <- f_{n-1}(s), ...`, iterated in the
/// survival-complement coordinate `u = 1 - s` so that tiny survivals are not
/// flushed against the fixed point at 1.
fn quenched_survival_generic(env: &EnvironmentSequence, n: usize) -> Result<f64, BpreError> {
    let mut u = 1.0f64; // complement of s = 0
    for k in (0..n).rev() {
        u = env.laws()[k].gf_complement(u);
        if !(0.0..=1.0).contains(&u) {
            return Err(BpreError::GfOutOfRange { step: k, value: u });
        }
    }
    Ok(u)
}

/// `1 - f_{0,n}(0)` through the exact affine chain. Panics if a law in the
/// environment is not linear-fractional; use [`ComposeMode::Generic`] there.
fn quenched_survival_moebius(env: &EnvironmentSequence, n: usize) -> f64 {
    // reciprocal = e^{-S_n} + sum_k (eta_k/2) e^{-S_{k-1}}; e^{-S} comes from
    // the walk's log sums, which stay finite even when a single 1/m_k
    // overflows (the running-product form would turn inf * 0 into NaN)
    let s = env.walk();
    let mut recip = 0.0f64;
    for k in 0..n {
        let law = env.laws()[k];
        let mo = law
            .moebius()
            .expect("Moebius composition needs linear-fractional laws");
        recip += mo.half_eta * (-s[k]).exp();
    }
    recip += (-s[n]).exp();
    1.0 / recip
}

/// Quenched survival `1 - f_{0,n}(0)`.
pub fn quenched_survival(
    env: &EnvironmentSequence,
    n: usize,
    mode: ComposeMode,
) -> Result<f64, BpreError> {
    if env.len() < n {
        return Err(BpreError::EnvironmentTooShort {
            have: env.len(),
            need: n,
        });
    }
    match mode {
        ComposeMode::Generic => quenched_survival_generic(env, n),
        ComposeMode::Moebius => Ok(quenched_survival_moebius(env, n)),
    }
}

/// The lower bound `(e^{-S_n} + sum_{k=eta_start}^{n-1} eta_{k+1} e^{-S_k})^{-1}`
/// for quenched survival.
///
/// With `eta_start = 0` the bound holds pathwise for every offspring family
/// (the composition inequality `1/(1-f(s)) <= 1/(m(1-s)) + eta` telescopes
/// from the `k = 0` term). `eta_start = 1` drops that first term and is
/// exposed for comparison; it can exceed the true survival on environments
/// with an early upward step, so the default is 0.
pub fn survival_lower_bound(
    env: &EnvironmentSequence,
    n: usize,
    eta_start: usize,
) -> Result<f64, BpreError> {
    if env.len() < n {
        return Err(BpreError::EnvironmentTooShort {
            have: env.len(),
            need: n,
        });
    }
    let s = env.walk();
    let mut denom = (-s[n]).exp();
    for k in eta_start..n {
        denom += env.laws()[k].eta() * (-s[k]).exp();
    }
    Ok(1.0 / denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurvivalMethod {
    DirectGf,
    TauDecomposed,
    Population,
}

/// An annealed survival estimate.
#[derive(Clone, Copy, Debug)]
pub struct SurvivalEstimate {
    pub n: u64,
    pub value: f64,
    pub stderr: f64,
    pub trials: u64,
    pub method: SurvivalMethod,
}

fn compose_mode_for(driver: &EnvironmentDriver) -> Result<ComposeMode, BpreError> {
    match driver.family {
        EnvironmentFamily::LinearFractional { eta0 } => {
            if eta0 < 2.0 {
                Err(BpreError::EtaTooSmall(eta0))
            } else {
                Ok(ComposeMode::Moebius)
            }
        }
        EnvironmentFamily::Geometric => Ok(ComposeMode::Moebius),
        EnvironmentFamily::Poisson => Ok(ComposeMode::Generic),
    }
}

/// Per-trial quenched survival and the walk summary, fused into one pass so
/// the hot loops never allocate an environment.
fn survival_and_min(
    driver: &EnvironmentDriver,
    n: usize,
    mode: ComposeMode,
    rng: &mut ChaCha8Rng,
) -> (f64, f64, usize) {
    match mode {
        ComposeMode::Moebius => {
            let eta0 = match driver.family {
                EnvironmentFamily::LinearFractional { eta0 } => eta0,
                EnvironmentFamily::Geometric => 2.0,
                EnvironmentFamily::Poisson => unreachable!("checked by compose_mode_for"),
            };
            let half_eta = 0.5 * eta0;
            let mut s = 0.0f64;
            let mut min = 0.0f64;
            let mut tau = 0usize;
            let mut recip = 0.0f64;
            for k in 0..n {
                recip += half_eta * (-s).exp();
                let x = driver.step_law.step(rng) + driver.log_mean_shift;
                s += x;
                if s < min {
                    min = s;
                    tau = k + 1;
                }
            }
            recip += (-s).exp();
            (1.0 / recip, min, tau)
        }
        ComposeMode::Generic => {
            let env = driver.draw(n, rng).expect("family covers the step range");
            let surv = quenched_survival(&env, n, ComposeMode::Generic)
                .expect("gf stays in [0,1] for the supported families");
            let walk = env.walk();
            let mut min = 0.0f64;
            let mut tau = 0usize;
            for (k, &v) in walk.iter().enumerate() {
                if v < min {
                    min = v;
                    tau = k;
                }
            }
            (surv, min, tau)
        }
    }
}

/// Rao-Blackwellized annealed survival: the mean of exact quenched survivals
/// over environment draws.
pub fn annealed_survival(
    driver: &EnvironmentDriver,
    n: u64,
    trials: u64,
    seed: u64,
) -> Result<SurvivalEstimate, BpreError> {
    let mode = compose_mode_for(driver)?;
    let partials = run_chunks(seed, trials, DEFAULT_CHUNK_SIZE, |rng, count| {
        let mut acc = Accum::default();
        for _ in 0..count {
            acc.push(survival_and_min(driver, n as usize, mode, rng).0);
        }
        acc
    });
    let mut acc = Accum::default();
    for p in &partials {
        acc.merge(p);
    }
    Ok(SurvivalEstimate {
        n,
        value: acc.mean(),
        stderr: acc.stderr(),
        trials,
        method: SurvivalMethod::DirectGf,
    })
}

/// One block of the first-minimum decomposition
/// `P(Z_n > 0) = sum_k P(Z_n > 0; tau_n = k)`.
#[derive(Clone, Copy, Debug)]
pub struct TauBlock {
    /// Inclusive k-range of the block.
    pub k_lo: u64,
    pub k_hi: u64,
    pub value: f64,
    pub stderr: f64,
    /// Share of the total survival mass.
    pub share: f64,
}

/// The three-block split of the survival probability by the first-minimum
/// epoch: `k <= n_split`, `n_split < k <= eps n`, `k > eps n`.
#[derive(Clone, Debug)]
pub struct TauSplitReport {
    pub n: u64,
    pub trials: u64,
    pub n_split: u64,
    pub eps: f64,
    pub total: SurvivalEstimate,
    pub blocks: [TauBlock; 3],
}

pub fn survival_by_tau(
    driver: &EnvironmentDriver,
    n: u64,
    trials: u64,
    n_split: u64,
    eps: f64,
    seed: u64,
) -> Result<TauSplitReport, BpreError> {
    assert!(eps > 0.0 && eps < 1.0, "eps must lie in (0,1)");
    let mode = compose_mode_for(driver)?;
    let eps_n = (eps * n as f64).floor() as u64;
    let partials = run_chunks(seed, trials, DEFAULT_CHUNK_SIZE, |rng, count| {
        let mut total = Accum::default();
        let mut blocks = [Accum::default(), Accum::default(), Accum::default()];
        for _ in 0..count {
            let (surv, _, tau) = survival_and_min(driver, n as usize, mode, rng);
            total.push(surv);
            let idx = if (tau as u64) <= n_split {
                0
            } else if (tau as u64) <= eps_n {
                1
            } else {
                2
            };
            for (i, b) in blocks.iter_mut().enumerate() {
                b.push(if i == idx { surv } else { 0.0 });
            }
        }
        (total, blocks)
    });
    let mut total = Accum::default();
    let mut blocks = [Accum::default(), Accum::default(), Accum::default()];
    for (t, bs) in &partials {
        total.merge(t);
        for (a, b) in blocks.iter_mut().zip(bs) {
            a.merge(b);
        }
    }
    let ranges = [(0u64, n_split), (n_split + 1, eps_n), (eps_n + 1, n)];
    let total_mean = total.mean();
    let blocks = std::array::from_fn(|i| TauBlock {
        k_lo: ranges[i].0,
        k_hi: ranges[i].1,
        value: blocks[i].mean(),
        stderr: blocks[i].stderr(),
        share: blocks[i].mean() / total_mean,
    });
    Ok(TauSplitReport {
        n,
        trials,
        n_split,
        eps,
        total: SurvivalEstimate {
            n,
            value: total_mean,
            stderr: total.stderr(),
            trials,
            method: SurvivalMethod::TauDecomposed,
        },
        blocks,
    })
}

/// One point of the ratio experiment.
#[derive(Clone, Copy, Debug)]
pub struct RatioPoint {
    pub n: u64,
    /// `P(Z_n > 0) / P(L_n >= 0)`, from the same environment draws.
    pub ratio: f64,
    pub log_ratio_stderr: f64,
    pub survival: f64,
    pub min_nonneg_prob: f64,
    pub events: u64,
}

/// The ratio series with its fitted log-log slope.
#[derive(Clone, Debug)]
pub struct RatioExperiment {
    pub points: Vec<RatioPoint>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub ci95: (f64, f64),
}

/// Estimate `r_n = P(Z_n > 0)/P(L_n >= 0)` on the grid `ns` and fit the
/// slope of `log r_n` against `log n`. Numerator and denominator share
/// environments, which correlates them strongly and shrinks the ratio
/// variance.
pub fn theorem_ratio(
    driver: &EnvironmentDriver,
    ns: &[u64],
    trials: u64,
    seed: u64,
) -> Result<RatioExperiment, BpreError> {
    if driver.step_law.is_symmetric() {
        return Err(BpreError::SymmetricLaw);
    }
    let mode = compose_mode_for(driver)?;
    let mut points = Vec::with_capacity(ns.len());
    for (i, &n) in ns.iter().enumerate() {
        let partials = run_chunks(
            mix_seed(seed, i as u64),
            trials,
            DEFAULT_CHUNK_SIZE,
            |rng, count| {
                let mut acc = PairAccum::default();
                for _ in 0..count {
                    let (surv, min, _) = survival_and_min(driver, n as usize, mode, rng);
                    acc.push(surv, if min >= 0.0 { 1.0 } else { 0.0 });
                }
                acc
            },
        );
        let mut acc = PairAccum::default();
        for p in &partials {
            acc.merge(p);
        }
        let events = acc.sy as u64;
        if events < 25 {
            return Err(BpreError::InsufficientTrials {
                n,
                events,
                needed: 25,
            });
        }
        points.push(RatioPoint {
            n,
            ratio: acc.mean_x() / acc.mean_y(),
            log_ratio_stderr: acc.log_ratio_stderr(),
            survival: acc.mean_x(),
            min_nonneg_prob: acc.mean_y(),
            events,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.ratio.ln()).collect();
    let ws: Vec<f64> = points
        .iter()
        .map(|p| 1.0 / p.log_ratio_stderr.powi(2).max(1e-12))
        .collect();
    let fit = weighted_line_fit(&xs, &ys, &ws);
    Ok(RatioExperiment {
        points,
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
        ci95: (
            fit.slope - 1.96 * fit.slope_stderr,
            fit.slope + 1.96 * fit.slope_stderr,
        ),
    })
}

/// A directly simulated population trajectory.
#[derive(Clone, Debug)]
pub struct PopulationRun {
    /// `Z_0, ..., Z_m` up to extinction, the cap, or the environment end.
    pub z: Vec<u64>,
    /// First generation with `Z_k = 0`.
    pub extinction: Option<usize>,
    /// Hit the population ceiling; treated as survived for `P(Z_n > 0)`.
    pub capped: bool,
}

impl PopulationRun {
    pub fn alive_at(&self, n: usize) -> bool {
        if self.capped {
            return true;
        }
        match self.extinction {
            Some(t) => t > n,
            None => true,
        }
    }
}

/// Direct simulation of the population (batched per generation through each
/// family's additive closure). Only used as a cross-check of the generating
/// function estimators.
pub fn simulate_population(
    env: &EnvironmentSequence,
    rng: &mut ChaCha8Rng,
    cap: u64,
) -> PopulationRun {
    let mut z = Vec::with_capacity(env.len() + 1);
    let mut current = 1u64;
    z.push(current);
    for (k, law) in env.laws().iter().enumerate() {
        current = law.sample_total(current, rng);
        z.push(current.min(cap));
        if current == 0 {
            return PopulationRun {
                z,
                extinction: Some(k + 1),
                capped: false,
            };
        }
        if current >= cap {
            return PopulationRun {
                z,
                extinction: None,
                capped: true,
            };
        }
    }
    PopulationRun {
        z,
        extinction: None,
        capped: false,
    }
}
