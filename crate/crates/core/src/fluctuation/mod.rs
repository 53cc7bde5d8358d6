//! Fluctuation theory of the associated random walk: trajectories and their
//! running extrema, strict ladder epochs, Monte Carlo renewal-function
//! tables, the exact Spitzer-series engine, and an exhaustive lattice oracle.
//!
//! Boundary conventions follow a single fixed set and the exact identities
//! below depend on them: `L_n >= 0` and `S_k >= 0` are weak, `M_n < 0` is
//! strict, both ladder families are strict, and the first weak ascending
//! epoch `iota` uses `S_m >= 0`. `M_0 < 0` holds vacuously so that the
//! `m`-series starts at 1.

mod lattice;
mod spitzer;

pub use lattice::LatticeWalkSpec;
pub use spitzer::{
    example1_nonneg_prob, lambda_from_fn, lambda_from_series, condition_c_check,
    spitzer_transform, ConditionCReport, LambdaEval, SpitzerError, SpitzerSeries,
};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::heavy_tail::StepLaw;
use crate::mc::{run_chunks, Accum, PairAccum, StepSampler, DEFAULT_CHUNK_SIZE};

#[derive(Debug, Error)]
pub enum FluctuationError {
    #[error("grid must be ascending and nonnegative")]
    BadGrid,
    #[error("x = {0} is not on the renewal grid")]
    OffGrid(f64),
    #[error("too few positive events at n = {n}: got {events}, need >= {needed}")]
    InsufficientTrials { n: u64, events: u64, needed: u64 },
    #[error("regime mismatch: {0}")]
    RegimeMismatch(&'static str),
    #[error(transparent)]
    HeavyTail(#[from] crate::heavy_tail::HeavyTailError),
    #[error(transparent)]
    Spitzer(#[from] SpitzerError),
}

/// A walk trajectory `S_0, ..., S_n` with `S_0 = 0`.
#[derive(Clone, Debug)]
pub struct WalkPath {
    s: Vec<f64>,
}

impl WalkPath {
    pub fn simulate<S: StepSampler + ?Sized>(sampler: &S, n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut s = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        s.push(0.0);
        for _ in 0..n {
            acc += sampler.step(rng);
            s.push(acc);
        }
        Self { s }
    }

    pub fn from_positions(s: Vec<f64>) -> Self {
        assert!(!s.is_empty() && s[0] == 0.0, "paths start at S_0 = 0");
        Self { s }
    }

    /// Number of steps `n`.
    pub fn len(&self) -> usize {
        self.s.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn positions(&self) -> &[f64] {
        &self.s
    }

    /// Running minima `L_0, ..., L_n` (including `S_0 = 0`).
    pub fn running_min(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.s.len());
        let mut m = f64::INFINITY;
        for &v in &self.s {
            m = m.min(v);
            out.push(m);
        }
        out
    }

    /// Running maxima `M_k = max(S_1..S_k)`; `M_0 = -inf` encodes the
    /// convention that `M_0 < 0` holds vacuously.
    pub fn running_max(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.s.len());
        let mut m = f64::NEG_INFINITY;
        out.push(m);
        for &v in &self.s[1..] {
            m = m.max(v);
            out.push(m);
        }
        out
    }

    /// `L_n`.
    pub fn final_min(&self) -> f64 {
        self.s.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `tau_n`: the first index attaining the overall minimum.
    pub fn tau(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.s.iter().enumerate() {
            if v < self.s[best] {
                best = i;
            }
        }
        best
    }
}

/// A ladder epoch together with the walk value there.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LadderPoint {
    pub epoch: usize,
    pub height: f64,
}

/// Strict descending/ascending ladder epochs of a path, and the first weak
/// ascending epoch `iota` (`None` when censored by the horizon).
#[derive(Clone, Debug)]
pub struct LadderSample {
    pub descending: Vec<LadderPoint>,
    pub ascending: Vec<LadderPoint>,
    pub iota: Option<LadderPoint>,
}

pub fn ladder_decompose(path: &WalkPath) -> LadderSample {
    let s = path.positions();
    let mut descending = Vec::new();
    let mut ascending = Vec::new();
    let mut iota = None;
    let mut min = 0.0f64;
    let mut max = 0.0f64;
    for (i, &v) in s.iter().enumerate().skip(1) {
        if v < min {
            descending.push(LadderPoint { epoch: i, height: v });
            min = v;
        }
        if v > max {
            ascending.push(LadderPoint { epoch: i, height: v });
            max = v;
        }
        if iota.is_none() && v >= 0.0 {
            iota = Some(LadderPoint { epoch: i, height: v });
        }
    }
    LadderSample {
        descending,
        ascending,
        iota,
    }
}

/// Monte Carlo estimates of the renewal functions `U` (strict descending
/// ladder heights) and `V` (strict ascending) on a grid.
#[derive(Clone, Debug)]
pub struct RenewalTable {
    grid: Vec<f64>,
    u: Vec<f64>,
    u_se: Vec<f64>,
    v: Vec<f64>,
    v_se: Vec<f64>,
    trials: u64,
    censored: u64,
    isotonic_applied: bool,
}

impl RenewalTable {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn u_values(&self) -> &[f64] {
        &self.u
    }

    pub fn v_values(&self) -> &[f64] {
        &self.v
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn censored(&self) -> u64 {
        self.censored
    }

    pub fn censor_rate(&self) -> f64 {
        self.censored as f64 / self.trials as f64
    }

    pub fn isotonic_applied(&self) -> bool {
        self.isotonic_applied
    }

    fn interp(&self, col: &[f64], x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let g = &self.grid;
        if x <= g[0] {
            return col[0];
        }
        let last = g.len() - 1;
        if x >= g[last] {
            // linear extension; the slope is taken across the top half of
            // the grid so staircase phase noise in one segment cannot skew it
            let mid = last / 2;
            let slope = (col[last] - col[mid]) / (g[last] - g[mid]);
            return col[last] + slope * (x - g[last]);
        }
        let i = match g.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => return col[i],
            Err(i) => i,
        };
        let t = (x - g[i - 1]) / (g[i] - g[i - 1]);
        col[i - 1] + t * (col[i] - col[i - 1])
    }

    /// `U(x)` with linear interpolation on the grid and linear extension
    /// beyond it; zero below the origin.
    pub fn u_at(&self, x: f64) -> f64 {
        self.interp(&self.u, x)
    }

    pub fn u_stderr_at(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            self.interp(&self.u_se, x).abs()
        }
    }

    pub fn v_at(&self, x: f64) -> f64 {
        self.interp(&self.v, x)
    }

    pub fn u_stderrs(&self) -> &[f64] {
        &self.u_se
    }

    pub fn v_stderrs(&self) -> &[f64] {
        &self.v_se
    }

    /// Exact table for walks whose `U` is known in closed form (used by the
    /// lattice oracles); standard errors are zero.
    pub fn exact_from_fn(grid: Vec<f64>, u_fn: impl Fn(f64) -> f64, v_fn: impl Fn(f64) -> f64) -> Self {
        let u: Vec<f64> = grid.iter().map(|&x| u_fn(x)).collect();
        let v: Vec<f64> = grid.iter().map(|&x| v_fn(x)).collect();
        let n = grid.len();
        Self {
            grid,
            u,
            u_se: vec![0.0; n],
            v,
            v_se: vec![0.0; n],
            trials: 0,
            censored: 0,
            isotonic_applied: false,
        }
    }
}

/// Settings for [`estimate_renewal`].
#[derive(Clone, Copy, Debug)]
pub struct RenewalConfig {
    pub trials: u64,
    /// Hard per-trajectory step cap; hits are counted as censored.
    pub step_cap: u64,
    pub chunk_size: u64,
    pub seed: u64,
    /// Also estimate the ascending-ladder renewal function `V`. Waiting for
    /// the running maximum to clear the grid can cost orders of magnitude
    /// more steps than the descending side on drift-down walks, so skip it
    /// when only `U` is needed.
    pub estimate_v: bool,
}

impl RenewalConfig {
    pub fn new(trials: u64, seed: u64) -> Self {
        Self {
            trials,
            step_cap: 10_000_000,
            chunk_size: DEFAULT_CHUNK_SIZE,
            seed,
            estimate_v: true,
        }
    }

    pub fn u_only(mut self) -> Self {
        self.estimate_v = false;
        self
    }
}

/// Estimate `U(x) = sum_j P(S_{gamma_j} >= -x)` and
/// `V(x) = 1 + sum_{j>=1} P(S_{Gamma_j} < x)` on `grid` by running each
/// trajectory until its descending ladder height falls below `-x_max` and its
/// ascending ladder height climbs above `x_max` (or the step cap strikes).
pub fn estimate_renewal<S: StepSampler + ?Sized>(
    sampler: &S,
    grid: &[f64],
    config: RenewalConfig,
) -> Result<RenewalTable, FluctuationError> {
    if grid.is_empty() || grid[0] != 0.0 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FluctuationError::BadGrid);
    }
    let x_max = *grid.last().unwrap();
    let g = grid.to_vec();

    struct Partial {
        u: Vec<Accum>,
        v: Vec<Accum>,
        censored: u64,
    }

    let partials = run_chunks(config.seed, config.trials, config.chunk_size, |rng, count| {
        let mut part = Partial {
            u: vec![Accum::default(); g.len()],
            v: vec![Accum::default(); g.len()],
            censored: 0,
        };
        // ladder events land one difference count each; a prefix-sum pass
        // per trajectory turns them into the per-grid-point totals
        let mut u_diff = vec![0u64; g.len()];
        let mut v_diff = vec![0u64; g.len()];
        for _ in 0..count {
            u_diff.iter_mut().for_each(|c| *c = 0);
            v_diff.iter_mut().for_each(|c| *c = 0);
            let mut pos = 0.0f64;
            let mut desc = 0.0f64;
            let mut asc = 0.0f64;
            let mut desc_done = false;
            let mut asc_done = !config.estimate_v;
            let mut steps = 0u64;
            while !(desc_done && asc_done) {
                if steps >= config.step_cap {
                    part.censored += 1;
                    break;
                }
                steps += 1;
                pos += sampler.step(rng);
                if !desc_done && pos < desc {
                    desc = pos;
                    if desc < -x_max {
                        desc_done = true;
                    } else {
                        // the height counts for every x >= -height
                        u_diff[g.partition_point(|&x| x < -desc)] += 1;
                    }
                }
                if !asc_done && pos > asc {
                    asc = pos;
                    if asc >= x_max {
                        asc_done = true;
                    } else {
                        // strict ascending heights count for every x > height
                        v_diff[g.partition_point(|&x| x <= asc)] += 1;
                    }
                }
            }
            // gamma_0 = Gamma_0 = 0 contribute one count everywhere
            let mut acc_u = 1u64;
            let mut acc_v = 1u64;
            for j in 0..g.len() {
                acc_u += u_diff[j];
                acc_v += v_diff[j];
                part.u[j].push(acc_u as f64);
                part.v[j].push(acc_v as f64);
            }
        }
        part
    });

    let mut u_acc = vec![Accum::default(); grid.len()];
    let mut v_acc = vec![Accum::default(); grid.len()];
    let mut censored = 0;
    for p in &partials {
        for (a, b) in u_acc.iter_mut().zip(&p.u) {
            a.merge(b);
        }
        for (a, b) in v_acc.iter_mut().zip(&p.v) {
            a.merge(b);
        }
        censored += p.censored;
    }

    let mut u: Vec<f64> = u_acc.iter().map(Accum::mean).collect();
    let u_se: Vec<f64> = u_acc.iter().map(Accum::stderr).collect();
    let (mut v, v_se) = if config.estimate_v {
        (
            v_acc.iter().map(Accum::mean).collect::<Vec<f64>>(),
            v_acc.iter().map(Accum::stderr).collect::<Vec<f64>>(),
        )
    } else {
        (vec![0.0; grid.len()], vec![0.0; grid.len()])
    };

    // per-trajectory counts are nondecreasing in x, so the means already are;
    // the cummax pass only fires on floating noise and is flagged if it does
    let mut isotonic_applied = false;
    for col in [&mut u, &mut v] {
        for i in 1..col.len() {
            if col[i] < col[i - 1] {
                col[i] = col[i - 1];
                isotonic_applied = true;
            }
        }
    }

    Ok(RenewalTable {
        grid: grid.to_vec(),
        u,
        u_se,
        v,
        v_se,
        trials: config.trials,
        censored,
        isotonic_applied,
    })
}

/// Monte Carlo estimate of the survival-type probabilities
/// `P(L_n >= -x)` and `P(L_n >= 0)` from the same paths, for the
/// `P(L_n >= -x) ~ U(x) P(L_n >= 0)` comparison.
#[derive(Clone, Copy, Debug)]
pub struct MinRatioPoint {
    pub n: u64,
    pub x: f64,
    /// `hat r_n(x) = P(L_n >= -x) / P(L_n >= 0)`.
    pub ratio: f64,
    pub ratio_stderr: f64,
    pub p_shifted: f64,
    pub p_zero: f64,
}

/// Per-`n` ratio estimates `r_n(x)` with paired paths, against the renewal
/// estimate `U(x)`.
pub fn ratio_u_check<S: StepSampler + ?Sized>(
    sampler: &S,
    renewal: &RenewalTable,
    x: f64,
    ns: &[u64],
    trials: u64,
    seed: u64,
) -> Result<Vec<MinRatioPoint>, FluctuationError> {
    if !renewal.grid.iter().any(|&g| g == x) {
        return Err(FluctuationError::OffGrid(x));
    }
    let mut out = Vec::with_capacity(ns.len());
    for (i, &n) in ns.iter().enumerate() {
        let partials = run_chunks(
            crate::mc::mix_seed(seed, i as u64),
            trials,
            DEFAULT_CHUNK_SIZE,
            |rng, count| {
                let mut acc = PairAccum::default();
                for _ in 0..count {
                    let mut pos = 0.0f64;
                    let mut min = 0.0f64;
                    for _ in 0..n {
                        pos += sampler.step(rng);
                        if pos < min {
                            min = pos;
                            if min < -x {
                                break;
                            }
                        }
                    }
                    let above_minus_x = if min >= -x { 1.0 } else { 0.0 };
                    let above_zero = if min >= 0.0 { 1.0 } else { 0.0 };
                    acc.push(above_minus_x, above_zero);
                }
                acc
            },
        );
        let mut acc = PairAccum::default();
        for p in &partials {
            acc.merge(p);
        }
        let events = (acc.sy) as u64;
        if events < 25 {
            return Err(FluctuationError::InsufficientTrials {
                n,
                events,
                needed: 25,
            });
        }
        let ratio = acc.mean_x() / acc.mean_y();
        out.push(MinRatioPoint {
            n,
            x,
            ratio,
            ratio_stderr: ratio * acc.log_ratio_stderr(),
            p_shifted: acc.mean_x(),
            p_zero: acc.mean_y(),
        });
    }
    Ok(out)
}

/// Which of the four Theorem-2 right-hand sides to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AsymptoticKind {
    /// `P(L_n >= 0) ~ (L(|h_n|)/|h_n|) Lambda(n)`, valid for `p > q`.
    Ber1,
    /// `P(L_n >= 0) ~ 1/Lambda~(n)`, valid for `p < q`.
    Ber2,
    /// `P(M_n < 0) ~ 1/Lambda(n)`, valid for `p > q`.
    Ber3,
    /// `P(M_n < 0) ~ (L(|h_n|)/|h_n|) Lambda~(n)`, valid for `p < q`.
    Ber4,
}

/// Evaluate a Theorem-2 right-hand side for comparison against a Monte Carlo
/// left-hand side. `lambda` must be `Lambda(n)` for `Ber1`/`Ber3` and
/// `Lambda~(n)` (built from the `1-q` series) for `Ber2`/`Ber4`.
pub fn asymptotic_rhs(
    law: &StepLaw,
    lambda: f64,
    n: u64,
    which: AsymptoticKind,
) -> Result<f64, FluctuationError> {
    let p_heavier_right = law.p() > law.q();
    match which {
        AsymptoticKind::Ber1 | AsymptoticKind::Ber3 if !p_heavier_right => {
            return Err(FluctuationError::RegimeMismatch("Ber1/Ber3 require p > q"));
        }
        AsymptoticKind::Ber2 | AsymptoticKind::Ber4 if p_heavier_right => {
            return Err(FluctuationError::RegimeMismatch("Ber2/Ber4 require p < q"));
        }
        _ => {}
    }
    match which {
        AsymptoticKind::Ber2 => Ok(1.0 / lambda),
        AsymptoticKind::Ber3 => Ok(1.0 / lambda),
        AsymptoticKind::Ber1 | AsymptoticKind::Ber4 => {
            let h = law.scale_h(n)?.abs();
            let l = law.sv().eval(h)?;
            Ok(l / h * lambda)
        }
    }
}
