//! Integer-lattice walks with exact dynamic-programming distributions and an
//! exhaustive path-enumeration oracle. These feed the Spitzer engine with
//! exact `q_k = P(S_k >= 0)` inputs and back the small-`n` ground truth the
//! statistical estimators are checked against.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mc::StepSampler;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("support and probs must be nonempty and of equal length")]
    Shape,
    #[error("probabilities must be nonnegative and sum to 1 (got {0})")]
    BadProbs(f64),
    #[error("walk must oscillate: support needs both signs")]
    NoOscillation,
    #[error("lattice span {0} too large")]
    SpanOverflow(u64),
}

/// A finite-support integer step distribution.
#[derive(Clone, Debug)]
pub struct LatticeWalkSpec {
    support: Vec<i64>,
    probs: Vec<f64>,
    /// cumulative probabilities for sampling
    cum: Vec<f64>,
}

impl LatticeWalkSpec {
    pub fn new(support: Vec<i64>, probs: Vec<f64>) -> Result<Self, LatticeError> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(LatticeError::Shape);
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(LatticeError::BadProbs(total));
        }
        if !(support.iter().any(|&s| s > 0) && support.iter().any(|&s| s < 0)) {
            return Err(LatticeError::NoOscillation);
        }
        let mut cum = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            cum.push(acc);
        }
        *cum.last_mut().unwrap() = 1.0;
        Ok(Self {
            support,
            probs,
            cum,
        })
    }

    /// The symmetric simple walk: steps `±1` with probability 1/2.
    pub fn symmetric_unit() -> Self {
        Self::new(vec![1, -1], vec![0.5, 0.5]).unwrap()
    }

    /// Steps `+1` with probability `p_up`, `-1` otherwise.
    pub fn biased_unit(p_up: f64) -> Self {
        Self::new(vec![1, -1], vec![p_up, 1.0 - p_up]).unwrap()
    }

    pub fn support(&self) -> &[i64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn max_abs_step(&self) -> i64 {
        self.support.iter().map(|s| s.abs()).max().unwrap()
    }

    /// Closed-form `U` for the symmetric unit walk: every descending ladder
    /// height is exactly `-1`, so `U(x) = floor(x) + 1`.
    pub fn symmetric_unit_u(x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            x.floor() + 1.0
        }
    }

    /// Closed-form `V` for the symmetric unit walk: ascending heights are
    /// `1, 2, ...`, so `V(x) = 1 + #{h >= 1 : h < x} = max(1, ceil(x))`.
    pub fn symmetric_unit_v(x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            x.ceil().max(1.0)
        }
    }

    fn span(&self, n: usize) -> Result<usize, LatticeError> {
        let span = (n as u64).saturating_mul(self.max_abs_step() as u64);
        if span > (1 << 24) {
            return Err(LatticeError::SpanOverflow(span));
        }
        Ok(span as usize)
    }

    /// Exact distribution of `S_n` as `(offset, pmf)` where index `i` holds
    /// `P(S_n = i - offset)`.
    pub fn exact_distribution(&self, n: usize) -> Result<(usize, Vec<f64>), LatticeError> {
        let span = self.span(n)?;
        let width = 2 * span + 1;
        let mut cur = vec![0.0f64; width];
        cur[span] = 1.0;
        let mut next = vec![0.0f64; width];
        for _ in 0..n {
            next.iter_mut().for_each(|v| *v = 0.0);
            for (i, &mass) in cur.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for (&step, &p) in self.support.iter().zip(&self.probs) {
                    let j = i as i64 + step;
                    if (0..width as i64).contains(&j) {
                        next[j as usize] += mass * p;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok((span, cur))
    }

    /// Exact `q_k = P(S_k >= 0)` for `k = 1..=n`.
    pub fn exact_nonneg_probs(&self, n: usize) -> Result<Vec<f64>, LatticeError> {
        let span = self.span(n)?;
        let width = 2 * span + 1;
        let mut cur = vec![0.0f64; width];
        cur[span] = 1.0;
        let mut next = vec![0.0f64; width];
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            next.iter_mut().for_each(|v| *v = 0.0);
            for (i, &mass) in cur.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for (&step, &p) in self.support.iter().zip(&self.probs) {
                    let j = i as i64 + step;
                    if (0..width as i64).contains(&j) {
                        next[j as usize] += mass * p;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
            out.push(cur[span..].iter().sum::<f64>());
        }
        Ok(out)
    }

    /// Exact `P(L_k >= -x)` for `k = 1..=n`: a killed DP, dropping the mass
    /// that steps below `-x`.
    pub fn exact_min_probs(&self, n: usize, x: i64) -> Result<Vec<f64>, LatticeError> {
        assert!(x >= 0);
        let span = self.span(n)?;
        let width = 2 * span + 1;
        let mut cur = vec![0.0f64; width];
        cur[span] = 1.0;
        let mut next = vec![0.0f64; width];
        let mut out = Vec::with_capacity(n);
        let floor = span as i64 - x; // lattice index of -x
        for _ in 0..n {
            next.iter_mut().for_each(|v| *v = 0.0);
            for (i, &mass) in cur.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for (&step, &p) in self.support.iter().zip(&self.probs) {
                    let j = i as i64 + step;
                    if j >= floor && j < width as i64 {
                        next[j as usize] += mass * p;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
            out.push(cur.iter().sum::<f64>());
        }
        Ok(out)
    }

    /// Exact `P(M_k < 0)` for `k = 1..=n`: mass of paths staying strictly
    /// negative from step 1 on.
    pub fn exact_max_neg_probs(&self, n: usize) -> Result<Vec<f64>, LatticeError> {
        let span = self.span(n)?;
        let width = 2 * span + 1;
        let mut cur = vec![0.0f64; width];
        cur[span] = 1.0;
        let mut next = vec![0.0f64; width];
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            next.iter_mut().for_each(|v| *v = 0.0);
            for (i, &mass) in cur.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for (&step, &p) in self.support.iter().zip(&self.probs) {
                    let j = i as i64 + step;
                    // every state from step 1 on must be strictly negative
                    if j >= 0 && j < span as i64 {
                        next[j as usize] += mass * p;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
            out.push(cur.iter().sum::<f64>());
        }
        Ok(out)
    }

    /// Exact joint law of the first weak ascending epoch:
    /// `P(iota = k, S_iota = h)` for `k <= horizon`, plus the censored mass.
    pub fn exact_iota_law(&self, horizon: usize) -> Result<(Vec<(usize, i64, f64)>, f64), LatticeError> {
        let span = self.span(horizon)?;
        let width = 2 * span + 1;
        let mut cur = vec![0.0f64; width];
        cur[span] = 1.0;
        let mut next = vec![0.0f64; width];
        let mut absorbed = Vec::new();
        for k in 1..=horizon {
            next.iter_mut().for_each(|v| *v = 0.0);
            for (i, &mass) in cur.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for (&step, &p) in self.support.iter().zip(&self.probs) {
                    let j = i as i64 + step;
                    if (0..width as i64).contains(&j) {
                        if j >= span as i64 {
                            // S_k >= 0: absorbed at iota = k with height j - span
                            absorbed.push((k, j - span as i64, mass * p));
                        } else {
                            next[j as usize] += mass * p;
                        }
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        // merge duplicate (k, h) cells
        absorbed.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, i64, f64)> = Vec::new();
        for (k, h, p) in absorbed {
            if let Some(last) = merged.last_mut() {
                if last.0 == k && last.1 == h {
                    last.2 += p;
                    continue;
                }
            }
            merged.push((k, h, p));
        }
        let censored = 1.0 - merged.iter().map(|c| c.2).sum::<f64>();
        Ok((merged, censored))
    }

    /// Exhaustively fold over all `|support|^n` paths. The closure receives
    /// the positions `S_0..S_n` and the path probability.
    pub fn fold_paths<T>(&self, n: usize, init: T, mut f: impl FnMut(T, &[i64], f64) -> T) -> T {
        let k = self.support.len();
        let mut acc = init;
        let mut choice = vec![0usize; n];
        let mut path = vec![0i64; n + 1];
        loop {
            let mut prob = 1.0;
            for i in 0..n {
                path[i + 1] = path[i] + self.support[choice[i]];
                prob *= self.probs[choice[i]];
            }
            acc = f(acc, &path, prob);
            // odometer increment
            let mut pos = 0;
            loop {
                if pos == n {
                    return acc;
                }
                choice[pos] += 1;
                if choice[pos] < k {
                    break;
                }
                choice[pos] = 0;
                pos += 1;
            }
        }
    }
}

impl StepSampler for LatticeWalkSpec {
    fn step(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        let idx = self.cum.partition_point(|&c| c <= u);
        self.support[idx.min(self.support.len() - 1)] as f64
    }
}
