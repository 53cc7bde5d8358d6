//! Reproducible parallel Monte Carlo plumbing.
//!
//! Trials are split into fixed-size chunks. Chunk `i` owns an independent
//! ChaCha stream derived from `(seed, i)`, chunks are mapped in parallel and
//! reduced in chunk order, so estimates are bit-identical for a fixed chunk
//! size no matter how many workers run them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Default number of trials per chunk.
pub const DEFAULT_CHUNK_SIZE: u64 = 1024;

/// Something that produces one i.i.d. real-valued step per call.
pub trait StepSampler: Sync {
    fn step(&self, rng: &mut ChaCha8Rng) -> f64;
}

impl<F> StepSampler for F
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    fn step(&self, rng: &mut ChaCha8Rng) -> f64 {
        self(rng)
    }
}

/// splitmix64 finalizer; used to derive purpose-separated seeds.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for one chunk: the stream index keeps chunks independent.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Run `trials` split into chunks of `chunk_size`, in parallel, and return
/// the per-chunk results in chunk order.
pub fn run_chunks<T, F>(seed: u64, trials: u64, chunk_size: u64, body: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, u64) -> T + Sync,
{
    assert!(chunk_size > 0, "chunk_size must be positive");
    let n_chunks = trials.div_ceil(chunk_size);
    (0..n_chunks)
        .into_par_iter()
        .map(|i| {
            let count = chunk_size.min(trials - i * chunk_size);
            let mut rng = chunk_rng(seed, i);
            body(&mut rng, count)
        })
        .collect()
}

/// Plain sum / sum-of-squares accumulator. Merging in chunk order keeps the
/// reduction deterministic.
#[derive(Clone, Copy, Debug, Default)]
pub struct Accum {
    pub n: u64,
    pub sum: f64,
    pub sumsq: f64,
}

impl Accum {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sumsq += x * x;
    }

    pub fn merge(&mut self, other: &Accum) {
        self.n += other.n;
        self.sum += other.sum;
        self.sumsq += other.sumsq;
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        let n = self.n as f64;
        ((self.sumsq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Accumulator for a pair of per-trial observations, retaining the cross
/// moment needed for ratio error propagation.
#[derive(Clone, Copy, Debug, Default)]
pub struct PairAccum {
    pub n: u64,
    pub sx: f64,
    pub sy: f64,
    pub sxx: f64,
    pub syy: f64,
    pub sxy: f64,
}

impl PairAccum {
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        self.sx += x;
        self.sy += y;
        self.sxx += x * x;
        self.syy += y * y;
        self.sxy += x * y;
    }

    pub fn merge(&mut self, other: &PairAccum) {
        self.n += other.n;
        self.sx += other.sx;
        self.sy += other.sy;
        self.sxx += other.sxx;
        self.syy += other.syy;
        self.sxy += other.sxy;
    }

    pub fn mean_x(&self) -> f64 {
        self.sx / self.n as f64
    }

    pub fn mean_y(&self) -> f64 {
        self.sy / self.n as f64
    }

    pub fn var_x(&self) -> f64 {
        let n = self.n as f64;
        ((self.sxx - self.sx * self.sx / n) / (n - 1.0)).max(0.0)
    }

    pub fn var_y(&self) -> f64 {
        let n = self.n as f64;
        ((self.syy - self.sy * self.sy / n) / (n - 1.0)).max(0.0)
    }

    pub fn cov(&self) -> f64 {
        let n = self.n as f64;
        (self.sxy - self.sx * self.sy / n) / (n - 1.0)
    }

    /// Delta-method standard error of `log(mean_x / mean_y)`.
    pub fn log_ratio_stderr(&self) -> f64 {
        let n = self.n as f64;
        let mx = self.mean_x();
        let my = self.mean_y();
        let v = self.var_x() / (mx * mx) + self.var_y() / (my * my)
            - 2.0 * self.cov() / (mx * my);
        (v.max(0.0) / n).sqrt()
    }
}

/// Weighted least-squares line fit.
#[derive(Clone, Copy, Debug)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

/// Fit `y = a + b x` with weights `w` (typically `1/se^2`). The slope
/// standard error comes from the weight matrix, i.e. it trusts the supplied
/// per-point variances.
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> LinearFit {
    assert!(x.len() == y.len() && y.len() == w.len() && x.len() >= 2);
    let sw: f64 = w.iter().sum();
    let xbar = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let ybar = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = x
        .iter()
        .zip(y.iter())
        .zip(w)
        .map(|((x, y), w)| w * (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    LinearFit {
        slope,
        intercept: ybar - slope * xbar,
        slope_stderr: (1.0 / sxx).sqrt(),
    }
}

/// Ordinary least-squares fit with the slope error taken from the residual
/// scatter, for series without per-point error bars.
pub fn line_fit_residual_se(x: &[f64], y: &[f64]) -> LinearFit {
    assert!(x.len() == y.len() && x.len() >= 3);
    let n = x.len() as f64;
    let xbar = x.iter().sum::<f64>() / n;
    let ybar = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let sigma2 = rss / (n - 2.0);
    LinearFit {
        slope,
        intercept,
        slope_stderr: (sigma2 / sxx).sqrt(),
    }
}

/// Upper-tail p-value of a chi-square statistic.
pub fn chi_square_p_value(statistic: f64, dof: u64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("dof > 0");
    1.0 - dist.cdf(statistic)
}

/// Weighted quantile of `(value, weight)` samples, by sorting values.
pub fn weighted_quantile(samples: &mut [(f64, f64)], q: f64) -> f64 {
    assert!((0.0..=1.0).contains(&q));
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = samples.iter().map(|s| s.1).sum();
    let target = q * total;
    let mut acc = 0.0;
    for (v, w) in samples.iter() {
        acc += w;
        if acc >= target {
            return *v;
        }
    }
    samples.last().map(|s| s.0).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_reduction_is_worker_count_invariant() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let partials = run_chunks(7, 10_000, 256, |rng, count| {
                    let mut acc = Accum::default();
                    for _ in 0..count {
                        acc.push(rand::Rng::random::<f64>(rng));
                    }
                    acc
                });
                let mut total = Accum::default();
                for p in &partials {
                    total.merge(p);
                }
                (total.mean(), total.stderr())
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn streams_differ_between_chunks() {
        let mut a = chunk_rng(1, 0);
        let mut b = chunk_rng(1, 1);
        let xa: f64 = rand::Rng::random(&mut a);
        let xb: f64 = rand::Rng::random(&mut b);
        assert_ne!(xa, xb);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| 3.0 - 0.5 * x).collect();
        let w = vec![1.0; 10];
        let fit = weighted_line_fit(&x, &y, &w);
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_p_matches_known_value() {
        // chi2 cdf with 2 dof is 1 - exp(-x/2)
        let p = chi_square_p_value(4.0, 2);
        assert!((p - (-2.0f64).exp()).abs() < 1e-12);
    }
}
