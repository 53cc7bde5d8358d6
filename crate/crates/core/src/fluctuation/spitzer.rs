//! The exact Spitzer-series engine.
//!
//! From the marginal positivity probabilities `q_k = P(S_k >= 0)` the
//! Sparre-Andersen identities give generating functions
//!
//! ```text
//!   sum_n ell_n s^n = exp( sum_k (q_k / k) s^k ),      ell_n = P(L_n >= 0),
//!   sum_n m_n   s^n = exp( sum_k ((1-q_k) / k) s^k ),  m_n   = P(M_n < 0),
//! ```
//!
//! whose product is `1/(1-s)`: the convolution `sum_k ell_k m_{n-k} = 1`
//! holds exactly for every `n`. The exp-of-power-series recurrence
//! `n ell_n = sum_{k=1}^{n} q_k ell_{n-k}` turns exact lattice `q` arrays
//! into exact `ell`/`m` sequences in `O(N^2)`.
//!
//! The same `q`-series defines the slowly varying function
//! `Lambda(1/(1-s)) = exp( sum_k (q_k/k) s^k )`; [`lambda_from_series`]
//! truncates after `K = ceil(20 n)` terms (the summand decays on scale `n`),
//! and [`lambda_from_fn`] evaluates analytic `q(.)` families for `n` far
//! beyond any materializable array by switching to an Euler-Maclaurin
//! integral remainder.

use thiserror::Error;

use crate::mc::line_fit_residual_se;

#[derive(Debug, Error)]
pub enum SpitzerError {
    #[error("q values must lie in [0, 1] (q[{index}] = {value})")]
    QOutOfRange { index: usize, value: f64 },
    #[error("series too short for lambda({n}): need K = {needed} terms, have {have}")]
    SeriesTooShort { n: f64, needed: usize, have: usize },
    #[error("lambda argument must be >= 2 (got {0})")]
    BadArgument(f64),
    #[error("g(j) = exp(j^(1-theta)) overflows f64 at j = {0}")]
    GOverflow(u64),
}

/// Exact Spitzer sequences built from a `q` array (`q[k-1] = P(S_k >= 0)`).
#[derive(Clone, Debug)]
pub struct SpitzerSeries {
    q: Vec<f64>,
    /// `ell[n] = P(L_n >= 0)`, with `ell[0] = 1`.
    ell: Vec<f64>,
    /// `m[n] = P(M_n < 0)`, with `m[0] = 1`.
    m: Vec<f64>,
}

/// The exp-of-power-series recurrence: `e_0 = 1`,
/// `n e_n = sum_{k=1}^n a_k e_{n-k}` computes `exp(sum a_k s^k / k)`.
pub fn spitzer_transform(a: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut e = Vec::with_capacity(n + 1);
    e.push(1.0f64);
    for i in 1..=n {
        let mut acc = 0.0;
        for k in 1..=i {
            acc += a[k - 1] * e[i - k];
        }
        e.push(acc / i as f64);
    }
    e
}

impl SpitzerSeries {
    pub fn from_nonneg_probs(q: Vec<f64>) -> Result<Self, SpitzerError> {
        for (i, &v) in q.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(SpitzerError::QOutOfRange { index: i + 1, value: v });
            }
        }
        let ell = spitzer_transform(&q);
        let comp: Vec<f64> = q.iter().map(|&v| 1.0 - v).collect();
        let m = spitzer_transform(&comp);
        Ok(Self { q, ell, m })
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// `q_k` for `k = 1..=N`.
    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// `ell_0..ell_N`.
    pub fn ell(&self) -> &[f64] {
        &self.ell
    }

    /// `m_0..m_N`.
    pub fn m(&self) -> &[f64] {
        &self.m
    }

    /// Largest deviation of `sum_{k<=n} ell_k m_{n-k}` from 1 over `n <= N`.
    pub fn convolution_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for n in 0..self.ell.len() {
            let s: f64 = (0..=n).map(|k| self.ell[k] * self.m[n - k]).sum();
            worst = worst.max((s - 1.0).abs());
        }
        worst
    }

    /// Invert the transform: recover `q` from `ell` via
    /// `q_n = n ell_n - sum_{k=1}^{n-1} q_k ell_{n-k}`.
    pub fn recover_q(&self) -> Vec<f64> {
        let n = self.q.len();
        let mut q = Vec::with_capacity(n);
        for i in 1..=n {
            let mut acc = i as f64 * self.ell[i];
            for k in 1..i {
                acc -= q[k - 1] * self.ell[i - k];
            }
            q.push(acc);
        }
        q
    }

    /// `Lambda(n)` from this series (see [`lambda_from_series`]).
    pub fn lambda(&self, n: f64) -> Result<LambdaEval, SpitzerError> {
        lambda_from_series(&self.q, n)
    }

    /// `Lambda~(n)`: the same functional built from the `1 - q` series.
    pub fn lambda_tilde(&self, n: f64) -> Result<LambdaEval, SpitzerError> {
        let comp: Vec<f64> = self.q.iter().map(|&v| 1.0 - v).collect();
        lambda_from_series(&comp, n)
    }
}

/// A `Lambda` evaluation together with its truncation-error report.
#[derive(Clone, Copy, Debug)]
pub struct LambdaEval {
    pub value: f64,
    pub log_value: f64,
    /// Upper bound on the truncated log-sum tail (assumes `q <= 1` beyond
    /// the truncation point).
    pub log_tail_bound: f64,
}

/// `Lambda(n) = exp( sum_{k>=1} (q_k/k)(1-1/n)^k )`, truncated at
/// `K = ceil(20 n)`; the geometric tail beyond `K` is bounded and reported.
pub fn lambda_from_series(q: &[f64], n: f64) -> Result<LambdaEval, SpitzerError> {
    if !(n >= 2.0) {
        return Err(SpitzerError::BadArgument(n));
    }
    let needed = (20.0 * n).ceil() as usize;
    if q.len() < needed {
        return Err(SpitzerError::SeriesTooShort {
            n,
            needed,
            have: q.len(),
        });
    }
    let s = 1.0 - 1.0 / n;
    let mut log_sum = 0.0;
    let mut s_pow = 1.0;
    for (k, &qk) in q.iter().take(needed).enumerate() {
        s_pow *= s;
        log_sum += qk / (k + 1) as f64 * s_pow;
    }
    let tail = n * s.powi(needed as i32 + 1) / (needed + 1) as f64;
    Ok(LambdaEval {
        value: log_sum.exp(),
        log_value: log_sum,
        log_tail_bound: tail,
    })
}

/// `Lambda(n)` for an analytic `q(k)` (treated as a smooth function of a real
/// argument). Sums the first `min(ceil(20 n), 2^20)` terms directly; when `n`
/// is too large to materialize, the remainder is an Euler-Maclaurin corrected
/// integral, which handles arguments as large as `n ~ e^700`.
pub fn lambda_from_fn(q: impl Fn(f64) -> f64, n: f64) -> Result<LambdaEval, SpitzerError> {
    if !(n >= 2.0) {
        return Err(SpitzerError::BadArgument(n));
    }
    let ln_s = (-1.0 / n).ln_1p();
    let full = 20.0 * n;
    let k_direct = if full <= (1u64 << 20) as f64 {
        full.ceil() as u64
    } else {
        1u64 << 20
    };
    let mut log_sum = 0.0;
    let mut s_pow = 1.0;
    let s = ln_s.exp();
    for k in 1..=k_direct {
        s_pow *= s;
        log_sum += q(k as f64) / k as f64 * s_pow;
    }
    let log_tail_bound = if (k_direct as f64) < full {
        // remainder sum_{k > K0} g(k) with g(t) = q(t)/t e^{t ln s}:
        // integral + g(a)/2 - g'(a)/12 at a = K0 + 1
        let g = |t: f64| q(t) / t * (t * ln_s).exp();
        let a = (k_direct + 1) as f64;
        let upper = (45.0 * n).min(f64::MAX / 2.0);
        let integral = adaptive_simpson_log_sub(&g, a, upper);
        let h = a * 1e-6;
        let dg = (g(a + h) - g(a - h)) / (2.0 * h);
        log_sum += integral + g(a) / 2.0 - dg / 12.0;
        // Euler-Maclaurin remainder is third-derivative order; report the
        // scale of the first dropped term
        g(a).abs() * 1e-6 + 1e-12
    } else {
        let needed = full.ceil() as f64;
        n * ((needed + 1.0) * ln_s).exp() / (needed + 1.0)
    };
    Ok(LambdaEval {
        value: log_sum.exp(),
        log_value: log_sum,
        log_tail_bound,
    })
}

/// Integrate `g` over `[a, b]` in `u = log t` coordinates with adaptive
/// Simpson (the integrand is smooth and slowly varying in `u` up to the
/// exponential cutoff).
fn adaptive_simpson_log_sub(g: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let f = |u: f64| {
        let t = u.exp();
        g(t) * t // Jacobian dt = t du
    };
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        eps: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * eps {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, fm, flm, left, eps / 2.0, depth - 1)
                + rec(f, m, b, fm, fb, frm, right, eps / 2.0, depth - 1)
        }
    }
    let (lo, hi) = (a.ln(), b.ln());
    // split at a handful of fixed points to seed the adaptive pass
    let knots = 24;
    let mut total = 0.0;
    for i in 0..knots {
        let u0 = lo + (hi - lo) * i as f64 / knots as f64;
        let u1 = lo + (hi - lo) * (i + 1) as f64 / knots as f64;
        let f0 = f(u0);
        let f1 = f(u1);
        let fm = f(0.5 * (u0 + u1));
        let whole = (u1 - u0) / 6.0 * (f0 + 4.0 * fm + f1);
        total += rec(&f, u0, u1, f0, f1, fm, whole, 1e-11, 40);
    }
    total
}

/// The synthetic positivity sequence of the log-power example:
/// `q(k) = p m / ((p - q) ln k)` for `k >= 2`, zero at `k = 1`.
pub fn example1_nonneg_prob(p: f64, q: f64, m: f64) -> impl Fn(f64) -> f64 {
    let scale = p * m / (p - q);
    move |k: f64| {
        if k < 2.0 {
            0.0
        } else {
            scale / k.ln()
        }
    }
}

/// Report of the `sum_j 1/Lambda(g(j)) < infty` diagnostic for
/// `g(j) = exp(j^(1-theta))`.
#[derive(Clone, Debug)]
pub struct ConditionCReport {
    pub theta: f64,
    pub j_max: u64,
    /// `(j, 1/Lambda(g(j)), partial sum)` rows.
    pub terms: Vec<(u64, f64, f64)>,
    /// Fitted decay exponent kappa of `1/Lambda(g(j)) ~ j^(-kappa)` over the
    /// upper half of the j-range.
    pub fitted_exponent: f64,
    pub exponent_stderr: f64,
    /// Declared consistent with convergence when the fitted exponent
    /// exceeds 1.
    pub consistent: bool,
}

/// Partial sums of `1/Lambda(g(j))` with a fitted decay exponent.
pub fn condition_c_check(
    q: impl Fn(f64) -> f64,
    theta: f64,
    j_max: u64,
) -> Result<ConditionCReport, SpitzerError> {
    assert!(theta > 0.0 && theta < 1.0, "theta must lie in (0,1)");
    let mut terms = Vec::with_capacity(j_max as usize);
    let mut partial = 0.0;
    for j in 1..=j_max {
        let exponent = (j as f64).powf(1.0 - theta);
        if exponent > 700.0 {
            return Err(SpitzerError::GOverflow(j));
        }
        // g(j) = e^{j^{1-theta}} >= e > 2 for every j >= 1
        let g = exponent.exp();
        let term = 1.0 / lambda_from_fn(&q, g)?.value;
        partial += term;
        terms.push((j, term, partial));
    }
    let half = (j_max / 2).max(2) as usize;
    let xs: Vec<f64> = terms[half - 1..].iter().map(|t| (t.0 as f64).ln()).collect();
    let ys: Vec<f64> = terms[half - 1..].iter().map(|t| t.1.ln()).collect();
    let fit = line_fit_residual_se(&xs, &ys);
    let fitted_exponent = -fit.slope;
    Ok(ConditionCReport {
        theta,
        j_max,
        terms,
        fitted_exponent,
        exponent_stderr: fit.slope_stderr,
        consistent: fitted_exponent > 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluctuation::LatticeWalkSpec;

    #[test]
    fn all_ones_gives_constant_ell() {
        // q == 1: exp(sum s^k/k) = 1/(1-s), so ell_n = 1 for all n
        let s = SpitzerSeries::from_nonneg_probs(vec![1.0; 64]).unwrap();
        assert!(s.ell().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(s.m()[0] == 1.0 && s.m()[1..].iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn symmetric_unit_walk_ell_matches_enumeration() {
        let walk = LatticeWalkSpec::symmetric_unit();
        let q = walk.exact_nonneg_probs(16).unwrap();
        let s = SpitzerSeries::from_nonneg_probs(q).unwrap();
        // closed form ell_n = C(n, floor(n/2)) 2^-n
        assert!((s.ell()[2] - 0.5).abs() < 1e-15);
        assert!((s.ell()[4] - 0.375).abs() < 1e-15);
        // exhaustive enumeration oracle
        for n in 1..=16usize {
            let brute = walk.fold_paths(n, 0.0, |acc, path, prob| {
                if path.iter().all(|&v| v >= 0) {
                    acc + prob
                } else {
                    acc
                }
            });
            assert!(
                (s.ell()[n] - brute).abs() < 1e-12,
                "n={n}: engine {} vs enumeration {brute}",
                s.ell()[n]
            );
        }
    }

    #[test]
    fn convolution_identity_exact() {
        let walk = LatticeWalkSpec::biased_unit(0.6);
        let q = walk.exact_nonneg_probs(256).unwrap();
        let s = SpitzerSeries::from_nonneg_probs(q).unwrap();
        assert!(s.convolution_residual() < 1e-10);
    }

    #[test]
    fn transform_inverts() {
        let walk = LatticeWalkSpec::biased_unit(0.55);
        let q = walk.exact_nonneg_probs(128).unwrap();
        let s = SpitzerSeries::from_nonneg_probs(q.clone()).unwrap();
        let rec = s.recover_q();
        let worst = q
            .iter()
            .zip(&rec)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-9);
    }

    #[test]
    fn m_series_matches_killed_dp() {
        let walk = LatticeWalkSpec::biased_unit(0.6);
        let q = walk.exact_nonneg_probs(64).unwrap();
        let s = SpitzerSeries::from_nonneg_probs(q).unwrap();
        let dp = walk.exact_max_neg_probs(64).unwrap();
        for n in 1..=64usize {
            assert!(
                (s.m()[n] - dp[n - 1]).abs() < 1e-12,
                "n={n}: spitzer {} vs dp {}",
                s.m()[n],
                dp[n - 1]
            );
        }
    }

    #[test]
    fn q_out_of_range_rejected() {
        assert!(matches!(
            SpitzerSeries::from_nonneg_probs(vec![0.5, 1.2]),
            Err(SpitzerError::QOutOfRange { index: 2, .. })
        ));
    }

    #[test]
    fn lambda_zero_q_is_one() {
        let s = SpitzerSeries::from_nonneg_probs(vec![0.0; 1024]).unwrap();
        for n in [2.0, 8.0, 32.0] {
            assert_eq!(s.lambda(n).unwrap().value, 1.0);
        }
    }

    #[test]
    fn lambda_constant_q_grows_like_n_to_rho() {
        // q == rho: Lambda(n) = exp(-rho log(1-s) + O(1/n)) ~ n^rho
        let rho = 0.37;
        let mut ratios = Vec::new();
        for k in [6u32, 8, 10, 12] {
            let n = (1u64 << k) as f64;
            let v = lambda_from_fn(|_| rho, n).unwrap().value;
            ratios.push(v / n.powf(rho));
        }
        for r in &ratios {
            assert!(
                (r / ratios[0] - 1.0).abs() < 0.05,
                "Lambda(n)/n^rho drift: {ratios:?}"
            );
        }
    }

    #[test]
    fn lambda_series_too_short_reports_needed_length() {
        let s = SpitzerSeries::from_nonneg_probs(vec![0.5; 100]).unwrap();
        match s.lambda(64.0) {
            Err(SpitzerError::SeriesTooShort { needed, have, .. }) => {
                assert_eq!(needed, 1280);
                assert_eq!(have, 100);
            }
            other => panic!("expected SeriesTooShort, got {other:?}"),
        }
    }

    #[test]
    fn lambda_fn_agrees_with_series_on_moderate_n() {
        let qf = example1_nonneg_prob(0.7, 0.3, 2.0);
        let q: Vec<f64> = (1..=40_960).map(|k| qf(k as f64)).collect();
        for n in [16.0, 256.0, 2048.0] {
            let a = lambda_from_series(&q, n).unwrap();
            let b = lambda_from_fn(&qf, n).unwrap();
            assert!(
                (a.log_value - b.log_value).abs() < 1e-9,
                "n={n}: {} vs {}",
                a.log_value,
                b.log_value
            );
        }
    }

    #[test]
    fn lambda_fn_hybrid_tail_is_smooth() {
        // the direct/hybrid switch at 20n = 2^20 must not kink the value
        let qf = example1_nonneg_prob(0.7, 0.3, 2.0);
        let n_lo = ((1u64 << 20) as f64 / 20.0) * 0.999;
        let n_hi = ((1u64 << 20) as f64 / 20.0) * 1.001;
        let a = lambda_from_fn(&qf, n_lo).unwrap().log_value;
        let b = lambda_from_fn(&qf, n_hi).unwrap().log_value;
        assert!((a - b).abs() < 1e-3, "kink across evaluation strategies: {a} vs {b}");
    }

    #[test]
    fn lambda_product_telescopes_to_n() {
        // Lambda(n) * Lambda~(n) = exp(sum s^k/k) = n (1 + o(1)) for any q
        let q: Vec<f64> = vec![0.37; 90_000];
        let comp: Vec<f64> = q.iter().map(|&v| 1.0 - v).collect();
        let n = 4096.0;
        let prod =
            lambda_from_series(&q, n).unwrap().value * lambda_from_series(&comp, n).unwrap().value;
        // exp(-log(1-s)) with s = 1 - 1/n is exactly n; truncation gives o(1)
        assert!(
            (prod / n - 1.0).abs() < 0.05,
            "Lambda * Lambda~ = {prod} vs n = {n}"
        );
    }

    #[test]
    fn condition_c_example_regimes() {
        // pm/(p-q) = 2, theta = 0.1: fitted exponent ~ 1.8 -> consistent
        let report = condition_c_check(example1_nonneg_prob(0.7, 0.3, 2.0 * 0.4 / 0.7), 0.1, 160).unwrap();
        assert!(
            (report.fitted_exponent - 1.8).abs() < 0.25,
            "exponent {}",
            report.fitted_exponent
        );
        assert!(report.consistent);
        // pm/(p-q) = 1 (boundary m = (p-q)/p): exponent ~ 0.9 -> inconsistent
        let report = condition_c_check(example1_nonneg_prob(0.7, 0.3, 0.4 / 0.7), 0.1, 160).unwrap();
        assert!(report.fitted_exponent < 1.0);
        assert!(!report.consistent);
    }

    #[test]
    fn condition_c_trivial_q_one() {
        // q == 1: Lambda(g(j)) = g(j)(1+o(1)), terms vanish super fast
        let report = condition_c_check(|_| 1.0, 0.1, 60).unwrap();
        assert!(report.consistent);
        let last = report.terms.last().unwrap();
        assert!(last.1 < 1e-15);
    }
}
