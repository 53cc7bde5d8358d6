//! Mean-zero step laws in the Cauchy (index-1) domain of attraction.
//!
//! A [`StepLaw`] has *exact* tails `P(X > x) = p L(x)/x` and
//! `P(X < -x) = q L(x)/x` for `x >= x0`, with `L` slowly varying, plus a
//! two-atom core at `±x_c` whose masses absorb the remaining probability and
//! cancel the tail mean analytically. The construction makes the tail
//! condition an identity rather than an asymptotic, so tail diagnostics can
//! be sharp, and it yields closed forms for the cdf, the quantile function
//! and the truncated mean
//!
//! ```text
//!   mu(x) = E[X 1{|X| <= x}] = -(p - q) (L(x) + l*(x)),   x >= x0,
//! ```
//!
//! where `l*(z)` is the tail integral of `L(y)/y`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mc::StepSampler;

#[derive(Debug, Error)]
pub enum HeavyTailError {
    #[error("x = {x} is below the tail domain start x_min = {x_min}")]
    BelowTailDomain { x: f64, x_min: f64 },
    #[error("l* undefined: the tail integral of L(y)/y diverges for constant L")]
    LStarUndefined,
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("n = {n} too small for tail domain: need n >= {min_n:.1}")]
    ScaleDomain { n: u64, min_n: f64 },
    #[error(
        "two-atom core cannot absorb the tail mean: need |p-q|(L(x0)+l*(x0))/x_c = {needed:.3e} <= {available:.3e}; increase x_c or x0"
    )]
    CoreInfeasible { needed: f64, available: f64 },
    #[error("analytic mean residual {residual:.3e} exceeds mean_tol {tol:.3e}")]
    MeanResidual { residual: f64, tol: f64 },
    #[error("scale_a residual {residual:.3e} exceeds tolerance at n = {n}")]
    ScaleResidual { n: u64, residual: f64 },
}

/// The slowly varying tail factor `L`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SlowlyVarying {
    /// `L(x) = c / (log x)^{m+1}`.
    LogPower { c: f64, m: f64 },
    /// `L(x) = c`. Pareto-type tail; `l*` diverges.
    Constant { c: f64 },
}

/// A slowly varying function together with the start of its tail domain.
#[derive(Clone, Copy, Debug)]
pub struct SlowlyVaryingSpec {
    pub kind: SlowlyVarying,
    pub x_min: f64,
}

impl SlowlyVaryingSpec {
    pub fn new(kind: SlowlyVarying, x_min: f64) -> Result<Self, HeavyTailError> {
        match kind {
            SlowlyVarying::LogPower { c, m } => {
                if !(c > 0.0) {
                    return Err(HeavyTailError::InvalidParameter { name: "c", value: c });
                }
                if !(m > 0.0) {
                    return Err(HeavyTailError::InvalidParameter { name: "m", value: m });
                }
                // log x >= 1 on the whole tail domain
                if !(x_min >= std::f64::consts::E) {
                    return Err(HeavyTailError::InvalidParameter {
                        name: "x_min",
                        value: x_min,
                    });
                }
            }
            SlowlyVarying::Constant { c } => {
                if !(c > 0.0) {
                    return Err(HeavyTailError::InvalidParameter { name: "c", value: c });
                }
                if !(x_min > 0.0) {
                    return Err(HeavyTailError::InvalidParameter {
                        name: "x_min",
                        value: x_min,
                    });
                }
            }
        }
        Ok(Self { kind, x_min })
    }

    /// Evaluate `L(x)` for `x` in the tail domain.
    pub fn eval(&self, x: f64) -> Result<f64, HeavyTailError> {
        if x < self.x_min {
            return Err(HeavyTailError::BelowTailDomain {
                x,
                x_min: self.x_min,
            });
        }
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: f64) -> f64 {
        match self.kind {
            SlowlyVarying::LogPower { c, m } => c / x.ln().powf(m + 1.0),
            SlowlyVarying::Constant { c } => c,
        }
    }

    /// `l*(z) = int_z^inf L(y)/y dy`; closed form `c / (m (log z)^m)` for the
    /// log-power family, divergent for constant `L`.
    pub fn tail_integral(&self, z: f64) -> Result<f64, HeavyTailError> {
        if z < self.x_min {
            return Err(HeavyTailError::BelowTailDomain {
                x: z,
                x_min: self.x_min,
            });
        }
        match self.kind {
            SlowlyVarying::LogPower { c, m } => Ok(c / (m * z.ln().powf(m))),
            SlowlyVarying::Constant { .. } => Err(HeavyTailError::LStarUndefined),
        }
    }
}

/// A mean-zero step distribution with exact regularly-varying tails.
#[derive(Clone, Debug)]
pub struct StepLaw {
    p: f64,
    q: f64,
    sv: SlowlyVaryingSpec,
    x0: f64,
    x_c: f64,
    mean_tol: f64,
    /// `L(x0)/x0`, the per-unit tail at the domain start.
    sbar_x0: f64,
    /// `L(x0) + l*(x0)`; zero sentinel for the constant (symmetric) kind.
    tail_mean_unit: f64,
    atom_up: f64,
    atom_down: f64,
}

impl StepLaw {
    /// Full-control constructor.
    ///
    /// `p` is the right-tail weight (`q = 1 - p`), `x0` the tail start and
    /// `x_c in (0, x0]` the location of the core atoms.
    pub fn with_params(
        p: f64,
        sv: SlowlyVaryingSpec,
        x0: f64,
        x_c: f64,
        mean_tol: f64,
    ) -> Result<Self, HeavyTailError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(HeavyTailError::InvalidParameter { name: "p", value: p });
        }
        if !(x0 >= sv.x_min) {
            return Err(HeavyTailError::InvalidParameter { name: "x0", value: x0 });
        }
        if !(x_c > 0.0 && x_c <= x0) {
            return Err(HeavyTailError::InvalidParameter { name: "x_c", value: x_c });
        }
        let q = 1.0 - p;
        if let SlowlyVarying::LogPower { m, .. } = sv.kind {
            if x0 < (m + 2.0).exp() {
                return Err(HeavyTailError::InvalidParameter { name: "x0", value: x0 });
            }
        }
        let l_x0 = sv.eval(x0)?;
        let sbar_x0 = l_x0 / x0;
        if sbar_x0 >= 1.0 {
            return Err(HeavyTailError::InvalidParameter { name: "x0", value: x0 });
        }
        let core_mass = 1.0 - sbar_x0;
        let tail_mean_unit = match sv.kind {
            SlowlyVarying::LogPower { .. } => l_x0 + sv.tail_integral(x0)?,
            SlowlyVarying::Constant { .. } => {
                // E|X| is infinite; only the symmetric case has all truncated
                // means (and hence the principal-value mean) equal to zero.
                if p != q {
                    return Err(HeavyTailError::CoreInfeasible {
                        needed: f64::INFINITY,
                        available: core_mass,
                    });
                }
                0.0
            }
        };
        let imbalance = (p - q) * tail_mean_unit / x_c;
        if imbalance.abs() > core_mass {
            return Err(HeavyTailError::CoreInfeasible {
                needed: imbalance.abs(),
                available: core_mass,
            });
        }
        let atom_up = 0.5 * (core_mass - imbalance);
        let atom_down = 0.5 * (core_mass + imbalance);
        let law = Self {
            p,
            q,
            sv,
            x0,
            x_c,
            mean_tol,
            sbar_x0,
            tail_mean_unit,
            atom_up,
            atom_down,
        };
        let residual = law.mean_residual().abs();
        if residual > mean_tol {
            return Err(HeavyTailError::MeanResidual {
                residual,
                tol: mean_tol,
            });
        }
        Ok(law)
    }

    /// Log-power law `L(x) = c/(log x)^{m+1}` with the default tail start
    /// `x0 = e^{m+2}` and unit core atoms.
    pub fn log_power(p: f64, c: f64, m: f64) -> Result<Self, HeavyTailError> {
        let x0 = (m + 2.0).exp();
        Self::log_power_with(p, c, m, x0, 1.0)
    }

    pub fn log_power_with(
        p: f64,
        c: f64,
        m: f64,
        x0: f64,
        x_c: f64,
    ) -> Result<Self, HeavyTailError> {
        let sv = SlowlyVaryingSpec::new(SlowlyVarying::LogPower { c, m }, std::f64::consts::E)?;
        Self::with_params(p, sv, x0, x_c, 1e-12)
    }

    /// Symmetric Pareto-type diagnostic law (`p = q = 1/2`, constant `L`).
    /// `E|X|` is infinite; every truncated mean is zero by symmetry. Useful
    /// for the `a_n = c n` scaling checks, rejected by experiment configs.
    pub fn constant_symmetric(c: f64, x0: f64, x_c: f64) -> Result<Self, HeavyTailError> {
        let sv = SlowlyVaryingSpec::new(SlowlyVarying::Constant { c }, f64::MIN_POSITIVE)?;
        Self::with_params(0.5, sv, x0, x_c, 1e-12)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn x_c(&self) -> f64 {
        self.x_c
    }

    pub fn sv(&self) -> &SlowlyVaryingSpec {
        &self.sv
    }

    pub fn mean_tol(&self) -> f64 {
        self.mean_tol
    }

    pub fn is_symmetric(&self) -> bool {
        self.p == self.q
    }

    pub fn atom_masses(&self) -> (f64, f64) {
        (self.atom_up, self.atom_down)
    }

    /// `L(x)/x` on the tail domain.
    fn sbar(&self, x: f64) -> f64 {
        self.sv.eval_unchecked(x) / x
    }

    /// Residual of the analytic mean (exactly zero in exact arithmetic).
    pub fn mean_residual(&self) -> f64 {
        self.x_c * (self.atom_up - self.atom_down) + (self.p - self.q) * self.tail_mean_unit
    }

    /// `P(X > x)`.
    pub fn tail_upper(&self, x: f64) -> f64 {
        if x >= self.x0 {
            self.p * self.sbar(x)
        } else if x >= self.x_c {
            self.p * self.sbar_x0
        } else if x >= -self.x_c {
            self.p * self.sbar_x0 + self.atom_up
        } else if x >= -self.x0 {
            1.0 - self.q * self.sbar_x0
        } else {
            1.0 - self.q * self.sbar(-x)
        }
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - self.tail_upper(x)
    }

    /// Inverse cdf. Atoms map half-open plateaus of `u` onto `±x_c`.
    pub fn quantile(&self, u: f64) -> f64 {
        assert!((0.0..1.0).contains(&u), "u must lie in [0, 1)");
        let u = u.max(f64::MIN_POSITIVE);
        let b1 = self.q * self.sbar_x0;
        let b2 = b1 + self.atom_down;
        let b3 = b2 + self.atom_up;
        if u < b1 {
            -self.invert_sbar(u / self.q)
        } else if u < b2 {
            -self.x_c
        } else if u < b3 {
            self.x_c
        } else {
            self.invert_sbar((1.0 - u).max(f64::MIN_POSITIVE) / self.p)
        }
    }

    /// Solve `L(x)/x = v` for `x >= x0` (valid for `0 < v <= L(x0)/x0`).
    fn invert_sbar(&self, v: f64) -> f64 {
        match self.sv.kind {
            SlowlyVarying::Constant { c } => c / v,
            SlowlyVarying::LogPower { c, m } => {
                // In y = log x: y + (m+1) log y = t with t = log c - log v.
                // psi is increasing and concave, so Newton converges once it
                // lands below the root; start at max(log x0, t).
                let t = c.ln() - v.ln();
                let y_min = self.x0.ln();
                let mut y = y_min.max(t);
                for _ in 0..64 {
                    let psi = y + (m + 1.0) * y.ln() - t;
                    let dpsi = 1.0 + (m + 1.0) / y;
                    let step = psi / dpsi;
                    y = (y - step).max(1.0);
                    if step.abs() <= 1e-15 * (1.0 + y) {
                        break;
                    }
                }
                y.exp()
            }
        }
    }

    /// `l*(z)` with the law's tail domain.
    pub fn l_star(&self, z: f64) -> Result<f64, HeavyTailError> {
        if z < self.x0 {
            return Err(HeavyTailError::BelowTailDomain {
                x: z,
                x_min: self.x0,
            });
        }
        self.sv.tail_integral(z)
    }

    /// Truncated mean `mu(x) = E[X 1{|X| <= x}]`, in closed form.
    pub fn truncated_mean(&self, x: f64) -> f64 {
        assert!(x > 0.0, "truncation level must be positive");
        if x < self.x_c {
            0.0
        } else if x < self.x0 {
            self.x_c * (self.atom_up - self.atom_down)
        } else {
            match self.sv.kind {
                SlowlyVarying::Constant { .. } => 0.0,
                SlowlyVarying::LogPower { .. } => {
                    let l = self.sv.eval_unchecked(x);
                    let lstar = self.sv.tail_integral(x).expect("log-power tail integral");
                    -(self.p - self.q) * (l + lstar)
                }
            }
        }
    }

    /// Smallest `n` for which `a_n` exists above the tail domain.
    pub fn scale_min_n(&self) -> f64 {
        1.0 / self.sbar_x0
    }

    /// `a_n`: the solution of `L(a)/a = 1/n` on `a >= x0`.
    pub fn scale_a(&self, n: u64) -> Result<f64, HeavyTailError> {
        if n == 0 {
            return Err(HeavyTailError::InvalidParameter {
                name: "n",
                value: 0.0,
            });
        }
        let target = 1.0 / n as f64;
        if target > self.sbar_x0 {
            return Err(HeavyTailError::ScaleDomain {
                n,
                min_n: self.scale_min_n(),
            });
        }
        let a = self.invert_sbar(target);
        let residual = (self.sbar(a) * n as f64 - 1.0).abs();
        if residual > 1e-10 {
            return Err(HeavyTailError::ScaleResidual { n, residual });
        }
        Ok(a)
    }

    /// `h_n = n mu(a_n)`.
    pub fn scale_h(&self, n: u64) -> Result<f64, HeavyTailError> {
        let a = self.scale_a(n)?;
        Ok(n as f64 * self.truncated_mean(a))
    }

    /// Upper quantile of the positive part of the step: smallest `t` with
    /// `P(X > t) <= (1 - prob) P(X > 0)`. Used to size rejection envelopes.
    pub fn positive_jump_quantile(&self, prob: f64) -> f64 {
        assert!((0.0..1.0).contains(&prob));
        let p_pos = self.atom_up + self.p * self.sbar_x0;
        let target = (1.0 - prob) * p_pos;
        if target >= self.p * self.sbar_x0 {
            self.x0
        } else {
            self.invert_sbar(target / self.p)
        }
    }
}

impl StepSampler for StepLaw {
    fn step(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

/// One row of the materialized scaling sequences.
#[derive(Clone, Copy, Debug)]
pub struct ScalingRow {
    pub n: u64,
    /// `a_n` solving `L(a_n)/a_n = 1/n`.
    pub a: f64,
    /// `h_n = n mu(a_n)`.
    pub h: f64,
    /// `b_n = 1/(n a_n)`.
    pub b: f64,
    /// `L4(n) = a_n / n`.
    pub l4: f64,
}

/// The scaling sequences `a_n`, `h_n`, `b_n`, `L4(n)` evaluated on a grid.
#[derive(Clone, Debug)]
pub struct ScalingSequences {
    rows: Vec<ScalingRow>,
}

impl ScalingSequences {
    pub fn materialize(law: &StepLaw, ns: &[u64]) -> Result<Self, HeavyTailError> {
        let mut rows = Vec::with_capacity(ns.len());
        for &n in ns {
            let a = law.scale_a(n)?;
            let h = n as f64 * law.truncated_mean(a);
            rows.push(ScalingRow {
                n,
                a,
                h,
                b: 1.0 / (n as f64 * a),
                l4: a / n as f64,
            });
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ScalingRow] {
        &self.rows
    }
}
