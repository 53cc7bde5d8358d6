//! Run configuration: a single TOML document per run. Every field has a
//! default, and the fully resolved configuration is echoed into the run
//! manifest so a run is reproducible from the manifest alone.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cauchy_bpre::environment::{EnvironmentDriver, EnvironmentFamily};
use cauchy_bpre::fluctuation::LatticeWalkSpec;
use cauchy_bpre::heavy_tail::StepLaw;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub law: LawConfig,
    #[serde(default)]
    pub family: FamilyConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub renewal: RenewalSection,
    #[serde(default)]
    pub spitzer: SpitzerSection,
    #[serde(default)]
    pub lemma4: Lemma4Section,
    #[serde(default)]
    pub htransform: HtransformSection,
    #[serde(default)]
    pub tanaka: TanakaSection,
    #[serde(default)]
    pub eta_sum: EtaSumSection,
    #[serde(default)]
    pub tau_split: TauSplitSection,
    #[serde(default)]
    pub condition_c: ConditionCSection,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LawConfig {
    pub kind: String,
    pub p: f64,
    pub c: f64,
    pub m: f64,
    /// Tail-domain start; defaults to `e^{m+2}` for log-power laws.
    pub x0: Option<f64>,
    /// Core atom location; defaults to 1.
    pub x_c: Option<f64>,
}

impl Default for LawConfig {
    fn default() -> Self {
        Self {
            kind: "log-power".into(),
            p: 0.7,
            c: 1.0,
            m: 2.0,
            x0: None,
            x_c: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub kind: String,
    pub eta0: f64,
    /// Truncation level of the zeta moment functionals.
    pub a: u64,
    pub beta: f64,
    pub log_mean_shift: f64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            kind: "linear-fractional".into(),
            eta0: 2.0,
            a: 3,
            beta: 1.0,
            log_mean_shift: 0.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    #[serde(default = "default_ns")]
    pub ns: Vec<u64>,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// 0 means all available cores.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// "law" or "lattice": which step model drives walk experiments.
    #[serde(default = "default_model")]
    pub model: String,
}

fn default_ns() -> Vec<u64> {
    vec![256, 1024, 4096]
}

fn default_trials() -> u64 {
    10_000
}

fn default_seed() -> u64 {
    42
}

fn default_output_dir() -> String {
    "out".into()
}

fn default_model() -> String {
    "law".into()
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub support: Vec<i64>,
    pub probs: Vec<f64>,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            support: vec![1, -1],
            probs: vec![0.5, 0.5],
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RenewalSection {
    pub grid_max: f64,
    pub grid_step: f64,
    pub trials: u64,
    pub step_cap: u64,
}

impl Default for RenewalSection {
    fn default() -> Self {
        Self {
            grid_max: 12.0,
            grid_step: 0.5,
            trials: 100_000,
            step_cap: 10_000_000,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SpitzerSection {
    pub n_max: usize,
}

impl Default for SpitzerSection {
    fn default() -> Self {
        Self { n_max: 512 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Lemma4Section {
    pub xs: Vec<f64>,
}

impl Default for Lemma4Section {
    fn default() -> Self {
        Self { xs: vec![1.0, 5.0] }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HtransformSection {
    pub xs: Vec<f64>,
    /// Horizon for the kernel-vs-weighting cross check.
    pub cross_check_n: usize,
}

impl Default for HtransformSection {
    fn default() -> Self {
        Self {
            xs: vec![0.0, 1.0, 2.0, 5.0, 10.0],
            cross_check_n: 64,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TanakaSection {
    pub horizon_plus: usize,
    pub horizon_p: usize,
    pub epoch_cap: usize,
    pub height_bin_width: f64,
}

impl Default for TanakaSection {
    fn default() -> Self {
        Self {
            horizon_plus: 16_384,
            horizon_p: 4096,
            epoch_cap: 24,
            height_bin_width: 1.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EtaSumSection {
    pub k_total: usize,
}

impl Default for EtaSumSection {
    fn default() -> Self {
        Self { k_total: 10_000 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TauSplitSection {
    pub n_split: u64,
    pub eps: f64,
}

impl Default for TauSplitSection {
    fn default() -> Self {
        Self {
            n_split: 32,
            eps: 0.125,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionCSection {
    pub theta: f64,
    pub j_max: u64,
    pub eps: f64,
}

impl Default for ConditionCSection {
    fn default() -> Self {
        Self {
            theta: 0.1,
            j_max: 200,
            eps: 0.05,
        }
    }
}

pub const EXPERIMENTS: &[&str] = &[
    "tail-check",
    "spitzer",
    "renewal",
    "lemma4-ratio",
    "htransform",
    "tanaka",
    "eta-sum",
    "survival",
    "theorem-ratio",
    "tau-split",
    "condition-c",
];

impl Config {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: Config = toml::from_str(&text).context("invalid config")?;
        Ok(config)
    }

    /// Structural validation; returns the list of problems for exit code 2.
    pub fn validate(&self) -> Result<()> {
        if !EXPERIMENTS.contains(&self.run.experiment.as_str()) {
            bail!(
                "unknown experiment '{}' (expected one of {:?})",
                self.run.experiment,
                EXPERIMENTS
            );
        }
        if self.run.trials == 0 {
            bail!("trials must be positive");
        }
        if self.run.ns.is_empty() || self.run.ns.iter().any(|&n| n == 0) {
            bail!("ns must be a nonempty list of positive integers");
        }
        if !(0.0..=1.0).contains(&self.law.p) {
            bail!("law.p must lie in [0, 1]");
        }
        match self.run.model.as_str() {
            "law" | "lattice" => {}
            other => bail!("unknown model '{other}' (expected 'law' or 'lattice')"),
        }
        let theorem_experiments = ["theorem-ratio", "survival", "tau-split", "eta-sum"];
        if theorem_experiments.contains(&self.run.experiment.as_str())
            && (self.law.p - 0.5).abs() < 1e-12
        {
            bail!("p must differ from q for theorem experiments");
        }
        if self.run.experiment == "condition-c" && self.law.kind != "log-power" {
            bail!("condition-c needs a log-power law (the synthetic q family uses m)");
        }
        if self.run.experiment == "spitzer" && self.run.model != "lattice" {
            bail!("spitzer needs model = 'lattice' (exact q arrays come from the DP)");
        }
        Ok(())
    }

    pub fn build_law(&self) -> Result<StepLaw> {
        let law = match self.law.kind.as_str() {
            "log-power" => {
                let x0 = self.law.x0.unwrap_or((self.law.m + 2.0).exp());
                let x_c = self.law.x_c.unwrap_or(1.0);
                StepLaw::log_power_with(self.law.p, self.law.c, self.law.m, x0, x_c)
            }
            "constant" => {
                if (self.law.p - 0.5).abs() > 1e-12 {
                    bail!("constant-kind laws are symmetric diagnostics: set p = 0.5");
                }
                let x0 = self.law.x0.unwrap_or(10.0 * self.law.c);
                let x_c = self.law.x_c.unwrap_or(1.0);
                StepLaw::constant_symmetric(self.law.c, x0, x_c)
            }
            other => bail!("unknown law kind '{other}'"),
        };
        law.map_err(|e| anyhow::anyhow!("invalid law: {e}"))
    }

    pub fn build_lattice(&self) -> Result<LatticeWalkSpec> {
        LatticeWalkSpec::new(self.lattice.support.clone(), self.lattice.probs.clone())
            .map_err(|e| anyhow::anyhow!("invalid lattice: {e}"))
    }

    pub fn build_driver(&self) -> Result<EnvironmentDriver> {
        let family = match self.family.kind.as_str() {
            "linear-fractional" => EnvironmentFamily::LinearFractional {
                eta0: self.family.eta0,
            },
            "geometric" => EnvironmentFamily::Geometric,
            "poisson" => EnvironmentFamily::Poisson,
            other => bail!("unknown family '{other}'"),
        };
        Ok(EnvironmentDriver::new(family, self.build_law()?)
            .with_shift(self.family.log_mean_shift))
    }

    pub fn renewal_grid(&self) -> Vec<f64> {
        let steps = (self.renewal.grid_max / self.renewal.grid_step).round() as usize;
        (0..=steps).map(|i| i as f64 * self.renewal.grid_step).collect()
    }
}
