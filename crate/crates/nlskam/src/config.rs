//! One structured config file drives every subcommand. Parsed with serde,
//! validated as a whole (all violations reported together), and echoed into
//! every report for provenance.

use crate::engine::EngineParams;
use crate::error::{KamError, Result};
use crate::lattice::{ModeIndex, SiteConfig};
use crate::model::{ModelSpec, NonlinearitySpec};
use crate::series::DomainParams;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub n_max: i32,
    pub s_sites: Vec<Vec<i32>>,
    pub st_sites: Vec<Vec<i32>>,
    pub xi: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub amp_u: Vec<f64>,
    #[serde(default)]
    pub amp_v: Vec<f64>,
    #[serde(default = "default_degree_cap")]
    pub degree_cap: u32,
    #[serde(default)]
    pub nonlinearity: Vec<GTerm>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GTerm {
    pub p: u32,
    pub q: u32,
    pub g: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub r: f64,
    pub s: f64,
    pub rho: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KamConfig {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Effective exponent in runtime bounds gamma / K^tau.
    #[serde(default)]
    pub tau_effective: Option<f64>,
    /// The full-scale exponent d!(2d(d+1)+b+bt+1)+1; filled in when absent.
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default = "default_schedule_c")]
    pub schedule_c: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_target_eps")]
    pub target_eps: f64,
    #[serde(default = "default_order_cap")]
    pub order_cap: usize,
    #[serde(default = "default_k_cap")]
    pub k_cap: u32,
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
    #[serde(default = "default_compact_rel")]
    pub compact_rel: f64,
    #[serde(default = "default_compact_cap")]
    pub compact_cap: usize,
}

impl Default for KamConfig {
    fn default() -> Self {
        KamConfig {
            gamma: default_gamma(),
            tau_effective: None,
            tau: None,
            schedule_c: default_schedule_c(),
            max_steps: default_max_steps(),
            target_eps: default_target_eps(),
            order_cap: default_order_cap(),
            k_cap: default_k_cap(),
            residual_tol: default_residual_tol(),
            compact_rel: default_compact_rel(),
            compact_cap: default_compact_cap(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    /// Defaults to kam.gamma.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_measure_tau")]
    pub tau: f64,
    #[serde(default)]
    pub k_lo: u32,
    #[serde(default = "default_measure_k_hi")]
    pub k_hi: u32,
    #[serde(default)]
    pub box_lo: Vec<f64>,
    #[serde(default)]
    pub box_hi: Vec<f64>,
    /// Grid shape; used when `samples` is zero.
    #[serde(default)]
    pub grid: Vec<usize>,
    /// Random sample count; zero selects the grid.
    #[serde(default)]
    pub samples: usize,
    /// Re-run the KAM pipeline at every sampled point and test each step's
    /// annulus against that step's frequencies. Expensive; see the README.
    #[serde(default)]
    pub per_step: bool,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            gamma: None,
            tau: default_measure_tau(),
            k_lo: 0,
            k_hi: default_measure_k_hi(),
            box_lo: vec![],
            box_hi: vec![],
            grid: vec![],
            samples: 0,
            per_step: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToeplitzConfig {
    /// Defaults to the measured ||X_P||.
    #[serde(default)]
    pub eps_budget: Option<f64>,
    #[serde(default = "default_t_range")]
    pub t_range: i32,
    #[serde(default = "default_tl_cap")]
    pub cap: i32,
}

impl Default for ToeplitzConfig {
    fn default() -> Self {
        ToeplitzConfig {
            eps_budget: None,
            t_range: default_t_range(),
            cap: default_tl_cap(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_spectral_steps")]
    pub spectral_steps: usize,
    #[serde(default = "default_flow_steps")]
    pub flow_steps: usize,
    /// Residence horizon T = residence_factor / s^2.
    #[serde(default = "default_residence_factor")]
    pub residence_factor: f64,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            dt: default_dt(),
            spectral_steps: default_spectral_steps(),
            flow_steps: default_flow_steps(),
            residence_factor: default_residence_factor(),
            sample_every: default_sample_every(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: default_seed(),
            workers: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub domain: DomainConfig,
    #[serde(default)]
    pub kam: KamConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub toeplitz: ToeplitzConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub run: RunConfig,
}

fn default_degree_cap() -> u32 {
    4
}
fn default_gamma() -> f64 {
    0.05
}
fn default_schedule_c() -> f64 {
    1.0
}
fn default_max_steps() -> usize {
    3
}
fn default_target_eps() -> f64 {
    1e-12
}
fn default_order_cap() -> usize {
    8
}
fn default_k_cap() -> u32 {
    40
}
fn default_residual_tol() -> f64 {
    1e-9
}
fn default_compact_rel() -> f64 {
    1e-5
}
fn default_compact_cap() -> usize {
    400_000
}
fn default_measure_tau() -> f64 {
    3.0
}
fn default_measure_k_hi() -> u32 {
    5
}
fn default_t_range() -> i32 {
    6
}
fn default_tl_cap() -> i32 {
    3
}
fn default_dt() -> f64 {
    8e-4
}
fn default_spectral_steps() -> usize {
    32_768
}
fn default_flow_steps() -> usize {
    64
}
fn default_residence_factor() -> f64 {
    10.0
}
fn default_sample_every() -> usize {
    50
}
fn default_seed() -> u64 {
    20_260_809
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|x| x as f64).product()
}

impl Config {
    pub fn from_path(path: &std::path::Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Config> {
        let mut cfg: Config =
            toml::from_str(text).map_err(|e| KamError::Config(format!("config parse: {e}")))?;
        cfg.fill_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolve every field left to contextual defaults.
    pub fn fill_defaults(&mut self) {
        let b = self.model.s_sites.len();
        let bt = self.model.st_sites.len();
        let d = self.model.d;
        if self.model.amp_u.is_empty() {
            self.model.amp_u = vec![0.5 * self.domain.s; b];
        }
        if self.model.amp_v.is_empty() {
            self.model.amp_v = vec![0.5 * self.domain.s; bt];
        }
        if self.kam.tau.is_none() {
            // d! (2 d (d + 1) + b + bt + 1) + 1
            self.kam.tau =
                Some(factorial(d) * (2.0 * (d * (d + 1)) as f64 + (b + bt + 1) as f64) + 1.0);
        }
        if self.kam.tau_effective.is_none() {
            self.kam.tau_effective = Some(2.0 * (b + bt) as f64 + d as f64 + 2.0);
        }
        if self.measure.gamma.is_none() {
            self.measure.gamma = Some(self.kam.gamma);
        }
        if self.measure.box_lo.is_empty() {
            self.measure.box_lo = vec![0.0; b + bt];
        }
        if self.measure.box_hi.is_empty() {
            self.measure.box_hi = vec![1.0; b + bt];
        }
        if self.measure.grid.is_empty() && self.measure.samples == 0 {
            self.measure.grid = vec![10; b + bt];
        }
    }

    /// Collect every violation instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        let b = self.model.s_sites.len();
        let bt = self.model.st_sites.len();
        if self.model.d < 2 {
            problems.push(format!("model.d = {} but d >= 2 is required", self.model.d));
        }
        if b < 2 {
            problems.push(format!("need at least 2 tangential u-sites, got {b}"));
        }
        if bt < 2 {
            problems.push(format!("need at least 2 tangential v-sites, got {bt}"));
        }
        let zero = vec![0i32; self.model.d];
        if !self.model.s_sites.contains(&zero) || !self.model.st_sites.contains(&zero) {
            problems.push("the zero mode must belong to both site lists".into());
        }
        for (name, sites) in [("s_sites", &self.model.s_sites), ("st_sites", &self.model.st_sites)]
        {
            for s in sites.iter() {
                if s.len() != self.model.d {
                    problems.push(format!("{name} entry {s:?} has wrong dimension"));
                }
            }
            let mut sorted = sites.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != sites.len() {
                problems.push(format!("duplicate entries in {name}"));
            }
        }
        if self.model.xi.len() != b {
            problems.push(format!(
                "xi has {} entries but there are {b} u-sites",
                self.model.xi.len()
            ));
        }
        if self.model.sigma.len() != bt {
            problems.push(format!(
                "sigma has {} entries but there are {bt} v-sites",
                self.model.sigma.len()
            ));
        }
        for t in &self.model.nonlinearity {
            if t.p + t.q < 2 {
                problems.push(format!(
                    "nonlinearity term a^{} b^{} is below second order",
                    t.p, t.q
                ));
            }
        }
        if !(self.domain.r > 0.0 && self.domain.s > 0.0 && self.domain.rho > 0.0) {
            problems.push("domain parameters r, s, rho must all be positive".into());
        }
        if self.kam.gamma <= 0.0 {
            problems.push("kam.gamma must be positive".into());
        }
        if self.measure.box_lo.len() != b + bt || self.measure.box_hi.len() != b + bt {
            problems.push("measure box dimensions must equal b + bt".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(KamError::Config(problems.join("; ")))
        }
    }

    pub fn site_config(&self) -> Result<Arc<SiteConfig>> {
        let s = self
            .model
            .s_sites
            .iter()
            .map(|v| ModeIndex::new(v))
            .collect();
        let st = self
            .model
            .st_sites
            .iter()
            .map(|v| ModeIndex::new(v))
            .collect();
        Ok(Arc::new(SiteConfig::new(
            self.model.d,
            self.model.n_max,
            s,
            st,
        )?))
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let nl = NonlinearitySpec::new(
            self.model
                .nonlinearity
                .iter()
                .map(|t| (t.p, t.q, t.g))
                .collect(),
        )?;
        Ok(ModelSpec {
            sites: self.site_config()?,
            nonlinearity: nl,
            xi: self.model.xi.clone(),
            sigma: self.model.sigma.clone(),
            amp_u: self.model.amp_u.clone(),
            amp_v: self.model.amp_v.clone(),
            degree_cap: self.model.degree_cap,
        })
    }

    pub fn domain_params(&self) -> Result<DomainParams> {
        DomainParams::new(self.domain.r, self.domain.s, self.domain.rho)
    }

    pub fn engine_params(&self) -> EngineParams {
        EngineParams {
            gamma: self.kam.gamma,
            tau_eff: self.kam.tau_effective.expect("filled"),
            tau_paper: self.kam.tau.expect("filled"),
            schedule_c: self.kam.schedule_c,
            order_cap: self.kam.order_cap,
            degree_cap: self.model.degree_cap,
            k_cap: self.kam.k_cap,
            residual_tol: self.kam.residual_tol,
            compact_rel: self.kam.compact_rel,
            compact_cap: self.kam.compact_cap,
        }
    }

    /// Resolved config as TOML, for the provenance echo in reports.
    pub fn echo(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_else(|e| format!("# echo failed: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const REFERENCE: &str = r#"
[model]
d = 2
n_max = 3
s_sites = [[0, 0], [1, 0]]
st_sites = [[0, 0], [0, 1]]
xi = [0.317, 0.259]
sigma = [0.431, 0.127]
nonlinearity = [{ p = 1, q = 1, g = 2.25e-6 }]

[domain]
r = 0.5
s = 0.2
rho = 0.4
"#;

    #[test]
    fn reference_parses_with_defaults() {
        let cfg = Config::from_toml(REFERENCE).unwrap();
        assert_eq!(cfg.model.amp_u, vec![0.1, 0.1]);
        // d! (2 d (d+1) + b + bt + 1) + 1 = 2 (12 + 5) + 1
        assert_eq!(cfg.kam.tau, Some(35.0));
        assert_eq!(cfg.kam.tau_effective, Some(12.0));
        assert_eq!(cfg.measure.grid, vec![10, 10, 10, 10]);
        assert!(cfg.site_config().is_ok());
        assert!(cfg.model_spec().is_ok());
    }

    #[test]
    fn validation_collects_all_violations() {
        let bad = r#"
[model]
d = 2
n_max = 3
s_sites = [[1, 0]]
st_sites = [[0, 0], [0, 1]]
xi = [0.1]
sigma = [0.1, 0.2, 0.3]

[domain]
r = 0.5
s = -0.2
rho = 0.4
"#;
        let err = Config::from_toml(bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2 tangential u-sites"));
        assert!(msg.contains("zero mode"));
        assert!(msg.contains("sigma"));
        assert!(msg.contains("positive"));
    }

    #[test]
    fn echo_round_trips() {
        let cfg = Config::from_toml(REFERENCE).unwrap();
        let echoed = cfg.echo();
        let cfg2 = Config::from_toml(&echoed).unwrap();
        assert_eq!(cfg2.kam.tau, cfg.kam.tau);
        assert_eq!(cfg2.model.xi, cfg.model.xi);
    }
}
