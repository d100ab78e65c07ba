//! JSON run configuration shared by the command-line tool, the benches and
//! the acceptance suite.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::models::{DimerParams, Model, SpinBosonParams, Window};
use crate::spectral::SpectralDensity;
use crate::tns::{EvolutionConfig, ThermalSettings, DEFAULT_SV_FLOOR};
use crate::ttm::DEFAULT_DECAY_THRESHOLD;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub spectral: SpectralSection,
    pub chain: ChainSection,
    pub tebd: TebdSection,
    #[serde(default)]
    pub ttm: Option<TtmSection>,
    pub model: ModelSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub bench: Option<BenchSection>,
    #[serde(default)]
    pub spectrum: Option<SpectrumSection>,
    #[serde(default)]
    pub steady_state: Option<SteadyStateSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectralSection {
    DrudeLorentz {
        lambda: f64,
        gamma: f64,
        omega_hc: f64,
    },
    PowerLawExp {
        lambda: f64,
        s: f64,
        omega_c: f64,
        omega_hc: f64,
    },
    /// Inline samples, or a two-column `omega,J` CSV.
    Tabulated {
        #[serde(default)]
        omega: Option<Vec<f64>>,
        #[serde(default)]
        values: Option<Vec<f64>>,
        #[serde(default)]
        path: Option<PathBuf>,
        omega_hc: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    /// Sites per chain.
    pub n: usize,
    /// Fock truncation per oscillator.
    pub d: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TebdSection {
    pub chi: usize,
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "default_floor")]
    pub e0: f64,
    #[serde(default = "default_true")]
    pub ancilla_back_evolution: bool,
    #[serde(default = "default_true")]
    pub sketched_svd: bool,
    #[serde(default)]
    pub thermal: Option<ThermalSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalSection {
    pub dtau: f64,
    pub tolerance: f64,
    pub max_halvings: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TtmSection {
    pub learn_steps: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub k_override: Option<usize>,
    /// Steps appended by `propagate`.
    #[serde(default)]
    pub propagate_steps: Option<usize>,
    /// Tensor container read by `propagate`; defaults to the one `learn`
    /// writes into the output directory.
    #[serde(default)]
    pub container: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub system: SystemSection,
    /// Inverse temperature of every bath; `null` for the vacuum.
    #[serde(deserialize_with = "nullable")]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSection {
    SpinBoson {
        epsilon: f64,
        delta: f64,
    },
    Dimer {
        epsilon1: f64,
        epsilon2: f64,
        exchange: f64,
        mu1: f64,
        mu2: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_dir(),
            formats: default_formats(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub t_bath: Vec<f64>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Chain sites per unit of `t_bath`, so that `N = ⌈v̄ t_bath⌉`.
    pub sites_per_time: f64,
    /// Step counts at which the transfer-tensor propagation is timed.
    pub propagation_steps: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    /// Length of the correlation window `τ`.
    pub tau: f64,
    pub omega_max: f64,
    #[serde(default = "default_window")]
    pub window: Window,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyStateSection {
    pub betas: Vec<f64>,
    #[serde(default = "default_ss_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_ss_window")]
    pub window: usize,
    #[serde(default = "default_ss_budget")]
    pub max_steps: usize,
}

fn nullable<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    Option::<f64>::deserialize(d)
}

fn default_floor() -> f64 {
    DEFAULT_SV_FLOOR
}

fn default_true() -> bool {
    true
}

fn default_threshold() -> f64 {
    DEFAULT_DECAY_THRESHOLD
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

fn default_repetitions() -> usize {
    1
}

fn default_window() -> Window {
    Window::Auto
}

fn default_ss_tolerance() -> f64 {
    1e-8
}

fn default_ss_window() -> usize {
    20
}

fn default_ss_budget() -> usize {
    1_000_000
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(
            path,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn non_negative(path: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(
            path,
            format!("must be non-negative and finite, got {v}"),
        ))
    }
}

fn finite(path: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(config_err(path, "must be finite"))
    }
}

fn at_least(path: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(config_err(path, format!("must be at least {min}, got {v}")))
    }
}

impl RunConfig {
    /// Parses and validates; every failure names the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." {
                "<root>".to_string()
            } else {
                path
            };
            config_err(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut cfg = Self::from_json(&text)?;
        // relative data paths are taken relative to the config file
        if let Some(base) = path.as_ref().parent() {
            if let SpectralSection::Tabulated { path: Some(p), .. } = &mut cfg.spectral {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.spectral {
            SpectralSection::DrudeLorentz {
                lambda,
                gamma,
                omega_hc,
            } => {
                positive("spectral.lambda", *lambda)?;
                positive("spectral.gamma", *gamma)?;
                positive("spectral.omega_hc", *omega_hc)?;
            }
            SpectralSection::PowerLawExp {
                lambda,
                s,
                omega_c,
                omega_hc,
            } => {
                positive("spectral.lambda", *lambda)?;
                positive("spectral.s", *s)?;
                positive("spectral.omega_c", *omega_c)?;
                positive("spectral.omega_hc", *omega_hc)?;
            }
            SpectralSection::Tabulated {
                omega,
                values,
                path,
                omega_hc,
            } => {
                positive("spectral.omega_hc", *omega_hc)?;
                match (omega, values, path) {
                    (Some(o), Some(v), None) => {
                        if o.len() != v.len() || o.len() < 2 {
                            return Err(config_err(
                                "spectral.values",
                                "needs at least two samples, one per omega",
                            ));
                        }
                    }
                    (None, None, Some(_)) => {}
                    _ => {
                        return Err(config_err(
                            "spectral",
                            "give either `omega` and `values` or `path`",
                        ))
                    }
                }
            }
        }
        at_least("chain.n", self.chain.n, 1)?;
        at_least("chain.d", self.chain.d, 2)?;
        at_least("tebd.chi", self.tebd.chi, 1)?;
        positive("tebd.dt", self.tebd.dt)?;
        if !(0.0..1.0).contains(&self.tebd.e0) {
            return Err(config_err("tebd.e0", "must lie in [0, 1)"));
        }
        if let Some(t) = &self.tebd.thermal {
            positive("tebd.thermal.dtau", t.dtau)?;
            positive("tebd.thermal.tolerance", t.tolerance)?;
        }
        if let Some(t) = &self.ttm {
            at_least("ttm.learn_steps", t.learn_steps, 1)?;
            positive("ttm.threshold", t.threshold)?;
            if let Some(k) = t.k_override {
                if k < 1 || k > t.learn_steps {
                    return Err(config_err(
                        "ttm.k_override",
                        format!("must lie in 1..={}", t.learn_steps),
                    ));
                }
            }
        }
        match &self.model.system {
            SystemSection::SpinBoson { epsilon, delta } => {
                finite("model.system.epsilon", *epsilon)?;
                finite("model.system.delta", *delta)?;
            }
            SystemSection::Dimer {
                epsilon1,
                epsilon2,
                exchange,
                mu1,
                mu2,
            } => {
                finite("model.system.epsilon1", *epsilon1)?;
                finite("model.system.epsilon2", *epsilon2)?;
                finite("model.system.exchange", *exchange)?;
                finite("model.system.mu1", *mu1)?;
                finite("model.system.mu2", *mu2)?;
            }
        }
        if let Some(b) = self.model.beta {
            non_negative("model.beta", b)?;
        }
        if self.output.formats.is_empty() {
            return Err(config_err(
                "output.formats",
                "must name at least one format",
            ));
        }
        if let Some(b) = &self.bench {
            if b.t_bath.len() < 4 {
                return Err(config_err(
                    "bench.t_bath",
                    "needs at least four grid points",
                ));
            }
            for (i, t) in b.t_bath.iter().enumerate() {
                positive(&format!("bench.t_bath[{i}]"), *t)?;
            }
            at_least("bench.repetitions", b.repetitions, 1)?;
            positive("bench.sites_per_time", b.sites_per_time)?;
            if b.propagation_steps.len() < 2 {
                return Err(config_err(
                    "bench.propagation_steps",
                    "needs at least two step counts",
                ));
            }
        }
        if let Some(s) = &self.spectrum {
            positive("spectrum.tau", s.tau)?;
            positive("spectrum.omega_max", s.omega_max)?;
        }
        if let Some(s) = &self.steady_state {
            if s.betas.is_empty() {
                return Err(config_err("steady_state.betas", "must not be empty"));
            }
            for (i, b) in s.betas.iter().enumerate() {
                positive(&format!("steady_state.betas[{i}]"), *b)?;
            }
            positive("steady_state.tolerance", s.tolerance)?;
            at_least("steady_state.window", s.window, 1)?;
        }
        Ok(())
    }

    pub fn density(&self) -> Result<SpectralDensity> {
        match &self.spectral {
            SpectralSection::DrudeLorentz {
                lambda,
                gamma,
                omega_hc,
            } => SpectralDensity::drude_lorentz(*lambda, *gamma, *omega_hc),
            SpectralSection::PowerLawExp {
                lambda,
                s,
                omega_c,
                omega_hc,
            } => SpectralDensity::power_law_exp(*lambda, *s, *omega_c, *omega_hc),
            SpectralSection::Tabulated {
                omega: Some(o),
                values: Some(v),
                omega_hc,
                ..
            } => SpectralDensity::tabulated(o.clone(), v.clone(), *omega_hc),
            SpectralSection::Tabulated {
                path: Some(p),
                omega_hc,
                ..
            } => SpectralDensity::from_csv(p, *omega_hc),
            SpectralSection::Tabulated { .. } => Err(config_err("spectral", "no tabulated data")),
        }
    }

    pub fn model(&self) -> Model {
        match self.model.system {
            SystemSection::SpinBoson { epsilon, delta } => {
                Model::SpinBoson(SpinBosonParams { epsilon, delta })
            }
            SystemSection::Dimer {
                epsilon1,
                epsilon2,
                exchange,
                mu1,
                mu2,
            } => Model::Dimer(DimerParams {
                epsilon1,
                epsilon2,
                exchange,
                mu1,
                mu2,
            }),
        }
    }

    /// Engine settings at the configured temperature.
    pub fn evolution(&self) -> EvolutionConfig {
        self.evolution_at(self.model.beta)
    }

    pub fn evolution_at(&self, beta: Option<f64>) -> EvolutionConfig {
        let mut cfg = EvolutionConfig::new(self.chain.n, self.chain.d, self.tebd.chi, self.tebd.dt)
            .with_beta(beta);
        cfg.sv_floor = self.tebd.e0;
        cfg.ancilla_back_evolution = self.tebd.ancilla_back_evolution;
        cfg.sketched_svd = self.tebd.sketched_svd;
        if let Some(t) = &self.tebd.thermal {
            cfg.thermal = ThermalSettings {
                dtau: t.dtau,
                tolerance: t.tolerance,
                max_halvings: t.max_halvings,
            };
        }
        cfg
    }

    /// The `ttm` section, or a configuration error naming it.
    pub fn ttm(&self) -> Result<&TtmSection> {
        self.ttm
            .as_ref()
            .ok_or_else(|| config_err("ttm", "section required by this subcommand"))
    }

    pub fn bench(&self) -> Result<&BenchSection> {
        self.bench
            .as_ref()
            .ok_or_else(|| config_err("bench", "section required by this subcommand"))
    }

    pub fn spectrum(&self) -> Result<&SpectrumSection> {
        self.spectrum
            .as_ref()
            .ok_or_else(|| config_err("spectrum", "section required by this subcommand"))
    }

    pub fn steady_state(&self) -> Result<&SteadyStateSection> {
        self.steady_state
            .as_ref()
            .ok_or_else(|| config_err("steady_state", "section required by this subcommand"))
    }

    pub fn writes(&self, f: OutputFormat) -> bool {
        self.output.formats.contains(&f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> serde_json::Value {
        serde_json::json!({
            "spectral": {"kind": "power_law_exp", "lambda": 1.0, "s": 5.0, "omega_c": 0.3, "omega_hc": 10.0},
            "chain": {"n": 10, "d": 3},
            "tebd": {"chi": 16, "dt": 0.1, "steps": 50},
            "ttm": {"learn_steps": 20},
            "model": {"system": {"kind": "spin_boson", "epsilon": 1.0, "delta": 0.6}, "beta": 1.0}
        })
    }

    fn path_of(v: serde_json::Value) -> String {
        match RunConfig::from_json(&v.to_string()) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn sample_parses_with_defaults() {
        let cfg = RunConfig::from_json(&sample().to_string()).unwrap();
        assert_eq!(cfg.ttm().unwrap().threshold, DEFAULT_DECAY_THRESHOLD);
        assert_eq!(cfg.evolution().beta, Some(1.0));
        assert!(cfg.writes(OutputFormat::Csv));
        assert!(matches!(cfg.model(), Model::SpinBoson(_)));
    }

    #[test]
    fn wrong_type_reports_the_field_path() {
        let mut v = sample();
        v["tebd"]["chi"] = serde_json::json!("many");
        assert_eq!(path_of(v), "tebd.chi");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let mut v = sample();
        v["chain"]["length"] = serde_json::json!(3);
        assert_eq!(path_of(v), "chain.length");
    }

    #[test]
    fn missing_beta_is_an_error_but_null_is_the_vacuum() {
        let mut v = sample();
        v["model"].as_object_mut().unwrap().remove("beta");
        assert_eq!(path_of(v.clone()), "model");
        v["model"]["beta"] = serde_json::Value::Null;
        assert_eq!(
            RunConfig::from_json(&v.to_string()).unwrap().model.beta,
            None
        );
    }

    #[test]
    fn semantic_checks_name_the_field() {
        let mut v = sample();
        v["tebd"]["dt"] = serde_json::json!(-0.1);
        assert_eq!(path_of(v), "tebd.dt");
        let mut v = sample();
        v["spectral"]["omega_c"] = serde_json::json!(0.0);
        assert_eq!(path_of(v), "spectral.omega_c");
        let mut v = sample();
        v["bench"] = serde_json::json!({"t_bath": [1.0, 2.0, 3.0, -4.0], "sites_per_time": 2.0, "propagation_steps": [10, 20]});
        assert_eq!(path_of(v), "bench.t_bath[3]");
    }

    #[test]
    fn missing_section_is_reported_on_request() {
        let mut v = sample();
        v.as_object_mut().unwrap().remove("ttm");
        let cfg = RunConfig::from_json(&v.to_string()).unwrap();
        assert!(matches!(cfg.ttm(), Err(Error::Config { ref path, .. }) if path == "ttm"));
    }

    #[test]
    fn dimer_and_tabulated_sections_round_trip() {
        let mut v = sample();
        v["spectral"] = serde_json::json!({"kind": "tabulated", "omega": [0.0, 1.0], "values": [3.0, 3.0], "omega_hc": 1.0});
        v["model"]["system"] = serde_json::json!({"kind": "dimer", "epsilon1": 1.0, "epsilon2": 2.0, "exchange": 0.6, "mu1": 1.0, "mu2": 1.0});
        let cfg = RunConfig::from_json(&v.to_string()).unwrap();
        assert_eq!(cfg.model().dim(), 3);
        assert!(cfg.density().is_ok());
        let again = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again.chain.n, cfg.chain.n);
    }
}
