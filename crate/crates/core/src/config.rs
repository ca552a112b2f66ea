//! Experiment configuration: a sectioned TOML file or a built-in preset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain::ChainSpec;
use crate::error::{Error, Result};
use crate::propagator::EvolutionModel;
use crate::solver::{SolveProblem, SolveSettings, DEFAULT_MAX_ITERS, DEFAULT_TOL_ROOT};

pub const PRESETS: [(&str, &str); 5] = [
    ("fig2", include_str!("../presets/fig2.toml")),
    ("fig4", include_str!("../presets/fig4.toml")),
    ("fig6", include_str!("../presets/fig6.toml")),
    ("fig7", include_str!("../presets/fig7.toml")),
    ("fig8", include_str!("../presets/fig8.toml")),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub chain: ChainSection,
    pub model: ModelSection,
    pub solver: SolverSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub n_total: usize,
    pub n_sender: usize,
    pub n_receiver: usize,
    pub n_ext_receiver: usize,
    #[serde(default = "default_exponent")]
    pub coupling_exponent: f64,
}

fn default_exponent() -> f64 {
    3.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Exact,
    Trotter,
    Pulse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Trotter numbers, one sweep series each.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n: Vec<usize>,
    /// Pulse ratios at which solutions are scored.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eps_tilde: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub k_omega: usize,
    pub n_starts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol_root: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    /// Registration time used by `solve`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_reg: Option<f64>,
}

fn default_tol() -> f64 {
    DEFAULT_TOL_ROOT
}

fn default_iters() -> usize {
    DEFAULT_MAX_ITERS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Time horizon in units of the chain length.
    pub horizon_factor: f64,
    pub grid_step: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n_list: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            horizon_factor: 10.0,
            grid_step: 0.1,
            n_list: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: "out".into(),
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

fn config_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

/// Reads `source` as a file path if one exists, otherwise as a preset name.
pub fn load_config(source: &str) -> Result<ExperimentConfig> {
    if Path::new(source).is_file() {
        return ExperimentConfig::from_toml(&std::fs::read_to_string(source)?);
    }
    match preset(source) {
        Some(text) => ExperimentConfig::from_toml(text),
        None => Err(config_err(
            "config",
            format!(
                "`{source}` is neither a file nor a preset ({})",
                PRESETS.map(|(n, _)| n).join(", ")
            ),
        )),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_err("config", e.message()))?;
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            config_err(&key, e.into_inner().message())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.spec()?;
        let m = &self.model;
        match m.kind {
            ModelKind::Exact => {
                if !m.n.is_empty() || !m.eps_tilde.is_empty() {
                    return Err(config_err(
                        "model",
                        "exact model takes neither `n` nor `eps_tilde`",
                    ));
                }
            }
            ModelKind::Trotter => {
                if !m.eps_tilde.is_empty() {
                    return Err(config_err(
                        "model.eps_tilde",
                        "not used by the trotter model",
                    ));
                }
                if m.n.is_empty() || m.n.contains(&0) {
                    return Err(config_err(
                        "model.n",
                        "needs one or more Trotter numbers >= 1",
                    ));
                }
            }
            ModelKind::Pulse => {
                if !m.n.is_empty() {
                    return Err(config_err("model.n", "not used by the pulse model"));
                }
                if m.eps_tilde.is_empty() {
                    return Err(config_err("model.eps_tilde", "needs one or more ratios"));
                }
                if let Some(bad) = m.eps_tilde.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
                    return Err(config_err(
                        "model.eps_tilde",
                        format!("{bad} is outside (0, 1]"),
                    ));
                }
            }
        }
        let s = &self.solver;
        if s.k_omega == 0 {
            return Err(config_err("solver.k_omega", "must be >= 1"));
        }
        if s.n_starts == 0 {
            return Err(config_err("solver.n_starts", "must be >= 1"));
        }
        if !(s.tol_root > 0.0) {
            return Err(config_err("solver.tol_root", "must be positive"));
        }
        if s.max_iters == 0 {
            return Err(config_err("solver.max_iters", "must be >= 1"));
        }
        if let Some(t) = s.tau_reg {
            if !(t.is_finite() && t >= 0.0) {
                return Err(config_err("solver.tau_reg", "must be finite and >= 0"));
            }
        }
        // the first pulse of the pulse model never reaches the sender state
        let segments = match m.kind {
            ModelKind::Pulse => s.k_omega - 1,
            _ => s.k_omega,
        };
        let unknowns = segments * self.chain.n_ext_receiver.saturating_sub(1);
        let equations = 2 * self.chain.n_receiver * (self.chain.n_sender - 1);
        if unknowns < equations {
            return Err(config_err(
                "solver.k_omega",
                format!("{unknowns} free angles cannot satisfy {equations} constraints"),
            ));
        }
        let w = &self.sweep;
        if !(w.horizon_factor > 0.0 && w.horizon_factor.is_finite()) {
            return Err(config_err("sweep.horizon_factor", "must be positive"));
        }
        if !(w.grid_step > 0.0 && w.grid_step.is_finite()) {
            return Err(config_err("sweep.grid_step", "must be positive"));
        }
        for &n in &w.n_list {
            self.spec_with_n(n)
                .map_err(|e| config_err("sweep.n_list", format!("N = {n}: {e}")))?;
        }
        if self.output.formats.is_empty() {
            return Err(config_err("output.formats", "needs at least one format"));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<ChainSpec> {
        self.spec_with_n(self.chain.n_total)
            .map_err(|e| config_err("chain", e.to_string()))
    }

    fn spec_with_n(&self, n: usize) -> Result<ChainSpec> {
        let c = &self.chain;
        ChainSpec::new(n, c.n_sender, c.n_receiver, c.n_ext_receiver)?
            .with_exponent(c.coupling_exponent)
    }

    /// Models to solve with, one per sweep series. The pulse model solves
    /// once; its ratios only affect scoring, see [`Self::eps_list`].
    pub fn models(&self) -> Vec<EvolutionModel> {
        match self.model.kind {
            ModelKind::Exact => vec![EvolutionModel::Exact],
            ModelKind::Trotter => self
                .model
                .n
                .iter()
                .map(|&n| EvolutionModel::Trotter { n })
                .collect(),
            ModelKind::Pulse => vec![EvolutionModel::Pulse {
                eps_tilde: self.model.eps_tilde[0],
            }],
        }
    }

    pub fn eps_list(&self) -> &[f64] {
        &self.model.eps_tilde
    }

    pub fn settings(&self) -> SolveSettings {
        let s = &self.solver;
        SolveSettings {
            k_omega: s.k_omega,
            n_starts: s.n_starts,
            seed: s.seed,
            tol_root: s.tol_root,
            max_iters: s.max_iters,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.sweep.horizon_factor * self.chain.n_total as f64
    }

    pub fn problem(&self, model: EvolutionModel, tau_reg: f64) -> Result<SolveProblem> {
        SolveProblem::new(self.spec()?, model, tau_reg, self.settings())
    }

    pub fn wants(&self, format: Format) -> bool {
        self.output.formats.contains(&format)
    }
}
