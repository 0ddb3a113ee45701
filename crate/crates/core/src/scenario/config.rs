//! TOML scenario description.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envelope::FunctionKind;
use crate::error::{Error, Result};
use crate::pipeline::{FaultProfile, SafetySpec};
use crate::scenario::acc::{AccParams, Discretization};

/// Which observers to run on the shared plant trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    An,
    Op,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    /// The built-in adaptive cruise control model.
    Acc {
        #[serde(default)]
        params: AccParams,
    },
    /// Continuous-time matrices given row by row.
    Inline(InlineModel),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Acc { params: AccParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineModel {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub co_offset: usize,
    pub co_len: usize,
    /// Direction of the exogenous input in the state equation.
    pub w_direction: Vec<f64>,
    /// Constant reference `r` fed to the network ahead of `C_o y`.
    pub reference: Vec<f64>,
    /// State entering each column of `F`.
    pub nonlinear_states: Vec<usize>,
    pub x0: Vec<f64>,
}

pub(crate) fn matrix(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config(format!("every row of {what} needs {cols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl InlineModel {
    pub fn a_matrix(&self) -> Result<DMatrix<f64>> {
        matrix(&self.a, self.a.len(), "a")
    }

    pub fn b_matrix(&self) -> Result<DMatrix<f64>> {
        matrix(&self.b, self.b.first().map_or(0, Vec::len), "b")
    }

    pub fn f_matrix(&self) -> Result<DMatrix<f64>> {
        matrix(&self.f, self.nonlinear_states.len(), "f")
    }

    pub fn c_matrix(&self) -> Result<DMatrix<f64>> {
        matrix(&self.c, self.a.len(), "c")
    }

    pub fn x0_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// `builtin:acc`, `builtin:small` or a JSON file relative to the config.
    pub network: String,
    pub method: MethodChoice,
    pub node_budget: usize,
    /// Wall-clock budget per MILP in milliseconds. Makes runs
    /// timing-dependent, so it is off by default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_budget_ms: Option<u64>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { network: "builtin:acc".into(), method: MethodChoice::Both, node_budget: 100_000, time_budget_ms: None }
    }
}

/// Envelope of one nonlinearity `g_k(x) = e(x_state)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    pub state: usize,
    pub function: FunctionKind,
    /// Interior partition points.
    pub h: usize,
    pub domain: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ceiling: Option<f64>,
    /// Use the endpoint shortcut where the function is declared monotone.
    #[serde(default)]
    pub monotone: bool,
}

/// Piecewise-constant exogenous signal: `value` on `[previous until, until)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub until: f64,
    pub value: f64,
}

/// The scalar exogenous input `u_l` (the lead vehicle's control for ACC),
/// entering as `w = w_direction · u_l`. The observer only knows
/// `u_l ∈ [nominal − band, nominal + band]`; the plant uses the nominal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeadConfig {
    pub segments: Vec<Segment>,
    pub final_value: f64,
    pub band: f64,
}

impl Default for LeadConfig {
    fn default() -> Self {
        Self {
            segments: vec![
                Segment { until: 2.0, value: 1.0 },
                Segment { until: 4.0, value: -1.5 },
                Segment { until: 7.0, value: 1.0 },
                Segment { until: 10.0, value: -0.5 },
            ],
            final_value: 0.5,
            band: 1.0,
        }
    }
}

impl LeadConfig {
    pub fn at(&self, tau: f64) -> f64 {
        self.segments.iter().find(|s| tau < s.until).map_or(self.final_value, |s| s.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// `|v_i| ≤ bound` for every output.
    pub bound: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { bound: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub eps: f64,
    /// Load this certificate (relative to the config) instead of synthesizing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<PathBuf>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { eps: 1e-6, certificate: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Directory for the trace, summary and plots, relative to the config.
    pub dir: PathBuf,
    pub plots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), plots: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub horizon: usize,
    pub t_s: f64,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nonlinearity: Vec<NonlinearityConfig>,
    /// Defaults to `x₀ ± 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialBox>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub lead: LeadConfig,
    #[serde(default)]
    pub faults: FaultProfile,
    /// Defaults to the headway rule for ACC and nothing otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety: Option<SafetySpec>,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Structural checks that need no model.
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.t_s > 0.0 && self.t_s.is_finite()) {
            return bad(format!("t_s must be positive, got {}", self.t_s));
        }
        if !(self.noise.bound >= 0.0 && self.noise.bound.is_finite()) {
            return bad(format!("noise bound must be nonnegative, got {}", self.noise.bound));
        }
        if !(self.lead.band >= 0.0 && self.lead.band.is_finite()) {
            return bad(format!("lead band must be nonnegative, got {}", self.lead.band));
        }
        if self.lead.segments.windows(2).any(|w| w[0].until >= w[1].until) {
            return bad("lead segments must have increasing `until`".into());
        }
        if !(self.synthesis.eps > 0.0) {
            return bad("synthesis eps must be positive".into());
        }
        if self.controller.node_budget == 0 {
            return bad("node_budget must be positive".into());
        }
        if let Some(init) = &self.initial {
            if init.lower.len() != init.upper.len() {
                return bad("initial lower and upper differ in length".into());
            }
            if let Some(i) = (0..init.lower.len()).find(|&i| !(init.lower[i] <= init.upper[i])) {
                return bad(format!("initial box is empty at index {i}"));
            }
        }
        for nl in &self.nonlinearity {
            if !(nl.domain.0 < nl.domain.1) {
                return bad(format!("nonlinearity on state {} has an empty domain", nl.state));
            }
        }
        Ok(())
    }

    /// Resolves a path relative to the directory holding the config.
    pub fn resolve(base: Option<&Path>, path: &Path) -> PathBuf {
        match base {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{ChannelFault, FaultSignal};

    const MINIMAL: &str = r#"
name = "minimal"
horizon = 10
t_s = 0.1
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.model, ModelConfig::Acc { params: AccParams::default() });
        assert_eq!(cfg.controller.method, MethodChoice::Both);
        assert_eq!(cfg.noise.bound, 1e-3);
        assert_eq!(cfg.lead.at(0.0), 1.0);
        assert_eq!(cfg.lead.at(2.0), -1.5);
        assert_eq!(cfg.lead.at(12.0), 0.5);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        assert!(matches!(ScenarioConfig::from_toml(&format!("{MINIMAL}\nextra = 1")), Err(Error::Config(_))));
        let zero = MINIMAL.replace("horizon = 10", "horizon = 0");
        assert!(matches!(ScenarioConfig::from_toml(&zero), Err(Error::Config(_))));
        let neg = MINIMAL.replace("t_s = 0.1", "t_s = -0.1");
        assert!(matches!(ScenarioConfig::from_toml(&neg), Err(Error::Config(_))));
        let method = format!("{MINIMAL}\n[controller]\nmethod = \"exact\"\n");
        assert!(matches!(ScenarioConfig::from_toml(&method), Err(Error::Config(_))));
    }

    #[test]
    fn round_trip() {
        let mut cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        cfg.faults.actuator.push(ChannelFault {
            channel: 0,
            signal: FaultSignal::Sine { amplitude: 0.3, angular_frequency: 0.5 * std::f64::consts::PI },
        });
        cfg.nonlinearity.push(NonlinearityConfig {
            state: 1,
            function: FunctionKind::Square,
            h: 4,
            domain: (-20.0, 80.0),
            floor: Some(0.0),
            ceiling: None,
            monotone: false,
        });
        cfg.initial = Some(InitialBox { lower: vec![0.0; 6], upper: vec![1.0; 6] });
        cfg.safety = Some(SafetySpec::default());
        cfg.synthesis.certificate = Some(PathBuf::from("cert.json"));
        let text = cfg.to_toml().unwrap();
        assert_eq!(ScenarioConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn inline_model_parses() {
        let text = r#"
name = "inline"
horizon = 5
t_s = 0.1
[model]
source = "inline"
a = [[0.0, 1.0], [0.0, -1.0]]
b = [[0.0], [1.0]]
f = [[0.0], [0.0]]
c = [[1.0, 0.0], [0.0, 1.0]]
co_offset = 0
co_len = 2
w_direction = [0.0, 0.0]
reference = []
nonlinear_states = [1]
x0 = [0.0, 1.0]
"#;
        let cfg = ScenarioConfig::from_toml(text).unwrap();
        let ModelConfig::Inline(m) = &cfg.model else { panic!() };
        assert_eq!(m.a_matrix().unwrap()[(1, 1)], -1.0);
        assert_eq!(m.b_matrix().unwrap().shape(), (2, 1));
        assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}
