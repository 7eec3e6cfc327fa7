use std::path::Path;

use serde::{Deserialize, Serialize};

use cbsde::basis::RegressionBasis;
use cbsde::bsde::{SingularStep, SolverConfig, DEFAULT_SCHEDULE};
use cbsde::facelift::{FaceliftConfig, FaceliftControl, FaceliftSense};
use cbsde::model::{builtin_model_with, ModelParams, ModelSpec};
use cbsde::search::SearchConfig;
use cbsde::simulate::TimeGrid;

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub model: ModelSection,
    pub grid: GridSection,
    pub mc: McSection,
    pub basis: BasisSection,
    pub penalty: PenaltySection,
    pub policy: PolicySection,
    pub facelift: FaceliftSection,
    pub oracle: OracleSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drawdown: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKindName {
    Hat,
    Polynomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSection {
    pub kind: BasisKindName,
    pub knots: usize,
    pub degree: usize,
    /// Unset: on for non-Markovian models only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path_features: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepName {
    Shifted,
    Linearized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltySection {
    pub schedule: Vec<f64>,
    pub step: StepName,
    pub coarse_points: usize,
    pub refine_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Feedback,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub kind: PolicyName,
    pub j: f64,
    pub eval_paths: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SenseName {
    Majorant,
    Minorant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlName {
    FirstGridPoint,
    BestOverGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaceliftSection {
    pub l_max: f64,
    pub coarse_points: usize,
    pub refine_iters: usize,
    pub sense: SenseName,
    pub control: ControlName,
    pub steps: Vec<usize>,
    pub j_large: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub nx: usize,
    /// Binomial steps of the brute-force tree; 0 skips it.
    pub dp_steps: usize,
    pub dp_levels: Vec<f64>,
    pub dp_facelift: bool,
    /// Intermediate time slices of the finite-difference solution written to `hjb_surface.csv`.
    pub snapshots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    /// Number of simulated paths written to `paths.csv` by `solve`.
    pub dump_paths: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            model: ModelSection::default(),
            grid: GridSection::default(),
            mc: McSection::default(),
            basis: BasisSection::default(),
            penalty: PenaltySection::default(),
            policy: PolicySection::default(),
            facelift: FaceliftSection::default(),
            oracle: OracleSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            name: "fuel1d".into(),
            kappa: None,
            target: None,
            theta: None,
            control_cost: None,
            drawdown: None,
            x0: None,
        }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        Self { horizon: 1.0, steps: 50 }
    }
}

impl Default for McSection {
    fn default() -> Self {
        Self { paths: 50_000, seed: 1 }
    }
}

impl Default for BasisSection {
    fn default() -> Self {
        Self {
            kind: BasisKindName::Hat,
            knots: RegressionBasis::DEFAULT_KNOTS,
            degree: 3,
            path_features: None,
        }
    }
}

impl Default for PenaltySection {
    fn default() -> Self {
        let search = SearchConfig::default();
        Self {
            schedule: DEFAULT_SCHEDULE.to_vec(),
            step: StepName::Shifted,
            coarse_points: search.coarse_points,
            refine_iters: search.refine_iters,
        }
    }
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            kind: PolicyName::Feedback,
            j: 8.0,
            eval_paths: 50_000,
        }
    }
}

impl Default for FaceliftSection {
    fn default() -> Self {
        let f = FaceliftConfig::default();
        Self {
            l_max: f.l_max,
            coarse_points: f.coarse_points,
            refine_iters: f.refine_iters,
            sense: SenseName::Majorant,
            control: ControlName::FirstGridPoint,
            steps: vec![25, 50, 100],
            j_large: 1000.0,
        }
    }
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            nx: 401,
            dp_steps: 4,
            dp_levels: vec![0.0, 4.0, 8.0],
            dp_facelift: true,
            snapshots: 0,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            dump_paths: 0,
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Range checks that need no computation.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(bad(format!(
                "config version {} not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        positive("grid.horizon", self.grid.horizon)?;
        if self.grid.steps == 0 {
            return Err(bad("grid.steps must be at least 1"));
        }
        if self.mc.paths < 2 {
            return Err(bad("mc.paths must be at least 2"));
        }
        match self.basis.kind {
            BasisKindName::Hat if self.basis.knots < 2 => return Err(bad("basis.knots must be at least 2")),
            BasisKindName::Polynomial if self.basis.degree > 8 => return Err(bad("basis.degree must be at most 8")),
            _ => {}
        }
        let s = &self.penalty.schedule;
        if s.is_empty() || s.iter().any(|j| !(*j >= 0.0) || !j.is_finite()) || s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(bad("penalty.schedule must be nonempty, finite, nonnegative and strictly increasing"));
        }
        if self.penalty.coarse_points < 2 {
            return Err(bad("penalty.coarse_points must be at least 2"));
        }
        if !(self.policy.j >= 0.0) || !self.policy.j.is_finite() {
            return Err(bad("policy.j must be finite and nonnegative"));
        }
        if self.policy.eval_paths < 2 {
            return Err(bad("policy.eval_paths must be at least 2"));
        }
        positive("facelift.l_max", self.facelift.l_max)?;
        positive("facelift.j_large", self.facelift.j_large)?;
        if self.facelift.coarse_points < 2 {
            return Err(bad("facelift.coarse_points must be at least 2"));
        }
        if self.facelift.steps.is_empty() || self.facelift.steps.contains(&0) {
            return Err(bad("facelift.steps must list positive step counts"));
        }
        if self.oracle.nx < 3 {
            return Err(bad("oracle.nx must be at least 3"));
        }
        if self.oracle.dp_steps > 5 {
            return Err(bad("oracle.dp_steps must be at most 5"));
        }
        if self.oracle.dp_steps > 0
            && (self.oracle.dp_levels.is_empty() || self.oracle.dp_levels.iter().any(|b| !(*b >= 0.0)))
        {
            return Err(bad("oracle.dp_levels must be nonnegative"));
        }
        self.model()?;
        Ok(())
    }

    pub fn model(&self) -> Result<ModelSpec, CliError> {
        let m = &self.model;
        let params = ModelParams {
            kappa: m.kappa,
            target: m.target,
            theta: m.theta,
            control_cost: m.control_cost,
            drawdown: m.drawdown,
            x0: m.x0,
        };
        builtin_model_with(&m.name, &params).map_err(CliError::from)
    }

    pub fn time_grid(&self) -> Result<TimeGrid, CliError> {
        self.time_grid_with(self.grid.steps)
    }

    pub fn time_grid_with(&self, steps: usize) -> Result<TimeGrid, CliError> {
        TimeGrid::uniform(self.grid.horizon, steps).map_err(CliError::from)
    }

    pub fn solver(&self, model: &ModelSpec) -> SolverConfig {
        let path_features = self.basis.path_features.unwrap_or(!model.markovian);
        let basis = match self.basis.kind {
            BasisKindName::Hat => RegressionBasis::piecewise_linear(self.basis.knots, path_features),
            BasisKindName::Polynomial => RegressionBasis::polynomial(self.basis.degree, path_features),
        };
        SolverConfig {
            basis,
            singular_step: match self.penalty.step {
                StepName::Shifted => SingularStep::Shifted,
                StepName::Linearized => SingularStep::Linearized,
            },
            search: SearchConfig {
                coarse_points: self.penalty.coarse_points,
                refine_iters: self.penalty.refine_iters,
            },
        }
    }

    pub fn facelift_config(&self) -> FaceliftConfig {
        let f = &self.facelift;
        FaceliftConfig {
            l_max: f.l_max,
            coarse_points: f.coarse_points,
            refine_iters: f.refine_iters,
            sense: match f.sense {
                SenseName::Majorant => FaceliftSense::Majorant,
                SenseName::Minorant => FaceliftSense::Minorant,
            },
            control: match f.control {
                ControlName::FirstGridPoint => FaceliftControl::FirstGridPoint,
                ControlName::BestOverGrid => FaceliftControl::BestOverGrid,
            },
        }
    }
}
