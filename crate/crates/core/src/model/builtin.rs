use crate::error::{Error, Result};
use crate::model::{ControlGrid, Dimensions, ModelSpec};

pub const BUILTIN_MODELS: [&str; 5] = ["linear_bsde", "lq1d", "fuel1d", "facelift_demo", "drawdown1d"];

/// Cost per unit of singular control that keeps the constraint inactive.
const INERT_COST: f64 = 1.0e6;

/// Optional overrides for the builtin benchmarks; `None` keeps the model's default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    /// Marginal cost of the singular control (`g = -kappa`).
    pub kappa: Option<f64>,
    /// Terminal target `K` in `h(x) = -(x_T - K)^2`.
    pub target: Option<f64>,
    /// Constant drift `mu_tilde = theta` of `linear_bsde`.
    pub theta: Option<f64>,
    /// Quadratic running cost weight of `lq1d`.
    pub control_cost: Option<f64>,
    /// Drawdown penalty weight of `drawdown1d`.
    pub drawdown: Option<f64>,
    pub x0: Option<f64>,
}

pub fn builtin_model(name: &str) -> Result<ModelSpec> {
    builtin_model_with(name, &ModelParams::default())
}

pub fn builtin_model_with(name: &str, params: &ModelParams) -> Result<ModelSpec> {
    let x0 = params.x0.unwrap_or(0.0);
    match name {
        "linear_bsde" => linear_bsde(params.theta.unwrap_or(0.5), x0),
        "lq1d" => lq1d(
            params.kappa.unwrap_or(0.5),
            params.target.unwrap_or(1.0),
            params.control_cost.unwrap_or(1.0),
            x0,
        ),
        "fuel1d" => fuel(
            "fuel1d",
            params.kappa.unwrap_or(0.5),
            params.target.unwrap_or(0.0),
            x0,
        ),
        "facelift_demo" => fuel(
            "facelift_demo",
            params.kappa.unwrap_or(0.5),
            params.target.unwrap_or(1.0),
            x0,
        ),
        "drawdown1d" => drawdown(
            params.kappa.unwrap_or(0.5),
            params.target.unwrap_or(0.0),
            params.drawdown.unwrap_or(0.25),
            x0,
        ),
        other => Err(Error::UnknownModel {
            name: other.to_string(),
            available: BUILTIN_MODELS.to_vec(),
        }),
    }
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidInput(format!("parameter {name} must be finite")))
    }
}

/// `dX = theta dt + dW`, `h = x_T`; the singular term is priced out.
fn linear_bsde(theta: f64, x0: f64) -> Result<ModelSpec> {
    let theta = finite("theta", theta)?;
    ModelSpec::builder("linear_bsde", Dimensions::scalar())
        .x0(vec![x0])
        .bounds(theta.abs(), 1.0)
        .sigma(|_, _, out| out[0] = 1.0)
        .mu_tilde(move |_, _, _, out| out[0] = theta)
        .nu_tilde(|_, _, _, out| out[0] = 1.0)
        .singular_reward(|_, _, _, out| out[0] = -INERT_COST)
        .terminal(|x| x.terminal()[0])
        .build()
}

/// Regular drift `a in [-1, 1]` at cost `c a^2 / 2`, upward pushes at cost `kappa`.
fn lq1d(kappa: f64, target: f64, control_cost: f64, x0: f64) -> Result<ModelSpec> {
    let kappa = finite("kappa", kappa)?;
    let target = finite("target", target)?;
    let c = finite("control_cost", control_cost)?;
    ModelSpec::builder("lq1d", Dimensions::scalar())
        .x0(vec![x0])
        .control_grid(ControlGrid::uniform(-1.0, 1.0, 21)?)
        .bounds(1.0, 1.0)
        .sigma(|_, _, out| out[0] = 1.0)
        .mu_tilde(|_, _, a, out| out[0] = a[0])
        .nu_tilde(|_, _, _, out| out[0] = 1.0)
        .running_reward(move |_, _, a| -0.5 * c * a[0] * a[0])
        .singular_reward(move |_, _, _, out| out[0] = -kappa)
        .terminal(move |x| {
            let e = x.terminal()[0] - target;
            -e * e
        })
        .build()
}

/// Finite-fuel style monotone follower: `dX = dβ + dW`, reward `-kappa β_T - (X_T - K)^2`.
fn fuel(name: &str, kappa: f64, target: f64, x0: f64) -> Result<ModelSpec> {
    let kappa = finite("kappa", kappa)?;
    let target = finite("target", target)?;
    ModelSpec::builder(name, Dimensions::scalar())
        .x0(vec![x0])
        .bounds(0.0, 1.0)
        .sigma(|_, _, out| out[0] = 1.0)
        .nu_tilde(|_, _, _, out| out[0] = 1.0)
        .singular_reward(move |_, _, _, out| out[0] = -kappa)
        .terminal(move |x| {
            let e = x.terminal()[0] - target;
            -e * e
        })
        .build()
}

/// `fuel1d` with an extra penalty on the terminal drawdown from the running maximum.
fn drawdown(kappa: f64, target: f64, weight: f64, x0: f64) -> Result<ModelSpec> {
    let kappa = finite("kappa", kappa)?;
    let target = finite("target", target)?;
    let weight = finite("drawdown", weight)?;
    ModelSpec::builder("drawdown1d", Dimensions::scalar())
        .x0(vec![x0])
        .bounds(0.0, 1.0)
        .markovian(false)
        .sigma(|_, _, out| out[0] = 1.0)
        .nu_tilde(|_, _, _, out| out[0] = 1.0)
        .singular_reward(move |_, _, _, out| out[0] = -kappa)
        .terminal(move |x| {
            let last = x.terminal()[0];
            let e = last - target;
            -e * e - weight * (x.running_max(0) - last)
        })
        .build()
}
