//! Browser demo bindings. Every export takes plain numbers and returns a JSON string; the
//! computations live in plain functions so they can be tested off the browser.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use cbsde::bsde::{solve_penalized_sequence, SolverConfig, Terminal};
use cbsde::facelift::{facelift_h, FaceliftConfig};
use cbsde::model::{builtin_model_with, ModelParams, ModelSpec};
use cbsde::oracle::{solve_hjb_fd, FdVariant, Grid1D};
use cbsde::path::PathView;
use cbsde::simulate::TimeGrid;

const SCHEDULE: [f64; 7] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
const MAX_PATHS: usize = 20_000;
const MAX_STEPS: usize = 100;

#[derive(Debug, Serialize)]
pub struct PenaltyPoint {
    pub j: f64,
    pub y0: f64,
    pub stderr: f64,
}

#[derive(Debug, Serialize)]
pub struct PenaltyCurve {
    pub points: Vec<PenaltyPoint>,
    pub limit_estimate: f64,
    pub hjb_value: f64,
}

#[derive(Debug, Serialize)]
pub struct Profile {
    pub x: Vec<f64>,
    pub base: Vec<f64>,
    pub curve: Vec<f64>,
}

fn fuel(kappa: f64, target: f64) -> Result<ModelSpec, String> {
    let params = ModelParams {
        kappa: Some(kappa),
        target: Some(target),
        ..Default::default()
    };
    builtin_model_with("fuel1d", &params).map_err(|e| e.to_string())
}

fn hjb_value(model: &ModelSpec, nx: usize) -> Result<(Grid1D, cbsde::oracle::FdSolution), String> {
    let grid = Grid1D::around(model, 1.0, nx, FdVariant::Projected).map_err(|e| e.to_string())?;
    let sol = solve_hjb_fd(model, 1.0, &grid, FdVariant::Projected, 0).map_err(|e| e.to_string())?;
    Ok((grid, sol))
}

/// `y0(j)` of the finite-fuel model on a doubling schedule, with the HJB value for reference.
pub fn penalty_curve_data(kappa: f64, target: f64, steps: usize, paths: usize, seed: u64) -> Result<PenaltyCurve, String> {
    let model = fuel(kappa, target)?;
    if steps == 0 || steps > MAX_STEPS || !(2..=MAX_PATHS).contains(&paths) {
        return Err(format!("steps must be in 1..={MAX_STEPS} and paths in 2..={MAX_PATHS}"));
    }
    let grid = TimeGrid::uniform(1.0, steps).map_err(|e| e.to_string())?;
    let cfg = SolverConfig::for_model(&model);
    let report = solve_penalized_sequence(&model, &grid, paths, seed, &cfg, &SCHEDULE, &Terminal::Reward)
        .map_err(|e| e.to_string())?;
    let (_, fd) = hjb_value(&model, 201)?;
    Ok(PenaltyCurve {
        points: report
            .rows
            .iter()
            .map(|r| PenaltyPoint {
                j: r.j,
                y0: r.y0,
                stderr: r.stderr,
            })
            .collect(),
        limit_estimate: report.limit_estimate,
        hjb_value: fd.value_at_x0,
    })
}

/// Terminal reward and its face-lift on `[-3, 3]`.
pub fn facelift_profile_data(kappa: f64, target: f64, points: usize) -> Result<Profile, String> {
    let model = fuel(kappa, target)?;
    let points = points.clamp(2, 2001);
    let cfg = FaceliftConfig::default();
    let times = [0.0, 1.0];
    let mut out = Profile {
        x: Vec::with_capacity(points),
        base: Vec::with_capacity(points),
        curve: Vec::with_capacity(points),
    };
    for i in 0..points {
        let x = -3.0 + 6.0 * i as f64 / (points - 1) as f64;
        let states = [0.0, x];
        let view = PathView::new(&times, &states, 1, 1);
        out.x.push(x);
        out.base.push(model.h(&view));
        out.curve.push(facelift_h(&model, &view, &cfg).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

/// `u(T, x)` after the terminal projection and `u(0, x)` of the gradient-constrained HJB.
pub fn hjb_profile_data(kappa: f64, target: f64, nx: usize) -> Result<Profile, String> {
    let model = fuel(kappa, target)?;
    let (grid, sol) = hjb_value(&model, nx.clamp(11, 801))?;
    Ok(Profile {
        x: (0..grid.nx).map(|i| grid.x(i)).collect(),
        base: sol.snapshots[0].clone(),
        curve: sol.u0().to_vec(),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn penalty_curve(kappa: f64, target: f64, steps: usize, paths: usize, seed: u32) -> Result<String, JsValue> {
    to_js(penalty_curve_data(kappa, target, steps, paths, seed as u64))
}

#[wasm_bindgen]
pub fn facelift_profile(kappa: f64, target: f64, points: usize) -> Result<String, JsValue> {
    to_js(facelift_profile_data(kappa, target, points))
}

#[wasm_bindgen]
pub fn hjb_profile(kappa: f64, target: f64, nx: usize) -> Result<String, JsValue> {
    to_js(hjb_profile_data(kappa, target, nx))
}
