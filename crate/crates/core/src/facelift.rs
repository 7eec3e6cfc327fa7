//! Face-lifted terminal reward and the terminal-jump diagnostic.

use crate::bsde::{solve_with_terminal, terminal_values, Driver, SolverConfig, Terminal};
use crate::error::{invalid, Error, Result};
use crate::model::{mat_mul, ModelSpec};
use crate::par;
use crate::path::PathView;
use crate::rng::{substream_seed, Stream};
use crate::search::{maximize_box, SearchConfig};
use crate::simulate::{euler_uncontrolled, gen_brownian, StatePathBatch, TimeGrid};
use crate::stats::Estimate;

/// Direction of the terminal transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceliftSense {
    /// `sup_l { h(x + nu l 1_T) + g . l }`: the value of one last push at `T`.
    Majorant,
    /// `inf_l { h(x + nu l 1_T) + g . l }`.
    Minorant,
}

/// Which control the terminal coefficients `nu(T, x)`, `g(T, x)` are read at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceliftControl {
    FirstGridPoint,
    /// Optimize jointly over the control grid and `l`.
    BestOverGrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceliftConfig {
    /// Upper end of the search box `[0, l_max]^l`.
    pub l_max: f64,
    pub coarse_points: usize,
    pub refine_iters: usize,
    pub sense: FaceliftSense,
    pub control: FaceliftControl,
}

impl Default for FaceliftConfig {
    fn default() -> Self {
        Self {
            l_max: 10.0,
            coarse_points: 41,
            refine_iters: 40,
            sense: FaceliftSense::Majorant,
            control: FaceliftControl::FirstGridPoint,
        }
    }
}

impl FaceliftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l_max > 0.0) || !self.l_max.is_finite() {
            return Err(invalid("face-lift l_max must be positive and finite"));
        }
        if self.coarse_points < 2 {
            return Err(invalid("face-lift needs at least 2 coarse points"));
        }
        Ok(())
    }
}

/// Face-lift of the model's terminal reward at the path `x`, perturbing only the path's
/// last point. `l = 0` is always a candidate, so the majorant is `>= h` and the minorant `<= h`.
pub fn facelift_h(model: &ModelSpec, x: &PathView<'_>, config: &FaceliftConfig) -> Result<f64> {
    config.validate()?;
    let dims = model.dims;
    let (d, n, l) = (dims.state, dims.noise, dims.singular);
    let last = x.len() - 1;
    let terminal_view = x.at_step(last);
    let t = terminal_view.time();
    let mut buf: Vec<f64> = (0..=last).flat_map(|i| x.point(i).to_vec()).collect();
    let base: Vec<f64> = x.point(last).to_vec();
    let times: Vec<f64> = (0..=last).map(|i| x.time_at(i)).collect();

    let mut sigma = vec![0.0; d * n];
    let mut nu_t = vec![0.0; n * l];
    let mut nu = vec![0.0; d * l];
    let mut g = vec![0.0; l];
    model.sigma(t, &terminal_view, &mut sigma);

    let sign = match config.sense {
        FaceliftSense::Majorant => 1.0,
        FaceliftSense::Minorant => -1.0,
    };
    let search = SearchConfig {
        coarse_points: config.coarse_points,
        refine_iters: config.refine_iters,
    };
    let controls = match config.control {
        FaceliftControl::FirstGridPoint => 1,
        FaceliftControl::BestOverGrid => model.control_grid.len(),
    };

    let mut best = f64::NEG_INFINITY;
    let mut arg = vec![0.0; l];
    for ai in 0..controls {
        let a = model.control_grid.point(ai);
        model.nu_tilde(t, &terminal_view, a, &mut nu_t);
        model.g(t, &terminal_view, a, &mut g);
        mat_mul(&sigma, &nu_t, d, n, l, &mut nu);
        let mut objective = |lv: &[f64]| -> f64 {
            for c in 0..d {
                buf[last * d + c] = base[c] + (0..l).map(|i| nu[c * l + i] * lv[i]).sum::<f64>();
            }
            let v = PathView::new(&times, &buf, d, last);
            let cost: f64 = g.iter().zip(lv).map(|(gi, li)| gi * li).sum();
            sign * (model.h(&v) + cost)
        };
        let v = maximize_box(config.l_max, &search, &mut objective, &mut arg);
        for c in 0..l {
            if arg[c] >= config.l_max * (1.0 - 1e-9) {
                let mut inner = arg.clone();
                inner[c] = config.l_max * (1.0 - 1e-3);
                let v_inner = objective(&inner);
                if v > v_inner + 1e-12 * (1.0 + v.abs()) {
                    return Err(Error::UnboundedFacelift { component: c });
                }
            }
        }
        if v > best {
            best = v;
        }
    }
    let value = sign * best;
    if !value.is_finite() {
        return Err(Error::NonFiniteValue { step: last });
    }
    Ok(value)
}

/// Face-lift at the terminal point of every path, in path order.
pub fn facelift_values(model: &ModelSpec, paths: &StatePathBatch, config: &FaceliftConfig) -> Result<Vec<f64>> {
    let m = paths.grid().steps();
    par::map_indexed(paths.paths(), |i| facelift_h(model, &paths.view(i, m), config))
        .into_iter()
        .collect()
}

/// Copy of `model` whose terminal reward is the face-lift of the original one; failures
/// of the inner search evaluate to NaN.
pub fn facelifted_model(model: &ModelSpec, config: FaceliftConfig) -> ModelSpec {
    let inner = model.clone();
    model.with_terminal(move |x| facelift_h(&inner, x, &config).unwrap_or(f64::NAN))
}

/// Outcome of solving the penalized equation once with `h` and once with the face-lift.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpDiagnostic {
    pub steps: usize,
    pub y0_h: f64,
    pub stderr_h: f64,
    pub y0_lift: f64,
    pub stderr_lift: f64,
    /// Mean `y(t_{m-1})` minus mean `h(X_T)` for the run with terminal `h`.
    pub gap_h: f64,
    /// Mean `y(t_{m-1})` minus mean face-lift of `X_T` for the face-lifted run.
    pub gap_lift: f64,
    pub y0_difference: f64,
    /// Standard error of the path-wise difference of the two runs.
    pub y0_difference_stderr: f64,
}

/// Solves the penalized equation at level `j_large` with both terminals on the same paths.
pub fn terminal_jump_diagnostic(
    model: &ModelSpec,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
    j_large: f64,
    solver: &SolverConfig,
    facelift: &FaceliftConfig,
) -> Result<JumpDiagnostic> {
    let bw = gen_brownian(grid, paths, model.dims.noise, substream_seed(seed, Stream::FaceliftEval))?;
    let x = euler_uncontrolled(model, &bw)?;
    let driver = Driver::Penalized { j: j_large };
    let h_vals = terminal_values(model, &x, &Terminal::Reward)?;
    let lift_vals = terminal_values(model, &x, &Terminal::Facelifted(*facelift))?;
    let with_h = solve_with_terminal(model, &x, &bw, driver, h_vals.clone(), solver)?;
    let with_lift = solve_with_terminal(model, &x, &bw, driver, lift_vals.clone(), solver)?;

    let m = grid.steps();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gap_h = mean(with_h.y_column(m - 1)) - mean(&h_vals);
    let gap_lift = mean(with_lift.y_column(m - 1)) - mean(&lift_vals);
    let diff: Vec<f64> = with_h
        .pathwise
        .iter()
        .zip(&with_lift.pathwise)
        .map(|(a, b)| a - b)
        .collect();
    let de = Estimate::of(&diff);
    Ok(JumpDiagnostic {
        steps: m,
        y0_h: with_h.y0,
        stderr_h: with_h.y0_stderr,
        y0_lift: with_lift.y0,
        stderr_lift: with_lift.y0_stderr,
        gap_h,
        gap_lift,
        y0_difference: with_h.y0 - with_lift.y0,
        y0_difference_stderr: de.stderr,
    })
}
