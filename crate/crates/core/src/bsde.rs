//! Regression Monte Carlo for the (penalized) backward equation and the penalty schedule.

use crate::basis::{least_squares, FeatureMap, RegressionBasis};
use crate::error::{invalid, Error, Result};
use crate::facelift::{facelift_values, FaceliftConfig};
use crate::hamiltonian::Hamiltonian;
use crate::model::{mat_mul, ModelSpec};
use crate::par;
use crate::path::PathView;
use crate::rng::{substream_seed, Stream};
use crate::search::{maximize_box, SearchConfig};
use crate::simulate::{euler_uncontrolled, gen_brownian, BrownianBatch, PathKind, StatePathBatch, TimeGrid};
use crate::stats::{combined_stderr, Estimate};

/// Paths per work item in the per-step loops.
const CHUNK: usize = 2048;

pub const DEFAULT_SCHEDULE: [f64; 7] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Driver {
    /// `p(t, x, z)`.
    Plain,
    /// `p^j(t, x, z)`.
    Penalized { j: f64 },
}

impl Driver {
    pub fn level(&self) -> Option<f64> {
        match self {
            Driver::Plain => None,
            Driver::Penalized { j } => Some(*j),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Terminal {
    Reward,
    Facelifted(FaceliftConfig),
}

/// How the singular part of a penalized step is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularStep {
    /// `Y_s = max_a { Ybar + dt (f + Z . mu_tilde) + max_b [U(x + nu b dt) - U(x) + dt g . b] }`
    /// with `U` the fitted conditional expectation.
    Shifted,
    /// `Y_s = Ybar + dt p^j(Z)`.
    Linearized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub basis: RegressionBasis,
    pub singular_step: SingularStep,
    /// Search over `b` when the fitted function is not piecewise linear along the push.
    pub search: SearchConfig,
}

impl SolverConfig {
    pub fn for_model(model: &ModelSpec) -> Self {
        Self {
            basis: RegressionBasis::piecewise_linear(RegressionBasis::DEFAULT_KNOTS, !model.markovian),
            singular_step: SingularStep::Shifted,
            search: SearchConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.basis.validate()?;
        self.search.validate()
    }
}

/// Fitted regression of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRegression {
    pub map: FeatureMap,
    /// `size x (1 + n)`, row-major; column 0 is the `Y` regression, columns `1..=n` give `Z`.
    pub coef: Vec<f64>,
    /// Window the fitted `Y` is clipped to (range of `Y_{s+1}`).
    pub y_range: (f64, f64),
    /// Bound on `|Z_k|`.
    pub z_bound: f64,
    pub ridge: f64,
}

#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub paths: usize,
    pub steps: usize,
    pub noise_dim: usize,
    pub times: Vec<f64>,
    /// Step-major: `y[s * paths + i]`.
    y: Vec<f64>,
    /// `z[(s * paths + i) * n + k]`.
    z: Vec<f64>,
    pub y0: f64,
    /// Standard error of `pathwise`, which carries the full sampling noise of the terminal.
    pub y0_stderr: f64,
    /// Terminal value plus the gains collected along each path.
    pub pathwise: Vec<f64>,
    pub regressions: Vec<StepRegression>,
    pub j: Option<f64>,
    pub basis: RegressionBasis,
    pub warnings: Vec<String>,
    /// Mean and max over all (path, step) of `max_i q_i(t, X, Z)^+`.
    pub q_violation_mean: f64,
    pub q_violation_max: f64,
}

impl BsdeSolution {
    pub fn y_at(&self, path: usize, step: usize) -> f64 {
        self.y[step * self.paths + path]
    }

    pub fn y_column(&self, step: usize) -> &[f64] {
        &self.y[step * self.paths..(step + 1) * self.paths]
    }

    pub fn z_at(&self, path: usize, step: usize) -> &[f64] {
        let n = self.noise_dim;
        let start = (step * self.paths + path) * n;
        &self.z[start..start + n]
    }
}

/// Terminal values of every path, in path order.
pub fn terminal_values(model: &ModelSpec, paths: &StatePathBatch, terminal: &Terminal) -> Result<Vec<f64>> {
    let m = paths.grid().steps();
    let values = match terminal {
        Terminal::Reward => par::map_indexed(paths.paths(), |i| model.h(&paths.view(i, m))),
        Terminal::Facelifted(cfg) => facelift_values(model, paths, cfg)?,
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { path: i, step: m });
    }
    Ok(values)
}

/// Backward regression scheme on uncontrolled paths simulated from `bw`.
pub fn solve_bsde(
    model: &ModelSpec,
    paths: &StatePathBatch,
    bw: &BrownianBatch,
    driver: Driver,
    terminal: &Terminal,
    config: &SolverConfig,
) -> Result<BsdeSolution> {
    let values = terminal_values(model, paths, terminal)?;
    solve_with_terminal(model, paths, bw, driver, values, config)
}

/// Per-path scratch of the driver step.
struct StepScratch<'m> {
    ham: Hamiltonian<'m>,
    feats: Vec<(usize, f64)>,
    raw: Vec<f64>,
    shifted: Vec<f64>,
    sigma: Vec<f64>,
    mu_t: Vec<f64>,
    nu_t: Vec<f64>,
    nu: Vec<f64>,
    g: Vec<f64>,
    b: Vec<f64>,
    delta: Vec<f64>,
    q: Vec<f64>,
    candidates: Vec<f64>,
}

impl<'m> StepScratch<'m> {
    fn new(model: &'m ModelSpec, q: usize) -> Self {
        let dims = model.dims;
        let (d, n, l) = (dims.state, dims.noise, dims.singular);
        Self {
            ham: Hamiltonian::new(model),
            feats: Vec::with_capacity(16),
            raw: vec![0.0; q],
            shifted: vec![0.0; q],
            sigma: vec![0.0; d * n],
            mu_t: vec![0.0; n],
            nu_t: vec![0.0; n * l],
            nu: vec![0.0; d * l],
            g: vec![0.0; l],
            b: vec![0.0; l],
            delta: vec![0.0; d],
            q: vec![0.0; l],
            candidates: Vec::new(),
        }
    }
}

/// Fitted `U` at a step: clipped regression of `Y_{s+1}`.
struct Fitted<'a> {
    map: &'a FeatureMap,
    coef: &'a [f64],
    stride: usize,
    lo: f64,
    hi: f64,
}

impl Fitted<'_> {
    fn raw_value(&self, raw: &[f64], feats: &mut Vec<(usize, f64)>) -> f64 {
        self.map.evaluate(self.coef, self.stride, 0, raw, feats)
    }

    fn value(&self, raw: &[f64], feats: &mut Vec<(usize, f64)>) -> f64 {
        self.raw_value(raw, feats).clamp(self.lo, self.hi)
    }
}

/// `max_b [U(x + nu b dt) + dt g . b]` over `b in [0, j]^l` for the loaded `nu`, `g`.
fn best_shift(
    fitted: &Fitted<'_>,
    basis: &RegressionBasis,
    step: usize,
    dt: f64,
    j: f64,
    search: &SearchConfig,
    sc: &mut StepScratch<'_>,
) -> f64 {
    let d = sc.delta.len();
    let l = sc.g.len();
    if l == 1 && fitted.map.piecewise_linear_in_state() {
        // U is piecewise linear along the push: scan its breakpoints and clip crossings.
        for c in 0..d {
            sc.delta[c] = sc.nu[c] * dt;
        }
        let mut cands = std::mem::take(&mut sc.candidates);
        fitted.map.breakpoints(&sc.raw, &sc.delta, j, &mut cands);
        cands.insert(0, 0.0);
        cands.push(j);
        let g = sc.g[0];
        let mut best = f64::NEG_INFINITY;
        let mut prev: Option<(f64, f64)> = None;
        let shift_eval = |b: f64, sc: &mut StepScratch<'_>| -> f64 {
            for c in 0..d {
                sc.delta[c] = sc.nu[c] * b * dt;
            }
            basis.shift_raw(&sc.raw, step, &sc.delta, &mut sc.shifted);
            fitted.raw_value(&sc.shifted, &mut sc.feats)
        };
        for &b in &cands {
            let u = shift_eval(b, sc);
            if let Some((b0, u0)) = prev {
                for level in [fitted.lo, fitted.hi] {
                    if (u0 - level) * (u - level) < 0.0 {
                        let bc = b0 + (level - u0) / (u - u0) * (b - b0);
                        best = best.max(level + dt * g * bc);
                    }
                }
            }
            best = best.max(u.clamp(fitted.lo, fitted.hi) + dt * g * b);
            prev = Some((b, u));
        }
        sc.candidates = cands;
        return best;
    }

    let mut b_out = std::mem::take(&mut sc.b);
    let v = {
        let objective = |b: &[f64]| -> f64 {
            let mut delta = [0.0; 8];
            let mut heap;
            let delta: &mut [f64] = if d <= 8 {
                &mut delta[..d]
            } else {
                heap = vec![0.0; d];
                &mut heap
            };
            for c in 0..d {
                delta[c] = (0..l).map(|i| sc.nu[c * l + i] * b[i]).sum::<f64>() * dt;
            }
            let mut shifted = sc.shifted.clone();
            basis.shift_raw(&sc.raw, step, delta, &mut shifted);
            let mut feats = Vec::with_capacity(16);
            let cost: f64 = sc.g.iter().zip(b).map(|(g, b)| g * b).sum();
            fitted.value(&shifted, &mut feats) + dt * cost
        };
        maximize_box(j, search, objective, &mut b_out)
    };
    sc.b = b_out;
    v
}

/// Backward recursion with precomputed terminal values `y_m`.
pub fn solve_with_terminal(
    model: &ModelSpec,
    paths: &StatePathBatch,
    bw: &BrownianBatch,
    driver: Driver,
    terminal: Vec<f64>,
    config: &SolverConfig,
) -> Result<BsdeSolution> {
    config.validate()?;
    if paths.kind() != PathKind::Uncontrolled {
        return Err(Error::Precondition("the backward scheme needs uncontrolled paths".into()));
    }
    if paths.paths() != bw.paths() || paths.grid() != bw.grid() || bw.dim() != model.dims.noise {
        return Err(invalid("paths were not generated from this Brownian batch"));
    }
    if terminal.len() != paths.paths() {
        return Err(invalid("one terminal value per path expected"));
    }
    if let Driver::Penalized { j } = driver {
        if !(j >= 0.0) || !j.is_finite() {
            return Err(invalid("penalty level must be finite and nonnegative"));
        }
    }
    let dims = model.dims;
    let (d, n, l) = (dims.state, dims.noise, dims.singular);
    let grid = paths.grid();
    let times = grid.times().to_vec();
    let m = grid.steps();
    let np = paths.paths();
    let basis = config.basis;
    let q = basis.raw_dim(d);
    let chunks = np.div_ceil(CHUNK);

    let mut y = vec![0.0; np * (m + 1)];
    let mut z = vec![0.0; np * m * n];
    y[m * np..].copy_from_slice(&terminal);
    let mut regressions: Vec<StepRegression> = Vec::with_capacity(m);
    let mut warnings = Vec::new();
    let mut q_sum = 0.0;
    let mut q_max: f64 = 0.0;
    // per-path sum of the one-step gains; terminal plus gains has the same mean as y0
    // up to clipping but keeps the terminal noise the regressions average out
    let mut gains = vec![0.0; np];

    for s in (0..m).rev() {
        let t = times[s];
        let dt = grid.dt(s);
        let (head, tail) = y.split_at_mut((s + 1) * np);
        let y_next = &tail[..np];
        let y_cur = &mut head[s * np..];

        let raw_chunks = par::map_indexed(chunks, |k| {
            let lo = k * CHUNK;
            let hi = ((k + 1) * CHUNK).min(np);
            let mut out = vec![0.0; (hi - lo) * q];
            for i in lo..hi {
                basis.raw_inputs(&paths.view(i, s), &mut out[(i - lo) * q..(i - lo + 1) * q]);
            }
            out
        });
        let raw: Vec<f64> = raw_chunks.concat();
        let map = FeatureMap::fit(&basis, &raw, q, d);

        let (ylo, yhi) = y_next
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let z_bound = (yhi - ylo) / dt.sqrt();

        let fit_y = least_squares(&map, &raw, q, &[y_next]);
        let stride = 1 + n;
        let mut scratch = Vec::new();
        let ybar: Vec<f64> = (0..np)
            .map(|i| {
                map.evaluate(&fit_y.coef, 1, 0, &raw[i * q..(i + 1) * q], &mut scratch)
                    .clamp(ylo, yhi)
            })
            .collect();
        let z_targets: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                (0..np)
                    .map(|i| (y_next[i] - ybar[i]) * bw.increment(i, s)[k] / dt)
                    .collect()
            })
            .collect();
        let z_refs: Vec<&[f64]> = z_targets.iter().map(|v| v.as_slice()).collect();
        let fit_z = least_squares(&map, &raw, q, &z_refs);
        let size = map.size();
        let mut coef = vec![0.0; size * stride];
        for r in 0..size {
            coef[r * stride] = fit_y.coef[r];
            for k in 0..n {
                coef[r * stride + 1 + k] = fit_z.coef[r * n + k];
            }
        }
        let ridge = fit_y.ridge.max(fit_z.ridge);
        if ridge > 0.0 {
            warnings.push(format!(
                "step {s}: ill-conditioned regression, ridge {ridge:.3e} added to the Gram diagonal"
            ));
        }

        let fitted = Fitted {
            map: &map,
            coef: &coef,
            stride,
            lo: ylo,
            hi: yhi,
        };
        let shift = matches!(driver, Driver::Penalized { .. })
            && config.singular_step == SingularStep::Shifted
            && !map.is_constant();

        let results = par::map_indexed(chunks, |k| -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
            let lo = k * CHUNK;
            let hi = ((k + 1) * CHUNK).min(np);
            let mut sc = StepScratch::new(model, q);
            let mut ys = Vec::with_capacity(hi - lo);
            let mut zs = vec![0.0; (hi - lo) * n];
            let mut zi = vec![0.0; n];
            let (mut qs, mut qm) = (0.0, 0.0f64);
            for i in lo..hi {
                let x = paths.view(i, s);
                sc.raw.copy_from_slice(&raw[i * q..(i + 1) * q]);
                for kk in 0..n {
                    zi[kk] = map
                        .evaluate(&coef, stride, 1 + kk, &sc.raw, &mut sc.feats)
                        .clamp(-z_bound, z_bound);
                }
                let base = if s == 0 { y_next[i] } else { ybar[i] };
                let value = match driver {
                    Driver::Plain => base + dt * sc.ham.p(t, &x, &zi).0,
                    Driver::Penalized { j } if !shift => {
                        let mut b = std::mem::take(&mut sc.b);
                        let v = base + dt * sc.ham.pj(t, &x, &zi, j, &mut b).0;
                        sc.b = b;
                        v
                    }
                    Driver::Penalized { j } => {
                        model.sigma(t, &x, &mut sc.sigma);
                        let mut best = f64::NEG_INFINITY;
                        for ai in 0..model.control_grid.len() {
                            let a = model.control_grid.point(ai);
                            model.mu_tilde(t, &x, a, &mut sc.mu_t);
                            model.nu_tilde(t, &x, a, &mut sc.nu_t);
                            model.g(t, &x, a, &mut sc.g);
                            mat_mul(&sc.sigma, &sc.nu_t, d, n, l, &mut sc.nu);
                            let regular = model.f(t, &x, a) + dot(&zi, &sc.mu_t);
                            let pushed = best_shift(&fitted, &basis, s, dt, j, &config.search, &mut sc);
                            let v = dt * regular + pushed;
                            if v > best {
                                best = v;
                            }
                        }
                        // `pushed` includes U(x) itself
                        best
                    }
                };
                if !value.is_finite() {
                    return Err(Error::NonFiniteValue { step: s });
                }
                sc.ham.q(t, &x, &zi, &mut sc.q);
                let viol = sc.q.iter().fold(0.0f64, |acc, v| acc.max(*v));
                qs += viol;
                qm = qm.max(viol);
                ys.push(value);
                zs[(i - lo) * n..(i - lo + 1) * n].copy_from_slice(&zi);
            }
            Ok((ys, zs, qs, qm))
        });
        let mut offset = 0;
        for r in results {
            let (ys, zs, qs, qm) = r?;
            y_cur[offset..offset + ys.len()].copy_from_slice(&ys);
            z[(s * np + offset) * n..(s * np + offset + ys.len()) * n].copy_from_slice(&zs);
            offset += ys.len();
            q_sum += qs;
            q_max = q_max.max(qm);
        }
        for i in 0..np {
            let base = if s == 0 { y_next[i] } else { ybar[i] };
            gains[i] += y_cur[i] - base;
        }

        regressions.push(StepRegression {
            map,
            coef,
            y_range: (ylo, yhi),
            z_bound,
            ridge,
        });
    }
    regressions.reverse();

    let est = Estimate::of(&y[..np]);
    let pathwise: Vec<f64> = terminal.iter().zip(&gains).map(|(h, g)| h + g).collect();
    let spread = Estimate::of(&pathwise);
    Ok(BsdeSolution {
        paths: np,
        steps: m,
        noise_dim: n,
        times,
        y,
        z,
        y0: est.mean,
        y0_stderr: spread.stderr,
        pathwise,
        regressions,
        j: driver.level(),
        basis,
        warnings,
        q_violation_mean: q_sum / (np * m) as f64,
        q_violation_max: q_max,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Regressed `Z` at step `s` for an arbitrary path history.
pub fn eval_z_at(solution: &BsdeSolution, s: usize, x: &PathView<'_>) -> Vec<f64> {
    let mut out = vec![0.0; solution.noise_dim];
    let mut raw = vec![0.0; solution.basis.raw_dim(x.dim())];
    let mut feats = Vec::new();
    eval_z_into(solution, s, x, &mut raw, &mut feats, &mut out);
    out
}

pub(crate) fn eval_z_into(
    solution: &BsdeSolution,
    s: usize,
    x: &PathView<'_>,
    raw: &mut [f64],
    feats: &mut Vec<(usize, f64)>,
    out: &mut [f64],
) {
    assert!(s < solution.steps, "step {s} has no Z (steps = {})", solution.steps);
    let reg = &solution.regressions[s];
    solution.basis.raw_inputs(&x.at_step(s), raw);
    let stride = 1 + solution.noise_dim;
    for (k, o) in out.iter_mut().enumerate() {
        *o = reg
            .map
            .evaluate(&reg.coef, stride, 1 + k, raw, feats)
            .clamp(-reg.z_bound, reg.z_bound);
    }
}

/// Simulates training paths from the simulation substream of `seed`.
pub fn training_paths(model: &ModelSpec, grid: &TimeGrid, paths: usize, seed: u64) -> Result<(BrownianBatch, StatePathBatch)> {
    let bw = gen_brownian(grid, paths, model.dims.noise, substream_seed(seed, Stream::Simulation))?;
    let x = euler_uncontrolled(model, &bw)?;
    Ok((bw, x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyRow {
    pub j: f64,
    pub y0: f64,
    pub stderr: f64,
    pub q_mean: f64,
    pub q_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyReport {
    pub rows: Vec<PenaltyRow>,
    /// Value at the largest level.
    pub limit_estimate: f64,
    /// Geometric extrapolation, only when the last increments decay at a stable ratio.
    pub extrapolated_limit: Option<f64>,
    pub monotone_ok: bool,
    pub warnings: Vec<String>,
}

impl PenaltyReport {
    pub fn schedule(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.j).collect()
    }
}

/// `y0(j)` along `schedule`, all levels on the same training paths.
pub fn solve_penalized_sequence(
    model: &ModelSpec,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
    config: &SolverConfig,
    schedule: &[f64],
    terminal: &Terminal,
) -> Result<PenaltyReport> {
    solve_penalized_sequence_with(model, grid, paths, seed, config, schedule, terminal, |_| {})
}

/// As [`solve_penalized_sequence`], handing each row to `on_row` as soon as it is done.
#[allow(clippy::too_many_arguments)]
pub fn solve_penalized_sequence_with(
    model: &ModelSpec,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
    config: &SolverConfig,
    schedule: &[f64],
    terminal: &Terminal,
    mut on_row: impl FnMut(&PenaltyRow),
) -> Result<PenaltyReport> {
    if schedule.is_empty() || schedule.windows(2).any(|w| !(w[1] > w[0])) || !(schedule[0] >= 0.0) {
        return Err(invalid("penalty schedule must be nonempty, nonnegative and strictly increasing"));
    }
    let (bw, x) = training_paths(model, grid, paths, seed)?;
    let values = terminal_values(model, &x, terminal)?;
    let mut rows = Vec::with_capacity(schedule.len());
    let mut warnings = Vec::new();
    for &j in schedule {
        let sol = solve_with_terminal(model, &x, &bw, Driver::Penalized { j }, values.clone(), config)?;
        warnings.extend(sol.warnings.iter().map(|w| format!("j = {j}: {w}")));
        let row = PenaltyRow {
            j,
            y0: sol.y0,
            stderr: sol.y0_stderr,
            q_mean: sol.q_violation_mean,
            q_max: sol.q_violation_max,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(summarize(rows, warnings))
}

/// Monotonicity check and limit estimates for a finished schedule.
pub fn summarize(rows: Vec<PenaltyRow>, warnings: Vec<String>) -> PenaltyReport {
    let monotone_ok = rows
        .windows(2)
        .all(|w| w[1].y0 >= w[0].y0 - 2.0 * combined_stderr(w[0].stderr, w[1].stderr));
    let limit_estimate = rows.last().map_or(f64::NAN, |r| r.y0);
    let inc: Vec<f64> = rows.windows(2).map(|w| w[1].y0 - w[0].y0).collect();
    let extrapolated_limit = if inc.len() >= 3 {
        let k = inc.len();
        let r1 = inc[k - 1] / inc[k - 2];
        let r2 = inc[k - 2] / inc[k - 3];
        let stable = (0.0..1.0).contains(&r1) && r1 > 0.0 && (0.0..1.0).contains(&r2) && r2 > 0.0;
        if stable && (r1 - r2).abs() <= 0.25 * r1.max(r2) {
            Some(limit_estimate + inc[k - 1] * r1 / (1.0 - r1))
        } else {
            None
        }
    } else {
        None
    };
    PenaltyReport {
        rows,
        limit_estimate,
        extrapolated_limit,
        monotone_ok,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, Dimensions};

    fn brownian(h: impl Fn(&PathView<'_>) -> f64 + Send + Sync + 'static) -> ModelSpec {
        ModelSpec::builder("bm", Dimensions::scalar())
            .sigma(|_, _, out| out[0] = 1.0)
            .terminal(h)
            .build()
            .unwrap()
    }

    fn cfg(model: &ModelSpec) -> SolverConfig {
        SolverConfig::for_model(model)
    }

    #[test]
    fn martingale_terminal_gives_unit_z() {
        let model = brownian(|x| x.terminal()[0]);
        let grid = TimeGrid::uniform(1.0, 50).unwrap();
        let (bw, x) = training_paths(&model, &grid, 20_000, 3).unwrap();
        let sol = solve_bsde(&model, &x, &bw, Driver::Plain, &Terminal::Reward, &cfg(&model)).unwrap();
        assert!(sol.y0.abs() < 3.0 * sol.y0_stderr + 1e-3, "{} {}", sol.y0, sol.y0_stderr);
        let mut sq = 0.0;
        for s in 0..50 {
            for i in 0..sol.paths {
                sq += (sol.z_at(i, s)[0] - 1.0).powi(2);
            }
        }
        let rms = (sq / (50 * sol.paths) as f64).sqrt();
        // regression noise at this N; the full-size check lives in the acceptance suite
        assert!(rms < 0.1, "z rms error {rms}");
        // terminal layer is bit-exact
        for i in 0..sol.paths {
            assert_eq!(sol.y_at(i, 50), x.state(i, 50)[0]);
        }
    }

    #[test]
    fn constant_driver_shifts_value() {
        let model = ModelSpec::builder("k", Dimensions::scalar())
            .sigma(|_, _, out| out[0] = 1.0)
            .running_reward(|_, _, _| 0.7)
            .build()
            .unwrap();
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let (bw, x) = training_paths(&model, &grid, 1000, 3).unwrap();
        let sol = solve_bsde(&model, &x, &bw, Driver::Plain, &Terminal::Reward, &cfg(&model)).unwrap();
        assert!((sol.y0 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn step_zero_value_is_sample_mean() {
        let model = brownian(|x| x.terminal()[0].powi(2));
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let (bw, x) = training_paths(&model, &grid, 500, 9).unwrap();
        let sol = solve_bsde(&model, &x, &bw, Driver::Plain, &Terminal::Reward, &cfg(&model)).unwrap();
        let mean = (0..500).map(|i| x.state(i, 1)[0].powi(2)).sum::<f64>() / 500.0;
        assert!((sol.y0 - mean).abs() < 1e-12);
    }

    #[test]
    fn inert_constraint_leaves_value_unchanged() {
        let model = builtin_model("linear_bsde").unwrap();
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let report = solve_penalized_sequence(
            &model,
            &grid,
            5000,
            1,
            &cfg(&model),
            &[1.0, 4.0, 16.0],
            &Terminal::Reward,
        )
        .unwrap();
        let (bw, x) = training_paths(&model, &grid, 5000, 1).unwrap();
        let plain = solve_bsde(&model, &x, &bw, Driver::Plain, &Terminal::Reward, &cfg(&model)).unwrap();
        for r in &report.rows {
            assert!((r.y0 - plain.y0).abs() < 1e-12, "{r:?} vs {}", plain.y0);
            assert_eq!(r.q_mean, 0.0);
        }
        assert!(report.monotone_ok);
    }

    #[test]
    fn schedule_must_increase() {
        let model = builtin_model("fuel1d").unwrap();
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        assert!(solve_penalized_sequence(&model, &grid, 100, 1, &cfg(&model), &[2.0, 1.0], &Terminal::Reward).is_err());
    }

    #[test]
    fn controlled_paths_rejected() {
        let model = builtin_model("fuel1d").unwrap();
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let bw = gen_brownian(&grid, 10, 1, 1).unwrap();
        let policy = crate::policy::Policy::constant(&model, 0, vec![0.0], 1.0).unwrap();
        let ctl = crate::simulate::euler_controlled(&model, &bw, &policy).unwrap();
        assert!(matches!(
            solve_bsde(&model, &ctl.paths, &bw, Driver::Plain, &Terminal::Reward, &cfg(&model)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn extrapolation_requires_stable_ratio() {
        let row = |j: f64, y0: f64| PenaltyRow {
            j,
            y0,
            stderr: 0.0,
            q_mean: 0.0,
            q_max: 0.0,
        };
        let geometric = vec![row(1.0, 0.0), row(2.0, 0.5), row(4.0, 0.75), row(8.0, 0.875)];
        let r = summarize(geometric, vec![]);
        assert!((r.extrapolated_limit.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.limit_estimate, 0.875);
        let erratic = vec![row(1.0, 0.0), row(2.0, 0.5), row(4.0, 0.6), row(8.0, 0.9)];
        assert!(summarize(erratic, vec![]).extrapolated_limit.is_none());
        let dropping = vec![row(1.0, 0.0), row(2.0, -1.0)];
        assert!(!summarize(dropping, vec![]).monotone_ok);
    }
}
