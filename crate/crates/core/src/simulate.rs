//! Forward simulation: Brownian increments, Euler schemes for the uncontrolled and the
//! controlled state equations, and Girsanov likelihood weights.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::model::{mat_mul, ModelSpec};
use crate::par;
use crate::path::PathView;
use crate::policy::Policy;

/// Exponent above which a likelihood weight is treated as overflowing.
const MAX_LOG_WEIGHT: f64 = 700.0;

/// Deterministic partition `0 = t_0 < t_1 < ... < t_m = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(invalid("time grid needs at least one step"));
        }
        if times[0] != 0.0 {
            return Err(invalid("time grid must start at 0"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || !times[times.len() - 1].is_finite() {
            return Err(invalid("time grid must be strictly increasing and finite"));
        }
        Ok(Self { times })
    }

    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("number of time steps must be positive"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid("horizon must be positive and finite"));
        }
        let mut times: Vec<f64> = (0..=steps).map(|i| horizon * i as f64 / steps as f64).collect();
        times[steps] = horizon;
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of steps `m`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn dt(&self, step: usize) -> f64 {
        self.times[step + 1] - self.times[step]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Gaussian,
    /// `±sqrt(dt)` with probability 1/2 each (binomial lattice).
    Rademacher,
}

/// `paths x steps x dim` increments, row-major by path.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianBatch {
    grid: TimeGrid,
    paths: usize,
    dim: usize,
    seed: u64,
    kind: NoiseKind,
    increments: Vec<f64>,
}

impl BrownianBatch {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let m = self.grid.steps();
        let start = (path * m + step) * self.dim;
        &self.increments[start..start + self.dim]
    }

    pub fn path_increments(&self, path: usize) -> &[f64] {
        let len = self.grid.steps() * self.dim;
        &self.increments[path * len..(path + 1) * len]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Overwrite one increment; used to probe predictability.
    pub fn set_increment(&mut self, path: usize, step: usize, value: &[f64]) {
        let m = self.grid.steps();
        let start = (path * m + step) * self.dim;
        self.increments[start..start + self.dim].copy_from_slice(value);
    }
}

/// Gaussian increments with one ChaCha stream per path.
pub fn gen_brownian(grid: &TimeGrid, paths: usize, dim: usize, seed: u64) -> Result<BrownianBatch> {
    gen_noise(grid, paths, dim, seed, NoiseKind::Gaussian)
}

pub fn gen_noise(grid: &TimeGrid, paths: usize, dim: usize, seed: u64, kind: NoiseKind) -> Result<BrownianBatch> {
    if paths == 0 {
        return Err(invalid("number of paths must be positive"));
    }
    if dim == 0 {
        return Err(invalid("Brownian dimension must be positive"));
    }
    let m = grid.steps();
    let sqrt_dt: Vec<f64> = (0..m).map(|s| grid.dt(s).sqrt()).collect();
    let mut increments = vec![0.0; paths * m * dim];
    par::for_each_chunk_mut(&mut increments, m * dim, |path, chunk| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path as u64);
        for (s, step) in chunk.chunks_exact_mut(dim).enumerate() {
            for v in step.iter_mut() {
                *v = match kind {
                    NoiseKind::Gaussian => {
                        let z: f64 = rng.sample(StandardNormal);
                        z * sqrt_dt[s]
                    }
                    NoiseKind::Rademacher => {
                        if rng.random::<bool>() {
                            sqrt_dt[s]
                        } else {
                            -sqrt_dt[s]
                        }
                    }
                };
            }
        }
    });
    Ok(BrownianBatch {
        grid: grid.clone(),
        paths,
        dim,
        seed,
        kind,
        increments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    Uncontrolled,
    Controlled,
}

/// `paths x (m + 1) x dim` states, row-major by path.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePathBatch {
    grid: TimeGrid,
    paths: usize,
    dim: usize,
    kind: PathKind,
    states: Vec<f64>,
}

impl StatePathBatch {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn path_states(&self, path: usize) -> &[f64] {
        let len = (self.grid.steps() + 1) * self.dim;
        &self.states[path * len..(path + 1) * len]
    }

    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let start = step * self.dim;
        &self.path_states(path)[start..start + self.dim]
    }

    /// Whole path with the cursor at `step`.
    pub fn view(&self, path: usize, step: usize) -> PathView<'_> {
        PathView::new(self.grid.times(), self.path_states(path), self.dim, step)
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }
}

fn check_dims(model: &ModelSpec, bw: &BrownianBatch) -> Result<()> {
    if bw.dim() != model.dims.noise {
        return Err(invalid(format!(
            "Brownian dimension {} differs from model n = {}",
            bw.dim(),
            model.dims.noise
        )));
    }
    Ok(())
}

/// Euler scheme for `dX = eta dt + sigma dW` with left-endpoint coefficients.
pub fn euler_uncontrolled(model: &ModelSpec, bw: &BrownianBatch) -> Result<StatePathBatch> {
    check_dims(model, bw)?;
    let grid = bw.grid().clone();
    let (d, n) = (model.dims.state, model.dims.noise);
    let m = grid.steps();
    let times = grid.times();
    let mut states = vec![0.0; bw.paths() * (m + 1) * d];
    par::try_for_each_chunk_mut(&mut states, (m + 1) * d, |path, buf| {
        let mut sigma = vec![0.0; d * n];
        let mut eta = vec![0.0; d];
        let mut next = vec![0.0; d];
        buf[..d].copy_from_slice(&model.x0);
        for s in 0..m {
            let t = times[s];
            let dt = times[s + 1] - t;
            let dw = bw.increment(path, s);
            {
                let x = PathView::new(times, buf, d, s);
                model.sigma(t, &x, &mut sigma);
                model.eta(t, &x, &mut eta);
                for c in 0..d {
                    let noise: f64 = (0..n).map(|k| sigma[c * n + k] * dw[k]).sum();
                    next[c] = x.current()[c] + eta[c] * dt + noise;
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { path, step: s + 1 });
            }
            buf[(s + 1) * d..(s + 2) * d].copy_from_slice(&next);
        }
        Ok(())
    })?;
    Ok(StatePathBatch {
        grid,
        paths: bw.paths(),
        dim: d,
        kind: PathKind::Uncontrolled,
        states,
    })
}

/// Controlled paths with the controls and the accumulated running reward
/// `sum_s [f(t_s, X, a_s) + g(t_s, X, a_s) . b_s] dt_s` of every path.
#[derive(Debug, Clone)]
pub struct ControlledPaths {
    pub paths: StatePathBatch,
    /// Control-grid index of `a_s`, `paths x m`.
    pub a_index: Vec<usize>,
    /// Singular-control density `b_s`, `paths x m x l`.
    pub b: Vec<f64>,
    pub running_reward: Vec<f64>,
}

/// Per-path scratch for the controlled coefficients.
pub(crate) struct ControlScratch {
    pub sigma: Vec<f64>,
    pub eta: Vec<f64>,
    pub mu_t: Vec<f64>,
    pub nu_t: Vec<f64>,
    pub nu: Vec<f64>,
    pub g: Vec<f64>,
    pub b: Vec<f64>,
    pub theta: Vec<f64>,
}

impl ControlScratch {
    pub fn new(model: &ModelSpec) -> Self {
        let dims = model.dims;
        let (d, n, l) = (dims.state, dims.noise, dims.singular);
        Self {
            sigma: vec![0.0; d * n],
            eta: vec![0.0; d],
            mu_t: vec![0.0; n],
            nu_t: vec![0.0; n * l],
            nu: vec![0.0; d * l],
            g: vec![0.0; l],
            b: vec![0.0; l],
            theta: vec![0.0; n],
        }
    }
}

pub(crate) fn check_singular(b: &[f64], bound: f64, path: usize, step: usize) -> Result<()> {
    for &v in b {
        if !(v >= 0.0 && v <= bound) {
            return Err(Error::ControlOutOfBounds {
                path,
                step,
                value: v,
                bound,
            });
        }
    }
    Ok(())
}

/// Euler scheme for the controlled dynamics with `dβ = b dt`; controls are read from the
/// path up to `t_s` only.
pub fn euler_controlled(model: &ModelSpec, bw: &BrownianBatch, policy: &Policy<'_>) -> Result<ControlledPaths> {
    check_dims(model, bw)?;
    let grid = bw.grid().clone();
    let dims = model.dims;
    let (d, n, l) = (dims.state, dims.noise, dims.singular);
    let m = grid.steps();
    let times = grid.times();
    let bound = policy.penalty_level();

    struct PathOut {
        states: Vec<f64>,
        a: Vec<usize>,
        b: Vec<f64>,
        reward: f64,
    }

    let per_path = par::map_indexed(bw.paths(), |path| -> Result<PathOut> {
        let mut sc = ControlScratch::new(model);
        let mut controller = policy.controller();
        let mut buf = vec![0.0; (m + 1) * d];
        let mut a_out = vec![0usize; m];
        let mut b_out = vec![0.0; m * l];
        let mut next = vec![0.0; d];
        let mut reward = 0.0;
        buf[..d].copy_from_slice(&model.x0);
        for s in 0..m {
            let t = times[s];
            let dt = times[s + 1] - t;
            let dw = bw.increment(path, s);
            {
                let x = PathView::new(times, &buf, d, s);
                let ai = controller.decide(s, &x, &mut sc.b)?;
                check_singular(&sc.b, bound, path, s)?;
                let a = model.control_grid.point(ai);
                model.sigma(t, &x, &mut sc.sigma);
                model.eta(t, &x, &mut sc.eta);
                model.mu_tilde(t, &x, a, &mut sc.mu_t);
                model.nu_tilde(t, &x, a, &mut sc.nu_t);
                mat_mul(&sc.sigma, &sc.nu_t, d, n, l, &mut sc.nu);
                model.g(t, &x, a, &mut sc.g);
                let gb: f64 = sc.g.iter().zip(&sc.b).map(|(g, b)| g * b).sum();
                reward += (model.f(t, &x, a) + gb) * dt;
                for c in 0..d {
                    let drift_mu: f64 = (0..n).map(|k| sc.sigma[c * n + k] * sc.mu_t[k]).sum();
                    let drift_nu: f64 = (0..l).map(|i| sc.nu[c * l + i] * sc.b[i]).sum();
                    let drift = sc.eta[c] + drift_mu + drift_nu;
                    let noise: f64 = (0..n).map(|k| sc.sigma[c * n + k] * dw[k]).sum();
                    next[c] = x.current()[c] + drift * dt + noise;
                }
                a_out[s] = ai;
                b_out[s * l..(s + 1) * l].copy_from_slice(&sc.b);
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { path, step: s + 1 });
            }
            buf[(s + 1) * d..(s + 2) * d].copy_from_slice(&next);
        }
        Ok(PathOut {
            states: buf,
            a: a_out,
            b: b_out,
            reward,
        })
    });

    let mut states = Vec::with_capacity(bw.paths() * (m + 1) * d);
    let mut a_index = Vec::with_capacity(bw.paths() * m);
    let mut b = Vec::with_capacity(bw.paths() * m * l);
    let mut running_reward = Vec::with_capacity(bw.paths());
    for out in per_path {
        let out = out?;
        states.extend_from_slice(&out.states);
        a_index.extend_from_slice(&out.a);
        b.extend_from_slice(&out.b);
        running_reward.push(out.reward);
    }
    Ok(ControlledPaths {
        paths: StatePathBatch {
            grid,
            paths: bw.paths(),
            dim: d,
            kind: PathKind::Controlled,
            states,
        },
        a_index,
        b,
        running_reward,
    })
}

/// Log of the discretized stochastic exponential and the running reward of `policy`
/// read along one uncontrolled path.
pub(crate) fn weak_path_terms(
    model: &ModelSpec,
    paths: &StatePathBatch,
    bw: &BrownianBatch,
    policy: &Policy<'_>,
    path: usize,
) -> Result<(f64, f64)> {
    let dims = model.dims;
    let (n, l) = (dims.noise, dims.singular);
    let grid = paths.grid();
    let times = grid.times();
    let bound = policy.penalty_level();
    let mut sc = ControlScratch::new(model);
    let mut controller = policy.controller();
    let mut log_w = 0.0;
    let mut reward = 0.0;
    for s in 0..grid.steps() {
        let t = times[s];
        let dt = times[s + 1] - t;
        let x = paths.view(path, s);
        let ai = controller.decide(s, &x, &mut sc.b)?;
        check_singular(&sc.b, bound, path, s)?;
        let a = model.control_grid.point(ai);
        model.mu_tilde(t, &x, a, &mut sc.mu_t);
        model.nu_tilde(t, &x, a, &mut sc.nu_t);
        model.g(t, &x, a, &mut sc.g);
        let gb: f64 = sc.g.iter().zip(&sc.b).map(|(g, b)| g * b).sum();
        reward += (model.f(t, &x, a) + gb) * dt;
        for k in 0..n {
            sc.theta[k] = sc.mu_t[k] + (0..l).map(|i| sc.nu_t[k * l + i] * sc.b[i]).sum::<f64>();
        }
        let dw = bw.increment(path, s);
        let drift: f64 = sc.theta.iter().zip(dw).map(|(th, w)| th * w).sum();
        let quad: f64 = sc.theta.iter().map(|th| th * th).sum();
        log_w += drift - 0.5 * quad * dt;
    }
    if !(log_w < MAX_LOG_WEIGHT) {
        return Err(Error::WeightOverflow { path, exponent: log_w });
    }
    Ok((log_w, reward))
}

fn check_uncontrolled(paths: &StatePathBatch, bw: &BrownianBatch) -> Result<()> {
    if paths.kind() != PathKind::Uncontrolled {
        return Err(Error::Precondition("Girsanov weights need uncontrolled paths".into()));
    }
    if paths.paths() != bw.paths() || paths.grid() != bw.grid() {
        return Err(invalid("paths and Brownian batch do not match"));
    }
    Ok(())
}

/// `exp(sum_s theta_s . dW_s - 1/2 sum_s |theta_s|^2 dt_s)` with
/// `theta_s = mu_tilde(t_s, X, a_s) + nu_tilde(t_s, X, a_s) b_s`, controls read on the
/// uncontrolled path.
pub fn girsanov_weights(
    model: &ModelSpec,
    paths: &StatePathBatch,
    bw: &BrownianBatch,
    policy: &Policy<'_>,
) -> Result<Vec<f64>> {
    check_dims(model, bw)?;
    check_uncontrolled(paths, bw)?;
    par::map_indexed(paths.paths(), |i| {
        weak_path_terms(model, paths, bw, policy, i).map(|(lw, _)| lw.exp())
    })
    .into_iter()
    .collect()
}

pub(crate) fn weak_terms(
    model: &ModelSpec,
    paths: &StatePathBatch,
    bw: &BrownianBatch,
    policy: &Policy<'_>,
) -> Result<Vec<(f64, f64)>> {
    check_dims(model, bw)?;
    check_uncontrolled(paths, bw)?;
    par::map_indexed(paths.paths(), |i| weak_path_terms(model, paths, bw, policy, i))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dimensions;
    use crate::stats::Estimate;

    fn brownian_model(eta: f64, sigma: f64) -> ModelSpec {
        ModelSpec::builder("bm", Dimensions::scalar())
            .bounds(0.0, 1.0)
            .sigma(move |_, _, out| out[0] = sigma)
            .eta(move |_, _, out| out[0] = eta)
            .nu_tilde(|_, _, _, out| out[0] = 1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn time_grid_validation() {
        assert!(TimeGrid::uniform(1.0, 0).is_err());
        assert!(TimeGrid::uniform(0.0, 5).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::new(vec![0.1, 0.5]).is_err());
        let g = TimeGrid::uniform(2.0, 4).unwrap();
        assert_eq!(g.steps(), 4);
        assert_eq!(g.horizon(), 2.0);
        assert_eq!(g.dt(0), 0.5);
    }

    #[test]
    fn brownian_is_deterministic_and_seed_sensitive() {
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let a = gen_brownian(&grid, 1, 1, 42).unwrap();
        let b = gen_brownian(&grid, 1, 1, 42).unwrap();
        assert_eq!(a.increments(), b.increments());
        let c = gen_brownian(&grid, 4, 1, 1).unwrap();
        let d = gen_brownian(&grid, 4, 1, 2).unwrap();
        assert_ne!(c.increments(), d.increments());
        assert!(gen_brownian(&grid, 0, 1, 1).is_err());
    }

    #[test]
    fn brownian_variance_matches_step() {
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let bw = gen_brownian(&grid, 100_000, 1, 9).unwrap();
        let xs = bw.increments();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((0.99..=1.01).contains(&var), "variance {var}");
        assert!(mean.abs() < 3.0 / (xs.len() as f64).sqrt());
    }

    #[test]
    fn rademacher_steps_are_plus_minus_sqrt_dt() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let bw = gen_noise(&grid, 8, 2, 3, NoiseKind::Rademacher).unwrap();
        assert!(bw.increments().iter().all(|v| (v.abs() - 0.5).abs() < 1e-15));
    }

    #[test]
    fn zero_coefficients_give_constant_paths() {
        let model = ModelSpec::builder("still", Dimensions::scalar())
            .x0(vec![1.5])
            .build()
            .unwrap();
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let bw = gen_brownian(&grid, 5, 1, 1).unwrap();
        let paths = euler_uncontrolled(&model, &bw).unwrap();
        assert!(paths.states().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn constant_drift_is_exact() {
        let model = brownian_model(1.0, 0.0);
        let grid = TimeGrid::new(vec![0.0, 0.1, 0.35, 0.5, 1.0]).unwrap();
        let bw = gen_brownian(&grid, 3, 1, 1).unwrap();
        let paths = euler_uncontrolled(&model, &bw).unwrap();
        for p in 0..3 {
            assert!((paths.state(p, 4)[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn brownian_terminal_mean() {
        let model = brownian_model(0.0, 1.0);
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let n = 100_000;
        let bw = gen_brownian(&grid, n, 1, 5).unwrap();
        let paths = euler_uncontrolled(&model, &bw).unwrap();
        let xt: Vec<f64> = (0..n).map(|p| paths.state(p, 4)[0]).collect();
        let e = Estimate::of(&xt);
        assert!(e.mean.abs() < 3.0 / (n as f64).sqrt(), "{e:?}");
    }

    #[test]
    fn exploding_drift_is_reported() {
        let model = ModelSpec::builder("boom", Dimensions::scalar())
            .x0(vec![1.0])
            .eta(|_, x, out| out[0] = x.current()[0] * 1e200)
            .build()
            .unwrap();
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let bw = gen_brownian(&grid, 2, 1, 1).unwrap();
        match euler_uncontrolled(&model, &bw) {
            Err(Error::NonFiniteState { path: 0, step }) => assert!(step >= 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let model = brownian_model(0.0, 1.0);
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let bw = gen_brownian(&grid, 2, 2, 1).unwrap();
        assert!(euler_uncontrolled(&model, &bw).is_err());
    }

    #[test]
    fn zero_policy_reproduces_uncontrolled_paths() {
        let model = brownian_model(0.3, 1.2);
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let bw = gen_brownian(&grid, 50, 1, 11).unwrap();
        let free = euler_uncontrolled(&model, &bw).unwrap();
        let policy = Policy::constant(&model, 0, vec![0.0], 1.0).unwrap();
        let ctl = euler_controlled(&model, &bw, &policy).unwrap();
        assert_eq!(free.states(), ctl.paths.states());
        assert_eq!(ctl.paths.kind(), PathKind::Controlled);
    }

    #[test]
    fn unit_push_adds_unit_drift() {
        let model = brownian_model(0.0, 1.0);
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let n = 20_000;
        let bw = gen_brownian(&grid, n, 1, 2).unwrap();
        let policy = Policy::constant(&model, 0, vec![1.0], 1.0).unwrap();
        let ctl = euler_controlled(&model, &bw, &policy).unwrap();
        let xt: Vec<f64> = (0..n).map(|p| ctl.paths.state(p, 10)[0]).collect();
        let e = Estimate::of(&xt);
        assert!((e.mean - 1.0).abs() < 3.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn out_of_box_policy_is_rejected() {
        let model = brownian_model(0.0, 1.0);
        let grid = TimeGrid::uniform(1.0, 3).unwrap();
        let bw = gen_brownian(&grid, 2, 1, 2).unwrap();
        let policy = Policy::user(&model, 1.0, |_, _, b| {
            b[0] = 2.0;
            0
        });
        assert!(matches!(
            euler_controlled(&model, &bw, &policy),
            Err(Error::ControlOutOfBounds { .. })
        ));
    }

    #[test]
    fn single_step_weight_arithmetic() {
        // theta = 1 via mu_tilde, dW = 0.3, dt = 1
        let model = ModelSpec::builder("w", Dimensions::scalar())
            .bounds(1.0, 0.0)
            .sigma(|_, _, out| out[0] = 1.0)
            .mu_tilde(|_, _, _, out| out[0] = 1.0)
            .build()
            .unwrap();
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let mut bw = gen_brownian(&grid, 1, 1, 0).unwrap();
        bw.set_increment(0, 0, &[0.3]);
        let paths = euler_uncontrolled(&model, &bw).unwrap();
        let policy = Policy::constant(&model, 0, vec![0.0], 0.0).unwrap();
        let w = girsanov_weights(&model, &paths, &bw, &policy).unwrap();
        assert!((w[0] - (-0.2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_theta_gives_unit_weights() {
        let model = brownian_model(0.0, 1.0);
        let grid = TimeGrid::uniform(1.0, 5).unwrap();
        let bw = gen_brownian(&grid, 100, 1, 4).unwrap();
        let paths = euler_uncontrolled(&model, &bw).unwrap();
        let policy = Policy::constant(&model, 0, vec![0.0], 1.0).unwrap();
        let w = girsanov_weights(&model, &paths, &bw, &policy).unwrap();
        assert!(w.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn weights_need_uncontrolled_paths() {
        let model = brownian_model(0.0, 1.0);
        let grid = TimeGrid::uniform(1.0, 5).unwrap();
        let bw = gen_brownian(&grid, 4, 1, 4).unwrap();
        let policy = Policy::constant(&model, 0, vec![0.5], 1.0).unwrap();
        let ctl = euler_controlled(&model, &bw, &policy).unwrap();
        assert!(matches!(
            girsanov_weights(&model, &ctl.paths, &bw, &policy),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn huge_theta_overflows() {
        let model = ModelSpec::builder("w", Dimensions::scalar())
            .bounds(0.0, 1.0)
            .sigma(|_, _, out| out[0] = 1.0)
            .nu_tilde(|_, _, _, out| out[0] = 1.0)
            .build()
            .unwrap();
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let mut bw = gen_brownian(&grid, 1, 1, 0).unwrap();
        bw.set_increment(0, 0, &[1000.0]);
        let paths = euler_uncontrolled(&model, &bw).unwrap();
        let policy = Policy::constant(&model, 0, vec![1000.0], 1000.0).unwrap();
        assert!(matches!(
            girsanov_weights(&model, &paths, &bw, &policy),
            Err(Error::WeightOverflow { .. })
        ));
    }
}
