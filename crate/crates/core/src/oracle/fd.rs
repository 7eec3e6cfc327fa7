//! Explicit upwind finite differences for the one-dimensional HJB equation, either with the
//! gradient constraint enforced by projection or with the penalty term of `p^j`.

use crate::error::{invalid, Error, Result};
use crate::model::{mat_mul, ModelSpec};
use crate::path::PathView;

/// Uniform space-time grid on `[x_min, x_max] x [0, T]`. Outside the domain the solution is
/// extended linearly (zero second derivative at both ends).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub nt: usize,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, nx: usize, nt: usize) -> Result<Self> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(invalid("grid needs x_min < x_max"));
        }
        if nx < 3 || nt < 1 {
            return Err(invalid("grid needs nx >= 3 and nt >= 1"));
        }
        Ok(Self { x_min, x_max, nx, nt })
    }

    /// `x0 +- 5` standard deviations of the uncontrolled terminal law (coefficients read at
    /// `(0, x0)`), with the time steps chosen by [`stable_time_steps`].
    pub fn around(model: &ModelSpec, horizon: f64, nx: usize, variant: FdVariant) -> Result<Self> {
        check_model(model)?;
        let x0 = model.x0[0];
        let mut c = Coefficients::new(model);
        let (vol, eta) = c.diffusion_drift(model, 0.0, x0);
        let half = 5.0 * vol.sqrt().max(1e-3) * horizon.sqrt() + eta.abs() * horizon;
        let probe = Self::new(x0 - half, x0 + half, nx, 1)?;
        let nt = stable_time_steps(model, horizon, &probe, variant)?;
        Self::new(x0 - half, x0 + half, nx, nt)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdVariant {
    /// Unconstrained step followed by a sweep enforcing `g + nu u_x <= 0`.
    Projected,
    /// `j (g + nu u_x)^+` added to the Hamiltonian.
    Penalized(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdSolution {
    pub grid: Grid1D,
    pub x: Vec<f64>,
    /// Decreasing snapshot times, the last one `0`.
    pub snapshot_times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
    /// `u(0, x0)` by linear interpolation.
    pub value_at_x0: f64,
    /// `sigma^2 dt / dx^2` over the probed coefficients.
    pub stability_ratio: f64,
}

impl FdSolution {
    pub fn u0(&self) -> &[f64] {
        self.snapshots.last().expect("at least one snapshot")
    }

    pub fn interpolate(&self, x: f64) -> f64 {
        interpolate(&self.grid, self.u0(), x)
    }
}

fn interpolate(grid: &Grid1D, u: &[f64], x: f64) -> f64 {
    let dx = grid.dx();
    let pos = ((x - grid.x_min) / dx).clamp(0.0, (grid.nx - 1) as f64);
    let i = (pos.floor() as usize).min(grid.nx - 2);
    let w = pos - i as f64;
    u[i] * (1.0 - w) + u[i + 1] * w
}

fn check_model(model: &ModelSpec) -> Result<()> {
    if !model.markovian {
        return Err(Error::Precondition("finite differences need a Markovian model".into()));
    }
    if model.dims.state != 1 {
        return Err(Error::Precondition(format!(
            "finite differences need d = 1, got d = {}",
            model.dims.state
        )));
    }
    Ok(())
}

/// Coefficient scratch for a one-point path.
struct Coefficients {
    sigma: Vec<f64>,
    eta: Vec<f64>,
    mu_t: Vec<f64>,
    nu_t: Vec<f64>,
    nu: Vec<f64>,
    g: Vec<f64>,
}

impl Coefficients {
    fn new(model: &ModelSpec) -> Self {
        let dims = model.dims;
        let (n, l) = (dims.noise, dims.singular);
        Self {
            sigma: vec![0.0; n],
            eta: vec![0.0; 1],
            mu_t: vec![0.0; n],
            nu_t: vec![0.0; n * l],
            nu: vec![0.0; l],
            g: vec![0.0; l],
        }
    }

    /// `(sigma sigma^T, eta)` at `(t, x)`.
    fn diffusion_drift(&mut self, model: &ModelSpec, t: f64, x: f64) -> (f64, f64) {
        let times = [t];
        let states = [x];
        let v = PathView::new(&times, &states, 1, 0);
        model.sigma(t, &v, &mut self.sigma);
        model.eta(t, &v, &mut self.eta);
        (self.sigma.iter().map(|s| s * s).sum(), self.eta[0])
    }

    /// Loads `mu = sigma . mu_tilde`, `nu = sigma nu_tilde`, `g` and returns `f`.
    fn load_control(&mut self, model: &ModelSpec, t: f64, x: f64, a: &[f64]) -> (f64, f64) {
        let times = [t];
        let states = [x];
        let v = PathView::new(&times, &states, 1, 0);
        let n = self.sigma.len();
        let l = self.g.len();
        model.mu_tilde(t, &v, a, &mut self.mu_t);
        model.nu_tilde(t, &v, a, &mut self.nu_t);
        model.g(t, &v, a, &mut self.g);
        mat_mul(&self.sigma, &self.nu_t, 1, n, l, &mut self.nu);
        let mu: f64 = self.sigma.iter().zip(&self.mu_t).map(|(s, m)| s * m).sum();
        (model.f(t, &v, a), mu)
    }
}

/// Largest `sigma^2 dt / dx^2` and the combined upwind CFL number for `nt` steps, probed at
/// `t in {0, T/2, T}` on every node.
fn stability(model: &ModelSpec, horizon: f64, grid: &Grid1D, variant: FdVariant, nt: usize) -> (f64, f64) {
    let dx = grid.dx();
    let dt = horizon / nt as f64;
    let j = match variant {
        FdVariant::Projected => 0.0,
        FdVariant::Penalized(j) => j,
    };
    let mut c = Coefficients::new(model);
    let (mut ratio, mut cfl) = (0.0f64, 0.0f64);
    for t in [0.0, 0.5 * horizon, horizon] {
        for i in 0..grid.nx {
            let x = grid.x(i);
            let (vol, eta) = c.diffusion_drift(model, t, x);
            let mut drift = 0.0f64;
            for a in model.control_grid.iter() {
                let (_, mu) = c.load_control(model, t, x, a);
                let push: f64 = c.nu.iter().map(|v| v.abs()).sum::<f64>() * j;
                drift = drift.max((eta + mu).abs() + push);
            }
            ratio = ratio.max(vol * dt / (dx * dx));
            cfl = cfl.max(dt * (vol / (dx * dx) + drift / dx));
        }
    }
    (ratio, cfl)
}

/// Smallest number of time steps satisfying both stability limits.
pub fn stable_time_steps(model: &ModelSpec, horizon: f64, grid: &Grid1D, variant: FdVariant) -> Result<usize> {
    check_model(model)?;
    let (ratio, cfl) = stability(model, horizon, grid, variant, 1);
    let need = (2.0 * ratio).max(cfl).max(1.0);
    let nt = (need * 1.0001).ceil();
    if !nt.is_finite() || nt > 1e9 {
        return Err(Error::Stability { ratio, limit: 0.5 });
    }
    Ok(nt as usize)
}

/// Backward explicit scheme; `snapshots` extra surfaces are kept at evenly spaced times.
pub fn solve_hjb_fd(
    model: &ModelSpec,
    horizon: f64,
    grid: &Grid1D,
    variant: FdVariant,
    snapshots: usize,
) -> Result<FdSolution> {
    check_model(model)?;
    if !(horizon > 0.0) {
        return Err(invalid("horizon must be positive"));
    }
    if let FdVariant::Penalized(j) = variant {
        if !(j >= 0.0) || !j.is_finite() {
            return Err(invalid("penalty level must be finite and nonnegative"));
        }
    }
    let (ratio, cfl) = stability(model, horizon, grid, variant, grid.nt);
    if ratio > 0.5 {
        return Err(Error::Stability { ratio, limit: 0.5 });
    }
    if cfl > 1.0 {
        return Err(Error::Stability { ratio: cfl, limit: 1.0 });
    }

    let nx = grid.nx;
    let dx = grid.dx();
    let dt = horizon / grid.nt as f64;
    let l = model.dims.singular;
    let xs: Vec<f64> = (0..nx).map(|i| grid.x(i)).collect();
    let mut c = Coefficients::new(model);

    let mut u: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let times = [horizon];
            let states = [x];
            model.h(&PathView::new(&times, &states, 1, 0))
        })
        .collect();
    if variant == FdVariant::Projected {
        project(model, horizon, &xs, dx, &mut c, &mut u);
    }
    let keep: Vec<usize> = (1..=snapshots)
        .map(|i| (grid.nt as f64 * i as f64 / (snapshots + 1) as f64).round() as usize)
        .filter(|&k| k > 0 && k < grid.nt)
        .collect();
    let mut snapshot_times = vec![horizon];
    let mut surfaces = vec![u.clone()];

    let j = match variant {
        FdVariant::Projected => 0.0,
        FdVariant::Penalized(j) => j,
    };
    let vertices = if j > 0.0 { 1usize << l } else { 1 };
    let mut next = vec![0.0; nx];
    for k in (0..grid.nt).rev() {
        let t = k as f64 * dt;
        for i in 0..nx {
            let (um, up) = match i {
                0 => (2.0 * u[0] - u[1], u[1]),
                _ if i == nx - 1 => (u[i - 1], 2.0 * u[i] - u[i - 1]),
                _ => (u[i - 1], u[i + 1]),
            };
            let dplus = (up - u[i]) / dx;
            let dminus = (u[i] - um) / dx;
            let second = (up - 2.0 * u[i] + um) / (dx * dx);
            let (vol, eta) = c.diffusion_drift(model, t, xs[i]);
            let mut best = f64::NEG_INFINITY;
            for a in model.control_grid.iter() {
                let (f, mu) = c.load_control(model, t, xs[i], a);
                for mask in 0..vertices {
                    let mut drift = eta + mu;
                    let mut reward = f;
                    for s in 0..l {
                        if mask >> s & 1 == 1 {
                            drift += c.nu[s] * j;
                            reward += c.g[s] * j;
                        }
                    }
                    let transport = drift.max(0.0) * dplus + drift.min(0.0) * dminus;
                    best = best.max(reward + transport);
                }
            }
            next[i] = u[i] + dt * (0.5 * vol * second + best);
        }
        std::mem::swap(&mut u, &mut next);
        if variant == FdVariant::Projected {
            project(model, t, &xs, dx, &mut c, &mut u);
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { step: k });
        }
        if keep.contains(&k) {
            snapshot_times.push(t);
            surfaces.push(u.clone());
        }
    }
    snapshot_times.push(0.0);
    surfaces.push(u.clone());
    let value_at_x0 = interpolate(grid, &u, model.x0[0]);
    Ok(FdSolution {
        grid: *grid,
        x: xs,
        snapshot_times,
        snapshots: surfaces,
        value_at_x0,
        stability_ratio: ratio,
    })
}

/// Enforces `u(x) >= u(x + nu dl) + g dl` for every grid control and push direction.
fn project(model: &ModelSpec, t: f64, xs: &[f64], dx: f64, c: &mut Coefficients, u: &mut [f64]) {
    let nx = xs.len();
    let l = model.dims.singular;
    for a in model.control_grid.iter() {
        for s in 0..l {
            // coefficients of the push are read at the node being updated
            let mut nu = vec![0.0; nx];
            let mut g = vec![0.0; nx];
            for i in 0..nx {
                c.diffusion_drift(model, t, xs[i]);
                c.load_control(model, t, xs[i], a);
                nu[i] = c.nu[s];
                g[i] = c.g[s];
            }
            for i in (0..nx - 1).rev() {
                if nu[i] > 0.0 {
                    u[i] = u[i].max(u[i + 1] + g[i] * dx / nu[i]);
                }
            }
            for i in 1..nx {
                if nu[i] < 0.0 {
                    u[i] = u[i].max(u[i - 1] + g[i] * dx / (-nu[i]));
                }
            }
        }
    }
}
