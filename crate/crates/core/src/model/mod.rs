//! Problem data: coefficients, rewards and the discretized control set.
//!
//! Coefficient conventions (all row-major):
//!
//! * `sigma(t, x)` is `d x n`,
//! * `eta(t, x)` is a `d`-vector,
//! * `mu_tilde(t, x, a)` is an `n`-vector, so the controlled drift is `eta + sigma * mu_tilde`,
//! * `nu_tilde(t, x, a)` is `n x l`, so the singular direction is `nu = sigma * nu_tilde` (`d x l`),
//! * `f(t, x, a)` is the running reward rate, `g(t, x, a)` the `l`-vector reward per unit of `dβ`,
//! * `h(x)` is the terminal reward read from the whole path.

mod builtin;
mod validate;

pub use builtin::{builtin_model, builtin_model_with, ModelParams, BUILTIN_MODELS};
pub use validate::{validate_model, CheckResult, ValidationReport};

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::path::PathView;

pub type StateFn = Arc<dyn Fn(f64, &PathView<'_>, &mut [f64]) + Send + Sync>;
pub type ControlledFn = Arc<dyn Fn(f64, &PathView<'_>, &[f64], &mut [f64]) + Send + Sync>;
pub type RewardFn = Arc<dyn Fn(f64, &PathView<'_>, &[f64]) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&PathView<'_>) -> f64 + Send + Sync>;

/// Sizes `d` (state), `n` (Brownian), `k` (regular control), `l` (singular control).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dimensions {
    pub state: usize,
    pub noise: usize,
    pub regular: usize,
    pub singular: usize,
}

impl Dimensions {
    pub fn new(state: usize, noise: usize, regular: usize, singular: usize) -> Result<Self> {
        if state == 0 || noise == 0 || regular == 0 || singular == 0 {
            return Err(invalid(format!(
                "dimensions must be positive, got d={state} n={noise} k={regular} l={singular}"
            )));
        }
        Ok(Self {
            state,
            noise,
            regular,
            singular,
        })
    }

    /// All four dimensions equal to one.
    pub fn scalar() -> Self {
        Self {
            state: 1,
            noise: 1,
            regular: 1,
            singular: 1,
        }
    }
}

/// Finite stand-in for the compact regular-control set `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    dim: usize,
    points: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ControlGrid {
    /// `points` holds `len / dim` control vectors; each must lie in `[lower, upper]`.
    pub fn new(dim: usize, points: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(invalid("control grid must hold a positive number of k-vectors"));
        }
        if lower.len() != dim || upper.len() != dim {
            return Err(invalid("control bounds must have k components"));
        }
        for p in points.chunks_exact(dim) {
            for (i, &v) in p.iter().enumerate() {
                if !v.is_finite() || v < lower[i] || v > upper[i] {
                    return Err(invalid(format!(
                        "control point component {v} outside [{}, {}]",
                        lower[i], upper[i]
                    )));
                }
            }
        }
        Ok(Self {
            dim,
            points,
            lower,
            upper,
        })
    }

    pub fn singleton(point: Vec<f64>) -> Self {
        let dim = point.len();
        assert!(dim > 0);
        Self {
            dim,
            lower: point.clone(),
            upper: point.clone(),
            points: point,
        }
    }

    /// `count` equally spaced scalar controls on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 || !(lo <= hi) {
            return Err(invalid("uniform control grid needs count >= 1 and lo <= hi"));
        }
        let points = if count == 1 {
            vec![lo]
        } else {
            (0..count)
                .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                .collect()
        };
        Self::new(1, points, vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Same points, reordered by `order` (a permutation of `0..len`).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len() || order.iter().any(|&i| i >= self.len() || std::mem::replace(&mut seen[i], true)) {
            return Err(invalid("control grid permutation is not a permutation"));
        }
        let points = order.iter().flat_map(|&i| self.point(i).to_vec()).collect();
        Self::new(self.dim, points, self.lower.clone(), self.upper.clone())
    }
}

/// Immutable bundle of problem coefficients. Cheap to clone; safe to share across threads.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dims: Dimensions,
    pub x0: Vec<f64>,
    pub control_grid: ControlGrid,
    pub bound_mu: f64,
    pub bound_nu: f64,
    /// Coefficients read only the current state (required by the PDE oracle).
    pub markovian: bool,
    sigma: StateFn,
    eta: StateFn,
    mu_tilde: ControlledFn,
    nu_tilde: ControlledFn,
    f: RewardFn,
    g: ControlledFn,
    h: TerminalFn,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .field("x0", &self.x0)
            .field("controls", &self.control_grid.len())
            .field("bound_mu", &self.bound_mu)
            .field("bound_nu", &self.bound_nu)
            .field("markovian", &self.markovian)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    pub fn builder(name: impl Into<String>, dims: Dimensions) -> ModelBuilder {
        ModelBuilder::new(name.into(), dims)
    }

    pub fn sigma(&self, t: f64, x: &PathView<'_>, out: &mut [f64]) {
        (self.sigma)(t, x, out)
    }

    pub fn eta(&self, t: f64, x: &PathView<'_>, out: &mut [f64]) {
        (self.eta)(t, x, out)
    }

    pub fn mu_tilde(&self, t: f64, x: &PathView<'_>, a: &[f64], out: &mut [f64]) {
        (self.mu_tilde)(t, x, a, out)
    }

    pub fn nu_tilde(&self, t: f64, x: &PathView<'_>, a: &[f64], out: &mut [f64]) {
        (self.nu_tilde)(t, x, a, out)
    }

    pub fn f(&self, t: f64, x: &PathView<'_>, a: &[f64]) -> f64 {
        (self.f)(t, x, a)
    }

    pub fn g(&self, t: f64, x: &PathView<'_>, a: &[f64], out: &mut [f64]) {
        (self.g)(t, x, a, out)
    }

    pub fn h(&self, x: &PathView<'_>) -> f64 {
        (self.h)(x)
    }

    /// Replace the terminal reward, keeping everything else.
    pub fn with_terminal(&self, h: impl Fn(&PathView<'_>) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            h: Arc::new(h),
            ..self.clone()
        }
    }

    /// Replace the control grid (e.g. a relabeled copy).
    pub fn with_control_grid(&self, grid: ControlGrid) -> Result<Self> {
        if grid.dim() != self.dims.regular {
            return Err(invalid("control grid dimension differs from k"));
        }
        Ok(Self {
            control_grid: grid,
            ..self.clone()
        })
    }
}

/// Row-major `d x n` times `n x c` product into `out` (`d x c`).
pub(crate) fn mat_mul(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for k in 0..inner {
                acc += a[r * inner + k] * b[k * cols + c];
            }
            out[r * cols + c] = acc;
        }
    }
}

/// Builder with zero defaults for every coefficient.
pub struct ModelBuilder {
    name: String,
    dims: Dimensions,
    x0: Option<Vec<f64>>,
    grid: Option<ControlGrid>,
    bound_mu: f64,
    bound_nu: f64,
    markovian: bool,
    sigma: StateFn,
    eta: StateFn,
    mu_tilde: ControlledFn,
    nu_tilde: ControlledFn,
    f: RewardFn,
    g: ControlledFn,
    h: TerminalFn,
}

fn zero_state() -> StateFn {
    Arc::new(|_, _, out: &mut [f64]| out.fill(0.0))
}

fn zero_controlled() -> ControlledFn {
    Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0))
}

impl ModelBuilder {
    fn new(name: String, dims: Dimensions) -> Self {
        Self {
            name,
            dims,
            x0: None,
            grid: None,
            bound_mu: 0.0,
            bound_nu: 0.0,
            markovian: true,
            sigma: zero_state(),
            eta: zero_state(),
            mu_tilde: zero_controlled(),
            nu_tilde: zero_controlled(),
            f: Arc::new(|_, _, _| 0.0),
            g: zero_controlled(),
            h: Arc::new(|_| 0.0),
        }
    }

    pub fn x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn control_grid(mut self, grid: ControlGrid) -> Self {
        self.grid = Some(grid);
        self
    }

    pub fn bounds(mut self, bound_mu: f64, bound_nu: f64) -> Self {
        self.bound_mu = bound_mu;
        self.bound_nu = bound_nu;
        self
    }

    pub fn markovian(mut self, markovian: bool) -> Self {
        self.markovian = markovian;
        self
    }

    pub fn sigma(mut self, f: impl Fn(f64, &PathView<'_>, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.sigma = Arc::new(f);
        self
    }

    pub fn eta(mut self, f: impl Fn(f64, &PathView<'_>, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.eta = Arc::new(f);
        self
    }

    pub fn mu_tilde(
        mut self,
        f: impl Fn(f64, &PathView<'_>, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.mu_tilde = Arc::new(f);
        self
    }

    pub fn nu_tilde(
        mut self,
        f: impl Fn(f64, &PathView<'_>, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.nu_tilde = Arc::new(f);
        self
    }

    pub fn running_reward(mut self, f: impl Fn(f64, &PathView<'_>, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.f = Arc::new(f);
        self
    }

    pub fn singular_reward(
        mut self,
        f: impl Fn(f64, &PathView<'_>, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.g = Arc::new(f);
        self
    }

    pub fn terminal(mut self, f: impl Fn(&PathView<'_>) -> f64 + Send + Sync + 'static) -> Self {
        self.h = Arc::new(f);
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let dims = self.dims;
        Dimensions::new(dims.state, dims.noise, dims.regular, dims.singular)?;
        let x0 = self.x0.unwrap_or_else(|| vec![0.0; dims.state]);
        if x0.len() != dims.state || x0.iter().any(|v| !v.is_finite()) {
            return Err(invalid("x0 must be a finite d-vector"));
        }
        let grid = self
            .grid
            .unwrap_or_else(|| ControlGrid::singleton(vec![0.0; dims.regular]));
        if grid.dim() != dims.regular {
            return Err(invalid("control grid dimension differs from k"));
        }
        if !(self.bound_mu >= 0.0) || !(self.bound_nu >= 0.0) {
            return Err(invalid("coefficient bounds must be nonnegative"));
        }
        Ok(ModelSpec {
            name: self.name,
            dims,
            x0,
            control_grid: grid,
            bound_mu: self.bound_mu,
            bound_nu: self.bound_nu,
            markovian: self.markovian,
            sigma: self.sigma,
            eta: self.eta,
            mu_tilde: self.mu_tilde,
            nu_tilde: self.nu_tilde,
            f: self.f,
            g: self.g,
            h: self.h,
        })
    }
}
