//! The maps `p`, `q` and the penalized driver `p^j`, with their maximizing controls.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::model::ModelSpec;
use crate::path::PathView;
use crate::rng::{stream_rng, Stream};

/// Value of a driver together with the controls attaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverEval {
    pub value: f64,
    /// Index of `argmax_a` in the model's control grid.
    pub a_index: usize,
    pub argmax_a: Vec<f64>,
    /// Singular density in `[0, j]^l`; `None` for the plain map `p`.
    pub argmax_b: Option<Vec<f64>>,
}

/// Reusable scratch for driver evaluations against one model.
#[derive(Debug)]
pub struct Hamiltonian<'m> {
    model: &'m ModelSpec,
    mu_t: Vec<f64>,
    nu_t: Vec<f64>,
    g: Vec<f64>,
    b: Vec<f64>,
}

impl<'m> Hamiltonian<'m> {
    pub fn new(model: &'m ModelSpec) -> Self {
        let dims = model.dims;
        Self {
            model,
            mu_t: vec![0.0; dims.noise],
            nu_t: vec![0.0; dims.noise * dims.singular],
            g: vec![0.0; dims.singular],
            b: vec![0.0; dims.singular],
        }
    }

    pub fn model(&self) -> &'m ModelSpec {
        self.model
    }

    fn load(&mut self, t: f64, x: &PathView<'_>, a: &[f64]) {
        self.model.mu_tilde(t, x, a, &mut self.mu_t);
        self.model.nu_tilde(t, x, a, &mut self.nu_t);
        self.model.g(t, x, a, &mut self.g);
    }

    /// `g_i + (z nu_tilde)_i` for the loaded coefficients.
    fn push_gain(&self, z: &[f64], i: usize) -> f64 {
        let l = self.g.len();
        self.g[i] + z.iter().enumerate().map(|(k, zk)| zk * self.nu_t[k * l + i]).sum::<f64>()
    }

    /// `p(t, x, z)` and the lowest maximizing grid index.
    pub fn p(&mut self, t: f64, x: &PathView<'_>, z: &[f64]) -> (f64, usize) {
        let grid = &self.model.control_grid;
        let mut best = (f64::NEG_INFINITY, 0);
        for ai in 0..grid.len() {
            let a = grid.point(ai);
            self.model.mu_tilde(t, x, a, &mut self.mu_t);
            let v = self.model.f(t, x, a) + dot(z, &self.mu_t);
            if v > best.0 {
                best = (v, ai);
            }
        }
        best
    }

    /// `q(t, x, z)` into `out` (`l` components).
    pub fn q(&mut self, t: f64, x: &PathView<'_>, z: &[f64], out: &mut [f64]) {
        out.fill(f64::NEG_INFINITY);
        let grid = &self.model.control_grid;
        for ai in 0..grid.len() {
            self.load(t, x, grid.point(ai));
            for (i, o) in out.iter_mut().enumerate() {
                *o = o.max(self.push_gain(z, i));
            }
        }
    }

    /// `p^j(t, x, z)` by the vertex reduction; the maximizing density goes to `b_out`.
    pub fn pj(&mut self, t: f64, x: &PathView<'_>, z: &[f64], j: f64, b_out: &mut [f64]) -> (f64, usize) {
        let grid = &self.model.control_grid;
        let mut best = (f64::NEG_INFINITY, 0);
        b_out.fill(0.0);
        for ai in 0..grid.len() {
            let a = grid.point(ai);
            self.load(t, x, a);
            let mut v = self.model.f(t, x, a) + dot(z, &self.mu_t);
            for i in 0..self.b.len() {
                let gain = self.push_gain(z, i);
                if gain > 0.0 {
                    v += j * gain;
                    self.b[i] = j;
                } else {
                    self.b[i] = 0.0;
                }
            }
            if v > best.0 {
                best = (v, ai);
                b_out.copy_from_slice(&self.b);
            }
        }
        best
    }

    /// `f + z . mu_tilde + (g + z nu_tilde) . b` at a fixed control.
    pub fn objective(&mut self, t: f64, x: &PathView<'_>, z: &[f64], a_index: usize, b: &[f64]) -> f64 {
        let a = self.model.control_grid.point(a_index);
        self.load(t, x, a);
        let mut v = self.model.f(t, x, a) + dot(z, &self.mu_t);
        for (i, bi) in b.iter().enumerate() {
            v += self.push_gain(z, i) * bi;
        }
        v
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn eval_p(model: &ModelSpec, t: f64, x: &PathView<'_>, z: &[f64]) -> DriverEval {
    let (value, a_index) = Hamiltonian::new(model).p(t, x, z);
    DriverEval {
        value,
        a_index,
        argmax_a: model.control_grid.point(a_index).to_vec(),
        argmax_b: None,
    }
}

pub fn eval_q(model: &ModelSpec, t: f64, x: &PathView<'_>, z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; model.dims.singular];
    Hamiltonian::new(model).q(t, x, z, &mut out);
    out
}

pub fn eval_pj(model: &ModelSpec, t: f64, x: &PathView<'_>, z: &[f64], j: f64) -> DriverEval {
    let mut b = vec![0.0; model.dims.singular];
    let (value, a_index) = Hamiltonian::new(model).pj(t, x, z, j, &mut b);
    DriverEval {
        value,
        a_index,
        argmax_a: model.control_grid.point(a_index).to_vec(),
        argmax_b: Some(b),
    }
}

/// One evaluation point `(t, x, z)` with an owned discretized path.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverSample {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub step: usize,
    pub z: Vec<f64>,
}

impl DriverSample {
    pub fn view(&self, dim: usize) -> PathView<'_> {
        PathView::new(&self.times, &self.states, dim, self.step)
    }

    pub fn time(&self) -> f64 {
        self.times[self.step]
    }
}

/// Random-walk paths on `[0, 1]` with Gaussian `z` of standard deviation `z_scale`.
pub fn driver_samples(model: &ModelSpec, count: usize, z_scale: f64, seed: u64) -> Vec<DriverSample> {
    const STEPS: usize = 8;
    let dims = model.dims;
    let times: Vec<f64> = (0..=STEPS).map(|i| i as f64 / STEPS as f64).collect();
    let mut rng = stream_rng(seed, Stream::Samples, 0);
    (0..count)
        .map(|_| {
            let mut states = vec![0.0; (STEPS + 1) * dims.state];
            states[..dims.state].copy_from_slice(&model.x0);
            for i in dims.state..states.len() {
                let e: f64 = rng.sample(StandardNormal);
                states[i] = states[i - dims.state] + 0.35 * e;
            }
            let step = rng.random_range(0..=STEPS);
            let z = (0..dims.noise)
                .map(|_| z_scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            DriverSample {
                times: times.clone(),
                states,
                step,
                z,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneViolation {
    pub sample: usize,
    pub j_low: f64,
    pub j_high: f64,
    pub value_low: f64,
    pub value_high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneReport {
    pub samples: usize,
    pub schedule: Vec<f64>,
    pub violations: Vec<MonotoneViolation>,
}

impl MonotoneReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `p^j <= p^j'` for consecutive levels of `schedule` on every sample.
pub fn pj_monotone_report(model: &ModelSpec, samples: &[DriverSample], schedule: &[f64]) -> Result<MonotoneReport> {
    if schedule.windows(2).any(|w| !(w[1] > w[0])) || schedule.iter().any(|j| !(*j >= 0.0)) {
        return Err(invalid("penalty schedule must be nonnegative and strictly increasing"));
    }
    let mut ham = Hamiltonian::new(model);
    let mut b = vec![0.0; model.dims.singular];
    let mut violations = Vec::new();
    for (k, s) in samples.iter().enumerate() {
        let x = s.view(model.dims.state);
        let values: Vec<f64> = schedule
            .iter()
            .map(|&j| ham.pj(s.time(), &x, &s.z, j, &mut b).0)
            .collect();
        for w in 0..values.len().saturating_sub(1) {
            if values[w] > values[w + 1] {
                violations.push(MonotoneViolation {
                    sample: k,
                    j_low: schedule[w],
                    j_high: schedule[w + 1],
                    value_low: values[w],
                    value_high: values[w + 1],
                });
            }
        }
    }
    Ok(MonotoneReport {
        samples: samples.len(),
        schedule: schedule.to_vec(),
        violations,
    })
}
