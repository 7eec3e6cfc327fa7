//! Exhaustive backward induction over a binomial scenario tree.

use crate::error::{invalid, Error, Result};
use crate::facelift::{facelift_h, FaceliftConfig};
use crate::model::{mat_mul, ModelSpec};
use crate::path::PathView;

pub const MAX_TREE_NODES: u128 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DpTerminal {
    Reward,
    /// One last push at `T` allowed, i.e. the face-lifted terminal reward.
    Facelifted(FaceliftConfig),
}

/// Discretized problem: `steps` equal steps on `[0, horizon]`, `±sqrt(dt)` noise in every
/// Brownian component, the model's control grid and the density levels `b_levels` per
/// singular component (held constant over a step).
#[derive(Debug, Clone)]
pub struct TinyInstance<'a> {
    pub model: &'a ModelSpec,
    pub horizon: f64,
    pub steps: usize,
    pub b_levels: Vec<f64>,
    pub terminal: DpTerminal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpResult {
    pub value: f64,
    pub nodes: u128,
}

impl TinyInstance<'_> {
    /// Nodes of the full scenario/control tree.
    pub fn tree_size(&self) -> u128 {
        let dims = self.model.dims;
        let controls = self.model.control_grid.len() as u128 * (self.b_levels.len() as u128).pow(dims.singular as u32);
        let fan = controls.saturating_mul(1u128 << dims.noise.min(64));
        let mut total: u128 = 0;
        let mut level: u128 = 1;
        for _ in 0..=self.steps {
            total = total.saturating_add(level);
            level = level.saturating_mul(fan);
        }
        total
    }
}

struct Walker<'a> {
    inst: &'a TinyInstance<'a>,
    times: Vec<f64>,
    buf: Vec<f64>,
    dt: f64,
}

impl Walker<'_> {
    fn terminal(&self) -> Result<f64> {
        let m = self.inst.steps;
        let d = self.inst.model.dims.state;
        let x = PathView::new(&self.times, &self.buf, d, m);
        match &self.inst.terminal {
            DpTerminal::Reward => Ok(self.inst.model.h(&x)),
            DpTerminal::Facelifted(cfg) => facelift_h(self.inst.model, &x, cfg),
        }
    }

    fn value(&mut self, s: usize) -> Result<f64> {
        if s == self.inst.steps {
            return self.terminal();
        }
        let model = self.inst.model;
        let dims = model.dims;
        let (d, n, l) = (dims.state, dims.noise, dims.singular);
        let t = self.times[s];
        let sqrt_dt = self.dt.sqrt();
        let mut sigma = vec![0.0; d * n];
        let mut eta = vec![0.0; d];
        let mut mu_t = vec![0.0; n];
        let mut nu_t = vec![0.0; n * l];
        let mut nu = vec![0.0; d * l];
        let mut g = vec![0.0; l];
        let mut b = vec![0.0; l];
        let levels = self.inst.b_levels.len();
        let combos = levels.pow(l as u32);
        let branches = 1usize << n;

        let mut best = f64::NEG_INFINITY;
        for ai in 0..model.control_grid.len() {
            let a = model.control_grid.point(ai);
            let (reward_rate, mean) = {
                let x = PathView::new(&self.times, &self.buf, d, s);
                model.sigma(t, &x, &mut sigma);
                model.eta(t, &x, &mut eta);
                model.mu_tilde(t, &x, a, &mut mu_t);
                model.nu_tilde(t, &x, a, &mut nu_t);
                model.g(t, &x, a, &mut g);
                mat_mul(&sigma, &nu_t, d, n, l, &mut nu);
                let mut mean = vec![0.0; d];
                for c in 0..d {
                    let mu: f64 = (0..n).map(|k| sigma[c * n + k] * mu_t[k]).sum();
                    mean[c] = x.current()[c] + (eta[c] + mu) * self.dt;
                }
                (model.f(t, &x, a), mean)
            };
            for combo in 0..combos {
                let mut rest = combo;
                for bi in b.iter_mut() {
                    *bi = self.inst.b_levels[rest % levels];
                    rest /= levels;
                }
                let gb: f64 = g.iter().zip(&b).map(|(g, b)| g * b).sum();
                let mut expected = 0.0;
                for branch in 0..branches {
                    for c in 0..d {
                        let push: f64 = (0..l).map(|i| nu[c * l + i] * b[i]).sum::<f64>() * self.dt;
                        let noise: f64 = (0..n)
                            .map(|k| {
                                let sign = if branch >> k & 1 == 1 { 1.0 } else { -1.0 };
                                sigma[c * n + k] * sign * sqrt_dt
                            })
                            .sum();
                        self.buf[(s + 1) * d + c] = mean[c] + push + noise;
                    }
                    expected += self.value(s + 1)?;
                }
                let v = (reward_rate + gb) * self.dt + expected / branches as f64;
                if v > best {
                    best = v;
                }
            }
        }
        Ok(best)
    }
}

/// Exact optimum of the discretized problem by enumeration of every scenario and control.
pub fn brute_force_dp(instance: &TinyInstance<'_>) -> Result<DpResult> {
    if instance.steps == 0 || instance.steps > 5 {
        return Err(invalid("tiny instances have 1 to 5 steps"));
    }
    if instance.model.control_grid.len() > 3 {
        return Err(invalid("tiny instances allow at most 3 regular controls"));
    }
    if instance.b_levels.is_empty() || instance.b_levels.len() > 3 || instance.b_levels.iter().any(|b| !(*b >= 0.0)) {
        return Err(invalid("tiny instances need 1 to 3 nonnegative density levels"));
    }
    if !(instance.horizon > 0.0) {
        return Err(invalid("horizon must be positive"));
    }
    let nodes = instance.tree_size();
    if nodes > MAX_TREE_NODES {
        return Err(Error::TreeTooLarge {
            size: nodes,
            limit: MAX_TREE_NODES,
        });
    }
    let m = instance.steps;
    let d = instance.model.dims.state;
    let dt = instance.horizon / m as f64;
    let mut buf = vec![0.0; (m + 1) * d];
    buf[..d].copy_from_slice(&instance.model.x0);
    let mut walker = Walker {
        inst: instance,
        times: (0..=m).map(|i| i as f64 * dt).collect(),
        buf,
        dt,
    };
    let value = walker.value(0)?;
    Ok(DpResult { value, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, Dimensions};

    #[test]
    fn zero_model_returns_terminal_of_constant_path() {
        let m = ModelSpec::builder("zero", Dimensions::scalar())
            .x0(vec![0.4])
            .terminal(|x| 3.0 * x.terminal()[0])
            .build()
            .unwrap();
        let inst = TinyInstance {
            model: &m,
            horizon: 1.0,
            steps: 3,
            b_levels: vec![0.0],
            terminal: DpTerminal::Reward,
        };
        assert!((brute_force_dp(&inst).unwrap().value - 1.2).abs() < 1e-12);
    }

    #[test]
    fn unit_running_reward() {
        let m = ModelSpec::builder("one", Dimensions::scalar())
            .sigma(|_, _, out| out[0] = 1.0)
            .running_reward(|_, _, _| 1.0)
            .build()
            .unwrap();
        let inst = TinyInstance {
            model: &m,
            horizon: 1.0,
            steps: 4,
            b_levels: vec![0.0, 1.0],
            terminal: DpTerminal::Reward,
        };
        assert!((brute_force_dp(&inst).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coarse_fuel_without_push_is_minus_t() {
        let m = builtin_model("fuel1d").unwrap();
        let inst = TinyInstance {
            model: &m,
            horizon: 1.0,
            steps: 4,
            b_levels: vec![0.0],
            terminal: DpTerminal::Reward,
        };
        assert!((brute_force_dp(&inst).unwrap().value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn coarse_fuel_raw_terminal() {
        // hand-checkable: 4 binomial steps, pushes at 0, 4 or 8 per unit time
        let m = builtin_model("fuel1d").unwrap();
        let inst = TinyInstance {
            model: &m,
            horizon: 1.0,
            steps: 4,
            b_levels: vec![0.0, 4.0, 8.0],
            terminal: DpTerminal::Reward,
        };
        let r = brute_force_dp(&inst).unwrap();
        assert!((r.value + 0.8125).abs() < 1e-12, "{}", r.value);
        assert_eq!(r.nodes, 1 + 6 + 36 + 216 + 1296);
    }

    #[test]
    fn relabeling_controls_does_not_change_value() {
        let m = builtin_model("lq1d").unwrap();
        let grid = crate::model::ControlGrid::uniform(-1.0, 1.0, 3).unwrap();
        let m1 = m.with_control_grid(grid.clone()).unwrap();
        let m2 = m.with_control_grid(grid.permuted(&[2, 0, 1]).unwrap()).unwrap();
        let value = |model: &ModelSpec| {
            brute_force_dp(&TinyInstance {
                model,
                horizon: 1.0,
                steps: 3,
                b_levels: vec![0.0, 2.0],
                terminal: DpTerminal::Reward,
            })
            .unwrap()
            .value
        };
        assert_eq!(value(&m1), value(&m2));
    }

    #[test]
    fn oversized_tree_is_refused() {
        let m = builtin_model("fuel1d").unwrap();
        let two = ModelSpec::builder("wide", Dimensions::new(1, 1, 1, 3).unwrap())
            .build()
            .unwrap();
        let inst = TinyInstance {
            model: &two,
            horizon: 1.0,
            steps: 5,
            b_levels: vec![0.0, 1.0, 2.0],
            terminal: DpTerminal::Reward,
        };
        match brute_force_dp(&inst) {
            Err(Error::TreeTooLarge { size, .. }) => assert_eq!(size, inst.tree_size()),
            other => panic!("{other:?}"),
        }
        let too_long = TinyInstance {
            model: &m,
            horizon: 1.0,
            steps: 6,
            b_levels: vec![0.0],
            terminal: DpTerminal::Reward,
        };
        assert!(brute_force_dp(&too_long).is_err());
    }
}
