//! Feedback controls from a solved equation, and strong / weak Monte Carlo evaluation of
//! any policy.

use std::fmt;
use std::sync::Arc;

use crate::bsde::{eval_z_into, BsdeSolution};
use crate::error::{invalid, Error, Result};
use crate::hamiltonian::Hamiltonian;
use crate::model::ModelSpec;
use crate::path::PathView;
use crate::rng::{substream_seed, Stream};
use crate::simulate::{euler_controlled, euler_uncontrolled, gen_brownian, weak_terms, TimeGrid};
use crate::stats::Estimate;

/// User feedback map: `(step, path) -> grid index of a`, writing `b` into the slice.
pub type UserPolicyFn = Arc<dyn Fn(usize, &PathView<'_>, &mut [f64]) -> usize + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    BsdeFeedback,
    Constant,
    User,
}

#[derive(Clone)]
enum Rule<'a> {
    Constant { a_index: usize, b: Vec<f64> },
    Feedback(&'a BsdeSolution),
    User(UserPolicyFn),
}

/// Piecewise-constant control rule `(a_s, b_s) = (a, b)(t_s, X up to t_s)` with `b` in `[0, j]^l`.
#[derive(Clone)]
pub struct Policy<'a> {
    model: &'a ModelSpec,
    j: f64,
    rule: Rule<'a>,
}

impl fmt::Debug for Policy<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Policy")
            .field("model", &self.model.name)
            .field("kind", &self.kind())
            .field("j", &self.j)
            .finish()
    }
}

impl<'a> Policy<'a> {
    pub fn constant(model: &'a ModelSpec, a_index: usize, b: Vec<f64>, j: f64) -> Result<Self> {
        if a_index >= model.control_grid.len() {
            return Err(invalid("control index outside the grid"));
        }
        if b.len() != model.dims.singular {
            return Err(invalid("singular density must have l components"));
        }
        if !(j >= 0.0) {
            return Err(invalid("penalty level must be nonnegative"));
        }
        Ok(Self {
            model,
            j,
            rule: Rule::Constant { a_index, b },
        })
    }

    pub fn user(
        model: &'a ModelSpec,
        j: f64,
        f: impl Fn(usize, &PathView<'_>, &mut [f64]) -> usize + Send + Sync + 'static,
    ) -> Self {
        Self {
            model,
            j,
            rule: Rule::User(Arc::new(f)),
        }
    }

    pub fn kind(&self) -> PolicyKind {
        match self.rule {
            Rule::Constant { .. } => PolicyKind::Constant,
            Rule::Feedback(_) => PolicyKind::BsdeFeedback,
            Rule::User(_) => PolicyKind::User,
        }
    }

    /// Upper end `j` of the singular density box.
    pub fn penalty_level(&self) -> f64 {
        self.j
    }

    pub fn model(&self) -> &'a ModelSpec {
        self.model
    }

    /// Stateful evaluator with its own scratch; one per worker.
    pub fn controller(&self) -> Controller<'_, 'a> {
        let dims = self.model.dims;
        let q = match self.rule {
            Rule::Feedback(sol) => sol.basis.raw_dim(dims.state),
            _ => 0,
        };
        Controller {
            policy: self,
            ham: Hamiltonian::new(self.model),
            z: vec![0.0; dims.noise],
            raw: vec![0.0; q],
            feats: Vec::new(),
        }
    }

    /// `(a, b)` at step `s` of the path `x`.
    pub fn decide(&self, s: usize, x: &PathView<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut b = vec![0.0; self.model.dims.singular];
        let ai = self.controller().decide(s, x, &mut b)?;
        Ok((self.model.control_grid.point(ai).to_vec(), b))
    }
}

pub struct Controller<'p, 'a> {
    policy: &'p Policy<'a>,
    ham: Hamiltonian<'a>,
    z: Vec<f64>,
    raw: Vec<f64>,
    feats: Vec<(usize, f64)>,
}

impl Controller<'_, '_> {
    /// Grid index of `a_s`; `b_s` is written to `b`. Reads `x` only up to step `s`.
    pub fn decide(&mut self, s: usize, x: &PathView<'_>, b: &mut [f64]) -> Result<usize> {
        let x = x.at_step(s);
        let ai = match &self.policy.rule {
            Rule::Constant { a_index, b: b0 } => {
                b.copy_from_slice(b0);
                *a_index
            }
            Rule::User(f) => f(s, &x, b),
            Rule::Feedback(sol) => {
                eval_z_into(sol, s, &x, &mut self.raw, &mut self.feats, &mut self.z);
                match sol.j {
                    Some(j) => self.ham.pj(x.time(), &x, &self.z, j, b).1,
                    None => {
                        b.fill(0.0);
                        self.ham.p(x.time(), &x, &self.z).1
                    }
                }
            }
        };
        if ai >= self.policy.model.control_grid.len() {
            return Err(invalid(format!("policy returned control index {ai} outside the grid")));
        }
        Ok(ai)
    }
}

/// Plug-in feedback: `Z` from the stored regressions, controls from the driver argmax.
pub fn extract_feedback<'a>(model: &'a ModelSpec, solution: &'a BsdeSolution) -> Result<Policy<'a>> {
    if solution.regressions.len() != solution.steps {
        return Err(Error::Precondition("solution carries no regression coefficients".into()));
    }
    if solution.noise_dim != model.dims.noise {
        return Err(invalid("solution and model disagree on the Brownian dimension"));
    }
    Ok(Policy {
        model,
        j: solution.j.unwrap_or(0.0),
        rule: Rule::Feedback(solution),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Strong,
    Weak,
}

impl EvalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMode::Strong => "strong",
            EvalMode::Weak => "weak",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyValue {
    pub estimate: f64,
    pub stderr: f64,
    pub mode: EvalMode,
    pub paths: usize,
}

fn eval_batch(model: &ModelSpec, grid: &TimeGrid, paths: usize, seed: u64) -> Result<crate::simulate::BrownianBatch> {
    gen_brownian(grid, paths, model.dims.noise, substream_seed(seed, Stream::PolicyEval))
}

/// Mean of `int f dt + int g dβ + h` over controlled paths.
pub fn evaluate_policy_strong(
    model: &ModelSpec,
    grid: &TimeGrid,
    policy: &Policy<'_>,
    paths: usize,
    seed: u64,
) -> Result<PolicyValue> {
    let bw = eval_batch(model, grid, paths, seed)?;
    let run = euler_controlled(model, &bw, policy)?;
    let m = grid.steps();
    let values: Vec<f64> = (0..paths)
        .map(|i| run.running_reward[i] + model.h(&run.paths.view(i, m)))
        .collect();
    finish(values, EvalMode::Strong)
}

/// Mean of `weight * (int f dt + int g dβ + h)` over uncontrolled paths, controls read on
/// those paths. Uses the same increments as the strong mode for a given seed.
pub fn evaluate_policy_weak(
    model: &ModelSpec,
    grid: &TimeGrid,
    policy: &Policy<'_>,
    paths: usize,
    seed: u64,
) -> Result<PolicyValue> {
    let bw = eval_batch(model, grid, paths, seed)?;
    let x = euler_uncontrolled(model, &bw)?;
    let terms = weak_terms(model, &x, &bw, policy)?;
    let m = grid.steps();
    let values: Vec<f64> = terms
        .iter()
        .enumerate()
        .map(|(i, (log_w, reward))| log_w.exp() * (reward + model.h(&x.view(i, m))))
        .collect();
    finish(values, EvalMode::Weak)
}

fn finish(values: Vec<f64>, mode: EvalMode) -> Result<PolicyValue> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState {
            path: i,
            step: usize::MAX,
        });
    }
    let e = Estimate::of(&values);
    Ok(PolicyValue {
        estimate: e.mean,
        stderr: e.stderr,
        mode,
        paths: values.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::{solve_bsde, training_paths, Driver, SolverConfig, Terminal};
    use crate::model::{builtin_model, Dimensions};

    fn unit_reward() -> ModelSpec {
        ModelSpec::builder("one", Dimensions::scalar())
            .sigma(|_, _, out| out[0] = 1.0)
            .running_reward(|_, _, _| 1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn deterministic_payoff_is_exact() {
        let model = unit_reward();
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let p = Policy::constant(&model, 0, vec![0.0], 1.0).unwrap();
        let v = evaluate_policy_strong(&model, &grid, &p, 1000, 1).unwrap();
        assert!((v.estimate - 1.0).abs() < 1e-12);
        assert_eq!(v.stderr, 0.0);
        let w = evaluate_policy_weak(&model, &grid, &p, 1000, 1).unwrap();
        assert!((w.estimate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_push_cost_is_exact() {
        let model = ModelSpec::builder("push", Dimensions::scalar())
            .sigma(|_, _, out| out[0] = 1.0)
            .nu_tilde(|_, _, _, out| out[0] = 1.0)
            .singular_reward(|_, _, _, out| out[0] = -0.5)
            .build()
            .unwrap();
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let p = Policy::constant(&model, 0, vec![1.0], 1.0).unwrap();
        let v = evaluate_policy_strong(&model, &grid, &p, 200, 1).unwrap();
        assert!((v.estimate + 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_policy_on_fuel_gives_minus_t() {
        let model = builtin_model("fuel1d").unwrap();
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let p = Policy::constant(&model, 0, vec![0.0], 1.0).unwrap();
        let s = evaluate_policy_strong(&model, &grid, &p, 20_000, 4).unwrap();
        assert!((s.estimate + 1.0).abs() < 3.0 * s.stderr, "{s:?}");
        let w = evaluate_policy_weak(&model, &grid, &p, 20_000, 4).unwrap();
        assert_eq!(s.estimate, w.estimate);
        assert_eq!(w.mode, EvalMode::Weak);
    }

    #[test]
    fn inert_model_feedback_never_pushes() {
        let model = builtin_model("linear_bsde").unwrap();
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let (bw, x) = training_paths(&model, &grid, 2000, 2).unwrap();
        let cfg = SolverConfig::for_model(&model);
        let sol = solve_bsde(&model, &x, &bw, Driver::Penalized { j: 8.0 }, &Terminal::Reward, &cfg).unwrap();
        let p = extract_feedback(&model, &sol).unwrap();
        for i in 0..50 {
            for s in 0..10 {
                let (a, b) = p.decide(s, &x.view(i, s)).unwrap();
                assert_eq!(a, vec![0.0]);
                assert_eq!(b, vec![0.0]);
            }
        }
    }

    #[test]
    fn fuel_feedback_is_bang_bang() {
        let model = builtin_model("fuel1d").unwrap();
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let (bw, x) = training_paths(&model, &grid, 4000, 2).unwrap();
        let cfg = SolverConfig::for_model(&model);
        let sol = solve_bsde(&model, &x, &bw, Driver::Penalized { j: 8.0 }, &Terminal::Reward, &cfg).unwrap();
        let p = extract_feedback(&model, &sol).unwrap();
        let mut pushes = 0;
        for i in 0..400 {
            for s in 0..10 {
                let (_, b) = p.decide(s, &x.view(i, s)).unwrap();
                assert!(b[0] == 0.0 || b[0] == 8.0);
                pushes += (b[0] == 8.0) as usize;
            }
        }
        assert!(pushes > 0);
    }

    #[test]
    fn bad_user_index_is_rejected() {
        let model = unit_reward();
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let p = Policy::user(&model, 1.0, |_, _, _| 5);
        assert!(evaluate_policy_strong(&model, &grid, &p, 10, 1).is_err());
    }
}
