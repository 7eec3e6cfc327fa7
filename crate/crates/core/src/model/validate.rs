use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::model::ModelSpec;
use crate::path::PathView;
use crate::rng;

/// Steps of the random probe paths on `[0, 1]`.
const PROBE_STEPS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// First failing sample, rendered for humans.
    pub witness: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub trials: usize,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Probe {
    name: &'static str,
    witness: Option<String>,
}

impl Probe {
    fn new(name: &'static str) -> Self {
        Self { name, witness: None }
    }

    fn fail(&mut self, msg: impl FnOnce() -> String) {
        if self.witness.is_none() {
            self.witness = Some(msg());
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            passed: self.witness.is_none(),
            witness: self.witness,
        }
    }
}

/// Randomized scan of the machine-checkable model assumptions: non-anticipativity of every
/// coefficient functional, the declared bounds on `mu_tilde` / `nu_tilde`, and finiteness.
/// Failures are collected, never short-circuited.
pub fn validate_model(model: &ModelSpec, trials: usize, seed: u64) -> Result<ValidationReport> {
    if trials == 0 {
        return Err(invalid("validation needs at least one trial"));
    }
    let dims = model.dims;
    let (d, n, l) = (dims.state, dims.noise, dims.singular);
    let times: Vec<f64> = (0..=PROBE_STEPS).map(|i| i as f64 / PROBE_STEPS as f64).collect();
    let mut rng: ChaCha8Rng = rng::stream_rng(seed, rng::Stream::Validation, 0);

    let mut anticipative = [
        Probe::new("non_anticipative:sigma"),
        Probe::new("non_anticipative:eta"),
        Probe::new("non_anticipative:mu_tilde"),
        Probe::new("non_anticipative:nu_tilde"),
        Probe::new("non_anticipative:f"),
        Probe::new("non_anticipative:g"),
    ];
    let mut bound_mu = Probe::new("bound:mu_tilde");
    let mut bound_nu = Probe::new("bound:nu_tilde");
    let mut finite = Probe::new("finite");

    let mut path = vec![0.0; (PROBE_STEPS + 1) * d];
    let mut perturbed = path.clone();
    let sizes = [d * n, d, n, n * l, 1, l];
    let mut before: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
    let mut after = before.clone();

    for trial in 0..trials {
        path[..d].copy_from_slice(&model.x0);
        for i in 1..=PROBE_STEPS {
            for c in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                path[i * d + c] = path[(i - 1) * d + c] + 0.25 * z;
            }
        }
        let step = rng.random_range(0..PROBE_STEPS);
        let a_index = rng.random_range(0..model.control_grid.len());
        let a = model.control_grid.point(a_index);
        let t = times[step];

        perturbed.copy_from_slice(&path);
        for v in perturbed[(step + 1) * d..].iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += 1.0 + z;
        }

        let x = PathView::new(&times, &path, d, step);
        let y = PathView::new(&times, &perturbed, d, step);
        evaluate_all(model, t, &x, a, &mut before);
        evaluate_all(model, t, &y, a, &mut after);

        for (k, probe) in anticipative.iter_mut().enumerate() {
            if before[k] != after[k] {
                probe.fail(|| {
                    format!(
                        "trial {trial}: step {step} (t={t}) value {:?} changed to {:?} after perturbing the path beyond t",
                        before[k], after[k]
                    )
                });
            }
        }

        let mu_norm = before[2].iter().map(|v| v * v).sum::<f64>().sqrt();
        if mu_norm > model.bound_mu * (1.0 + 1e-12) {
            bound_mu.fail(|| format!("trial {trial}: |mu_tilde| = {mu_norm} > bound_mu = {}", model.bound_mu));
        }
        let nu_norm = before[3].iter().map(|v| v * v).sum::<f64>().sqrt();
        if nu_norm > model.bound_nu * (1.0 + 1e-12) {
            bound_nu.fail(|| format!("trial {trial}: |nu_tilde| = {nu_norm} > bound_nu = {}", model.bound_nu));
        }

        let terminal = model.h(&x.at_step(PROBE_STEPS));
        if before.iter().flatten().any(|v| !v.is_finite()) || !terminal.is_finite() {
            finite.fail(|| format!("trial {trial}: non-finite coefficient at step {step}"));
        }
    }

    let mut checks: Vec<CheckResult> = anticipative.into_iter().map(Probe::finish).collect();
    checks.push(bound_mu.finish());
    checks.push(bound_nu.finish());
    checks.push(finite.finish());
    Ok(ValidationReport { trials, checks })
}

fn evaluate_all(model: &ModelSpec, t: f64, x: &PathView<'_>, a: &[f64], out: &mut [Vec<f64>]) {
    model.sigma(t, x, &mut out[0]);
    model.eta(t, x, &mut out[1]);
    model.mu_tilde(t, x, a, &mut out[2]);
    model.nu_tilde(t, x, a, &mut out[3]);
    out[4][0] = model.f(t, x, a);
    model.g(t, x, a, &mut out[5]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, Dimensions, BUILTIN_MODELS};

    fn constant_model() -> ModelSpec {
        ModelSpec::builder("const", Dimensions::scalar())
            .bounds(0.0, 1.0)
            .sigma(|_, _, out| out[0] = 1.0)
            .nu_tilde(|_, _, _, out| out[0] = 1.0)
            .terminal(|x| x.terminal()[0])
            .build()
            .unwrap()
    }

    #[test]
    fn constant_coefficients_pass() {
        let report = validate_model(&constant_model(), 100, 7).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn reading_the_terminal_point_is_caught() {
        let model = ModelSpec::builder("peek", Dimensions::scalar())
            .sigma(|_, _, out| out[0] = 1.0)
            .running_reward(|_, x, _| x.terminal()[0])
            .build()
            .unwrap();
        let report = validate_model(&model, 100, 7).unwrap();
        let check = report.check("non_anticipative:f").unwrap();
        assert!(!check.passed);
        assert!(check.witness.as_ref().unwrap().contains("changed"));
        // other functionals are still scanned
        assert!(report.check("non_anticipative:sigma").unwrap().passed);
    }

    #[test]
    fn bound_violation_is_reported() {
        let model = ModelSpec::builder("loose", Dimensions::scalar())
            .bounds(0.5, 0.0)
            .mu_tilde(|_, _, _, out| out[0] = 1.0)
            .build()
            .unwrap();
        let report = validate_model(&model, 10, 1).unwrap();
        assert!(!report.check("bound:mu_tilde").unwrap().passed);
    }

    #[test]
    fn builtins_pass() {
        for name in BUILTIN_MODELS {
            let report = validate_model(&builtin_model(name).unwrap(), 1000, 3).unwrap();
            assert!(report.passed(), "{name}: {report:?}");
        }
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(validate_model(&constant_model(), 0, 0).is_err());
    }
}
