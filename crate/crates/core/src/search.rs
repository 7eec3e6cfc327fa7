//! Derivative-free maximization over a box `[0, upper]^l`.

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    /// Grid points per component, endpoints included.
    pub coarse_points: usize,
    /// Golden-section iterations per component.
    pub refine_iters: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            coarse_points: 9,
            refine_iters: 30,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coarse_points < 2 {
            return Err(invalid("search needs at least 2 coarse points per component"));
        }
        Ok(())
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Coarse grid followed by coordinate-wise golden-section refinement around the best grid
/// point. Ties keep the earliest candidate, so the origin wins on flat objectives.
pub fn maximize_box(upper: f64, cfg: &SearchConfig, mut phi: impl FnMut(&[f64]) -> f64, out: &mut [f64]) -> f64 {
    let l = out.len();
    let n = cfg.coarse_points.max(2);
    let h = upper / (n - 1) as f64;
    let mut idx = vec![0usize; l];
    let mut cand = vec![0.0; l];
    let mut best = f64::NEG_INFINITY;
    out.fill(0.0);
    let total = n.checked_pow(l as u32).unwrap_or(usize::MAX);
    for _ in 0..total {
        for c in 0..l {
            cand[c] = idx[c] as f64 * h;
        }
        let v = phi(&cand);
        if v > best {
            best = v;
            out.copy_from_slice(&cand);
        }
        for c in 0..l {
            idx[c] += 1;
            if idx[c] < n {
                break;
            }
            idx[c] = 0;
        }
    }
    if upper <= 0.0 {
        return best;
    }

    let rounds = if l == 1 { 1 } else { 2 };
    for _ in 0..rounds {
        for c in 0..l {
            cand.copy_from_slice(out);
            let mut lo = (out[c] - h).max(0.0);
            let mut hi = (out[c] + h).min(upper);
            let mut eval = |x: f64, cand: &mut [f64]| {
                cand[c] = x;
                phi(cand)
            };
            let mut x1 = hi - INV_PHI * (hi - lo);
            let mut x2 = lo + INV_PHI * (hi - lo);
            let mut f1 = eval(x1, &mut cand);
            let mut f2 = eval(x2, &mut cand);
            for _ in 0..cfg.refine_iters {
                if f1 >= f2 {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - INV_PHI * (hi - lo);
                    f1 = eval(x1, &mut cand);
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + INV_PHI * (hi - lo);
                    f2 = eval(x2, &mut cand);
                }
            }
            let (x, f) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
            if f > best {
                best = f;
                out[c] = x;
            }
        }
    }
    best
}
