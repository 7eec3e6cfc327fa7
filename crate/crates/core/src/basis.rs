//! Regression bases for the conditional expectations of the backward scheme.
//!
//! Raw inputs at a step are the current state, followed (for path-dependent models) by the
//! running maximum, minimum and mean of every state component. Inputs are clamped to the
//! range observed at that step before the features are evaluated.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::par;
use crate::path::PathView;

/// Paths per partial Gram matrix; fixed so that sums do not depend on the thread count.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisKind {
    /// All monomials of total degree `<= degree` in the standardized current state.
    Polynomial { degree: usize },
    /// Hat functions on per-step quantile knots of each state component.
    PiecewiseLinear { knots: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionBasis {
    pub kind: BasisKind,
    /// Add running max / min / mean of each component as linear features.
    pub path_features: bool,
}

impl RegressionBasis {
    pub const DEFAULT_KNOTS: usize = 41;

    pub fn polynomial(degree: usize, path_features: bool) -> Self {
        Self {
            kind: BasisKind::Polynomial { degree },
            path_features,
        }
    }

    pub fn piecewise_linear(knots: usize, path_features: bool) -> Self {
        Self {
            kind: BasisKind::PiecewiseLinear { knots },
            path_features,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            BasisKind::Polynomial { degree } if degree > 8 => Err(invalid("polynomial degree must be <= 8")),
            BasisKind::PiecewiseLinear { knots } if knots < 2 => Err(invalid("hat basis needs at least 2 knots")),
            _ => Ok(()),
        }
    }

    /// Number of raw inputs for a `d`-dimensional state.
    pub fn raw_dim(&self, d: usize) -> usize {
        if self.path_features {
            4 * d
        } else {
            d
        }
    }

    /// Raw inputs of `x` at its cursor.
    pub fn raw_inputs(&self, x: &PathView<'_>, out: &mut [f64]) {
        let d = x.dim();
        out[..d].copy_from_slice(x.current());
        if self.path_features {
            for c in 0..d {
                out[d + 3 * c] = x.running_max(c);
                out[d + 3 * c + 1] = x.running_min(c);
                out[d + 3 * c + 2] = x.running_mean(c);
            }
        }
    }

    /// Raw inputs after moving the current state by `delta`, `step` being the cursor index.
    pub fn shift_raw(&self, raw: &[f64], step: usize, delta: &[f64], out: &mut [f64]) {
        let d = delta.len();
        out.copy_from_slice(raw);
        for c in 0..d {
            let moved = raw[c] + delta[c];
            out[c] = moved;
            if self.path_features {
                out[d + 3 * c] = raw[d + 3 * c].max(moved);
                out[d + 3 * c + 1] = raw[d + 3 * c + 1].min(moved);
                out[d + 3 * c + 2] = raw[d + 3 * c + 2] + delta[c] / (step + 1) as f64;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Component {
    /// Input carries no information at this step.
    Constant,
    Linear { center: f64, scale: f64 },
    Hat { knots: Vec<f64> },
}

/// Feature map fitted to the raw inputs of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    lo: Vec<f64>,
    hi: Vec<f64>,
    components: Vec<Component>,
    offsets: Vec<usize>,
    /// Monomial exponents over the state components (polynomial kind only).
    monomials: Vec<Vec<u32>>,
    state_dim: usize,
    size: usize,
}

impl FeatureMap {
    /// Fit knots / standardization to `raw` (`paths x q`, row-major).
    pub fn fit(basis: &RegressionBasis, raw: &[f64], q: usize, state_dim: usize) -> Self {
        let paths = raw.len() / q;
        let mut lo = vec![f64::INFINITY; q];
        let mut hi = vec![f64::NEG_INFINITY; q];
        for row in raw.chunks_exact(q) {
            for c in 0..q {
                lo[c] = lo[c].min(row[c]);
                hi[c] = hi[c].max(row[c]);
            }
        }
        let degenerate = |c: usize| !(hi[c] - lo[c] > 1e-12 * (1.0 + lo[c].abs().max(hi[c].abs())));
        let column = |c: usize| -> Vec<f64> { raw.chunks_exact(q).map(|r| r[c]).collect() };
        let linear = |c: usize| {
            let col = column(c);
            let mean = col.iter().sum::<f64>() / paths as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / paths as f64;
            Component::Linear {
                center: mean,
                scale: var.sqrt().max(1e-300),
            }
        };

        let mut components = Vec::with_capacity(q);
        for c in 0..q {
            let comp = if degenerate(c) {
                Component::Constant
            } else if c >= state_dim {
                linear(c)
            } else {
                match basis.kind {
                    BasisKind::Polynomial { .. } => linear(c),
                    BasisKind::PiecewiseLinear { knots } => {
                        let mut col = column(c);
                        col.sort_by(f64::total_cmp);
                        let knots = quantile_knots(&col, knots);
                        if knots.len() < 2 {
                            Component::Constant
                        } else {
                            Component::Hat { knots }
                        }
                    }
                }
            };
            components.push(comp);
        }

        let mut monomials = Vec::new();
        if let BasisKind::Polynomial { degree } = basis.kind {
            let active: Vec<usize> = (0..state_dim)
                .filter(|&c| components[c] != Component::Constant)
                .collect();
            let mut e = vec![0u32; state_dim];
            push_monomials(&active, 0, degree as u32, &mut e, &mut monomials);
            monomials.retain(|m| m.iter().any(|&k| k > 0));
            monomials.sort_by_key(|m| (m.iter().sum::<u32>(), std::cmp::Reverse(m.clone())));
        }

        let mut size = 1 + monomials.len();
        let mut offsets = vec![0; q];
        for c in 0..q {
            offsets[c] = size;
            size += match (&components[c], basis.kind) {
                (Component::Hat { knots }, _) => knots.len() - 1,
                (Component::Linear { .. }, BasisKind::Polynomial { .. }) if c < state_dim => 0,
                (Component::Linear { .. }, _) => 1,
                (Component::Constant, _) => 0,
            };
        }
        Self {
            lo,
            hi,
            components,
            offsets,
            monomials,
            state_dim,
            size,
        }
    }

    /// Number of features, the constant included.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_constant(&self) -> bool {
        self.size == 1
    }

    /// Observed range of raw input `c`.
    pub fn range(&self, c: usize) -> (f64, f64) {
        (self.lo[c], self.hi[c])
    }

    /// True when every feature is piecewise linear in the state with knots as breakpoints.
    pub fn piecewise_linear_in_state(&self) -> bool {
        self.monomials.is_empty()
            && self.components[self.state_dim..]
                .iter()
                .all(|c| *c == Component::Constant)
    }

    /// Sparse feature vector of `raw`: `(index, value)` pairs, constant first.
    pub fn features(&self, raw: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        out.push((0, 1.0));
        if !self.monomials.is_empty() {
            for (k, m) in self.monomials.iter().enumerate() {
                let mut v = 1.0;
                for (c, &e) in m.iter().enumerate() {
                    if e > 0 {
                        let u = self.standardized(c, raw[c]);
                        v *= u.powi(e as i32);
                    }
                }
                out.push((1 + k, v));
            }
        }
        for (c, comp) in self.components.iter().enumerate() {
            let x = raw[c].clamp(self.lo[c], self.hi[c]);
            match comp {
                Component::Constant => {}
                Component::Linear { center, scale } => {
                    if c >= self.state_dim {
                        out.push((self.offsets[c], (x - center) / scale));
                    }
                }
                Component::Hat { knots } => {
                    let i = knots.partition_point(|&k| k <= x).clamp(1, knots.len() - 1);
                    let (k0, k1) = (knots[i - 1], knots[i]);
                    let w1 = ((x - k0) / (k1 - k0)).clamp(0.0, 1.0);
                    if i - 1 >= 1 {
                        out.push((self.offsets[c] + i - 2, 1.0 - w1));
                    }
                    out.push((self.offsets[c] + i - 1, w1));
                }
            }
        }
    }

    fn standardized(&self, c: usize, v: f64) -> f64 {
        match self.components[c] {
            Component::Linear { center, scale } => (v.clamp(self.lo[c], self.hi[c]) - center) / scale,
            _ => 0.0,
        }
    }

    /// `sum_i coef[i * stride + col] phi_i(raw)`.
    pub fn evaluate(&self, coef: &[f64], stride: usize, col: usize, raw: &[f64], scratch: &mut Vec<(usize, f64)>) -> f64 {
        self.features(raw, scratch);
        scratch.iter().map(|&(i, v)| coef[i * stride + col] * v).sum()
    }

    /// Values `s` in `(0, s_max)` at which `raw + s * dir` crosses a knot of some state
    /// component; the fitted function is linear in `s` between consecutive values.
    pub fn breakpoints(&self, raw: &[f64], dir: &[f64], s_max: f64, out: &mut Vec<f64>) {
        out.clear();
        for (c, &v) in dir.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            if let Component::Hat { knots } = &self.components[c] {
                for &k in knots {
                    let s = (k - raw[c]) / v;
                    if s > 0.0 && s < s_max {
                        out.push(s);
                    }
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
    }
}

fn push_monomials(active: &[usize], from: usize, left: u32, e: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if from == active.len() {
        out.push(e.clone());
        return;
    }
    for k in 0..=left {
        e[active[from]] = k;
        push_monomials(active, from + 1, left - k, e, out);
    }
    e[active[from]] = 0;
}

/// `count` empirical quantiles of sorted data at levels `i / (count - 1)`, deduplicated.
fn quantile_knots(sorted: &[f64], count: usize) -> Vec<f64> {
    let n = sorted.len();
    let mut knots: Vec<f64> = Vec::with_capacity(count);
    for i in 0..count {
        let pos = (i as f64 * (n - 1) as f64 / (count - 1) as f64).round() as usize;
        let k = sorted[pos];
        match knots.last() {
            Some(&last) if k - last <= 1e-12 * (1.0 + k.abs()) => {}
            _ => knots.push(k),
        }
    }
    knots
}

/// Least-squares coefficients for several targets sharing one design.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    /// `size x targets`, row-major.
    pub coef: Vec<f64>,
    pub targets: usize,
    /// Ridge parameter added to the Gram diagonal, zero when the plain solve succeeded.
    pub ridge: f64,
}

/// Solves the normal equations of `targets[t][i] ~ phi(raw_i)` for every target `t`.
pub fn least_squares(map: &FeatureMap, raw: &[f64], q: usize, targets: &[&[f64]]) -> LeastSquares {
    let b = map.size();
    let nt = targets.len();
    let paths = raw.len() / q;
    let chunks = paths.div_ceil(CHUNK);
    let partial = par::map_indexed(chunks, |k| {
        let mut gram = vec![0.0; b * b];
        let mut rhs = vec![0.0; b * nt];
        let mut feats = Vec::with_capacity(8);
        for i in k * CHUNK..((k + 1) * CHUNK).min(paths) {
            map.features(&raw[i * q..(i + 1) * q], &mut feats);
            for &(r, vr) in &feats {
                for &(c, vc) in &feats {
                    gram[r * b + c] += vr * vc;
                }
                for (t, target) in targets.iter().enumerate() {
                    rhs[r * nt + t] += vr * target[i];
                }
            }
        }
        (gram, rhs)
    });
    let mut gram = vec![0.0; b * b];
    let mut rhs = vec![0.0; b * nt];
    for (g, r) in partial {
        gram.iter_mut().zip(&g).for_each(|(a, v)| *a += v);
        rhs.iter_mut().zip(&r).for_each(|(a, v)| *a += v);
    }
    solve_normal(b, gram, rhs, nt)
}

fn solve_normal(b: usize, gram: Vec<f64>, rhs: Vec<f64>, nt: usize) -> LeastSquares {
    let g = DMatrix::from_row_slice(b, b, &gram);
    let r = DMatrix::from_row_slice(b, nt, &rhs);
    let scale = (0..b).map(|i| g[(i, i)]).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 0.0;
    let mut attempt = 0;
    loop {
        let mut m = g.clone();
        for i in 0..b {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.clone().cholesky() {
            let diag_min = (0..b).map(|i| ch.l_dirty()[(i, i)]).fold(f64::INFINITY, f64::min);
            let diag_max = (0..b).map(|i| ch.l_dirty()[(i, i)]).fold(0.0, f64::max);
            if diag_min > 1e-7 * diag_max || attempt >= 8 {
                let sol = ch.solve(&r);
                let mut coef = vec![0.0; b * nt];
                for i in 0..b {
                    for t in 0..nt {
                        coef[i * nt + t] = sol[(i, t)];
                    }
                }
                if coef.iter().all(|v| v.is_finite()) {
                    return LeastSquares { coef, targets: nt, ridge };
                }
            }
        }
        attempt += 1;
        ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 100.0 };
        if attempt > 12 {
            return LeastSquares {
                coef: vec![0.0; b * nt],
                targets: nt,
                ridge,
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_raw(n: usize) -> Vec<f64> {
        (0..n).map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn quantile_knots_dedup() {
        let data = [0.0, 0.0, 0.0, 1.0, 2.0];
        assert_eq!(quantile_knots(&data, 5), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn constant_data_gives_constant_map() {
        let raw = vec![0.5; 100];
        let map = FeatureMap::fit(&RegressionBasis::piecewise_linear(41, false), &raw, 1, 1);
        assert!(map.is_constant());
        let map = FeatureMap::fit(&RegressionBasis::polynomial(3, false), &raw, 1, 1);
        assert!(map.is_constant());
    }

    #[test]
    fn hat_basis_reproduces_piecewise_linear_function() {
        let raw = grid_raw(401);
        let target: Vec<f64> = raw.iter().map(|x: &f64| x.abs() + 0.5 * x).collect();
        let basis = RegressionBasis::piecewise_linear(5, false);
        let map = FeatureMap::fit(&basis, &raw, 1, 1);
        assert_eq!(map.size(), 5);
        let ls = least_squares(&map, &raw, 1, &[&target]);
        assert_eq!(ls.ridge, 0.0);
        let mut s = Vec::new();
        for (x, t) in raw.iter().zip(&target) {
            let v = map.evaluate(&ls.coef, 1, 0, &[*x], &mut s);
            assert!((v - t).abs() < 1e-9, "{x}: {v} vs {t}");
        }
        // clamped outside the observed range
        let v = map.evaluate(&ls.coef, 1, 0, &[10.0], &mut s);
        assert!((v - 3.0).abs() < 1e-9);
    }

    #[test]
    fn polynomial_basis_reproduces_cubic() {
        let raw = grid_raw(200);
        let target: Vec<f64> = raw.iter().map(|x| 1.0 - x + 0.25 * x * x * x).collect();
        let map = FeatureMap::fit(&RegressionBasis::polynomial(3, false), &raw, 1, 1);
        assert_eq!(map.size(), 4);
        let ls = least_squares(&map, &raw, 1, &[&target]);
        let mut s = Vec::new();
        for (x, t) in raw.iter().zip(&target) {
            assert!((map.evaluate(&ls.coef, 1, 0, &[*x], &mut s) - t).abs() < 1e-9);
        }
    }

    #[test]
    fn two_dimensional_polynomial_size() {
        let raw: Vec<f64> = (0..300).flat_map(|i| [i as f64 * 0.01, (i as f64 * 0.37).sin()]).collect();
        let map = FeatureMap::fit(&RegressionBasis::polynomial(2, false), &raw, 2, 2);
        assert_eq!(map.size(), 6);
    }

    #[test]
    fn constant_fit_is_sample_mean() {
        let raw = vec![0.0; 7];
        let target = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0];
        let map = FeatureMap::fit(&RegressionBasis::piecewise_linear(41, false), &raw, 1, 1);
        let ls = least_squares(&map, &raw, 1, &[&target]);
        assert!((ls.coef[0] - 29.0 / 7.0).abs() < 1e-14);
    }

    #[test]
    fn collinear_design_falls_back_to_ridge() {
        // state, running max, min and mean all coincide
        let raw: Vec<f64> = (0..50).flat_map(|i| [i as f64, i as f64, i as f64, i as f64]).collect();
        let basis = RegressionBasis::piecewise_linear(5, true);
        let map = FeatureMap::fit(&basis, &raw, 4, 1);
        let target: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let ls = least_squares(&map, &raw, 4, &[&target]);
        assert!(ls.ridge > 0.0);
        assert!(ls.coef.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn breakpoints_in_range() {
        let raw = grid_raw(101);
        let map = FeatureMap::fit(&RegressionBasis::piecewise_linear(5, false), &raw, 1, 1);
        let mut out = Vec::new();
        map.breakpoints(&[-0.5], &[1.0], 2.0, &mut out);
        assert_eq!(out, vec![0.5, 1.5]);
        map.breakpoints(&[-0.5], &[-2.0], 2.0, &mut out);
        assert_eq!(out, vec![0.25, 0.75]);
    }

    #[test]
    fn shift_updates_path_features() {
        let basis = RegressionBasis::piecewise_linear(5, true);
        let raw = [1.0, 2.0, -1.0, 0.5];
        let mut out = [0.0; 4];
        basis.shift_raw(&raw, 3, &[1.5], &mut out);
        assert_eq!(out, [2.5, 2.5, -1.0, 0.875]);
    }
}
