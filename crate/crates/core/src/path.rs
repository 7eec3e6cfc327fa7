//! Borrowed views of discretized state paths.
//!
//! Coefficient functionals receive a [`PathView`] positioned at the query
//! step. The view may carry points past the cursor (a fully simulated path);
//! a non-anticipative functional reads only `point(0..=step)`.

#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    times: &'a [f64],
    states: &'a [f64],
    dim: usize,
    step: usize,
}

impl<'a> PathView<'a> {
    /// `states` holds `times.len()` points of `dim` components, row-major.
    pub fn new(times: &'a [f64], states: &'a [f64], dim: usize, step: usize) -> Self {
        assert!(dim > 0, "path dimension must be positive");
        assert_eq!(states.len(), times.len() * dim, "states/times length mismatch");
        assert!(step < times.len(), "cursor past the end of the path");
        Self {
            times,
            states,
            dim,
            step,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Number of points stored in the underlying buffer.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.times[self.step]
    }

    pub fn time_at(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn point(&self, i: usize) -> &'a [f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    /// State at the cursor.
    pub fn current(&self) -> &'a [f64] {
        self.point(self.step)
    }

    /// Last point of the buffer. Only meaningful for terminal functionals.
    pub fn terminal(&self) -> &'a [f64] {
        self.point(self.times.len() - 1)
    }

    /// Same buffer, cursor moved to `step`.
    pub fn at_step(&self, step: usize) -> Self {
        assert!(step < self.times.len());
        Self { step, ..*self }
    }

    /// Points `0..=step`.
    pub fn history(&self) -> impl Iterator<Item = &'a [f64]> + 'a {
        let dim = self.dim;
        self.states[..(self.step + 1) * dim].chunks_exact(dim)
    }

    pub fn running_max(&self, component: usize) -> f64 {
        self.history()
            .map(|p| p[component])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn running_min(&self, component: usize) -> f64 {
        self.history().map(|p| p[component]).fold(f64::INFINITY, f64::min)
    }

    /// Arithmetic mean of the grid points `0..=step`.
    pub fn running_mean(&self, component: usize) -> f64 {
        let sum: f64 = self.history().map(|p| p[component]).sum();
        sum / (self.step + 1) as f64
    }
}
