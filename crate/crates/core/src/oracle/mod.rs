//! Independent references: finite differences for 1-D Markovian problems, exhaustive
//! dynamic programming on tiny lattices, and closed forms.

mod closed_form;
mod dp;
mod fd;

pub use closed_form::closed_form_linear;
pub use dp::{brute_force_dp, DpResult, DpTerminal, TinyInstance, MAX_TREE_NODES};
pub use fd::{solve_hjb_fd, stable_time_steps, FdSolution, FdVariant, Grid1D};
