//! Combined regular/singular stochastic control through penalized backward SDEs.
//!
//! The optimal value is estimated as the increasing limit of the values `y0(j)` of
//! penalized backward equations, each solved by regression Monte Carlo on simulated paths
//! of the uncontrolled state. Feedback controls are read off the driver's argmax, and the
//! face-lifted terminal reward removes the jump of the constrained solution at maturity.
//!
//! ```
//! use cbsde::bsde::{solve_penalized_sequence, SolverConfig, Terminal};
//! use cbsde::model::builtin_model;
//! use cbsde::simulate::TimeGrid;
//!
//! let model = builtin_model("fuel1d").unwrap();
//! let grid = TimeGrid::uniform(1.0, 10).unwrap();
//! let cfg = SolverConfig::for_model(&model);
//! let report = solve_penalized_sequence(&model, &grid, 2000, 7, &cfg, &[1.0, 4.0], &Terminal::Reward).unwrap();
//! assert!(report.rows[0].y0 <= report.rows[1].y0 + 0.05);
//! ```

pub mod basis;
pub mod bsde;
pub mod error;
pub mod facelift;
pub mod hamiltonian;
pub mod model;
pub mod oracle;
mod par;
pub mod path;
pub mod policy;
pub mod rng;
pub mod search;
pub mod simulate;
pub mod stats;

pub use error::{Error, ErrorKind, Result};
