//! Empirical certification of discrete-time convergent systems.
//!
//! The crate is organized around a small comparison-function algebra
//! ([`gains`]) and a generic discrete-time state-machine layer
//! ([`systems`]) that simulates output-feedback interconnections and
//! verifies convergence properties empirically. On top of those sit
//! three applications:
//!
//! * [`observer`] — observer-based control of a 2-state Lur'e plant,
//!   including assembly and feasibility search for the block LMI that
//!   certifies the observer error dynamics.
//! * [`esn`] — state-feedback interconnected echo-state networks with a
//!   closed-form small-gain certificate on the reservoir norms.
//! * [`qrc`] — interconnected quantum reservoir computers simulated as
//!   density operators under convex mixtures of unitary channels, with
//!   a Schatten-1-norm small-gain certificate.
//!
//! [`sysid`] implements the black-box identification protocol shared by
//! the two reservoir models (washout, least-squares readout, FPE model
//! selection), and [`checks`] bundles the randomized property suites
//! exposed through the CLI's `verify` subcommand.
//!
//! Batch work (independent trials, candidate sweeps, randomized suites)
//! runs through [`parallel`], which uses rayon when the `parallel`
//! feature (default) is enabled and plain iterators otherwise.

pub mod checks;
pub mod error;
pub mod esn;
pub mod gains;
pub mod linalg;
pub mod observer;
pub mod optim;
pub mod parallel;
pub mod qrc;
pub mod sysid;
pub mod systems;

pub use error::{Error, Result};
