//! Monte Carlo laboratory for critical branching Markov processes.
//!
//! The crate simulates branching particle systems on finite state spaces,
//! records their full Ulam-Harris genealogy, explores the resulting trees
//! depth-first and extracts the objects that govern their scaling limits:
//! the exploration martingale, rescaled distance matrices, lower mass
//! functions and the Brownian excursion that codes the limiting continuum
//! random tree. The [`stats`] module ties everything back to exact oracles.
//!
//! Modules are layered bottom-up:
//!
//! * [`model`]: state spaces, offspring tables, Perron eigenpair and the
//!   analytic functionals evaluated exactly from the tables.
//! * [`genealogy`]: exact event-driven simulation in depth-first order.
//! * [`exploration`]: height function, sparse-table RMQ, tree distances.
//! * [`martingale`]: the exploration martingale and its quadratic variation.
//! * [`spine`]: many-to-one estimators and the size-biased spine.
//! * [`mmspace`]: distance matrices, lower mass, badness diagnostics.
//! * [`crt`]: conditioned Brownian excursions and their distances.
//! * [`stats`]: oracles, test statistics and reports.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crt;
pub mod error;
pub mod exploration;
pub mod genealogy;
pub mod martingale;
pub mod mmspace;
pub mod model;
pub mod rmq;
pub mod rng;
pub mod spine;
pub mod stats;

pub use error::{Error, Result};
pub use exploration::{explore, explore_forest, ExplorationPath, TreeDistance};
pub use genealogy::{
    condition_on_survival, population_at, simulate_forest, simulate_tree, Label, ParticleRecord,
    SimConfig, Tree,
};
pub use martingale::{compute_martingales, vertex_m, MartingalePath};
pub use model::{builtin, build_model, ModelSpec, RawModel};
pub use rmq::SparseTable;
