//! Loss measures for acyclic join dependencies.
//!
//! Given a relation and a join tree this crate computes the J-measure, the
//! exact relative number of spurious tuples `ρ`, the factorized distribution
//! `P_T` whose KL divergence from the empirical distribution equals `J`, and
//! the deterministic and high-probability bounds relating them. The
//! [`randmodel`] module samples relations uniformly without replacement for
//! Monte Carlo checks of the probabilistic bounds.

pub mod bounds;
pub mod error;
pub mod info;
pub mod jointree;
pub mod oracle;
pub mod randmodel;
pub mod relation;
pub mod verify;

pub use error::{Error, Result};
pub use info::{LogBase, Measure};
pub use jointree::{JoinTree, Node, RootedOrder};
pub use relation::{empirical, load_csv, CsvOptions, Distribution, Relation, Schema};
