//! Verification of vanilla ReLU recurrent neural networks through inductive
//! invariants over memory units.
//!
//! An RNN query `<P, N, Q, T_max>` is reduced to feed-forward queries over a
//! *snapshot* network in which every memory unit is replaced by a free input
//! neuron bounded by a linear invariant `alpha_l (t-1) <= m <= alpha_u (t-1)`.
//! Invariants are inferred (binary search, layer-by-layer search, or MILP),
//! certified inductively with the built-in feed-forward verifier, and then
//! used to discharge the snapshot query. An exact unrolling baseline is
//! provided for cross-checking.
//!
//! Module map:
//!
//! * [`network`]: RNN/FFNN representation, evaluation, unrolling, snapshots.
//! * [`props`]: linear constraints, properties, queries and verdicts.
//! * [`solver`]: bounded simplex LP and branch-and-bound MILP.
//! * [`verifier`]: complete big-M MILP decision procedure for FFNN queries.
//! * [`invariant`]: invariant templates, certification and inference.
//! * [`pipeline`]: the end-to-end driver and the unrolling baseline.
//! * [`bench`]: robustness queries, network generation and sweeps.
//! * [`format`]: text formats for networks, properties and reports.

pub mod bench;
pub mod format;
pub mod invariant;
pub mod network;
pub mod pipeline;
pub mod props;
pub mod solver;
pub mod verifier;

mod error;

pub use error::{Error, Result};
