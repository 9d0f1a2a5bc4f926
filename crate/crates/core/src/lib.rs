//! Federated Q-learning over fixed random-feature encoders.
//!
//! Clients learn linear Q-readouts `Q(s, a) = Φ(s)·w_a` with semi-gradient
//! TD(0). A server federates them either by exact weight averaging (shared
//! encoder) or by aggregating predictions on shared anchor states and
//! compiling the teacher into each client's feature space with a closed-form
//! ridge solve (heterogeneous encoders). The `analysis` module measures the
//! resulting federation gap on a synthetic testbed where the true Q-function
//! is known exactly.

pub mod linalg;
pub mod rng;
pub mod encoder;
pub mod envs;
pub mod agent;
pub mod federation;
pub mod analysis;
pub mod harness;
