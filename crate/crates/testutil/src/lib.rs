//! Test-support helpers shared by the workspace test suites. Nothing in
//! here calls into pm-core; the diff generator and snapshotter act as
//! independent oracles.

pub mod diffgen;
pub mod snapshot;
