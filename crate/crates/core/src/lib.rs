//! prefix-pm core: a miniature source-based package manager.
//!
//! Recipes describe how to build packages; the resolver turns dependency
//! atoms into ordered build plans over three dependency kinds; the build
//! engine runs phases in a sandboxed staging area and merges images into
//! a target root (optionally at a prefix offset) with an installed-package
//! database. A simulated three-stage bootstrap sets up self-contained
//! prefix environments.

pub mod atoms;
pub mod bootstrap;
pub mod buildengine;
pub mod conf;
pub mod config;
pub mod deps;
pub mod error;
pub mod lock;
pub mod patch;
pub mod repository;
pub mod resolver;
pub mod select;
pub mod vdb;

pub use atoms::{Atom, Operator, PackageId, Version};
pub use config::{Config, EffectiveUse};
pub use error::{Error, ErrorKind, Result};
pub use repository::{Recipe, RepositorySet};
pub use resolver::{BuildPlan, Reason};
pub use vdb::{InstalledSet, Vdb, VdbEntry};
