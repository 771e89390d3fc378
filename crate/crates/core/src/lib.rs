//! Tree-formed verification data.
//!
//! Platform measurements are normally chained linearly into a protected
//! register, which makes pinpointing a failed or manipulated component
//! expensive. This crate instead forms the measurements into a Merkle tree
//! whose root lives in one of a small bank of emulated hardware-protected
//! registers, using nothing but reset and extend on those registers. The
//! accompanying stored measurement log keeps every node in the natural
//! serialization order, is bit-exact on disk, and supports binary-search
//! addressing of nodes.
//!
//! On the verifier side, [`validate::diagnostic_validate`] walks the log
//! against a reference tree, descending only into subtrees that differ, so
//! failed components are localized with a number of hash operations
//! proportional to the damage rather than the log size; [`cost`] carries
//! the closed-form expectations and the Monte Carlo cross-check behind that
//! trade-off.

pub mod builder;
pub mod cost;
pub mod digest;
pub mod register;
pub mod sml;
pub mod validate;

pub use builder::{
    build_sml, capacity, extend_count, formation_cost_bound, plan_forest, BuildOutcome,
    BuilderState, ForestPlan, OpCounters, TreeBuilder, TreeError,
};
pub use digest::{extend, hash_leaf, Digest, DigestError, HashAlgorithm};
pub use register::{PristineExtend, Register, RegisterBank, RegisterError, RegisterRole};
pub use sml::{
    full_node_count, locate, locate_in, EdgePath, ExpandedTree, RecordKind, SmlError, SmlRecord,
    SmlTree,
};
pub use validate::{
    build_reference, classify, diagnostic_validate, linear_validate, LinearValidation, NodeCase,
    NodeVerdict, Outcome, ReferenceTree, ValidateError, ValidationMode, ValidationReport,
};
