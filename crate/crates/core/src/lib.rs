//! Coverage-guided batch fuzzing of RPKI relying-party validators.
//!
//! A batch of structurally mutated objects is repaired (lengths, digests,
//! signatures), published as one repository, and fed to validators in a
//! single run. Coverage counters are sampled while the validator works and
//! newly reached counters are attributed to the object being processed.

pub mod asn1_tree;
pub mod coverage_attribution;
pub mod fuzz_orchestrator;
pub mod kind;
pub mod mutation_engine;
pub mod objects;
pub mod repair_signer;
pub mod repo_builder;
pub mod sim_target;
pub mod util;

pub use kind::ObjectKind;
