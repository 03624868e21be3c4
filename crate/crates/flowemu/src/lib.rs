pub use flowemu_core as core;

pub mod archive;
pub mod bundle;
pub mod cli;
pub mod cpd;
pub mod error;
pub mod pipeline;
pub mod provenance;
pub mod synthspec;
