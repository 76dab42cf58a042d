//! Build, sample and score operating-room question-answering benchmarks from
//! structured surgical annotations.

pub mod cli;
pub mod distill;
pub mod domain;
pub mod ingest;
pub mod io;
pub mod memory;
pub mod qagen;
pub mod sampler;
pub mod scorer;

pub use domain::{QAPair, TaskKind, TimepointRecord, Triplet};
