//! End-to-end spoken language understanding from log-Mel features.

pub mod augment;
pub mod cli;
pub mod corpus;
pub mod dsp;
pub mod ndnum;
pub mod nn;
pub mod saliency;
pub mod seed;
pub mod textnlu;
pub mod train;
