pub mod config;
pub mod cli;
pub mod control;
pub mod cwt;
pub mod datamodel;
pub mod detector;
pub mod dsp;
pub mod emphfeat;
pub mod error;
pub mod ingestion;
pub mod neural;

pub use error::{Error, Result};
