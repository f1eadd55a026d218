//! Std companion to `finlm-core`: document files, the on-disk corpus store,
//! binary formats, the EDGAR client and the pipeline behind the `finlm` binary.

pub mod config;
pub mod docfile;
pub mod edgar;
pub mod formats;
pub mod pipeline;
pub mod store;
