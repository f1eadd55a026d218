//! Core algorithms for financial-domain BERT pretraining at desk scale.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no I/O. Modules:
//!
//! * [`corpus`]: filing sectioning, sentence segmentation, corpus statistics.
//! * [`vocab`]: text normalization, WordPiece vocabulary training and comparison.
//! * [`tokenizer`]: greedy WordPiece encoding and MLM/NSP instance building.
//! * [`model`]: a small transformer encoder with hand-written backpropagation,
//!   AdamW training and gradient checking.
//! * [`finetune`]: sentiment task handling, repeated 90/10 splits, classifier
//!   fine-tuning and accuracy reports.
//!
//! The `finlm` crate adds file formats, the EDGAR client and the CLI.
#![no_std]
extern crate alloc;

pub mod corpus;
pub mod finetune;
pub mod model;
pub mod rng;
pub mod tokenizer;
pub mod vocab;
