//! Cell-line to patient transfer learning for drug-response prediction.
//!
//! The crate aligns gene-expression profiles of labeled cell lines (source
//! domain) and unlabeled patients (target domain) with autoencoder and
//! domain-separation models, fine-tunes a drug-response classifier on
//! cell-line labels, scores patients zero-shot, and turns the scores into an
//! indication-level drug screen.
//!
//! Modules, bottom-up:
//!
//! * [`nn`]: tape-based gradients, dense layers, Adam, gradient checking
//! * [`data`]: TSV ingestion, quality control, label binarization, splits
//! * [`zoo`]: the eight pretraining architectures and the classifier head
//! * [`train`]: pretraining, fine-tuning, zero-shot evaluation, AUROC
//! * [`align`]: MMD / KL alignment diagnostics and embedding export
//! * [`screen`]: DRP → EDP → EDI → DEI screening and drug qualification
//! * [`synth`]: two-domain synthetic benchmark with known ground truth

pub mod align;
pub mod data;
pub mod error;
pub mod kernel;
pub mod nn;
pub mod screen;
pub mod synth;
pub mod train;
pub mod tsv;
pub mod zoo;

pub use error::{Error, Result};
