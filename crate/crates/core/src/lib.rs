//! Low-compute arrhythmia classification pipeline.
//!
//! The crate covers everything needed to go from a single-lead ECG export to a
//! microcontroller-sized classifier:
//!
//! * [`ingest`] parses signal/annotation CSV exports and cuts labeled beats.
//! * [`dsp`] is the Pan-Tompkins preprocessing chain (bandpass, derivative,
//!   squaring, moving-window integration), usable in batch or streaming form.
//! * [`qrs`] detects R peaks over a bounded 150-sample stream buffer.
//! * [`nn`] holds the dense 61→10→4 network and its activations.
//! * [`train`] fits the network with MSE and Adam, plus the pruning,
//!   distillation and weights-only ablations.
//! * [`quant`] does symmetric int8 quantization, temporary-dequantization
//!   inference and exact FLOPs/SRAM accounting against a 2048-byte budget.
//! * [`metrics`] computes confusion matrices and precision/recall/F1 reports.
//!
//! Batch work (gradients over a mini-batch, evaluation over a beat set) is
//! spread over threads with rayon when the `parallel` feature is enabled.
//! Chunking and reduction order are fixed, so both execution paths produce
//! bit-identical results.

pub mod dsp;
pub mod error;
pub mod format;
pub mod ingest;
pub mod label;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod qrs;
pub mod quant;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use label::Class;
