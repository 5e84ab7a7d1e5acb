//! Detection fusion and evaluation toolkit for scene-text spotting.
//!
//! The crate has four layers:
//!
//! - [`geometry`]: polygon areas, convex intersection, IoU, and scale-space
//!   coordinate mapping.
//! - [`ingest`]: parsers for detection records, ICDAR-style ground-truth
//!   files and vocabulary lists, plus IV/OOV word classification.
//! - [`fusion`]: the ensemble pipeline that merges multi-model, multi-scale
//!   detections into one coordinate frame, applies soft-NMS rescoring and
//!   the final score / `ignore`-transcription filters.
//! - [`evaluation`]: IoU matching against ground truth and
//!   precision/recall/h-mean reporting split by IV / OOV / All.
//!
//! The `textspot` binary wires these together behind `fuse`, `eval` and
//! `build-vocab` subcommands driven by a TOML config file; see [`cli`].

pub mod cli;
pub mod evaluation;
pub mod fusion;
pub mod geometry;
pub mod ingest;
