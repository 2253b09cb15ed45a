//! Crop-row following from binary crop masks.
//!
//! The pipeline is split into small modules:
//!
//! - [`config`]: flat key=value configuration.
//! - [`mask`]: binary masks and PGM I/O.
//! - [`scan`]: anchor scan, line scan and tracking errors.
//! - [`eor`]: end-of-row measurement and trigger filter.
//! - [`control`]: steering law and exit manoeuvre.
//! - [`field`]: synthetic fields, camera model and ground truth.
//! - [`sim`]: closed-loop trials.
//! - [`eval`]: the normalized tracking score.
//! - [`io`]: CSV and JSON files used by the command-line tool.

pub mod config;
pub mod control;
pub mod eor;
pub mod eval;
pub mod field;
pub mod io;
pub mod mask;
pub mod scan;
pub mod sim;
