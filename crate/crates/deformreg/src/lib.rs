//! File formats, configuration and command line for the `deformreg-core`
//! registration engine.
//!
//! ```no_run
//! use deformreg::{config, io, pipeline};
//! use std::path::Path;
//!
//! let fixed = io::load_volume(Path::new("fixed.nii.gz"))?;
//! let moving = io::load_volume(Path::new("moving.nii.gz"))?;
//! let reg = pipeline::register(&fixed, &moving, None, &config::preset("task2")?)?;
//! io::save_field(Path::new("field.nii.gz"), &reg.field, fixed.spacing(), None)?;
//! # Ok::<(), deformreg::Error>(())
//! ```

pub mod cli;
pub mod config;
mod error;
pub mod io;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
