//! File formats and configuration.
//!
//! All text output is UTF-8 with LF line endings and `.` as the decimal
//! separator. Floats are rounded to 9 significant digits and then printed in
//! the shortest form that reads back to the same value, so parsing and
//! re-serializing a file written here reproduces it byte for byte.

pub mod config;
pub mod csv;
pub mod results;

pub use config::{Decimation, PipelineConfig, Preset};
pub use results::{ResultsFile, TimingReport};

use std::path::Path;

use crate::error::{Error, Result};

/// Round to 9 significant digits.
pub fn sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

pub fn fmt_float(x: f64) -> String {
    let v = sig9(x);
    if v == 0.0 {
        // Also folds -0 into 0.
        return "0".to_string();
    }
    format!("{v}")
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_string(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
