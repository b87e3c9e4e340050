//! One module per subcommand; each returns the sealed-ready artifact set.

pub mod actigraphy;
pub mod compare;
pub mod deteval;
pub mod environment;
pub mod facs;
pub mod ingest;
pub mod posture;
pub mod report;
pub mod simulate;

use crate::failure::Failure;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

/// Map every patient through `f` on the worker pool, preserving order and
/// surfacing the first failure.
pub(crate) fn per_patient<T, F>(patients: &[(String, PathBuf)], f: F) -> Result<Vec<T>, Failure>
where
    T: Send,
    F: Fn(&str, &Path) -> Result<T, Failure> + Sync,
{
    patients
        .par_iter()
        .map(|(id, dir)| f(id, dir))
        .collect()
}

/// Stable manifest label for an input file: relative to the data root when
/// inside it, otherwise just the file name (never an absolute path, so
/// identical runs rooted elsewhere produce identical manifests).
pub(crate) fn data_label(data_dir: &Path, path: &Path) -> String {
    match path.strip_prefix(data_dir) {
        Ok(rel) => format!("data:{}", rel.display()),
        Err(_) => format!(
            "file:{}",
            path.file_name().unwrap_or_default().to_string_lossy()
        ),
    }
}
