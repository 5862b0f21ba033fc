//! File formats: NIfTI-1 volumes, binary STL surfaces and evaluation reports.

pub mod nifti;
pub mod report;
pub mod stl;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use nifti::{read_header, read_mask, read_volume, write_mask, write_volume, write_volume_as, DataType, NiftiHeader};
pub use report::{format_cell, render_report, write_report, CellKind, Report, ReportFormat, SummaryRow, SummaryTable};
pub use stl::{extract_surface_mesh, surface_area, write_stl, Triangle};

/// Writes `bytes` to a sibling temp file and renames it into place, so a
/// failed write never leaves a partial file at `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = parent.join(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}
