use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imgio::{read_image, resize_area, Rgb32Image};

/// Loads every decodable image under `data_dir` (non-recursive), resized to
/// `resize x resize` by area averaging, in lexicographic filename order.
/// Undecodable files are skipped with a warning on stderr; it is an error
/// only when nothing can be decoded.
pub fn load_dataset(data_dir: &Path, resize: usize) -> Result<Vec<Rgb32Image>> {
    if resize < 32 {
        return Err(Error::invalid_argument(format!("resize must be at least 32, got {resize}")));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(data_dir)
        .map_err(|e| Error::NotFound(format!("cannot read {}: {e}", data_dir.display())))?
        .filter_map(|entry| entry.ok())
        .filter(|entry| entry.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|entry| entry.path())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::NotFound(format!("no files in {}", data_dir.display())));
    }

    let mut images = Vec::new();
    for path in &files {
        match read_image(path) {
            Ok(img) => images.push(resize_area(&img, resize, resize)?),
            Err(e) => eprintln!("warning: skipping {}: {e}", path.display()),
        }
    }
    if images.is_empty() {
        return Err(Error::NotFound(format!(
            "no decodable images in {}",
            data_dir.display()
        )));
    }
    Ok(images)
}
