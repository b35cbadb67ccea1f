//! Dataset manifests: one image path per line, `#` starts a comment.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::image::{load_image, ImageBuffer};

/// Parses manifest text. Relative paths are joined onto `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Vec<PathBuf> {
    text.lines()
        .map(|line| line.split('#').next().unwrap_or("").trim())
        .filter(|line| !line.is_empty())
        .map(|line| {
            let p = Path::new(line);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        })
        .collect()
}

/// Paths listed in the manifest at `path`, relative to its directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let paths = parse_manifest(&text, base);
    if paths.is_empty() {
        return Err(Error::invalid(format!("{}: manifest lists no images", path.display())));
    }
    Ok(paths)
}

/// Loads a directory (every `.pgm`/`.ppm` file, sorted by name) or a
/// manifest file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<(PathBuf, ImageBuffer)>> {
    let path = path.as_ref();
    let paths = if path.is_dir() {
        list_images(path)?
    } else {
        read_manifest(path)?
    };
    paths.into_iter().map(|p| load_image(&p).map(|img| (p, img))).collect()
}

/// Sorted `.pgm`/`.ppm` files of a directory.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if p.is_file() && matches!(ext.as_deref(), Some("pgm" | "ppm" | "pnm")) {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::invalid(format!("{}: no .pgm/.ppm images", dir.display())));
    }
    Ok(out)
}
