//! Filesystem plumbing shared by the commands: atomic writes, directory
//! listings under the `<id>_r<j>.pgm` naming contract, and PGM loading.

use crate::config::RunConfig;
use cdp_twin_core::pgm::{encode_pgm, parse_pgm, PgmDepth};
use cdp_twin_core::{BinaryTemplate, Error, GrayImage, RealizationStack, Result};
use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

/// Writes via a temp file in the same directory plus rename, so readers
/// never observe partial contents.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let dir = dir.unwrap_or_else(|| Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    std::fs::write(tmp.path(), bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Drops a copy of the run config into an output directory.
pub fn write_config_copy(dir: &Path, cfg: &RunConfig) -> Result<()> {
    atomic_write(&dir.join("config.json"), cfg.to_pretty_json().as_bytes())
}

pub fn template_id(index: usize) -> String {
    format!("t{index:05}")
}

pub fn realization_name(id: &str, j: usize) -> String {
    format!("{id}_r{j}.pgm")
}

/// An I/O error carrying a plain message rather than an OS source.
pub fn data_error(path: &Path, msg: impl Into<String>) -> Error {
    Error::io(path, io::Error::new(io::ErrorKind::InvalidData, msg.into()))
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes)
}

pub fn read_template(path: &Path) -> Result<BinaryTemplate> {
    BinaryTemplate::try_from_gray(&read_gray(path)?)
}

pub fn write_gray(path: &Path, img: &GrayImage, depth: PgmDepth) -> Result<()> {
    atomic_write(path, &encode_pgm(img, depth))
}

pub fn template_to_gray(t: &BinaryTemplate) -> GrayImage {
    GrayImage::new(
        t.width(),
        t.height(),
        t.bits().iter().map(|&b| f64::from(b)).collect(),
    )
    .expect("bits are 0/1")
}

/// All `.pgm` files in a directory as `(stem, path)`, sorted by stem.
pub fn list_pgm(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("pgm") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        out.push((stem.to_string(), path));
    }
    out.sort();
    Ok(out)
}

/// Splits a file stem into `(id, realization)` under the
/// `<id>_r<j>` contract; stems without the suffix get realization 0.
pub fn split_stem(stem: &str) -> (String, usize) {
    if let Some(pos) = stem.rfind("_r") {
        if let Ok(j) = stem[pos + 2..].parse::<usize>() {
            return (stem[..pos].to_string(), j);
        }
    }
    (stem.to_string(), 0)
}

/// Groups a directory of realizations by template id, each sorted by
/// realization index. Duplicate indices are rejected.
pub fn group_stacks(dir: &Path) -> Result<BTreeMap<String, Vec<PathBuf>>> {
    let mut grouped: BTreeMap<String, Vec<(usize, PathBuf)>> = BTreeMap::new();
    for (stem, path) in list_pgm(dir)? {
        let (id, j) = split_stem(&stem);
        grouped.entry(id).or_default().push((j, path));
    }
    let mut out = BTreeMap::new();
    for (id, mut files) in grouped {
        files.sort();
        if let Some(w) = files.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(data_error(
                &w[1].1,
                format!("duplicate realization index {} for id {id}", w[0].0),
            ));
        }
        out.insert(id, files.into_iter().map(|(_, p)| p).collect());
    }
    Ok(out)
}

pub fn load_stack(files: &[PathBuf]) -> Result<RealizationStack> {
    let images = files.iter().map(|p| read_gray(p)).collect::<Result<Vec<_>>>()?;
    RealizationStack::new(images)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stem_splitting() {
        assert_eq!(split_stem("t00003_r12"), ("t00003".into(), 12));
        assert_eq!(split_stem("t00003"), ("t00003".into(), 0));
        assert_eq!(split_stem("a_rx"), ("a_rx".into(), 0));
        assert_eq!(split_stem("noise_r0_r1"), ("noise_r0".into(), 1));
    }

    #[test]
    fn atomic_write_replaces_existing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
    }

    #[test]
    fn grouping_rejects_duplicate_indices() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a_r1.pgm"), b"").unwrap();
        std::fs::write(dir.path().join("a.pgm"), b"").unwrap();
        std::fs::write(dir.path().join("b_r0.pgm"), b"").unwrap();
        // `a.pgm` parses as (a, 0) and does not collide with a_r1.
        let g = group_stacks(dir.path()).unwrap();
        assert_eq!(g["a"].len(), 2);
        std::fs::write(dir.path().join("a_r0.pgm"), b"").unwrap();
        assert!(group_stacks(dir.path()).is_err());
    }
}
