//! Matching templates to print stacks on disk.

use crate::ioutil::{data_error, group_stacks, list_pgm, read_template, split_stem};
use cdp_twin_core::{BinaryTemplate, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// One template plus its printed realizations, matched by id.
pub struct MatchedStack {
    pub id: String,
    pub template: BinaryTemplate,
    pub prints: Vec<PathBuf>,
}

/// Loads `<id>.pgm` templates and groups `<id>_r<j>.pgm` prints by id.
/// Prints without a template are always fatal; `require_prints` makes
/// print-less templates fatal too. All problems are listed before aborting.
pub fn match_stacks(
    templates_dir: &Path,
    prints_dir: &Path,
    require_prints: bool,
) -> Result<Vec<MatchedStack>> {
    let templates = list_pgm(templates_dir)?;
    let mut stacks = group_stacks(prints_dir)?;
    let mut problems = String::new();
    let mut matched = Vec::new();
    for (stem, path) in &templates {
        let (id, _) = split_stem(stem);
        match stacks.remove(&id) {
            Some(prints) => matched.push(MatchedStack {
                id,
                template: read_template(path)?,
                prints,
            }),
            None if require_prints => {
                let _ = writeln!(problems, "template {id} has no prints in {}", prints_dir.display());
            }
            None => {}
        }
    }
    for id in stacks.keys() {
        let _ = writeln!(
            problems,
            "prints for {id} have no template in {}",
            templates_dir.display()
        );
    }
    if templates.is_empty() {
        let _ = writeln!(problems, "no templates found in {}", templates_dir.display());
    }
    if !problems.is_empty() {
        return Err(data_error(prints_dir, problems.trim_end().to_string()));
    }
    Ok(matched)
}
