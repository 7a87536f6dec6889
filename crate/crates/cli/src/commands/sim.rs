//! `fit`, `print`, and `estimate`: channel fitting and sampling.

use super::pairs::match_stacks;
use super::resolve_model;
use crate::config::RunConfig;
use crate::ioutil::{
    atomic_write, ensure_dir, list_pgm, read_gray, realization_name, write_config_copy, write_gray,
};
use cdp_twin_core::channel::{fit_channel, Direction};
use cdp_twin_core::pgm::PgmDepth;
use cdp_twin_core::{rng, Result};
use rayon::prelude::*;
use std::path::Path;

pub fn fit(
    cfg: &RunConfig,
    templates_dir: &Path,
    prints_dir: &Path,
    direction: Direction,
    out: &Path,
) -> Result<()> {
    let matched = match_stacks(templates_dir, prints_dir, false)?;
    let mut pairs = Vec::new();
    for m in &matched {
        for p in &m.prints {
            pairs.push((m.template.clone(), read_gray(p)?));
        }
    }
    let model = fit_channel(&pairs, direction, cfg.template.scale)?;
    ensure_dir(out)?;
    atomic_write(&out.join("model.json"), model.to_json().as_bytes())?;
    write_config_copy(out, cfg)?;
    println!(
        "fitted {} model from {} pairs: {} of 512 patterns observed, average flip rate {:.4}",
        direction.as_str(),
        pairs.len(),
        model.table().observed(),
        model.table().average_flip_rate()
    );
    Ok(())
}

pub fn print(
    cfg: &RunConfig,
    templates_dir: &Path,
    out: &Path,
    k_flag: Option<usize>,
    model_flag: Option<&Path>,
) -> Result<()> {
    let k = k_flag.unwrap_or(cfg.aggregation.k).max(1);
    let model = resolve_model(cfg, model_flag, Direction::Print)?;
    let templates = list_pgm(templates_dir)?;
    ensure_dir(out)?;
    templates.par_iter().try_for_each(|(id, path)| {
        let z = crate::ioutil::read_template(path)?;
        let seed = rng::derive_seed_str(cfg.seed, "cli/print", id);
        let stack = model.simulate_print(&z, k, seed)?;
        for (j, img) in stack.images().iter().enumerate() {
            write_gray(&out.join(realization_name(id, j)), img, PgmDepth::Sixteen)?;
        }
        Ok(())
    })?;
    atomic_write(&out.join("model.json"), model.to_json().as_bytes())?;
    write_config_copy(out, cfg)?;
    println!(
        "printed {} realizations for {} templates into {}",
        k,
        templates.len(),
        out.display()
    );
    Ok(())
}

pub fn estimate(
    cfg: &RunConfig,
    prints_dir: &Path,
    out: &Path,
    k_flag: Option<usize>,
    model_flag: Option<&Path>,
) -> Result<()> {
    let k = k_flag.unwrap_or(cfg.aggregation.k).max(1);
    let model = resolve_model(cfg, model_flag, Direction::Estimate)?;
    let prints = list_pgm(prints_dir)?;
    ensure_dir(out)?;
    prints.par_iter().try_for_each(|(stem, path)| {
        let x = read_gray(path)?;
        let seed = rng::derive_seed_str(cfg.seed, "cli/estimate", stem);
        let stack = model.estimate_template(&x, k, seed)?;
        for (j, img) in stack.images().iter().enumerate() {
            write_gray(&out.join(realization_name(stem, j)), img, PgmDepth::Sixteen)?;
        }
        Ok(())
    })?;
    atomic_write(&out.join("model.json"), model.to_json().as_bytes())?;
    write_config_copy(out, cfg)?;
    println!(
        "estimated {} realizations for {} prints into {}",
        k,
        prints.len(),
        out.display()
    );
    Ok(())
}
