//! `ddpm-fit` and `ddpm-sample`: bucketed linear denoiser training and
//! conditional sampling under the refinement schedule.

use super::pairs::match_stacks;
use crate::config::RunConfig;
use crate::ioutil::{
    atomic_write, data_error, ensure_dir, group_stacks, list_pgm, read_gray, read_template,
    realization_name, template_to_gray, write_config_copy, write_gray,
};
use cdp_twin_core::channel::Direction;
use cdp_twin_core::ddpm::{
    ddpm_loss, fit_linear_denoiser, sample, Denoiser, LinearDenoiser, ZeroDenoiser,
};
use cdp_twin_core::imaging::{block_mean_downscale, upscale};
use cdp_twin_core::pgm::PgmDepth;
use cdp_twin_core::{rng, GrayImage, Result};
use rayon::prelude::*;
use std::path::Path;

/// (condition, target) pairs for a direction: print conditions on the
/// upscaled template and regresses the print; estimate conditions on the
/// downscaled print and regresses the template.
fn build_pairs(
    cfg: &RunConfig,
    templates_dir: &Path,
    prints_dir: &Path,
    direction: Direction,
) -> Result<Vec<(GrayImage, GrayImage)>> {
    let matched = match_stacks(templates_dir, prints_dir, false)?;
    let s = cfg.template.scale;
    let mut pairs = Vec::new();
    for m in &matched {
        for p in &m.prints {
            let x = read_gray(p)?;
            let pair = match direction {
                Direction::Print => (template_to_gray(&upscale(&m.template, s)?), x),
                Direction::Estimate => {
                    (block_mean_downscale(&x, s)?, template_to_gray(&m.template))
                }
            };
            pairs.push(pair);
        }
    }
    Ok(pairs)
}

pub fn fit(
    cfg: &RunConfig,
    templates_dir: &Path,
    prints_dir: &Path,
    direction: Direction,
    out: &Path,
) -> Result<()> {
    let pairs = build_pairs(cfg, templates_dir, prints_dir, direction)?;
    let sched = cfg.ddpm.train.build()?;
    let d = &cfg.ddpm;
    let den = fit_linear_denoiser(
        &pairs,
        &sched,
        d.buckets,
        d.patch_radius,
        d.samples_per_pair,
        cfg.seed,
    )?;
    let mean_loss = |model: &dyn Denoiser| -> Result<f64> {
        let total = pairs
            .iter()
            .enumerate()
            .map(|(i, (cond, target))| {
                let seed = rng::derive_seed(cfg.seed, "cli/ddpm-loss", i as u64);
                ddpm_loss(model, target, cond, &sched, d.loss_batch, seed)
            })
            .sum::<Result<f64>>()?;
        Ok(total / pairs.len() as f64)
    };
    let fitted = mean_loss(&den)?;
    let zero = mean_loss(&ZeroDenoiser)?;
    ensure_dir(out)?;
    atomic_write(&out.join("denoiser.json"), den.to_json().as_bytes())?;
    write_config_copy(out, cfg)?;
    println!(
        "fitted denoiser on {} pairs: loss {fitted:.6e} (zero-denoiser baseline {zero:.6e})",
        pairs.len()
    );
    if fitted >= zero {
        println!("warning: fitted denoiser does not beat the zero baseline");
    }
    Ok(())
}

pub fn sample_cmd(
    cfg: &RunConfig,
    denoiser_path: &Path,
    cond_dir: &Path,
    direction: Direction,
    out: &Path,
    k_flag: Option<usize>,
) -> Result<()> {
    let den = LinearDenoiser::load(denoiser_path)?;
    let sched = cfg.ddpm.refine.build()?;
    let k = k_flag.unwrap_or(cfg.aggregation.k).max(1);
    let s = cfg.template.scale;

    // Per-id conditioning image, shaped like the requested output.
    let conditions: Vec<(String, GrayImage)> = match direction {
        Direction::Print => list_pgm(cond_dir)?
            .into_iter()
            .map(|(stem, path)| {
                let z = read_template(&path)?;
                Ok((stem, template_to_gray(&upscale(&z, s)?)))
            })
            .collect::<Result<_>>()?,
        Direction::Estimate => group_stacks(cond_dir)?
            .into_iter()
            .map(|(id, files)| {
                let x = read_gray(&files[0])?;
                Ok((id, block_mean_downscale(&x, s)?))
            })
            .collect::<Result<_>>()?,
    };
    if conditions.is_empty() {
        return Err(data_error(cond_dir, "no conditioning images found"));
    }

    ensure_dir(out)?;
    conditions.par_iter().try_for_each(|(id, cond)| {
        let seed = rng::derive_seed_str(cfg.seed, "cli/ddpm-sample", id);
        let stack = sample(&den, cond, &sched, k, seed, cfg.ddpm.variance)?;
        for (j, img) in stack.images().iter().enumerate() {
            write_gray(&out.join(realization_name(id, j)), img, PgmDepth::Sixteen)?;
        }
        Ok(())
    })?;
    write_config_copy(out, cfg)?;
    println!(
        "sampled {} realizations for {} conditions into {}",
        k,
        conditions.len(),
        out.display()
    );
    Ok(())
}
