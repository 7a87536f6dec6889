//! `analyze`: per-pattern statistics, std maps, k sweeps, and bit-flip
//! agreement between a fitted model and fresh data.

use super::pairs::match_stacks;
use crate::config::RunConfig;
use crate::ioutil::{
    atomic_write, data_error, ensure_dir, group_stacks, load_stack, read_gray, write_config_copy,
};
use cdp_twin_core::analysis::{k_sweep, std_map, KSweepCurve, KSweepRow, PatternAggregator, ScoreMetric};
use cdp_twin_core::channel::{ChannelModel, Direction};
use cdp_twin_core::metrics::pearson;
use cdp_twin_core::Result;
use std::fmt::Write as _;
use std::path::Path;

/// Pooled per-pattern statistics over every template/print pair.
pub fn patterns(cfg: &RunConfig, templates_dir: &Path, prints_dir: &Path, out: &Path) -> Result<()> {
    let matched = match_stacks(templates_dir, prints_dir, true)?;
    let mut agg = PatternAggregator::new(cfg.template.scale)?;
    for m in &matched {
        for p in &m.prints {
            agg.push_pair(&m.template, &read_gray(p)?)?;
        }
    }
    let table = agg.finish();
    let mut csv = String::from("# std: population\n");
    let _ = writeln!(csv, "# scale: {}", cfg.template.scale);
    csv.push_str(&table.to_csv());
    ensure_dir(out)?;
    atomic_write(&out.join("patterns.csv"), csv.as_bytes())?;
    write_config_copy(out, cfg)?;
    println!(
        "pattern statistics over {} ids: {} of 512 patterns observed, average flip rate {:.4}",
        matched.len(),
        table.observed(),
        table.average_flip_rate()
    );
    Ok(())
}

/// Per-pixel std maps, one 16-bit PGM plus min/max sidecar per id.
pub fn stdmap(cfg: &RunConfig, prints_dir: &Path, out: &Path) -> Result<()> {
    let stacks = group_stacks(prints_dir)?;
    if stacks.is_empty() {
        return Err(data_error(prints_dir, "no realization stacks found"));
    }
    ensure_dir(out)?;
    for (id, files) in &stacks {
        let stack = load_stack(files)?;
        let map = std_map(&stack)?;
        let (pgm, sidecar) = map.to_pgm();
        atomic_write(&out.join(format!("{id}_std.pgm")), &pgm)?;
        let mut text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        text.push('\n');
        atomic_write(&out.join(format!("{id}_std.json")), text.as_bytes())?;
    }
    write_config_copy(out, cfg)?;
    println!("wrote {} std maps to {}", stacks.len(), out.display());
    Ok(())
}

/// Aggregation-quality sweep over realization-count prefixes, averaged
/// across ids.
pub fn ksweep(cfg: &RunConfig, stacks_dir: &Path, reference_dir: &Path, out: &Path) -> Result<()> {
    let stacks = group_stacks(stacks_dir)?;
    if stacks.is_empty() {
        return Err(data_error(stacks_dir, "no realization stacks found"));
    }
    let metrics = [ScoreMetric::Mse, ScoreMetric::Ssim, ScoreMetric::HammingOtsu];
    let mut problems = String::new();
    let mut curves: Vec<KSweepCurve> = Vec::new();
    for (id, files) in &stacks {
        let ref_path = reference_dir.join(format!("{id}.pgm"));
        if !ref_path.is_file() {
            let _ = writeln!(problems, "no reference {id}.pgm in {}", reference_dir.display());
            continue;
        }
        let stack = load_stack(files)?;
        let reference = read_gray(&ref_path)?;
        curves.push(k_sweep(
            &stack,
            &reference,
            &cfg.aggregation.ks,
            &cfg.aggregation.modes,
            &metrics,
        )?);
    }
    if !problems.is_empty() {
        return Err(data_error(reference_dir, problems.trim_end().to_string()));
    }

    let n = curves.len() as f64;
    let rows = curves[0]
        .rows
        .iter()
        .enumerate()
        .map(|(i, first)| KSweepRow {
            k: first.k,
            mode: first.mode,
            metric: first.metric,
            score: curves.iter().map(|c| c.rows[i].score).sum::<f64>() / n,
        })
        .collect();
    let averaged = KSweepCurve { rows };
    ensure_dir(out)?;
    atomic_write(&out.join("ksweep.csv"), averaged.to_csv().as_bytes())?;
    write_config_copy(out, cfg)?;
    println!(
        "k sweep over {} ids ({} rows) written to {}",
        curves.len(),
        averaged.rows.len(),
        out.display()
    );
    Ok(())
}

/// Agreement between a model's per-pattern flip probabilities / stds and
/// fresh empirical data. Prints the Pearson coefficients.
pub fn bitflip(
    cfg: &RunConfig,
    model_path: &Path,
    templates_dir: &Path,
    prints_dir: &Path,
    out: &Path,
) -> Result<()> {
    let model = ChannelModel::load(model_path)?;
    if model.direction != Direction::Print {
        return Err(cdp_twin_core::Error::usage(
            "bit-flip analysis compares print-direction models",
        ));
    }
    let matched = match_stacks(templates_dir, prints_dir, true)?;
    let mut agg = PatternAggregator::new(model.scale)?;
    for m in &matched {
        for p in &m.prints {
            agg.push_pair(&m.template, &read_gray(p)?)?;
        }
    }
    let empirical = agg.finish();

    let mut model_flip = Vec::new();
    let mut emp_flip = Vec::new();
    let mut model_std = Vec::new();
    let mut emp_std = Vec::new();
    for (me, ee) in model.table().entries().iter().zip(empirical.entries()) {
        if me.count > 0 && ee.count > 0 {
            model_flip.push(me.flip_prob);
            emp_flip.push(ee.flip_prob);
            model_std.push(me.std);
            emp_std.push(ee.std);
        }
    }
    let pearson_flip = pearson(&model_flip, &emp_flip)?;
    let pearson_std = pearson(&model_std, &emp_std)?;

    let mut csv = String::from("# std: population\n");
    let _ = writeln!(csv, "# patterns compared: {}", model_flip.len());
    let _ = writeln!(csv, "# pearson_flip: {pearson_flip:.6}");
    let _ = writeln!(csv, "# pearson_std: {pearson_std:.6}");
    csv.push_str(&empirical.to_csv());
    ensure_dir(out)?;
    atomic_write(&out.join("bitflip.csv"), csv.as_bytes())?;
    write_config_copy(out, cfg)?;
    println!("pearson_flip {pearson_flip:.6}");
    println!("pearson_std {pearson_std:.6}");
    Ok(())
}
