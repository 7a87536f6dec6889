//! `eval`: score prediction directories against reference templates and
//! prints, with a W/O-processing identity baseline row.

use super::{binarize_estimate, pairs::match_stacks};
use crate::config::RunConfig;
use crate::ioutil::{
    atomic_write, data_error, ensure_dir, group_stacks, load_stack, read_gray, template_to_gray,
    write_config_copy,
};
use cdp_twin_core::analysis::{aggregate, AggregationMode};
use cdp_twin_core::imaging::upscale;
use cdp_twin_core::metrics::{
    frechet_distance, gaussian_stats, hamming, mse, patch_histogram_features, ssim_with,
    MetricReport, REPORT_CSV_HEADER,
};
use cdp_twin_core::{BinaryTemplate, Error, GrayImage, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// One `--pred NAME=DIR` argument.
#[derive(Debug, Clone)]
pub struct PredSpec {
    pub name: String,
    pub dir: PathBuf,
}

impl PredSpec {
    pub fn parse(raw: &str) -> Result<PredSpec> {
        match raw.split_once('=') {
            Some((name, dir)) if !name.is_empty() && !dir.is_empty() => Ok(PredSpec {
                name: name.to_string(),
                dir: PathBuf::from(dir),
            }),
            _ => Err(Error::parameter(format!(
                "prediction must be NAME=DIR, got {raw:?}"
            ))),
        }
    }
}

struct Reference {
    id: String,
    z: BinaryTemplate,
    x: GrayImage,
}

/// Aggregated estimate and print for one id under one model.
struct Aggregated {
    z_tilde: GrayImage,
    x_tilde: GrayImage,
}

pub fn run(
    cfg: &RunConfig,
    templates_dir: &Path,
    prints_dir: &Path,
    preds: &[PredSpec],
    out: &Path,
) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for p in preds {
        if p.name == WO_NAME {
            return Err(Error::parameter(format!("prediction name {WO_NAME:?} is reserved")));
        }
        if !seen.insert(&p.name) {
            return Err(Error::parameter(format!("duplicate prediction name {:?}", p.name)));
        }
    }

    let matched = match_stacks(templates_dir, prints_dir, true)?;
    let mut problems = String::new();
    let mut refs = Vec::new();
    let mut scale = None;
    for m in &matched {
        let x = read_gray(&m.prints[0])?;
        let (zw, zh) = (m.template.width(), m.template.height());
        let s = x.width() / zw.max(1);
        if (s != 1 && s != 3) || x.width() != zw * s || x.height() != zh * s {
            let _ = writeln!(
                problems,
                "print for {} is {}x{}, not an integer upscale of the {}x{} template",
                m.id,
                x.width(),
                x.height(),
                zw,
                zh
            );
            continue;
        }
        match scale {
            None => scale = Some(s),
            Some(prev) if prev != s => {
                let _ = writeln!(problems, "print scale for {} is {s}, others use {prev}", m.id);
            }
            _ => {}
        }
        refs.push(Reference {
            id: m.id.clone(),
            z: m.template.clone(),
            x,
        });
    }

    // Load every prediction stack up front so all problems surface at once.
    let mut pred_stacks: Vec<Vec<Aggregated>> = Vec::new();
    for p in preds {
        let mut per_id = Vec::new();
        for group in ["z_tilde", "x_tilde"] {
            let dir = p.dir.join(group);
            let stacks = match group_stacks(&dir) {
                Ok(s) => s,
                Err(e) => {
                    let _ = writeln!(problems, "prediction {}: {e}", p.name);
                    continue;
                }
            };
            for r in &refs {
                match stacks.get(&r.id) {
                    None => {
                        let _ = writeln!(
                            problems,
                            "prediction {}: no {group} realizations for {}",
                            p.name, r.id
                        );
                    }
                    Some(files) => {
                        let stack = load_stack(files)?;
                        let want = if group == "z_tilde" {
                            (r.z.width(), r.z.height())
                        } else {
                            (r.x.width(), r.x.height())
                        };
                        if (stack.width(), stack.height()) != want {
                            let _ = writeln!(
                                problems,
                                "prediction {}: {group} for {} is {}x{}, expected {}x{}",
                                p.name,
                                r.id,
                                stack.width(),
                                stack.height(),
                                want.0,
                                want.1
                            );
                        } else {
                            per_id.push((r.id.clone(), group, aggregate(&stack, AggregationMode::Mean)?));
                        }
                    }
                }
            }
        }
        // Stitch the two groups back together per id, in refs order.
        let mut rows = Vec::new();
        for r in &refs {
            let z_tilde = per_id
                .iter()
                .find(|(id, g, _)| id == &r.id && *g == "z_tilde")
                .map(|(_, _, img)| img.clone());
            let x_tilde = per_id
                .iter()
                .find(|(id, g, _)| id == &r.id && *g == "x_tilde")
                .map(|(_, _, img)| img.clone());
            if let (Some(z_tilde), Some(x_tilde)) = (z_tilde, x_tilde) {
                rows.push(Aggregated { z_tilde, x_tilde });
            }
        }
        pred_stacks.push(rows);
    }

    if !problems.is_empty() {
        return Err(data_error(templates_dir, problems.trim_end().to_string()));
    }
    let s = scale.expect("matched stacks are non-empty");

    // W/O processing: wire the channel through as-is (z~ = x, x~ = z),
    // reduced/expanded to the comparison geometry.
    let wo: Vec<Aggregated> = refs
        .iter()
        .map(|r| {
            Ok(Aggregated {
                z_tilde: cdp_twin_core::imaging::block_mean_downscale(&r.x, s)?,
                x_tilde: template_to_gray(&upscale(&r.z, s)?),
            })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    rows.push(score_model(cfg, WO_NAME, &refs, &wo)?);
    for (p, agg) in preds.iter().zip(&pred_stacks) {
        rows.push(score_model(cfg, &p.name, &refs, agg)?);
    }

    let mut csv = String::new();
    let m = &cfg.metrics;
    let _ = writeln!(
        csv,
        "# ssim: window={} sigma={} k1={} k2={} L={}",
        m.ssim.window, m.ssim.sigma, m.ssim.k1, m.ssim.k2, m.ssim.dynamic_range
    );
    let _ = writeln!(csv, "# pfid: patch={} bins={}", m.patch, m.feature_bins);
    let _ = writeln!(csv, "# binarization: {}", match m.binarization {
        crate::config::Binarization::Otsu => format!("otsu bins={}", m.otsu_bins),
        crate::config::Binarization::Fixed => format!("fixed threshold={}", m.fixed_threshold),
    });
    let _ = writeln!(csv, "# aggregation: mean over k realizations per id");
    let _ = writeln!(csv, "{REPORT_CSV_HEADER}");
    for row in &rows {
        let _ = writeln!(csv, "{}", row.csv_row());
    }
    ensure_dir(out)?;
    atomic_write(&out.join("report.csv"), csv.as_bytes())?;
    write_config_copy(out, cfg)?;
    println!(
        "evaluated {} model(s) over {} ids; report at {}",
        rows.len(),
        refs.len(),
        out.join("report.csv").display()
    );
    Ok(())
}

const WO_NAME: &str = "wo_processing";

fn score_model(
    cfg: &RunConfig,
    name: &str,
    refs: &[Reference],
    agg: &[Aggregated],
) -> Result<MetricReport> {
    debug_assert_eq!(refs.len(), agg.len());
    let m = &cfg.metrics;
    let n = refs.len() as f64;
    let mut hamming_sum = 0.0;
    let mut mse_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut feat_z_pred = Vec::new();
    let mut feat_z_ref = Vec::new();
    let mut feat_x_pred = Vec::new();
    let mut feat_x_ref = Vec::new();
    for (r, a) in refs.iter().zip(agg) {
        let z_hat = binarize_estimate(cfg, &a.z_tilde)?;
        hamming_sum += hamming(&z_hat, &r.z)?;
        mse_sum += mse(&a.x_tilde, &r.x)?;
        ssim_sum += ssim_with(
            &a.x_tilde,
            &r.x,
            m.ssim.window,
            m.ssim.sigma,
            m.ssim.k1,
            m.ssim.k2,
            m.ssim.dynamic_range,
        )?;
        feat_z_pred.extend(patch_histogram_features(&a.z_tilde, m.patch, m.feature_bins)?);
        feat_z_ref.extend(patch_histogram_features(
            &template_to_gray(&r.z),
            m.patch,
            m.feature_bins,
        )?);
        feat_x_pred.extend(patch_histogram_features(&a.x_tilde, m.patch, m.feature_bins)?);
        feat_x_ref.extend(patch_histogram_features(&r.x, m.patch, m.feature_bins)?);
    }
    let pfid_x2z = frechet_distance(&gaussian_stats(&feat_z_ref)?, &gaussian_stats(&feat_z_pred)?)?;
    let pfid_z2x = frechet_distance(&gaussian_stats(&feat_x_ref)?, &gaussian_stats(&feat_x_pred)?)?;
    Ok(MetricReport {
        model: name.to_string(),
        pfid_x2z,
        hamming: hamming_sum / n,
        pfid_z2x,
        mse: mse_sum / n,
        ssim: ssim_sum / n,
    })
}
