//! Command implementations. Each command validates its inputs in full,
//! does its work, and writes outputs atomically together with a copy of
//! the run config.

pub mod analyze;
pub mod ddpm;
pub mod eval;
pub mod gen;
pub mod pairs;
pub mod sim;

use crate::config::{Binarization, RunConfig};
use cdp_twin_core::channel::{synthetic_channel, ChannelModel, Direction};
use cdp_twin_core::metrics::{binarize, otsu_threshold};
use cdp_twin_core::{BinaryTemplate, Error, GrayImage, Result};
use std::path::Path;

/// Loads the channel model named by the flag or config, or builds the
/// synthetic one; rejects models pointing the wrong way.
pub fn resolve_model(
    cfg: &RunConfig,
    flag: Option<&Path>,
    direction: Direction,
) -> Result<ChannelModel> {
    let path = flag.or(cfg.channel.model_path.as_deref());
    let model = match path {
        Some(p) => ChannelModel::load(p)?,
        None => synthetic_channel(direction, cfg.template.scale, &cfg.channel.params())?,
    };
    if model.direction != direction {
        return Err(Error::usage(format!(
            "model direction is {}, command needs {}",
            model.direction.as_str(),
            direction.as_str()
        )));
    }
    Ok(model)
}

/// Binarizes a continuous template estimate per the metrics config.
pub fn binarize_estimate(cfg: &RunConfig, img: &GrayImage) -> Result<BinaryTemplate> {
    let threshold = match cfg.metrics.binarization {
        Binarization::Otsu => otsu_threshold(img, cfg.metrics.otsu_bins)?.value,
        Binarization::Fixed => cfg.metrics.fixed_threshold,
    };
    Ok(binarize(img, threshold))
}
