//! `gen`: random binary templates plus a manifest.

use crate::config::RunConfig;
use crate::ioutil::{atomic_write, ensure_dir, template_id, template_to_gray, write_config_copy};
use cdp_twin_core::imaging::generate_template;
use cdp_twin_core::pgm::{encode_pgm, PgmDepth};
use cdp_twin_core::{rng, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub density: f64,
    pub count: usize,
    pub ids: Vec<String>,
}

pub fn run(cfg: &RunConfig, count: usize, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let t = &cfg.template;
    let mut ids = Vec::with_capacity(count);
    for i in 0..count {
        let id = template_id(i);
        let seed = rng::derive_seed(cfg.seed, "cli/gen", i as u64);
        let z = generate_template(t.width, t.height, t.density, seed)?;
        let img = template_to_gray(&z);
        atomic_write(
            &out.join(format!("{id}.pgm")),
            &encode_pgm(&img, PgmDepth::Eight),
        )?;
        ids.push(id);
    }
    let manifest = Manifest {
        seed: cfg.seed,
        width: t.width,
        height: t.height,
        density: t.density,
        count,
        ids,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    atomic_write(&out.join("manifest.json"), text.as_bytes())?;
    write_config_copy(out, cfg)?;
    println!("wrote {count} templates to {}", out.display());
    Ok(())
}
