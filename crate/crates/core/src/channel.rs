//! The pattern-conditioned stochastic printing-imaging channel: a lookup
//! table over 3×3 binary neighborhoods driving a clipped-Gaussian sampling
//! law, fittable from (template, image) pairs in both directions.

use crate::error::{Error, Result};
use crate::imaging::{block_mean_downscale, BinaryTemplate, GrayImage, RealizationStack};
use crate::metrics::otsu_binarize;
use crate::rng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Number of distinct 3×3 binary neighborhoods.
pub const PATTERN_COUNT: usize = 512;

/// A 3×3 binary neighborhood, flattened row-major with the top-left pixel
/// as the most significant bit (center bit = 2⁴ = 16).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatternId(u16);

impl PatternId {
    pub fn new(value: u16) -> Result<Self> {
        if (value as usize) < PATTERN_COUNT {
            Ok(Self(value))
        } else {
            Err(Error::parameter(format!(
                "pattern id {value} outside [0, 511]"
            )))
        }
    }

    pub fn value(self) -> u16 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// The neighborhood's central bit (weight 2⁴).
    pub fn center_bit(self) -> u8 {
        ((self.0 >> 4) & 1) as u8
    }

    /// Fraction of the 8 neighbors that differ from the central bit.
    pub fn discord(self) -> f64 {
        let c = self.center_bit();
        let mut differing = 0u32;
        for i in 0..9 {
            if i == 4 {
                continue;
            }
            let bit = ((self.0 >> (8 - i)) & 1) as u8;
            if bit != c {
                differing += 1;
            }
        }
        differing as f64 / 8.0
    }
}

/// Pattern of the 3×3 neighborhood around (row, col). Border coordinates
/// have no full neighborhood and are rejected.
pub fn extract_pattern(t: &BinaryTemplate, row: usize, col: usize) -> Result<PatternId> {
    if row == 0 || col == 0 || row + 1 >= t.height() || col + 1 >= t.width() {
        return Err(Error::parameter(format!(
            "({row}, {col}) lacks a full 3x3 neighborhood in {}x{}",
            t.width(),
            t.height()
        )));
    }
    let mut value = 0u16;
    for dr in 0..3 {
        for dc in 0..3 {
            value = (value << 1) | t.bit(row + dr - 1, col + dc - 1) as u16;
        }
    }
    Ok(PatternId(value))
}

/// Per-pattern channel statistics. `count == 0` marks a pattern never seen
/// during fitting; samplers then fall back to the model's global statistics.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PatternEntry {
    pub pattern: u16,
    pub count: u64,
    pub mean: f64,
    pub std: f64,
    pub flip_prob: f64,
}

/// The full 512-entry statistics table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(transparent)]
pub struct PatternTable {
    entries: Vec<PatternEntry>,
}

impl PatternTable {
    pub fn empty() -> Self {
        Self {
            entries: (0..PATTERN_COUNT)
                .map(|i| PatternEntry {
                    pattern: i as u16,
                    count: 0,
                    mean: 0.0,
                    std: 0.0,
                    flip_prob: 0.0,
                })
                .collect(),
        }
    }

    pub fn from_entries(entries: Vec<PatternEntry>) -> Result<Self> {
        if entries.len() != PATTERN_COUNT {
            return Err(Error::parameter(format!(
                "pattern table has {} entries, expected {PATTERN_COUNT}",
                entries.len()
            )));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.pattern as usize != i {
                return Err(Error::parameter(format!(
                    "entry {i} carries pattern id {}",
                    e.pattern
                )));
            }
            if !(e.std >= 0.0) || !e.std.is_finite() {
                return Err(Error::parameter(format!("pattern {i}: std {} invalid", e.std)));
            }
            if !(0.0..=1.0).contains(&e.flip_prob) {
                return Err(Error::parameter(format!(
                    "pattern {i}: flip_prob {} outside [0, 1]",
                    e.flip_prob
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entry(&self, p: PatternId) -> &PatternEntry {
        &self.entries[p.index()]
    }

    pub fn entries(&self) -> &[PatternEntry] {
        &self.entries
    }

    pub fn observed(&self) -> usize {
        self.entries.iter().filter(|e| e.count > 0).count()
    }

    pub fn total_count(&self) -> u64 {
        self.entries.iter().map(|e| e.count).sum()
    }

    /// Count-weighted average of per-pattern flip probabilities.
    pub fn average_flip_rate(&self) -> f64 {
        let total = self.total_count();
        if total == 0 {
            return 0.0;
        }
        self.entries
            .iter()
            .map(|e| e.count as f64 * e.flip_prob)
            .sum::<f64>()
            / total as f64
    }

    /// CSV dump, one row per pattern.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pattern,count,mean,std,flip_prob\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.pattern, e.count, e.mean, e.std, e.flip_prob
            );
        }
        out
    }
}

/// Streaming per-pattern accumulator (Welford mean/variance plus flip
/// counting). Shared by channel fitting and the analysis statistics.
#[derive(Debug, Clone)]
pub(crate) struct PatternAccumulator {
    count: Vec<u64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
    flips: Vec<u64>,
}

impl PatternAccumulator {
    pub fn new() -> Self {
        Self {
            count: vec![0; PATTERN_COUNT],
            mean: vec![0.0; PATTERN_COUNT],
            m2: vec![0.0; PATTERN_COUNT],
            flips: vec![0; PATTERN_COUNT],
        }
    }

    pub fn push(&mut self, p: PatternId, value: f64, flipped: bool) {
        let i = p.index();
        self.count[i] += 1;
        let delta = value - self.mean[i];
        self.mean[i] += delta / self.count[i] as f64;
        self.m2[i] += delta * (value - self.mean[i]);
        if flipped {
            self.flips[i] += 1;
        }
    }

    /// Finish into a table with population standard deviations.
    pub fn into_table(self) -> PatternTable {
        let entries = (0..PATTERN_COUNT)
            .map(|i| {
                let n = self.count[i];
                PatternEntry {
                    pattern: i as u16,
                    count: n,
                    mean: if n > 0 { self.mean[i] } else { 0.0 },
                    std: if n > 0 {
                        (self.m2[i] / n as f64).max(0.0).sqrt()
                    } else {
                        0.0
                    },
                    flip_prob: if n > 0 {
                        self.flips[i] as f64 / n as f64
                    } else {
                        0.0
                    },
                }
            })
            .collect();
        PatternTable { entries }
    }
}

/// Channel orientation: printing (z→x) or template estimation (x→z̃).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Print,
    Estimate,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Print => "print",
            Direction::Estimate => "estimate",
        }
    }
}

/// The only sampling law currently implemented; kept explicit in the model
/// file so it can be swapped later.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum SamplingLaw {
    #[serde(rename = "gaussian-clipped")]
    GaussianClipped,
}

/// Neighborhood encoding marker stored in model files.
pub const PATTERN_ORDER: &str = "row-major-msb-first";

fn check_scale(scale: usize) -> Result<()> {
    if scale == 1 || scale == 3 {
        Ok(())
    } else {
        Err(Error::parameter(format!("scale {scale} not in {{1, 3}}")))
    }
}

/// The fitted (or synthesized) stochastic channel.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ChannelModel {
    pub direction: Direction,
    pub scale: usize,
    pub sampling_law: SamplingLaw,
    pattern_order: String,
    pub global_mean: f64,
    pub global_std: f64,
    table: PatternTable,
}

impl ChannelModel {
    pub fn new(
        direction: Direction,
        scale: usize,
        table: PatternTable,
        global_mean: f64,
        global_std: f64,
    ) -> Result<Self> {
        check_scale(scale)?;
        if !(0.0..=1.0).contains(&global_mean) || !(global_std >= 0.0) {
            return Err(Error::parameter(format!(
                "global statistics ({global_mean}, {global_std}) invalid"
            )));
        }
        Ok(Self {
            direction,
            scale,
            sampling_law: SamplingLaw::GaussianClipped,
            pattern_order: PATTERN_ORDER.to_string(),
            global_mean,
            global_std,
            table,
        })
    }

    pub fn table(&self) -> &PatternTable {
        &self.table
    }

    /// (mean, std) for a conditioning pattern; `None` (border) and
    /// unobserved patterns use the global fallback.
    pub fn params_for(&self, pattern: Option<PatternId>) -> (f64, f64) {
        match pattern {
            Some(p) => {
                let e = self.table.entry(p);
                if e.count > 0 {
                    (e.mean, e.std)
                } else {
                    (self.global_mean, self.global_std)
                }
            }
            None => (self.global_mean, self.global_std),
        }
    }

    fn sample_conditioned(
        &self,
        cond: &BinaryTemplate,
        block: usize,
        k: usize,
        seed: u64,
        tag: &str,
    ) -> Result<RealizationStack> {
        if k == 0 {
            return Err(Error::parameter("realization count must be at least 1"));
        }
        let (w, h) = (cond.width() * block, cond.height() * block);
        let mut images = Vec::with_capacity(k);
        for j in 0..k {
            let mut r = rng::stream(seed, tag, j as u64);
            let mut pixels = vec![0.0f64; w * h];
            for row in 0..cond.height() {
                for col in 0..cond.width() {
                    let pattern = extract_pattern(cond, row, col).ok();
                    let (mu, sigma) = self.params_for(pattern);
                    for dr in 0..block {
                        for dc in 0..block {
                            let n: f64 = r.sample(StandardNormal);
                            pixels[(row * block + dr) * w + col * block + dc] =
                                (mu + sigma * n).clamp(0.0, 1.0);
                        }
                    }
                }
            }
            images.push(GrayImage::new(w, h, pixels)?);
        }
        RealizationStack::new(images)
    }

    /// Draw `k` printed-CDP realizations for a template. Every output pixel
    /// of a template pixel's s×s block samples that pixel's pattern
    /// statistics independently; streams are keyed by realization index.
    pub fn simulate_print(
        &self,
        t: &BinaryTemplate,
        k: usize,
        seed: u64,
    ) -> Result<RealizationStack> {
        if self.direction != Direction::Print {
            return Err(Error::usage(
                "simulate_print requires a print-direction model",
            ));
        }
        self.sample_conditioned(t, self.scale, k, seed, "channel/print")
    }

    /// Draw `k` continuous template estimates for a printed image. The image
    /// is block-mean reduced to template resolution, Otsu-binarized for
    /// pattern conditioning, then sampled per pattern. Binarization of the
    /// resulting z̃ values is left to the caller.
    pub fn estimate_template(
        &self,
        x: &GrayImage,
        k: usize,
        seed: u64,
    ) -> Result<RealizationStack> {
        if self.direction != Direction::Estimate {
            return Err(Error::usage(
                "estimate_template requires an estimate-direction model",
            ));
        }
        let down = block_mean_downscale(x, self.scale)?;
        let (cond, _) = otsu_binarize(&down)?;
        self.sample_conditioned(&cond, 1, k, seed, "channel/estimate")
    }
}

fn check_pair_geometry(z: &BinaryTemplate, x: &GrayImage, scale: usize) -> Result<()> {
    if x.width() != z.width() * scale || x.height() != z.height() * scale {
        return Err(Error::parameter(format!(
            "image {}x{} does not match template {}x{} at scale {scale}",
            x.width(),
            x.height(),
            z.width(),
            z.height()
        )));
    }
    Ok(())
}

/// Walk one pair's interior central observations:
/// `f(pattern, observed_value, flipped)`.
///
/// Print direction: patterns come from the template, the observation is the
/// center pixel of each s×s output block, and a flip means the Otsu-binarized
/// center disagrees with the template bit.
///
/// Estimate direction: patterns come from the Otsu-binarized block-mean of
/// the image (all that is available at inference time), the observation is
/// the true template bit, and a flip means that bit disagrees with the
/// conditioning pattern's center.
pub fn visit_central_observations(
    z: &BinaryTemplate,
    x: &GrayImage,
    direction: Direction,
    scale: usize,
    mut f: impl FnMut(PatternId, f64, bool),
) -> Result<()> {
    check_scale(scale)?;
    check_pair_geometry(z, x, scale)?;
    let half = scale / 2;
    match direction {
        Direction::Print => {
            let (bin, _) = otsu_binarize(x)?;
            for row in 1..z.height() - 1 {
                for col in 1..z.width() - 1 {
                    let p = extract_pattern(z, row, col).expect("interior");
                    let center = (row * scale + half, col * scale + half);
                    let value = x.get(center.0, center.1);
                    let flipped = bin.bit(center.0, center.1) != z.bit(row, col);
                    f(p, value, flipped);
                }
            }
        }
        Direction::Estimate => {
            let down = block_mean_downscale(x, scale)?;
            let (cond, _) = otsu_binarize(&down)?;
            for row in 1..cond.height() - 1 {
                for col in 1..cond.width() - 1 {
                    let p = extract_pattern(&cond, row, col).expect("interior");
                    let value = z.bit(row, col) as f64;
                    let flipped = z.bit(row, col) != p.center_bit();
                    f(p, value, flipped);
                }
            }
        }
    }
    Ok(())
}

/// Fit the channel table from (template, image) pairs. Per pattern, mean and
/// population std of the central observations; flip probabilities from
/// Otsu-binarized outputs. Border pixels are excluded; the global fallback is
/// the count-weighted mean of per-pattern means and stds (so a noiseless
/// channel stays noiseless at the border).
pub fn fit_channel(
    pairs: &[(BinaryTemplate, GrayImage)],
    direction: Direction,
    scale: usize,
) -> Result<ChannelModel> {
    if pairs.is_empty() {
        return Err(Error::parameter("fit_channel needs at least one pair"));
    }
    let mut acc = PatternAccumulator::new();
    for (z, x) in pairs {
        visit_central_observations(z, x, direction, scale, |p, v, flip| {
            acc.push(p, v, flip);
        })?;
    }
    let table = acc.into_table();
    let total = table.total_count();
    if total == 0 {
        return Err(Error::parameter(
            "no interior observations; templates must be at least 3x3",
        ));
    }
    let global_mean = table
        .entries()
        .iter()
        .map(|e| e.count as f64 * e.mean)
        .sum::<f64>()
        / total as f64;
    let global_std = table
        .entries()
        .iter()
        .map(|e| e.count as f64 * e.std)
        .sum::<f64>()
        / total as f64;
    ChannelModel::new(direction, scale, table, global_mean.clamp(0.0, 1.0), global_std)
}

/// Parameters of the closed-form synthetic channel used as ground truth.
///
/// The printed value of a pixel with pattern ω (center bit c, discord d =
/// fraction of neighbors differing from c) is drawn from
/// N(μ, σ²) clipped to [0, 1] with
/// μ = clamp(0.5 + (2c−1)·(contrast − dot_gain·d), 0.02, 0.98) and
/// σ = noise_floor + noise_gain·d: isolated pixels bleed toward mid-gray and
/// busy neighborhoods are noisier, the signature of dot gain.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct SyntheticChannelParams {
    pub contrast: f64,
    pub dot_gain: f64,
    pub noise_floor: f64,
    pub noise_gain: f64,
}

impl Default for SyntheticChannelParams {
    fn default() -> Self {
        Self {
            contrast: 0.4,
            dot_gain: 0.25,
            noise_floor: 0.02,
            noise_gain: 0.1,
        }
    }
}

impl SyntheticChannelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.contrast.is_finite()
            && self.contrast > 0.0
            && self.contrast <= 0.5
            && self.dot_gain.is_finite()
            && self.dot_gain >= 0.0
            && self.noise_floor.is_finite()
            && self.noise_floor >= 0.0
            && self.noise_gain.is_finite()
            && self.noise_gain >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::parameter(format!("invalid channel parameters {self:?}")))
        }
    }

    pub fn mean_for(&self, p: PatternId) -> f64 {
        let c = p.center_bit() as f64;
        let d = p.discord();
        (0.5 + (2.0 * c - 1.0) * (self.contrast - self.dot_gain * d)).clamp(0.02, 0.98)
    }

    pub fn std_for(&self, p: PatternId) -> f64 {
        self.noise_floor + self.noise_gain * p.discord()
    }
}

/// Standard normal CDF via the Abramowitz–Stegun erf polynomial
/// (7.1.26, |error| < 1.5e-7). Plenty for analytic flip probabilities.
fn normal_cdf(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * z.abs());
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf_abs = 1.0 - poly * (-z * z).exp();
    let erf = if z < 0.0 { -erf_abs } else { erf_abs };
    0.5 * (1.0 + erf)
}

/// Build a fully specified synthetic channel. All patterns are marked
/// observed (count 1) and flip probabilities are the analytic
/// probability of crossing 0.5 under the clipped-Gaussian law.
pub fn synthetic_channel(
    direction: Direction,
    scale: usize,
    params: &SyntheticChannelParams,
) -> Result<ChannelModel> {
    params.validate()?;
    check_scale(scale)?;
    let entries = (0..PATTERN_COUNT)
        .map(|i| {
            let p = PatternId(i as u16);
            let mu = params.mean_for(p);
            let sigma = params.std_for(p);
            let below_half = if sigma > 0.0 {
                normal_cdf((0.5 - mu) / sigma)
            } else if mu < 0.5 {
                1.0
            } else {
                0.0
            };
            let flip_prob = if p.center_bit() == 1 {
                below_half
            } else {
                1.0 - below_half
            };
            PatternEntry {
                pattern: i as u16,
                count: 1,
                mean: mu,
                std: sigma,
                flip_prob: flip_prob.clamp(0.0, 1.0),
            }
        })
        .collect::<Vec<_>>();
    let global_mean = entries.iter().map(|e| e.mean).sum::<f64>() / PATTERN_COUNT as f64;
    let global_std = entries.iter().map(|e| e.std).sum::<f64>() / PATTERN_COUNT as f64;
    ChannelModel::new(
        direction,
        scale,
        PatternTable::from_entries(entries)?,
        global_mean,
        global_std,
    )
}

fn push_f64(out: &mut String, v: f64) {
    // 17 significant digits: enough to reparse every f64 exactly
    let _ = write!(out, "{v:.16e}");
}

impl ChannelModel {
    /// Serialize with fixed field order and 17-significant-digit floats.
    pub fn to_json(&self) -> String {
        let mut out = String::with_capacity(64 * 1024);
        out.push_str("{\n");
        let _ = writeln!(out, "  \"direction\": \"{}\",", self.direction.as_str());
        let _ = writeln!(out, "  \"scale\": {},", self.scale);
        out.push_str("  \"sampling_law\": \"gaussian-clipped\",\n");
        let _ = writeln!(out, "  \"pattern_order\": \"{PATTERN_ORDER}\",");
        out.push_str("  \"global_mean\": ");
        push_f64(&mut out, self.global_mean);
        out.push_str(",\n  \"global_std\": ");
        push_f64(&mut out, self.global_std);
        out.push_str(",\n  \"table\": [\n");
        for (i, e) in self.table.entries().iter().enumerate() {
            let _ = write!(out, "    {{\"pattern\": {}, \"count\": {}, ", e.pattern, e.count);
            out.push_str("\"mean\": ");
            push_f64(&mut out, e.mean);
            out.push_str(", \"std\": ");
            push_f64(&mut out, e.std);
            out.push_str(", \"flip_prob\": ");
            push_f64(&mut out, e.flip_prob);
            out.push_str(if i + 1 < PATTERN_COUNT { "},\n" } else { "}\n" });
        }
        out.push_str("  ]\n}\n");
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ChannelModel = serde_json::from_str(text)
            .map_err(|e| Error::format(json_offset(text, &e), e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        check_scale(self.scale)?;
        if self.pattern_order != PATTERN_ORDER {
            return Err(Error::parameter(format!(
                "unsupported pattern order {:?}",
                self.pattern_order
            )));
        }
        PatternTable::from_entries(self.table.entries.clone())?;
        if !(0.0..=1.0).contains(&self.global_mean) || !(self.global_std >= 0.0) {
            return Err(Error::parameter("invalid global statistics"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Byte offset of a serde_json error location within `text`.
pub fn json_offset(text: &str, err: &serde_json::Error) -> usize {
    let (line, col) = (err.line(), err.column());
    if line == 0 {
        return 0;
    }
    let mut offset = 0usize;
    for (i, l) in text.split('\n').enumerate() {
        if i + 1 == line {
            return offset + col.saturating_sub(1).min(l.len());
        }
        offset += l.len() + 1;
    }
    text.len()
}
