//! Variability analysis over realization stacks: per-pixel std maps,
//! per-pattern statistics, aggregation operators, k-sweeps, and an exact
//! Wilcoxon signed-rank test for paired score comparisons.

use crate::channel::{self, PatternTable};
use crate::error::{Error, Result};
use crate::imaging::{BinaryTemplate, GrayImage, RealizationStack};
use crate::metrics::{hamming, mse, otsu_binarize, ssim};
use crate::pgm::{encode_pgm, PgmDepth};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Per-pixel population standard deviation across a stack. Values are raw
/// (not normalized); rendering to PGM records the min/max used.
#[derive(Debug, Clone, PartialEq)]
pub struct StdMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

/// Normalization sidecar stored next to a rendered std map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdMapScale {
    pub min: f64,
    pub max: f64,
}

impl StdMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Render min..max onto the full 16-bit PGM range. A constant map
    /// renders as all zeros.
    pub fn to_pgm(&self) -> (Vec<u8>, StdMapScale) {
        let (min, max) = (self.min(), self.max());
        let span = max - min;
        let normalized: Vec<f64> = if span > 0.0 {
            self.values.iter().map(|v| (v - min) / span).collect()
        } else {
            vec![0.0; self.values.len()]
        };
        let img = GrayImage::new(self.width, self.height, normalized)
            .expect("normalized values are in [0, 1]");
        (encode_pgm(&img, PgmDepth::Sixteen), StdMapScale { min, max })
    }
}

/// Per-pixel population std over k >= 2 realizations.
pub fn std_map(stack: &RealizationStack) -> Result<StdMap> {
    let k = stack.k();
    if k < 2 {
        return Err(Error::parameter(format!(
            "std map needs at least 2 realizations, got {k}"
        )));
    }
    let (w, h) = (stack.width(), stack.height());
    let n = w * h;
    // Welford keeps a stack of identical images at exactly zero spread
    let mut mean = vec![0.0f64; n];
    let mut m2 = vec![0.0f64; n];
    for (j, img) in stack.images().iter().enumerate() {
        let count = (j + 1) as f64;
        for ((m, acc), p) in mean.iter_mut().zip(&mut m2).zip(img.pixels()) {
            let delta = p - *m;
            *m += delta / count;
            *acc += delta * (p - *m);
        }
    }
    let values = m2.into_iter().map(|v| (v / k as f64).sqrt()).collect();
    Ok(StdMap {
        width: w,
        height: h,
        values,
    })
}

/// Per-pattern statistics of a stack against its source template: counts,
/// central-pixel means and stds, and Otsu bit-flip rates, indexed by the
/// template's own 3x3 patterns.
pub fn pattern_statistics(
    template: &BinaryTemplate,
    stack: &RealizationStack,
    scale: usize,
) -> Result<PatternTable> {
    let mut agg = PatternAggregator::new(scale)?;
    for x in stack.images() {
        agg.push_pair(template, x)?;
    }
    Ok(agg.finish())
}

/// Streaming collector behind [`pattern_statistics`], for callers that walk
/// many template/print pairs without materializing stacks.
#[derive(Debug, Clone)]
pub struct PatternAggregator {
    scale: usize,
    acc: channel::PatternAccumulator,
}

impl PatternAggregator {
    pub fn new(scale: usize) -> Result<Self> {
        if scale != 1 && scale != 3 {
            return Err(Error::parameter(format!(
                "unsupported scale {scale}; expected 1 or 3"
            )));
        }
        Ok(Self {
            scale,
            acc: channel::PatternAccumulator::new(),
        })
    }

    pub fn push_pair(&mut self, template: &BinaryTemplate, print: &GrayImage) -> Result<()> {
        let acc = &mut self.acc;
        channel::visit_central_observations(
            template,
            print,
            channel::Direction::Print,
            self.scale,
            |p, v, flip| acc.push(p, v, flip),
        )
    }

    pub fn finish(self) -> PatternTable {
        self.acc.into_table()
    }
}

/// How a stack is collapsed into a single comparison value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMode {
    /// Per-pixel mean image, scored once.
    Mean,
    /// Per-pixel lower-median image, scored once.
    Median,
    /// Score each realization, then average the scores.
    MeanOfScores,
}

impl AggregationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMode::Mean => "mean",
            AggregationMode::Median => "median",
            AggregationMode::MeanOfScores => "mean-of-scores",
        }
    }
}

/// Collapse a stack into one image. `MeanOfScores` has no image form and is
/// a usage error here.
pub fn aggregate(stack: &RealizationStack, mode: AggregationMode) -> Result<GrayImage> {
    let k = stack.k();
    let (w, h) = (stack.width(), stack.height());
    match mode {
        AggregationMode::Mean => {
            let mut acc = vec![0.0f64; w * h];
            for img in stack.images() {
                for (a, p) in acc.iter_mut().zip(img.pixels()) {
                    *a += p;
                }
            }
            for a in &mut acc {
                *a = (*a / k as f64).clamp(0.0, 1.0);
            }
            GrayImage::new(w, h, acc)
        }
        AggregationMode::Median => {
            let mut acc = vec![0.0f64; w * h];
            let mut column = vec![0.0f64; k];
            for i in 0..w * h {
                for (j, img) in stack.images().iter().enumerate() {
                    column[j] = img.pixels()[i];
                }
                column.sort_by(f64::total_cmp);
                acc[i] = column[(k - 1) / 2];
            }
            GrayImage::new(w, h, acc)
        }
        AggregationMode::MeanOfScores => Err(Error::usage(
            "mean-of-scores aggregates scores, not pixels; use mean_of_scores",
        )),
    }
}

/// Scalar fidelity score between a reference image and a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMetric {
    Mse,
    Ssim,
    /// Bit disagreement rate after Otsu binarization of both sides.
    HammingOtsu,
}

impl ScoreMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMetric::Mse => "mse",
            ScoreMetric::Ssim => "ssim",
            ScoreMetric::HammingOtsu => "hamming-otsu",
        }
    }
}

/// Score a candidate against the reference.
pub fn score(reference: &GrayImage, candidate: &GrayImage, metric: ScoreMetric) -> Result<f64> {
    match metric {
        ScoreMetric::Mse => mse(reference, candidate),
        ScoreMetric::Ssim => ssim(reference, candidate),
        ScoreMetric::HammingOtsu => {
            let (a, _) = otsu_binarize(reference)?;
            let (b, _) = otsu_binarize(candidate)?;
            hamming(&a, &b)
        }
    }
}

/// Mean of per-realization scores against the reference.
pub fn mean_of_scores(
    stack: &RealizationStack,
    reference: &GrayImage,
    metric: ScoreMetric,
) -> Result<f64> {
    let mut total = 0.0;
    for img in stack.images() {
        total += score(reference, img, metric)?;
    }
    Ok(total / stack.k() as f64)
}

/// Evaluate one (k, mode) cell of a sweep.
pub fn aggregate_score(
    stack: &RealizationStack,
    reference: &GrayImage,
    mode: AggregationMode,
    metric: ScoreMetric,
) -> Result<f64> {
    match mode {
        AggregationMode::MeanOfScores => mean_of_scores(stack, reference, metric),
        _ => score(reference, &aggregate(stack, mode)?, metric),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KSweepRow {
    pub k: usize,
    pub mode: AggregationMode,
    pub metric: ScoreMetric,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KSweepCurve {
    pub rows: Vec<KSweepRow>,
}

impl KSweepCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,mode,metric,score\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.16e}",
                r.k,
                r.mode.as_str(),
                r.metric.as_str(),
                r.score
            );
        }
        out
    }
}

/// Sweep aggregation quality over prefixes of the stack. `ks` must be
/// strictly increasing and within the stack size, so every k reuses the
/// first realizations of the same fixed stack.
pub fn k_sweep(
    stack: &RealizationStack,
    reference: &GrayImage,
    ks: &[usize],
    modes: &[AggregationMode],
    metrics: &[ScoreMetric],
) -> Result<KSweepCurve> {
    if ks.is_empty() || modes.is_empty() || metrics.is_empty() {
        return Err(Error::parameter("k sweep needs ks, modes, and metrics"));
    }
    if !ks.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::parameter("ks must be strictly increasing"));
    }
    let mut rows = Vec::with_capacity(ks.len() * modes.len() * metrics.len());
    for &k in ks {
        let prefix = stack.prefix(k)?;
        for &mode in modes {
            for &metric in metrics {
                rows.push(KSweepRow {
                    k,
                    mode,
                    metric,
                    score: aggregate_score(&prefix, reference, mode, metric)?,
                });
            }
        }
    }
    Ok(KSweepCurve { rows })
}

/// Exact one-sided Wilcoxon signed-rank result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Pairs remaining after zero differences are dropped.
    pub n: usize,
    /// Sum of the ranks of positive differences (midranks under ties).
    pub w_plus: f64,
    /// Exact P(W+ <= observed) under the null of symmetric differences.
    pub p_value: f64,
}

/// Exact signed-rank test via the subset-sum distribution of doubled
/// midranks (doubling keeps tied midranks integral). Zero differences are
/// dropped; with nothing left the p-value is 1.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<WilcoxonResult> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::parameter("differences must be finite"));
    }
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            n: 0,
            w_plus: 0.0,
            p_value: 1.0,
        });
    }
    if n > 1024 {
        return Err(Error::parameter(format!(
            "exact test limited to 1024 pairs, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| nonzero[a].abs().total_cmp(&nonzero[b].abs()));
    // doubled midrank of a tie group spanning 1-based sorted positions
    // i..=j is exactly i + j
    let mut rank2 = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nonzero[order[j + 1]].abs() == nonzero[order[i]].abs() {
            j += 1;
        }
        let doubled = (i + 1 + j + 1) as u64;
        for &idx in &order[i..=j] {
            rank2[idx] = doubled;
        }
        i = j + 1;
    }
    let w2_obs: u64 = (0..n).filter(|&i| nonzero[i] > 0.0).map(|i| rank2[i]).sum();
    let total: u64 = rank2.iter().sum();
    // subset-sum counts of Π(1 + x^{r_i}) over doubled ranks
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in &rank2 {
        let r = r as usize;
        reach += r;
        for s in (0..=reach - r).rev() {
            if counts[s] > 0.0 {
                counts[s + r] += counts[s];
            }
        }
    }
    let at_most: f64 = counts[..=w2_obs as usize].iter().sum();
    let p_value = at_most / 2.0f64.powi(n as i32);
    Ok(WilcoxonResult {
        n,
        w_plus: w2_obs as f64 / 2.0,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthetic_channel, Direction, PatternId, SyntheticChannelParams};
    use crate::imaging::generate_template;
    use crate::pgm::parse_pgm;
    use crate::rng;
    use rand::Rng;

    fn stack_of(rows: &[&[f64]]) -> RealizationStack {
        RealizationStack::new(
            rows.iter()
                .map(|r| GrayImage::new(r.len(), 1, r.to_vec()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn std_map_two_point_and_identical() {
        let s = stack_of(&[&[0.0, 0.2], &[1.0, 0.2]]);
        let m = std_map(&s).unwrap();
        assert_eq!(m.get(0, 0), 0.5);
        assert_eq!(m.get(0, 1), 0.0);
        let same = stack_of(&[&[0.3, 0.7], &[0.3, 0.7], &[0.3, 0.7]]);
        let m2 = std_map(&same).unwrap();
        assert!(m2.values().iter().all(|v| *v == 0.0));
        let single = stack_of(&[&[0.1]]);
        assert!(std_map(&single).is_err());
    }

    #[test]
    fn std_map_matches_channel_sigma_in_interior() {
        let params = SyntheticChannelParams {
            contrast: 0.3,
            dot_gain: 0.1,
            noise_floor: 0.04,
            noise_gain: 0.06,
        };
        let model = synthetic_channel(Direction::Print, 1, &params).unwrap();
        let z = generate_template(20, 20, 0.5, 11).unwrap();
        let stack = model.simulate_print(&z, 1000, 12).unwrap();
        let m = std_map(&stack).unwrap();
        let mut checked = 0;
        for row in 1..19 {
            for col in 1..19 {
                let p = channel::extract_pattern(&z, row, col).unwrap();
                let (_, sigma) = model.params_for(Some(p));
                let got = m.get(row, col);
                assert!(
                    (got - sigma).abs() < 0.1 * sigma,
                    "({row},{col}): {got} vs {sigma}"
                );
                checked += 1;
            }
        }
        assert_eq!(checked, 18 * 18);
    }

    #[test]
    fn std_map_pgm_round_trip_and_scale() {
        let s = stack_of(&[&[0.0, 0.2, 0.5], &[1.0, 0.2, 0.3]]);
        let m = std_map(&s).unwrap();
        let (bytes, scale) = m.to_pgm();
        assert_eq!(scale.min, 0.0);
        assert_eq!(scale.max, 0.5);
        let img = parse_pgm(&bytes).unwrap();
        for (p, v) in img.pixels().iter().zip(m.values()) {
            let back = scale.min + p * (scale.max - scale.min);
            assert!((back - v).abs() < 0.5 / 65535.0);
        }
        // constant map renders as zeros
        let flat = std_map(&stack_of(&[&[0.5, 0.5], &[0.5, 0.5]])).unwrap();
        let (bytes, scale) = flat.to_pgm();
        assert_eq!(scale.min, scale.max);
        let img = parse_pgm(&bytes).unwrap();
        assert!(img.pixels().iter().all(|p| *p == 0.0));
    }

    #[test]
    fn pattern_statistics_on_noiseless_channel() {
        let params = SyntheticChannelParams {
            contrast: 0.4,
            dot_gain: 0.2,
            noise_floor: 0.0,
            noise_gain: 0.0,
        };
        let model = synthetic_channel(Direction::Print, 1, &params).unwrap();
        let z = generate_template(16, 16, 0.5, 21).unwrap();
        let stack = model.simulate_print(&z, 4, 22).unwrap();
        let table = pattern_statistics(&z, &stack, 1).unwrap();
        assert_eq!(table.total_count(), 4 * 14 * 14);
        for e in table.entries().iter().filter(|e| e.count > 0) {
            assert_eq!(e.std, 0.0);
            let p = PatternId::new(e.pattern).unwrap();
            let (mu, _) = model.params_for(Some(p));
            assert!((e.mean - mu).abs() < 1e-12);
            assert_eq!(e.flip_prob, 0.0, "pattern {}", e.pattern);
        }
    }

    #[test]
    fn aggregate_mean_and_median() {
        let s = stack_of(&[&[0.0, 0.25], &[0.5, 0.25], &[1.0, 0.25]]);
        let mean = aggregate(&s, AggregationMode::Mean).unwrap();
        assert!((mean.get(0, 0) - 0.5).abs() < 1e-15);
        assert_eq!(mean.get(0, 1), 0.25);
        let median = aggregate(&s, AggregationMode::Median).unwrap();
        assert_eq!(median.get(0, 0), 0.5);
        // lower median on even k
        let even = stack_of(&[&[0.0], &[1.0]]);
        assert_eq!(
            aggregate(&even, AggregationMode::Median).unwrap().get(0, 0),
            0.0
        );
        assert!(aggregate(&s, AggregationMode::MeanOfScores).is_err());
    }

    #[test]
    fn k1_aggregation_is_identity() {
        let mut r = rng::stream(31, "test/analysis", 0);
        let img = GrayImage::new(6, 6, (0..36).map(|_| r.random::<f64>()).collect()).unwrap();
        let s = RealizationStack::new(vec![img.clone()]).unwrap();
        assert_eq!(aggregate(&s, AggregationMode::Mean).unwrap(), img);
        assert_eq!(aggregate(&s, AggregationMode::Median).unwrap(), img);
        let m = mean_of_scores(&s, &img, ScoreMetric::Mse).unwrap();
        assert_eq!(m, 0.0);
    }

    #[test]
    fn mean_of_scores_dominates_score_of_mean_for_mse() {
        // Jensen: MSE(ref, mean image) <= mean of per-image MSEs
        let mut r = rng::stream(41, "test/analysis", 1);
        let reference =
            GrayImage::new(8, 8, (0..64).map(|_| r.random::<f64>()).collect()).unwrap();
        let stack = RealizationStack::new(
            (0..7)
                .map(|_| {
                    GrayImage::new(8, 8, (0..64).map(|_| r.random::<f64>()).collect()).unwrap()
                })
                .collect(),
        )
        .unwrap();
        let of_mean = aggregate_score(
            &stack,
            &reference,
            AggregationMode::Mean,
            ScoreMetric::Mse,
        )
        .unwrap();
        let of_scores = aggregate_score(
            &stack,
            &reference,
            AggregationMode::MeanOfScores,
            ScoreMetric::Mse,
        )
        .unwrap();
        assert!(of_mean <= of_scores + 1e-15, "{of_mean} vs {of_scores}");
    }

    #[test]
    fn k_sweep_uses_prefixes_and_validates_ks() {
        let s = stack_of(&[&[0.0, 0.0], &[1.0, 1.0], &[1.0, 0.0], &[0.5, 0.5]]);
        let reference = GrayImage::new(2, 1, vec![0.0, 0.0]).unwrap();
        let curve = k_sweep(
            &s,
            &reference,
            &[1, 2, 4],
            &[AggregationMode::Mean],
            &[ScoreMetric::Mse],
        )
        .unwrap();
        assert_eq!(curve.rows.len(), 3);
        assert_eq!(curve.rows[0].score, 0.0); // prefix of 1 equals reference
        let mean2 = mse(
            &reference,
            &aggregate(&s.prefix(2).unwrap(), AggregationMode::Mean).unwrap(),
        )
        .unwrap();
        assert_eq!(curve.rows[1].score, mean2);
        assert!(k_sweep(&s, &reference, &[2, 2], &[AggregationMode::Mean], &[ScoreMetric::Mse])
            .is_err());
        assert!(k_sweep(&s, &reference, &[4, 1], &[AggregationMode::Mean], &[ScoreMetric::Mse])
            .is_err());
        assert!(k_sweep(&s, &reference, &[5], &[AggregationMode::Mean], &[ScoreMetric::Mse])
            .is_err());
        let csv = curve.to_csv();
        assert!(csv.starts_with("k,mode,metric,score\n"));
        assert!(csv.contains("1,mean,mse,"));
    }

    #[test]
    fn wilcoxon_hand_cases() {
        // all negative: W+ = 0, P(W+ <= 0) = 1/2^3
        let r = wilcoxon_signed_rank(&[-1.0, -2.0, -3.0]).unwrap();
        assert_eq!(r.n, 3);
        assert_eq!(r.w_plus, 0.0);
        assert!((r.p_value - 0.125).abs() < 1e-15);

        // ties: |d| = [1, 1, 2] -> doubled midranks [3, 3, 6]; subsets of
        // {3,3,6} with sum <= 6 number 5 of 8
        let r = wilcoxon_signed_rank(&[-1.0, -1.0, 2.0]).unwrap();
        assert_eq!(r.w_plus, 3.0);
        assert!((r.p_value - 5.0 / 8.0).abs() < 1e-15);

        // all positive: maximal W+, p = 1
        let r = wilcoxon_signed_rank(&[0.5, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.w_plus, 10.0);
        assert_eq!(r.p_value, 1.0);

        // zeros dropped entirely
        let r = wilcoxon_signed_rank(&[0.0, 0.0]).unwrap();
        assert_eq!(r.n, 0);
        assert_eq!(r.p_value, 1.0);

        assert!(wilcoxon_signed_rank(&[f64::NAN]).is_err());
    }

    #[test]
    fn wilcoxon_matches_brute_force_enumeration() {
        let mut r = rng::stream(51, "test/analysis", 2);
        for trial in 0..30 {
            let n = 2 + (trial % 8);
            let diffs: Vec<f64> = (0..n)
                .map(|_| {
                    // coarse grid forces frequent ties
                    let mag = (1 + (r.random::<u32>() % 4)) as f64 * 0.25;
                    if r.random::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            let got = wilcoxon_signed_rank(&diffs).unwrap();

            // brute force over all sign assignments with the same midranks
            let mags: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
            let mut rank2 = vec![0u64; n];
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| mags[a].total_cmp(&mags[b]));
            let mut i = 0;
            while i < n {
                let mut j = i;
                while j + 1 < n && mags[order[j + 1]] == mags[order[i]] {
                    j += 1;
                }
                for &idx in &order[i..=j] {
                    rank2[idx] = (i + j + 2) as u64;
                }
                i = j + 1;
            }
            let obs: u64 = (0..n).filter(|&i| diffs[i] > 0.0).map(|i| rank2[i]).sum();
            let mut le = 0u64;
            for mask in 0..(1u32 << n) {
                let w: u64 = (0..n)
                    .filter(|&i| mask & (1 << i) != 0)
                    .map(|i| rank2[i])
                    .sum();
                if w <= obs {
                    le += 1;
                }
            }
            let expected = le as f64 / (1u64 << n) as f64;
            assert_eq!(got.p_value, expected, "diffs {diffs:?}");
        }
    }

    #[test]
    fn hamming_otsu_score_on_binary_images() {
        let a = GrayImage::new(4, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let b = GrayImage::new(4, 1, vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        let s = score(&a, &b, ScoreMetric::HammingOtsu).unwrap();
        assert!((s - 0.25).abs() < 1e-15);
    }
}
