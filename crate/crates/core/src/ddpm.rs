//! Conditional DDPM machinery: noise schedules, forward diffusion, the
//! training loss, ancestral reverse sampling, and a least-squares affine
//! denoiser that stands in for a deep model at desk scale.

use crate::error::{Error, Result};
use crate::imaging::{GrayImage, RealizationStack};
use crate::rng;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// An image-shaped buffer of unclamped reals: diffusion iterates x_t and
/// noise predictions legitimately leave [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::parameter(format!(
                "field buffer length {} does not match {width}x{height}",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Clamp into [0, 1] and convert; the final step of sampling.
    pub fn to_gray_clamped(&self) -> GrayImage {
        GrayImage::new(
            self.width,
            self.height,
            self.values.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
        .expect("clamped values are in range")
    }

    fn standard_normal(width: usize, height: usize, rng: &mut impl Rng) -> Self {
        Self {
            width,
            height,
            values: (0..width * height)
                .map(|_| rng.sample(StandardNormal))
                .collect(),
        }
    }
}

impl From<&GrayImage> for Field {
    fn from(img: &GrayImage) -> Self {
        Field {
            width: img.width(),
            height: img.height(),
            values: img.pixels().to_vec(),
        }
    }
}

/// β_t / α_t / ᾱ_t arrays, 1-based in t.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(Error::parameter(format!(
                "timestep {t} outside 1..={}",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// ᾱ_{t−1} with the ᾱ_0 = 1 convention.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t > 1 {
            self.alpha_bar[t - 2]
        } else {
            1.0
        }
    }
}

/// β_t interpolated linearly from beta_start to beta_end over T steps, both
/// endpoints exact.
pub fn linear_schedule(beta_start: f64, beta_end: f64, t_count: usize) -> Result<NoiseSchedule> {
    if t_count == 0 {
        return Err(Error::parameter("schedule needs at least one step"));
    }
    if !(beta_start.is_finite() && beta_end.is_finite())
        || beta_start <= 0.0
        || beta_end >= 1.0
        || beta_start > beta_end
    {
        return Err(Error::parameter(format!(
            "betas ({beta_start}, {beta_end}) must satisfy 0 < start <= end < 1"
        )));
    }
    let mut beta = Vec::with_capacity(t_count);
    if t_count == 1 {
        beta.push(beta_start);
    } else {
        let step = (beta_end - beta_start) / (t_count - 1) as f64;
        for t in 0..t_count {
            beta.push(beta_start + step * t as f64);
        }
        beta[0] = beta_start;
        beta[t_count - 1] = beta_end;
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_count);
    let mut acc = 1.0;
    for &a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
    })
}

/// x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε, not clamped.
pub fn forward_sample(x0: &Field, t: usize, eps: &Field, sched: &NoiseSchedule) -> Result<Field> {
    sched.check_t(t)?;
    if !x0.same_shape(eps) {
        return Err(Error::parameter(format!(
            "noise {}x{} does not match image {}x{}",
            eps.width, eps.height, x0.width, x0.height
        )));
    }
    let ab = sched.alpha_bar(t);
    let (ca, ce) = (ab.sqrt(), (1.0 - ab).sqrt());
    let values = x0
        .values
        .iter()
        .zip(&eps.values)
        .map(|(x, e)| ca * x + ce * e)
        .collect();
    Field::new(x0.width, x0.height, values)
}

/// A noise predictor: given x_t and the conditioning image, estimate ε.
/// Implementations must return a field of the same dimensions.
pub trait Denoiser {
    fn predict(&self, noisy: &Field, condition: &GrayImage, t: usize) -> Field;
}

/// Predicts ε = 0 everywhere; the calibration baseline (its expected loss is
/// the second moment of standard-normal noise, 1).
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict(&self, noisy: &Field, _condition: &GrayImage, _t: usize) -> Field {
        Field::zeros(noisy.width, noisy.height)
    }
}

/// Monte-Carlo estimate of E_{t,ε}[mean((ε − ε̂)²)] over uniform t in [1, T]
/// and standard-normal ε. Per-draw RNG streams make the result independent
/// of evaluation order.
pub fn ddpm_loss(
    denoiser: &dyn Denoiser,
    x0: &GrayImage,
    condition: &GrayImage,
    sched: &NoiseSchedule,
    batch: usize,
    seed: u64,
) -> Result<f64> {
    if batch == 0 {
        return Err(Error::parameter("loss batch must be at least 1"));
    }
    if !x0.same_shape(condition) {
        return Err(Error::parameter(format!(
            "condition {}x{} does not match image {}x{}",
            condition.width(),
            condition.height(),
            x0.width(),
            x0.height()
        )));
    }
    let x0f = Field::from(x0);
    let mut total = 0.0;
    for i in 0..batch {
        let mut r = rng::stream(seed, "ddpm/loss", i as u64);
        let t = r.random_range(1..=sched.len());
        let eps = Field::standard_normal(x0f.width, x0f.height, &mut r);
        let xt = forward_sample(&x0f, t, &eps, sched)?;
        let pred = denoiser.predict(&xt, condition, t);
        debug_assert!(pred.same_shape(&eps));
        let sq: f64 = eps
            .values
            .iter()
            .zip(&pred.values)
            .map(|(e, p)| (e - p) * (e - p))
            .sum();
        total += sq / eps.values.len() as f64;
    }
    Ok(total / batch as f64)
}

/// Reverse-step noise scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    /// σ̃_t² = β_t·(1−ᾱ_{t−1})/(1−ᾱ_t), the forward-posterior variance.
    Posterior,
    /// σ_t² = β_t.
    Beta,
}

/// One ancestral step:
/// x_{t−1} = (x_t − (β_t/√(1−ᾱ_t))·ε̂)/√α_t + σ_t·noise.
/// Noise is never added at t = 1 (and the posterior σ̃_1 is 0 anyway).
pub fn reverse_step(
    xt: &Field,
    eps_hat: &Field,
    t: usize,
    sched: &NoiseSchedule,
    noise: Option<&Field>,
    variance: VarianceMode,
) -> Result<Field> {
    sched.check_t(t)?;
    if !xt.same_shape(eps_hat) {
        return Err(Error::parameter("prediction does not match field shape"));
    }
    let beta = sched.beta(t);
    let ab = sched.alpha_bar(t);
    let coef = beta / (1.0 - ab).sqrt();
    let inv_sqrt_alpha = 1.0 / sched.alpha(t).sqrt();
    let mut values: Vec<f64> = xt
        .values
        .iter()
        .zip(&eps_hat.values)
        .map(|(x, e)| inv_sqrt_alpha * (x - coef * e))
        .collect();
    if t > 1 {
        if let Some(n) = noise {
            if !xt.same_shape(n) {
                return Err(Error::parameter("noise does not match field shape"));
            }
            let sigma2 = match variance {
                VarianceMode::Posterior => beta * (1.0 - sched.alpha_bar_prev(t)) / (1.0 - ab),
                VarianceMode::Beta => beta,
            };
            let sigma = sigma2.sqrt();
            for (v, nv) in values.iter_mut().zip(&n.values) {
                *v += sigma * nv;
            }
        }
    }
    Field::new(xt.width, xt.height, values)
}

/// Full ancestral sampling runs, returned as raw fields (no clamping).
/// Realization j consumes its own RNG stream: x_T first, then one noise
/// field after each denoiser call down to t = 2.
pub fn sample_fields(
    denoiser: &dyn Denoiser,
    condition: &GrayImage,
    sched: &NoiseSchedule,
    k: usize,
    seed: u64,
    variance: VarianceMode,
) -> Result<Vec<Field>> {
    if k == 0 {
        return Err(Error::parameter("realization count must be at least 1"));
    }
    let (w, h) = (condition.width(), condition.height());
    let mut fields = Vec::with_capacity(k);
    for j in 0..k {
        let mut r = rng::stream(seed, "ddpm/sample", j as u64);
        let mut x = Field::standard_normal(w, h, &mut r);
        for t in (1..=sched.len()).rev() {
            let eps_hat = denoiser.predict(&x, condition, t);
            debug_assert!(eps_hat.same_shape(&x));
            let noise = if t > 1 {
                Some(Field::standard_normal(w, h, &mut r))
            } else {
                None
            };
            x = reverse_step(&x, &eps_hat, t, sched, noise.as_ref(), variance)?;
        }
        fields.push(x);
    }
    Ok(fields)
}

/// Ancestral sampling with the final iterate clamped into [0, 1] (clamping
/// is applied only at the very end, never between steps).
pub fn sample(
    denoiser: &dyn Denoiser,
    condition: &GrayImage,
    sched: &NoiseSchedule,
    k: usize,
    seed: u64,
    variance: VarianceMode,
) -> Result<RealizationStack> {
    let fields = sample_fields(denoiser, condition, sched, k, seed, variance)?;
    RealizationStack::new(fields.iter().map(Field::to_gray_clamped).collect())
}

/// One affine map ε̂ = w·[patch(noisy); patch(condition)] + b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

/// Per-timestep-bucket affine denoiser fitted by least squares. Patches are
/// square with the given radius; coordinates clamp at image edges. Bucket
/// b(t) = ⌊(t−1)·B/T⌋ against the schedule length the fit used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDenoiser {
    pub t_max: usize,
    pub buckets: usize,
    pub patch_radius: usize,
    /// Set when any bucket's normal equations needed ridge regularization.
    pub ridge_regularized: bool,
    pub maps: Vec<AffineMap>,
}

impl LinearDenoiser {
    fn feature_len(patch_radius: usize) -> usize {
        let side = 2 * patch_radius + 1;
        2 * side * side
    }

    fn bucket_for(&self, t: usize) -> usize {
        ((t.saturating_sub(1)) * self.buckets / self.t_max).min(self.buckets - 1)
    }

    fn gather_features(
        noisy: &Field,
        condition: &GrayImage,
        row: usize,
        col: usize,
        radius: usize,
        out: &mut [f64],
    ) {
        let (w, h) = (noisy.width, noisy.height);
        let mut idx = 0;
        for dr in -(radius as isize)..=(radius as isize) {
            let r = (row as isize + dr).clamp(0, h as isize - 1) as usize;
            for dc in -(radius as isize)..=(radius as isize) {
                let c = (col as isize + dc).clamp(0, w as isize - 1) as usize;
                out[idx] = noisy.get(r, c);
                idx += 1;
            }
        }
        for dr in -(radius as isize)..=(radius as isize) {
            let r = (row as isize + dr).clamp(0, h as isize - 1) as usize;
            for dc in -(radius as isize)..=(radius as isize) {
                let c = (col as isize + dc).clamp(0, w as isize - 1) as usize;
                out[idx] = condition.get(r, c);
                idx += 1;
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("denoiser serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: LinearDenoiser = serde_json::from_str(text)
            .map_err(|e| Error::format(crate::channel::json_offset(text, &e), e.to_string()))?;
        let want = Self::feature_len(d.patch_radius);
        if d.buckets == 0 || d.t_max == 0 || d.maps.len() != d.buckets {
            return Err(Error::parameter("denoiser bucket layout inconsistent"));
        }
        if let Some(bad) = d.maps.iter().position(|m| m.weights.len() != want) {
            return Err(Error::parameter(format!(
                "bucket {bad} has {} weights, expected {want}",
                d.maps[bad].weights.len()
            )));
        }
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Denoiser for LinearDenoiser {
    fn predict(&self, noisy: &Field, condition: &GrayImage, t: usize) -> Field {
        let map = &self.maps[self.bucket_for(t)];
        let mut features = vec![0.0f64; Self::feature_len(self.patch_radius)];
        let mut values = vec![0.0f64; noisy.values.len()];
        for row in 0..noisy.height {
            for col in 0..noisy.width {
                Self::gather_features(noisy, condition, row, col, self.patch_radius, &mut features);
                let mut acc = map.intercept;
                for (w, f) in map.weights.iter().zip(&features) {
                    acc += w * f;
                }
                values[row * noisy.width + col] = acc;
            }
        }
        Field {
            width: noisy.width,
            height: noisy.height,
            values,
        }
    }
}

/// Fit per-bucket affine maps by least squares over sampled (t, ε) draws.
/// The zero map lies in the hypothesis space, so training loss can only
/// improve on the zero denoiser. Singular normal equations fall back to a
/// ridge solve (1e-8 on the diagonal) and set the warning flag.
pub fn fit_linear_denoiser(
    pairs: &[(GrayImage, GrayImage)],
    sched: &NoiseSchedule,
    buckets: usize,
    patch_radius: usize,
    samples_per_pair: usize,
    seed: u64,
) -> Result<LinearDenoiser> {
    if pairs.is_empty() {
        return Err(Error::parameter("fit needs at least one (condition, target) pair"));
    }
    if buckets == 0 {
        return Err(Error::parameter("bucket count must be at least 1"));
    }
    if samples_per_pair == 0 {
        return Err(Error::parameter("samples_per_pair must be at least 1"));
    }
    for (i, (cond, target)) in pairs.iter().enumerate() {
        if !cond.same_shape(target) {
            return Err(Error::parameter(format!(
                "pair {i}: condition {}x{} vs target {}x{}",
                cond.width(),
                cond.height(),
                target.width(),
                target.height()
            )));
        }
    }

    let d = LinearDenoiser::feature_len(patch_radius);
    let da = d + 1; // + intercept column
    let mut gram = vec![DMatrix::<f64>::zeros(da, da); buckets];
    let mut moment = vec![DVector::<f64>::zeros(da); buckets];
    let mut bucket_samples = vec![0u64; buckets];
    let scaffold = LinearDenoiser {
        t_max: sched.len(),
        buckets,
        patch_radius,
        ridge_regularized: false,
        maps: Vec::new(),
    };

    let mut features = vec![0.0f64; d];
    for (p, (cond, target)) in pairs.iter().enumerate() {
        let x0 = Field::from(target);
        for i in 0..samples_per_pair {
            let draw = (p * samples_per_pair + i) as u64;
            let mut r = rng::stream(seed, "ddpm/fit", draw);
            let t = r.random_range(1..=sched.len());
            let eps = Field::standard_normal(x0.width, x0.height, &mut r);
            let xt = forward_sample(&x0, t, &eps, sched)?;
            let b = scaffold.bucket_for(t);
            bucket_samples[b] += 1;
            let (g, m) = (&mut gram[b], &mut moment[b]);
            for row in 0..x0.height {
                for col in 0..x0.width {
                    LinearDenoiser::gather_features(
                        &xt,
                        cond,
                        row,
                        col,
                        patch_radius,
                        &mut features,
                    );
                    let y = eps.get(row, col);
                    for a in 0..d {
                        let fa = features[a];
                        for bb in a..d {
                            g[(a, bb)] += fa * features[bb];
                        }
                        g[(a, d)] += fa;
                        m[a] += fa * y;
                    }
                    g[(d, d)] += 1.0;
                    m[d] += y;
                }
            }
        }
    }

    let mut ridge_used = false;
    let mut maps = Vec::with_capacity(buckets);
    for b in 0..buckets {
        if bucket_samples[b] == 0 {
            // bucket never drawn; an all-zero map is never consulted either
            maps.push(AffineMap {
                weights: vec![0.0; d],
                intercept: 0.0,
            });
            continue;
        }
        let mut g = gram[b].clone();
        for a in 0..da {
            for bb in 0..a {
                g[(a, bb)] = g[(bb, a)];
            }
        }
        let solution = match Cholesky::new(g.clone()) {
            Some(ch) => ch.solve(&moment[b]),
            None => {
                ridge_used = true;
                let mut reg = g;
                for a in 0..da {
                    reg[(a, a)] += 1e-8;
                }
                Cholesky::new(reg)
                    .ok_or_else(|| {
                        Error::numerical(format!("bucket {b}: normal equations unsolvable"))
                    })?
                    .solve(&moment[b])
            }
        };
        maps.push(AffineMap {
            weights: solution.as_slice()[..d].to_vec(),
            intercept: solution[d],
        });
    }

    Ok(LinearDenoiser {
        t_max: sched.len(),
        buckets,
        patch_radius,
        ridge_regularized: ridge_used,
        maps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::generate_template;
    use rand::Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut r = rng::stream(seed, "test/ddpm", 0);
        GrayImage::new(w, h, (0..w * h).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    /// Test-only oracle: recovers the exact ε consistent with the current
    /// iterate and the known clean image.
    struct OracleDenoiser {
        x0: Field,
    }

    impl OracleDenoiser {
        fn with_schedule<'a>(&'a self, sched: &'a NoiseSchedule) -> OracleWithSched<'a> {
            OracleWithSched { x0: &self.x0, sched }
        }
    }

    struct OracleWithSched<'a> {
        x0: &'a Field,
        sched: &'a NoiseSchedule,
    }

    impl Denoiser for OracleWithSched<'_> {
        fn predict(&self, noisy: &Field, _condition: &GrayImage, t: usize) -> Field {
            let ab = self.sched.alpha_bar(t);
            let (ca, ce) = (ab.sqrt(), (1.0 - ab).sqrt());
            let values = noisy
                .values()
                .iter()
                .zip(self.x0.values())
                .map(|(n, x)| (n - ca * x) / ce)
                .collect();
            Field::new(noisy.width(), noisy.height(), values).unwrap()
        }
    }

    #[test]
    fn schedule_endpoints_exact() {
        let train = linear_schedule(1e-6, 0.01, 2000).unwrap();
        assert_eq!(train.beta(1), 1e-6);
        assert_eq!(train.beta(2000), 0.01);
        let refine = linear_schedule(1e-4, 0.09, 1000).unwrap();
        assert_eq!(refine.beta(1), 1e-4);
        assert_eq!(refine.beta(1000), 0.09);
        let single = linear_schedule(0.5, 0.5, 1).unwrap();
        assert_eq!(single.beta(1), 0.5);
        assert_eq!(single.alpha_bar(1), 0.5);
    }

    #[test]
    fn schedule_recurrence_and_monotonicity() {
        let s = linear_schedule(1e-4, 0.05, 300).unwrap();
        assert_eq!(s.alpha_bar(1), s.alpha(1));
        for t in 2..=300 {
            let expected = s.alpha_bar(t - 1) * s.alpha(t);
            assert!((s.alpha_bar(t) - expected).abs() < 1e-15);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
        }
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(linear_schedule(0.0, 0.1, 10).is_err());
        assert!(linear_schedule(0.1, 1.0, 10).is_err());
        assert!(linear_schedule(0.2, 0.1, 10).is_err());
        assert!(linear_schedule(1e-4, 0.01, 0).is_err());
    }

    #[test]
    fn forward_sample_limits() {
        let sched = linear_schedule(1e-4, 0.02, 50).unwrap();
        let x0 = Field::from(&random_image(8, 8, 1));
        let zero = Field::zeros(8, 8);
        let out = forward_sample(&x0, 10, &zero, &sched).unwrap();
        let ca = sched.alpha_bar(10).sqrt();
        for (o, x) in out.values().iter().zip(x0.values()) {
            assert!((o - ca * x).abs() < 1e-15);
        }
        let bad = Field::zeros(4, 4);
        assert!(forward_sample(&x0, 10, &bad, &sched).is_err());
        assert!(forward_sample(&x0, 0, &zero, &sched).is_err());
        assert!(forward_sample(&x0, 51, &zero, &sched).is_err());
    }

    #[test]
    fn forward_sample_terminal_statistics() {
        // at t = T of the long training schedule the signal is almost gone
        let sched = linear_schedule(1e-6, 0.01, 2000).unwrap();
        assert!(sched.alpha_bar(2000) < 1e-4);
        let x0 = Field::from(&GrayImage::filled(64, 64, 0.5).unwrap());
        let mut r = rng::stream(77, "test/ddpm-terminal", 0);
        let eps = Field::standard_normal(64, 64, &mut r);
        let out = forward_sample(&x0, 2000, &eps, &sched).unwrap();
        let n = out.values().len() as f64;
        let mean = out.values().iter().sum::<f64>() / n;
        let var = out.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 3.0 / n.sqrt() + 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n).sqrt() + 0.01, "var {var}");
    }

    #[test]
    fn forward_marginal_variance_matches_schedule() {
        let sched = linear_schedule(1e-3, 0.05, 100).unwrap();
        let t = 60;
        let x0 = Field::from(&GrayImage::filled(50, 50, 0.3).unwrap());
        let mut r = rng::stream(5, "test/ddpm-marginal", 0);
        let mut values = Vec::new();
        for _ in 0..4 {
            let eps = Field::standard_normal(50, 50, &mut r);
            let out = forward_sample(&x0, t, &eps, &sched).unwrap();
            let ca = sched.alpha_bar(t).sqrt();
            values.extend(out.values().iter().map(|v| v - ca * 0.3));
        }
        let n = values.len() as f64;
        let var = values.iter().map(|v| v * v).sum::<f64>() / n;
        let expected = 1.0 - sched.alpha_bar(t);
        let se = expected * (2.0 / n).sqrt();
        assert!((var - expected).abs() < 3.0 * se, "{var} vs {expected}");
    }

    #[test]
    fn loss_of_oracle_is_zero_and_zero_denoiser_is_one() {
        let sched = linear_schedule(1e-3, 0.05, 40).unwrap();
        let x0 = random_image(16, 16, 9);
        let cond = random_image(16, 16, 10);
        let oracle = OracleDenoiser { x0: Field::from(&x0) };
        let loss = ddpm_loss(&oracle.with_schedule(&sched), &x0, &cond, &sched, 20, 3).unwrap();
        assert!(loss < 1e-20, "{loss}");

        let zero = ddpm_loss(&ZeroDenoiser, &x0, &cond, &sched, 300, 4).unwrap();
        assert!((zero - 1.0).abs() < 0.05, "{zero}");
        assert!(zero >= 0.0);
        assert!(ddpm_loss(&ZeroDenoiser, &x0, &cond, &sched, 0, 1).is_err());
    }

    #[test]
    fn reverse_step_inverts_single_step_forward() {
        let sched = linear_schedule(0.5, 0.5, 1).unwrap();
        let x0 = Field::from(&random_image(8, 8, 20));
        let mut r = rng::stream(21, "test/ddpm-invert", 0);
        let eps = Field::standard_normal(8, 8, &mut r);
        let x1 = forward_sample(&x0, 1, &eps, &sched).unwrap();
        let back = reverse_step(&x1, &eps, 1, &sched, None, VarianceMode::Posterior).unwrap();
        for (a, b) in back.values().iter().zip(x0.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(reverse_step(&x1, &eps, 0, &sched, None, VarianceMode::Posterior).is_err());
    }

    #[test]
    fn reverse_step_is_noop_for_tiny_beta() {
        let sched = linear_schedule(1e-9, 1e-9, 5).unwrap();
        let xt = Field::from(&random_image(8, 8, 22));
        let zero = Field::zeros(8, 8);
        let out = reverse_step(&xt, &zero, 3, &sched, None, VarianceMode::Posterior).unwrap();
        for (a, b) in out.values().iter().zip(xt.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn oracle_reverse_loop_recovers_input() {
        let sched = linear_schedule(1e-3, 0.3, 10).unwrap();
        let x0img = random_image(32, 32, 30);
        let x0 = Field::from(&x0img);
        let oracle = OracleDenoiser { x0: x0.clone() };
        let denoiser = oracle.with_schedule(&sched);
        let mut r = rng::stream(31, "test/ddpm-loop", 0);
        let eps = Field::standard_normal(32, 32, &mut r);
        let mut x = forward_sample(&x0, 10, &eps, &sched).unwrap();
        for t in (1..=10).rev() {
            let eps_hat = denoiser.predict(&x, &x0img, t);
            x = reverse_step(&x, &eps_hat, t, &sched, None, VarianceMode::Posterior).unwrap();
        }
        let max_err = x
            .values()
            .iter()
            .zip(x0.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err <= 1e-6, "max err {max_err}");
    }

    #[test]
    fn sampling_is_deterministic_and_clamped() {
        let sched = linear_schedule(1e-3, 0.1, 20).unwrap();
        let cond = random_image(12, 12, 40);
        let a = sample(&ZeroDenoiser, &cond, &sched, 3, 50, VarianceMode::Posterior).unwrap();
        let b = sample(&ZeroDenoiser, &cond, &sched, 3, 50, VarianceMode::Posterior).unwrap();
        assert_eq!(a, b);
        let c = sample(&ZeroDenoiser, &cond, &sched, 3, 51, VarianceMode::Posterior).unwrap();
        assert_ne!(a, c);
        for img in a.images() {
            assert!(img.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        }
        // raw fields legitimately leave [0, 1]
        let fields = sample_fields(&ZeroDenoiser, &cond, &sched, 3, 50, VarianceMode::Posterior)
            .unwrap();
        assert!(fields
            .iter()
            .any(|f| f.values().iter().any(|v| *v < 0.0 || *v > 1.0)));
    }

    #[test]
    fn stochastic_sampling_yields_distinct_realizations() {
        let sched = linear_schedule(1e-3, 0.1, 15).unwrap();
        let cond = random_image(10, 10, 60);
        for mode in [VarianceMode::Posterior, VarianceMode::Beta] {
            let stack = sample(&ZeroDenoiser, &cond, &sched, 21, 61, mode).unwrap();
            assert_eq!(stack.k(), 21);
            for i in 0..stack.k() {
                for j in i + 1..stack.k() {
                    assert_ne!(stack.get(i), stack.get(j), "{i} vs {j}");
                }
            }
        }
    }

    #[test]
    fn fit_is_deterministic_and_validates_input() {
        let sched = linear_schedule(1e-3, 0.1, 30).unwrap();
        let cond = random_image(12, 12, 70);
        let target = random_image(12, 12, 71);
        let pairs = vec![(cond, target)];
        let a = fit_linear_denoiser(&pairs, &sched, 1, 1, 6, 80).unwrap();
        let b = fit_linear_denoiser(&pairs, &sched, 1, 1, 6, 80).unwrap();
        assert_eq!(a, b);
        assert!(fit_linear_denoiser(&[], &sched, 1, 1, 6, 80).is_err());
        assert!(fit_linear_denoiser(&pairs, &sched, 0, 1, 6, 80).is_err());
        let mismatched = vec![(random_image(8, 8, 72), random_image(12, 12, 73))];
        assert!(fit_linear_denoiser(&mismatched, &sched, 1, 1, 6, 80).is_err());
    }

    #[test]
    fn fitted_denoiser_beats_zero_baseline() {
        let sched = linear_schedule(1e-3, 0.2, 50).unwrap();
        // target equals condition: the condition patch fully determines x0
        let img = GrayImage::from(&generate_template(16, 16, 0.5, 90).unwrap());
        let pairs = vec![(img.clone(), img.clone())];
        let fitted = fit_linear_denoiser(&pairs, &sched, 4, 0, 64, 91).unwrap();
        let held_out_seed = 12345;
        let zero_loss =
            ddpm_loss(&ZeroDenoiser, &img, &img, &sched, 200, held_out_seed).unwrap();
        let fit_loss = ddpm_loss(&fitted, &img, &img, &sched, 200, held_out_seed).unwrap();
        assert!(
            fit_loss < zero_loss,
            "fitted {fit_loss} vs zero {zero_loss}"
        );
    }

    #[test]
    fn denoiser_json_round_trip() {
        let sched = linear_schedule(1e-3, 0.1, 30).unwrap();
        let cond = random_image(10, 10, 100);
        let target = random_image(10, 10, 101);
        let fitted = fit_linear_denoiser(&[(cond, target)], &sched, 3, 1, 8, 102).unwrap();
        let back = LinearDenoiser::from_json(&fitted.to_json()).unwrap();
        assert_eq!(fitted, back);
        assert!(LinearDenoiser::from_json("{}").is_err());
    }
}
