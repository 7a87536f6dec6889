//! Evaluation metrics: MSE, Otsu binarization, Hamming distance, SSIM,
//! Pearson correlation, and a Fréchet distance over pluggable feature
//! vectors (proxy FID).

use crate::error::{Error, Result};
use crate::imaging::{BinaryTemplate, GrayImage};
use nalgebra::{DMatrix, DVector};

/// Default histogram resolution for Otsu thresholding.
pub const OTSU_BINS: usize = 256;

/// SSIM window side length.
pub const SSIM_WINDOW: usize = 11;
/// SSIM Gaussian window sigma.
pub const SSIM_SIGMA: f64 = 1.5;
/// SSIM stabilizer K1 (C1 = (K1·L)²).
pub const SSIM_K1: f64 = 0.01;
/// SSIM stabilizer K2 (C2 = (K2·L)²).
pub const SSIM_K2: f64 = 0.03;
/// SSIM dynamic range.
pub const SSIM_L: f64 = 1.0;

fn check_same_shape(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::parameter(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Mean squared pixel difference.
pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    check_same_shape(a, b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.pixels().len() as f64)
}

/// An Otsu threshold plus a degeneracy flag (set when the histogram has a
/// single occupied bin, where between-class variance cannot discriminate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuThreshold {
    pub value: f64,
    pub degenerate: bool,
}

/// Threshold maximizing between-class variance over the bin-edge candidates
/// `s/bins`. Ties break toward the lower threshold. A single-occupied-bin
/// histogram returns that bin's upper edge with the degenerate flag set, so
/// a constant image binarizes to all zeros (all ones when the constant is
/// exactly 1.0).
pub fn otsu_threshold(img: &GrayImage, bins: usize) -> Result<OtsuThreshold> {
    if bins < 2 {
        return Err(Error::parameter(format!(
            "otsu needs at least 2 bins, got {bins}"
        )));
    }
    let mut hist = vec![0u64; bins];
    for &p in img.pixels() {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        hist[b] += 1;
    }

    let occupied = hist.iter().filter(|&&c| c > 0).count();
    if occupied < 2 {
        let only = hist.iter().position(|&c| c > 0).unwrap();
        return Ok(OtsuThreshold {
            value: (only + 1) as f64 / bins as f64,
            degenerate: true,
        });
    }

    // between-class variance via cumulative moments; bin midpoints stand in
    // for class values (any affine relabeling leaves the argmax unchanged)
    let total = img.pixels().len() as f64;
    let total_moment: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| (i as f64 + 0.5) * c as f64)
        .sum();
    let mut best_s = 0usize;
    let mut best_var = f64::NEG_INFINITY;
    let mut w0 = 0.0f64;
    let mut m0 = 0.0f64;
    for s in 1..bins {
        w0 += hist[s - 1] as f64;
        m0 += (s as f64 - 0.5) * hist[s - 1] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = m0 / w0;
        let mu1 = (total_moment - m0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_s = s;
        }
    }
    Ok(OtsuThreshold {
        value: best_s as f64 / bins as f64,
        degenerate: false,
    })
}

/// Map pixels to bits with `pixel >= threshold`, consistent with the class
/// split of [`otsu_threshold`] (a bin-edge threshold puts its own bin in the
/// upper class).
pub fn binarize(img: &GrayImage, threshold: f64) -> BinaryTemplate {
    let bits = img
        .pixels()
        .iter()
        .map(|&p| u8::from(p >= threshold))
        .collect();
    BinaryTemplate::new(img.width(), img.height(), bits).expect("shape preserved")
}

/// Otsu-threshold then binarize in one step.
pub fn otsu_binarize(img: &GrayImage) -> Result<(BinaryTemplate, OtsuThreshold)> {
    let t = otsu_threshold(img, OTSU_BINS)?;
    Ok((binarize(img, t.value), t))
}

/// Fraction of differing bits (normalized Hamming distance).
pub fn hamming(a: &BinaryTemplate, b: &BinaryTemplate) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::parameter(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let diff: u64 = a
        .bits()
        .iter()
        .zip(b.bits())
        .map(|(x, y)| u64::from(x != y))
        .sum();
    Ok(diff as f64 / a.bits().len() as f64)
}

fn gaussian_kernel(len: usize, sigma: f64) -> Vec<f64> {
    let half = (len as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..len)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-position windowed sums: horizontal then vertical pass with the 1-D
/// kernel (the 2-D Gaussian window is the separable product).
fn window_means(values: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let klen = kernel.len();
    let out_w = width - klen + 1;
    let out_h = height - klen + 1;
    let mut horiz = vec![0.0f64; out_w * height];
    for row in 0..height {
        for col in 0..out_w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * values[row * width + col + i];
            }
            horiz[row * out_w + col] = acc;
        }
    }
    let mut out = vec![0.0f64; out_w * out_h];
    for row in 0..out_h {
        for col in 0..out_w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * horiz[(row + i) * out_w + col];
            }
            out[row * out_w + col] = acc;
        }
    }
    out
}

/// Mean SSIM with fully specified constants.
pub fn ssim_with(
    a: &GrayImage,
    b: &GrayImage,
    window: usize,
    sigma: f64,
    k1: f64,
    k2: f64,
    dynamic_range: f64,
) -> Result<f64> {
    check_same_shape(a, b)?;
    if window == 0 || window % 2 == 0 {
        return Err(Error::parameter(format!(
            "ssim window must be odd and positive, got {window}"
        )));
    }
    if a.width() < window || a.height() < window {
        return Err(Error::parameter(format!(
            "image {}x{} smaller than ssim window {window}",
            a.width(),
            a.height()
        )));
    }
    let kernel = gaussian_kernel(window, sigma);
    let (w, h) = (a.width(), a.height());
    let ap = a.pixels();
    let bp = b.pixels();
    let aa: Vec<f64> = ap.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = bp.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = ap.iter().zip(bp).map(|(x, y)| x * y).collect();

    let mu_a = window_means(ap, w, h, &kernel);
    let mu_b = window_means(bp, w, h, &kernel);
    let s_aa = window_means(&aa, w, h, &kernel);
    let s_bb = window_means(&bb, w, h, &kernel);
    let s_ab = window_means(&ab, w, h, &kernel);

    let c1 = (k1 * dynamic_range) * (k1 * dynamic_range);
    let c2 = (k2 * dynamic_range) * (k2 * dynamic_range);
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = s_aa[i] - ma * ma;
        let vb = s_bb[i] - mb * mb;
        let cov = s_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        sum += num / den;
    }
    Ok(sum / mu_a.len() as f64)
}

/// Mean SSIM over an 11×11 Gaussian window (σ = 1.5), C1 = (0.01·L)²,
/// C2 = (0.03·L)², L = 1, valid window positions only.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    ssim_with(a, b, SSIM_WINDOW, SSIM_SIGMA, SSIM_K1, SSIM_K2, SSIM_L)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::parameter(format!(
            "length mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.len() < 2 {
        return Err(Error::parameter("pearson needs at least 2 samples"));
    }
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let mut suu = 0.0;
    let mut svv = 0.0;
    let mut suv = 0.0;
    for (x, y) in u.iter().zip(v) {
        let du = x - mu;
        let dv = y - mv;
        suu += du * du;
        svv += dv * dv;
        suv += du * dv;
    }
    if suu == 0.0 || svv == 0.0 {
        return Err(Error::numerical(
            "correlation undefined: an input has zero variance",
        ));
    }
    Ok(suv / (suu.sqrt() * svv.sqrt()))
}

/// Sample mean and unbiased covariance of a feature cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

/// Fit mean and unbiased covariance; the covariance is symmetrized as
/// (C + Cᵀ)/2.
pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<GaussianStats> {
    if features.len() < 2 {
        return Err(Error::parameter(format!(
            "need at least 2 feature vectors, got {}",
            features.len()
        )));
    }
    let d = features[0].len();
    if d == 0 {
        return Err(Error::parameter("feature vectors must be non-empty"));
    }
    if let Some(pos) = features.iter().position(|f| f.len() != d) {
        return Err(Error::parameter(format!(
            "feature vector {pos} has length {}, expected {d}",
            features[pos].len()
        )));
    }
    let n = features.len();
    let mut mean = DVector::zeros(d);
    for f in features {
        for (i, &v) in f.iter().enumerate() {
            mean[i] += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for f in features {
        let centered = DVector::from_iterator(d, f.iter().enumerate().map(|(i, &v)| v - mean[i]));
        cov += &centered * centered.transpose();
    }
    cov /= (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats { mean, cov, n })
}

/// Symmetric PSD square root via eigendecomposition. Eigenvalues below
/// `-1e-6` are a numerical error; small negatives are clamped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -1e-6 {
            return Err(Error::numerical(format!(
                "matrix square root failed: eigenvalue {v} below tolerance"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Squared Fréchet distance between two Gaussians:
/// ‖μ₁−μ₂‖² + Tr(Σ₁+Σ₂−2(Σ₁Σ₂)^½), computed through the symmetrized
/// product Σ₁^½ Σ₂ Σ₁^½.
pub fn frechet_distance(p: &GaussianStats, q: &GaussianStats) -> Result<f64> {
    let d = p.mean.len();
    if q.mean.len() != d {
        return Err(Error::parameter(format!(
            "dimension mismatch: {d} vs {}",
            q.mean.len()
        )));
    }
    let diff = &p.mean - &q.mean;
    let mean_term = diff.dot(&diff);

    let s1_sqrt = psd_sqrt(&p.cov)?;
    let inner = &s1_sqrt * &q.cov * &s1_sqrt;
    let sym = (&inner + inner.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut trace_sqrt = 0.0;
    for &v in eig.eigenvalues.iter() {
        if v < -1e-6 {
            return Err(Error::numerical(format!(
                "cross-covariance square root failed: eigenvalue {v} below tolerance"
            )));
        }
        trace_sqrt += v.max(0.0).sqrt();
    }
    let dist = mean_term + p.cov.trace() + q.cov.trace() - 2.0 * trace_sqrt;
    // rounding can leave a tiny negative on near-identical stats
    Ok(dist.max(0.0))
}

/// Normalized intensity histograms of non-overlapping square patches. Each
/// returned vector has `bins` entries summing to 1.
pub fn patch_histogram_features(
    img: &GrayImage,
    patch: usize,
    bins: usize,
) -> Result<Vec<Vec<f64>>> {
    if patch == 0 || bins == 0 {
        return Err(Error::parameter("patch and bins must be positive"));
    }
    if patch > img.width() || patch > img.height() {
        return Err(Error::parameter(format!(
            "patch {patch} larger than image {}x{}",
            img.width(),
            img.height()
        )));
    }
    let rows = img.height() / patch;
    let cols = img.width() / patch;
    let norm = 1.0 / (patch * patch) as f64;
    let mut features = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            let mut hist = vec![0.0f64; bins];
            for r in 0..patch {
                for c in 0..patch {
                    let v = img.get(pr * patch + r, pc * patch + c);
                    let b = ((v * bins as f64) as usize).min(bins - 1);
                    hist[b] += 1.0;
                }
            }
            for h in &mut hist {
                *h *= norm;
            }
            features.push(hist);
        }
    }
    Ok(features)
}

/// One evaluation row, column order matching the report CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub model: String,
    pub pfid_x2z: f64,
    pub hamming: f64,
    pub pfid_z2x: f64,
    pub mse: f64,
    pub ssim: f64,
}

/// Header for report CSV files.
pub const REPORT_CSV_HEADER: &str = "model,pfid_x2z,hamming,pfid_z2x,mse,ssim";

impl MetricReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.model, self.pfid_x2z, self.hamming, self.pfid_z2x, self.mse, self.ssim
        )
    }
}
