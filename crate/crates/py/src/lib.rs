//! Python bindings over the digital twin core: templates, gray images,
//! channel models, the diffusion pieces, and the metric helpers. Build with
//! `cargo build -p cdp-twin-py --features extension-module` and import the
//! produced cdylib as `cdp_twin`.

use std::path::PathBuf;

use cdp_twin_core::analysis::{
    self, aggregate, aggregate_score, k_sweep, std_map, wilcoxon_signed_rank, AggregationMode,
    ScoreMetric,
};
use cdp_twin_core::channel::{
    fit_channel, synthetic_channel, ChannelModel, Direction, PatternId, SyntheticChannelParams,
};
use cdp_twin_core::ddpm::{
    ddpm_loss, fit_linear_denoiser, linear_schedule, sample, LinearDenoiser, NoiseSchedule,
    VarianceMode, ZeroDenoiser,
};
use cdp_twin_core::imaging::{
    block_mean_downscale, generate_template, upscale, BinaryTemplate, GrayImage,
    RealizationStack,
};
use cdp_twin_core::metrics::{
    binarize, hamming, mse, otsu_threshold, pearson, ssim,
};
use cdp_twin_core::pgm::{read_pgm, write_pgm, PgmDepth};
use cdp_twin_core::turbo::{
    fit_pattern_generator, turbo_loss_unet, PatternGenerator, TurboTuple, TurboWeights,
};
use cdp_twin_core::{Error as CoreError, Result as CoreResult};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn core_err(e: CoreError) -> PyErr {
    let msg = e.to_string();
    match e {
        CoreError::Parameter(_) | CoreError::Usage(_) => PyValueError::new_err(msg),
        CoreError::Format { .. } | CoreError::Io { .. } => PyOSError::new_err(msg),
        CoreError::Numerical(_) => PyArithmeticError::new_err(msg),
    }
}

fn ok<T>(r: CoreResult<T>) -> PyResult<T> {
    r.map_err(core_err)
}

fn parse_direction(s: &str) -> PyResult<Direction> {
    match s {
        "print" => Ok(Direction::Print),
        "estimate" => Ok(Direction::Estimate),
        other => Err(PyValueError::new_err(format!(
            "direction must be 'print' or 'estimate', got '{other}'"
        ))),
    }
}

fn parse_mode(s: &str) -> PyResult<AggregationMode> {
    match s {
        "mean" => Ok(AggregationMode::Mean),
        "median" => Ok(AggregationMode::Median),
        "mean-of-scores" => Ok(AggregationMode::MeanOfScores),
        other => Err(PyValueError::new_err(format!(
            "mode must be 'mean', 'median', or 'mean-of-scores', got '{other}'"
        ))),
    }
}

fn parse_metric(s: &str) -> PyResult<ScoreMetric> {
    match s {
        "mse" => Ok(ScoreMetric::Mse),
        "ssim" => Ok(ScoreMetric::Ssim),
        "hamming-otsu" => Ok(ScoreMetric::HammingOtsu),
        other => Err(PyValueError::new_err(format!(
            "metric must be 'mse', 'ssim', or 'hamming-otsu', got '{other}'"
        ))),
    }
}

fn parse_variance(s: &str) -> PyResult<VarianceMode> {
    match s {
        "posterior" => Ok(VarianceMode::Posterior),
        "beta" => Ok(VarianceMode::Beta),
        other => Err(PyValueError::new_err(format!(
            "variance must be 'posterior' or 'beta', got '{other}'"
        ))),
    }
}

fn parse_depth(bits: u32) -> PyResult<PgmDepth> {
    match bits {
        8 => Ok(PgmDepth::Eight),
        16 => Ok(PgmDepth::Sixteen),
        other => Err(PyValueError::new_err(format!(
            "depth must be 8 or 16, got {other}"
        ))),
    }
}

fn stack_to_list(stack: RealizationStack) -> Vec<PyGray> {
    stack
        .images()
        .iter()
        .map(|im| PyGray { inner: im.clone() })
        .collect()
}

fn template_pairs(
    pairs: Vec<(PyRef<'_, PyTemplate>, PyRef<'_, PyGray>)>,
) -> Vec<(BinaryTemplate, GrayImage)> {
    pairs
        .into_iter()
        .map(|(z, x)| (z.inner.clone(), x.inner.clone()))
        .collect()
}

/// Binary dot template (z-domain).
#[pyclass(name = "Template", frozen)]
struct PyTemplate {
    inner: BinaryTemplate,
}

#[pymethods]
impl PyTemplate {
    #[new]
    fn new(width: usize, height: usize, bits: Vec<u8>) -> PyResult<Self> {
        Ok(Self {
            inner: ok(BinaryTemplate::new(width, height, bits))?,
        })
    }

    /// Bernoulli(density) template from the named RNG stream.
    #[staticmethod]
    fn generate(width: usize, height: usize, density: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: ok(generate_template(width, height, density, seed))?,
        })
    }

    /// Read a PGM whose pixels are exactly 0 or maxval.
    #[staticmethod]
    fn load_pgm(path: PathBuf) -> PyResult<Self> {
        let img = ok(read_pgm(&path))?;
        Ok(Self {
            inner: ok(BinaryTemplate::try_from_gray(&img))?,
        })
    }

    fn save_pgm(&self, path: PathBuf) -> PyResult<()> {
        ok(write_pgm(&path, &self.to_gray().inner, PgmDepth::Eight))
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn density(&self) -> f64 {
        self.inner.density()
    }

    fn bits(&self) -> Vec<u8> {
        self.inner.bits().to_vec()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<u8> {
        if row >= self.inner.height() || col >= self.inner.width() {
            return Err(PyValueError::new_err(format!(
                "({row}, {col}) outside {}x{}",
                self.inner.width(),
                self.inner.height()
            )));
        }
        Ok(self.inner.bit(row, col))
    }

    /// 0/1 bits as a float image.
    fn to_gray(&self) -> PyGray {
        let pixels = self.inner.bits().iter().map(|&b| f64::from(b)).collect();
        PyGray {
            inner: GrayImage::new(self.inner.width(), self.inner.height(), pixels)
                .expect("bits are valid pixels"),
        }
    }

    /// Nearest-neighbor upscale by an integer factor.
    fn upscale(&self, s: usize) -> PyResult<Self> {
        Ok(Self {
            inner: ok(upscale(&self.inner, s))?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Template({}x{}, density {:.3})",
            self.inner.width(),
            self.inner.height(),
            self.inner.density()
        )
    }
}

/// Continuous image with pixels in [0, 1] (x-domain).
#[pyclass(name = "GrayImage", frozen)]
struct PyGray {
    inner: GrayImage,
}

#[pymethods]
impl PyGray {
    #[new]
    fn new(width: usize, height: usize, pixels: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: ok(GrayImage::new(width, height, pixels))?,
        })
    }

    #[staticmethod]
    fn load_pgm(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ok(read_pgm(&path))?,
        })
    }

    #[pyo3(signature = (path, depth = 8))]
    fn save_pgm(&self, path: PathBuf, depth: u32) -> PyResult<()> {
        ok(write_pgm(&path, &self.inner, parse_depth(depth)?))
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn pixels(&self) -> Vec<f64> {
        self.inner.pixels().to_vec()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<f64> {
        if row >= self.inner.height() || col >= self.inner.width() {
            return Err(PyValueError::new_err(format!(
                "({row}, {col}) outside {}x{}",
                self.inner.width(),
                self.inner.height()
            )));
        }
        Ok(self.inner.get(row, col))
    }

    /// Block-mean downscale by an integer factor that divides both sides.
    fn downscale(&self, s: usize) -> PyResult<Self> {
        Ok(Self {
            inner: ok(block_mean_downscale(&self.inner, s))?,
        })
    }

    /// Threshold into a template; Otsu over 256 bins when no threshold is
    /// given.
    #[pyo3(signature = (threshold = None))]
    fn binarize(&self, threshold: Option<f64>) -> PyResult<PyTemplate> {
        let tau = match threshold {
            Some(t) => t,
            None => ok(otsu_threshold(&self.inner, 256))?.value,
        };
        Ok(PyTemplate {
            inner: binarize(&self.inner, tau),
        })
    }

    /// (threshold, degenerate) of the between-class-variance maximizer.
    #[pyo3(signature = (bins = 256))]
    fn otsu_threshold(&self, bins: usize) -> PyResult<(f64, bool)> {
        let t = ok(otsu_threshold(&self.inner, bins))?;
        Ok((t.value, t.degenerate))
    }

    fn __repr__(&self) -> String {
        format!("GrayImage({}x{})", self.inner.width(), self.inner.height())
    }
}

/// Pattern-conditioned stochastic channel (print or estimate direction).
#[pyclass(name = "ChannelModel", frozen)]
struct PyChannelModel {
    inner: ChannelModel,
}

#[pymethods]
impl PyChannelModel {
    /// Analytic channel from the four dot-distortion parameters.
    #[staticmethod]
    fn synthetic(
        direction: &str,
        scale: usize,
        contrast: f64,
        dot_gain: f64,
        noise_floor: f64,
        noise_gain: f64,
    ) -> PyResult<Self> {
        let params = SyntheticChannelParams {
            contrast,
            dot_gain,
            noise_floor,
            noise_gain,
        };
        Ok(Self {
            inner: ok(synthetic_channel(parse_direction(direction)?, scale, &params))?,
        })
    }

    /// Fit per-pattern statistics from (template, print) pairs.
    #[staticmethod]
    fn fit(
        pairs: Vec<(PyRef<'_, PyTemplate>, PyRef<'_, PyGray>)>,
        direction: &str,
        scale: usize,
    ) -> PyResult<Self> {
        let owned = template_pairs(pairs);
        Ok(Self {
            inner: ok(fit_channel(&owned, parse_direction(direction)?, scale))?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ok(ChannelModel::load(&path))?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        ok(self.inner.save(&path))
    }

    #[getter]
    fn direction(&self) -> &'static str {
        self.inner.direction.as_str()
    }

    #[getter]
    fn scale(&self) -> usize {
        self.inner.scale
    }

    #[getter]
    fn global_mean(&self) -> f64 {
        self.inner.global_mean
    }

    #[getter]
    fn global_std(&self) -> f64 {
        self.inner.global_std
    }

    /// Count-weighted mean flip probability over observed patterns.
    fn average_flip_rate(&self) -> f64 {
        self.inner.table().average_flip_rate()
    }

    /// (count, mean, std, flip_prob) for one 3x3 pattern id.
    fn pattern_entry(&self, pattern: u16) -> PyResult<(u64, f64, f64, f64)> {
        let p = ok(PatternId::new(pattern))?;
        let e = self.inner.table().entry(p);
        Ok((e.count, e.mean, e.std, e.flip_prob))
    }

    /// Number of patterns with at least one observation.
    fn observed_patterns(&self) -> usize {
        self.inner.table().observed()
    }

    fn table_csv(&self) -> String {
        self.inner.table().to_csv()
    }

    /// Draw k printed realizations of a template (print direction only).
    fn simulate_print(&self, template: &PyTemplate, k: usize, seed: u64) -> PyResult<Vec<PyGray>> {
        Ok(stack_to_list(ok(self.inner.simulate_print(
            &template.inner,
            k,
            seed,
        ))?))
    }

    /// Draw k template-domain estimates of a print (estimate direction only).
    fn estimate_template(&self, print: &PyGray, k: usize, seed: u64) -> PyResult<Vec<PyGray>> {
        Ok(stack_to_list(ok(self.inner.estimate_template(
            &print.inner,
            k,
            seed,
        ))?))
    }

    fn __repr__(&self) -> String {
        format!(
            "ChannelModel(direction '{}', scale {}, {} patterns observed)",
            self.inner.direction.as_str(),
            self.inner.scale,
            self.inner.table().observed()
        )
    }
}

/// Diffusion noise schedule (1-based timesteps).
#[pyclass(name = "NoiseSchedule", frozen)]
struct PySchedule {
    inner: NoiseSchedule,
}

#[pymethods]
impl PySchedule {
    /// Betas linearly spaced from beta_start to beta_end inclusive.
    #[staticmethod]
    fn linear(beta_start: f64, beta_end: f64, steps: usize) -> PyResult<Self> {
        Ok(Self {
            inner: ok(linear_schedule(beta_start, beta_end, steps))?,
        })
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.len()
    }

    fn beta(&self, t: usize) -> PyResult<f64> {
        self.check(t)?;
        Ok(self.inner.beta(t))
    }

    fn alpha_bar(&self, t: usize) -> PyResult<f64> {
        self.check(t)?;
        Ok(self.inner.alpha_bar(t))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let n = self.inner.len();
        format!(
            "NoiseSchedule({} steps, beta {} .. {})",
            n,
            self.inner.beta(1),
            self.inner.beta(n)
        )
    }
}

impl PySchedule {
    fn check(&self, t: usize) -> PyResult<()> {
        if t == 0 || t > self.inner.len() {
            return Err(PyValueError::new_err(format!(
                "timestep {t} outside 1..={}",
                self.inner.len()
            )));
        }
        Ok(())
    }
}

/// Patch-linear noise predictor with per-timestep-bucket coefficients.
#[pyclass(name = "LinearDenoiser", frozen)]
struct PyDenoiser {
    inner: LinearDenoiser,
}

#[pymethods]
impl PyDenoiser {
    /// Least-squares fit on (condition, target) image pairs.
    #[staticmethod]
    #[pyo3(signature = (pairs, schedule, buckets = 8, patch_radius = 1, samples_per_pair = 8, seed = 0))]
    fn fit(
        pairs: Vec<(PyRef<'_, PyGray>, PyRef<'_, PyGray>)>,
        schedule: &PySchedule,
        buckets: usize,
        patch_radius: usize,
        samples_per_pair: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let owned: Vec<(GrayImage, GrayImage)> = pairs
            .into_iter()
            .map(|(c, t)| (c.inner.clone(), t.inner.clone()))
            .collect();
        Ok(Self {
            inner: ok(fit_linear_denoiser(
                &owned,
                &schedule.inner,
                buckets,
                patch_radius,
                samples_per_pair,
                seed,
            ))?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ok(LinearDenoiser::load(&path))?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        ok(self.inner.save(&path))
    }

    /// Monte-Carlo denoising loss on one (target, condition) pair.
    fn loss(
        &self,
        target: &PyGray,
        condition: &PyGray,
        schedule: &PySchedule,
        batch: usize,
        seed: u64,
    ) -> PyResult<f64> {
        ok(ddpm_loss(
            &self.inner,
            &target.inner,
            &condition.inner,
            &schedule.inner,
            batch,
            seed,
        ))
    }

    /// Ancestral sampling conditioned on an image; clamped to [0, 1].
    #[pyo3(signature = (condition, schedule, k = 1, seed = 0, variance = "posterior"))]
    fn sample(
        &self,
        condition: &PyGray,
        schedule: &PySchedule,
        k: usize,
        seed: u64,
        variance: &str,
    ) -> PyResult<Vec<PyGray>> {
        Ok(stack_to_list(ok(sample(
            &self.inner,
            &condition.inner,
            &schedule.inner,
            k,
            seed,
            parse_variance(variance)?,
        ))?))
    }
}

/// Deterministic per-pattern median generator.
#[pyclass(name = "PatternGenerator", frozen)]
struct PyPatternGenerator {
    inner: PatternGenerator,
}

#[pymethods]
impl PyPatternGenerator {
    /// Fit lower-median pattern values from (template, print) pairs.
    #[staticmethod]
    fn fit(
        pairs: Vec<(PyRef<'_, PyTemplate>, PyRef<'_, PyGray>)>,
        direction: &str,
        scale: usize,
    ) -> PyResult<Self> {
        let owned = template_pairs(pairs);
        Ok(Self {
            inner: ok(fit_pattern_generator(
                parse_direction(direction)?,
                scale,
                &owned,
            ))?,
        })
    }

    #[getter]
    fn direction(&self) -> &'static str {
        self.inner.direction().as_str()
    }

    #[getter]
    fn scale(&self) -> usize {
        self.inner.scale()
    }

    /// Template to deterministic print estimate (print direction).
    fn generate_print(&self, template: &PyTemplate) -> PyResult<PyGray> {
        Ok(PyGray {
            inner: ok(self.inner.generate_print(&template.inner))?,
        })
    }

    /// Print to deterministic template-domain estimate (estimate direction).
    fn generate_estimate(&self, print: &PyGray) -> PyResult<PyGray> {
        Ok(PyGray {
            inner: ok(self.inner.generate_estimate(&print.inner))?,
        })
    }
}

/// Mean squared error over pixels.
#[pyfunction(name = "mse")]
fn py_mse(a: &PyGray, b: &PyGray) -> PyResult<f64> {
    ok(mse(&a.inner, &b.inner))
}

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03, L 1).
#[pyfunction(name = "ssim")]
fn py_ssim(a: &PyGray, b: &PyGray) -> PyResult<f64> {
    ok(ssim(&a.inner, &b.inner))
}

/// Fraction of differing bits.
#[pyfunction(name = "hamming")]
fn py_hamming(a: &PyTemplate, b: &PyTemplate) -> PyResult<f64> {
    ok(hamming(&a.inner, &b.inner))
}

/// Sample Pearson correlation of two equal-length sequences.
#[pyfunction(name = "pearson")]
fn py_pearson(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    ok(pearson(&u, &v))
}

fn to_stack(images: Vec<PyRef<'_, PyGray>>) -> PyResult<RealizationStack> {
    ok(RealizationStack::new(
        images.iter().map(|im| im.inner.clone()).collect(),
    ))
}

/// Collapse realizations into one image ('mean' or 'median').
#[pyfunction(name = "aggregate")]
fn py_aggregate(images: Vec<PyRef<'_, PyGray>>, mode: &str) -> PyResult<PyGray> {
    let stack = to_stack(images)?;
    Ok(PyGray {
        inner: ok(aggregate(&stack, parse_mode(mode)?))?,
    })
}

/// Score realizations against a reference under one (mode, metric) cell.
#[pyfunction(name = "aggregate_score")]
fn py_aggregate_score(
    images: Vec<PyRef<'_, PyGray>>,
    reference: &PyGray,
    mode: &str,
    metric: &str,
) -> PyResult<f64> {
    let stack = to_stack(images)?;
    ok(aggregate_score(
        &stack,
        &reference.inner,
        parse_mode(mode)?,
        parse_metric(metric)?,
    ))
}

/// Full sweep over ks x modes x metrics; rows of (k, mode, metric, score).
#[pyfunction(name = "k_sweep")]
fn py_k_sweep(
    images: Vec<PyRef<'_, PyGray>>,
    reference: &PyGray,
    ks: Vec<usize>,
    modes: Vec<String>,
    metrics: Vec<String>,
) -> PyResult<Vec<(usize, &'static str, &'static str, f64)>> {
    let stack = to_stack(images)?;
    let modes = modes
        .iter()
        .map(|m| parse_mode(m))
        .collect::<PyResult<Vec<_>>>()?;
    let metrics = metrics
        .iter()
        .map(|m| parse_metric(m))
        .collect::<PyResult<Vec<_>>>()?;
    let curve = ok(k_sweep(&stack, &reference.inner, &ks, &modes, &metrics))?;
    Ok(curve
        .rows
        .iter()
        .map(|r| (r.k, r.mode.as_str(), r.metric.as_str(), r.score))
        .collect())
}

/// Per-pixel population standard deviation across realizations.
#[pyfunction(name = "std_map")]
fn py_std_map(images: Vec<PyRef<'_, PyGray>>) -> PyResult<PyGray> {
    let stack = to_stack(images)?;
    let map = ok(std_map(&stack))?;
    Ok(PyGray {
        inner: ok(GrayImage::new(
            map.width(),
            map.height(),
            map.values().to_vec(),
        ))?,
    })
}

/// Per-pattern (pattern, count, mean, std, flip_prob) rows for one template
/// and its realizations.
#[pyfunction(name = "pattern_statistics")]
fn py_pattern_statistics(
    template: &PyTemplate,
    images: Vec<PyRef<'_, PyGray>>,
    scale: usize,
) -> PyResult<Vec<(u16, u64, f64, f64, f64)>> {
    let stack = to_stack(images)?;
    let table = ok(analysis::pattern_statistics(&template.inner, &stack, scale))?;
    Ok(table
        .entries()
        .iter()
        .map(|e| (e.pattern, e.count, e.mean, e.std, e.flip_prob))
        .collect())
}

/// Exact one-sided Wilcoxon signed-rank test; returns (n, w_plus, p_value)
/// with p = P(W+ <= observed) under the symmetric null.
#[pyfunction(name = "wilcoxon")]
fn py_wilcoxon(diffs: Vec<f64>) -> PyResult<(usize, f64, f64)> {
    let r = ok(wilcoxon_signed_rank(&diffs))?;
    Ok((r.n, r.w_plus, r.p_value))
}

/// Weighted four-term l1 objective over one training tuple; returns the
/// breakdown as a dict.
#[pyfunction(name = "turbo_loss")]
#[pyo3(signature = (z, z_tilde, z_hat, x, x_hat, x_tilde, lambda_t = 1.0, lambda_d = 1.0, lambda_r = 1.0))]
#[allow(clippy::too_many_arguments)]
fn py_turbo_loss<'py>(
    py: Python<'py>,
    z: &PyTemplate,
    z_tilde: &PyGray,
    z_hat: &PyGray,
    x: &PyGray,
    x_hat: &PyGray,
    x_tilde: &PyGray,
    lambda_t: f64,
    lambda_d: f64,
    lambda_r: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let z_gray = {
        let pixels = z.inner.bits().iter().map(|&b| f64::from(b)).collect();
        GrayImage::new(z.inner.width(), z.inner.height(), pixels).expect("bits are valid pixels")
    };
    let tuple = ok(TurboTuple::new(
        z_gray,
        z_tilde.inner.clone(),
        z_hat.inner.clone(),
        x.inner.clone(),
        x_hat.inner.clone(),
        x_tilde.inner.clone(),
    ))?;
    let weights = ok(TurboWeights::new(lambda_t, lambda_d, lambda_r))?;
    let out = ok(turbo_loss_unet(&tuple, &weights))?;
    let d = PyDict::new(py);
    d.set_item("l_z_tilde", out.l_z_tilde)?;
    d.set_item("l_x_hat", out.l_x_hat)?;
    d.set_item("l_x_tilde", out.l_x_tilde)?;
    d.set_item("l_z_hat", out.l_z_hat)?;
    d.set_item("total", out.total)?;
    Ok(d)
}

/// Monte-Carlo loss of the all-zeros baseline denoiser.
#[pyfunction(name = "zero_denoiser_loss")]
fn py_zero_denoiser_loss(
    target: &PyGray,
    condition: &PyGray,
    schedule: &PySchedule,
    batch: usize,
    seed: u64,
) -> PyResult<f64> {
    ok(ddpm_loss(
        &ZeroDenoiser,
        &target.inner,
        &condition.inner,
        &schedule.inner,
        batch,
        seed,
    ))
}

#[pymodule]
fn cdp_twin(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTemplate>()?;
    m.add_class::<PyGray>()?;
    m.add_class::<PyChannelModel>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyDenoiser>()?;
    m.add_class::<PyPatternGenerator>()?;
    m.add_function(wrap_pyfunction!(py_mse, m)?)?;
    m.add_function(wrap_pyfunction!(py_ssim, m)?)?;
    m.add_function(wrap_pyfunction!(py_hamming, m)?)?;
    m.add_function(wrap_pyfunction!(py_pearson, m)?)?;
    m.add_function(wrap_pyfunction!(py_aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(py_aggregate_score, m)?)?;
    m.add_function(wrap_pyfunction!(py_k_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(py_std_map, m)?)?;
    m.add_function(wrap_pyfunction!(py_pattern_statistics, m)?)?;
    m.add_function(wrap_pyfunction!(py_wilcoxon, m)?)?;
    m.add_function(wrap_pyfunction!(py_turbo_loss, m)?)?;
    m.add_function(wrap_pyfunction!(py_zero_denoiser_loss, m)?)?;
    Ok(())
}
