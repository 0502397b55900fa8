//! Python bindings: the pipeline's main types and operations as an
//! extension module.
//!
//! Build with `cargo build -p pothole-py --features extension-module` and
//! import the produced `libpothole_py.so` as `pothole_py` (see
//! `python/smoke_test.py` for the copy-and-import dance). Errors surface as
//! `ValueError` carrying the library's message.

use std::path::Path;

use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;

use pothole_core as pc;
use pothole_core::attention::{AttentionScheme, LevelParams};

fn verr(e: pc::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

// ── rasters ────────────────────────────────────────────────────────────────

/// Dense disparity image; invalid pixels are NaN.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct DisparityImage {
    inner: pc::DisparityImage,
}

#[pymethods]
impl DisparityImage {
    /// Row-major values; non-finite entries mark invalid pixels.
    #[new]
    fn new(width: usize, height: usize, values: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: pc::DisparityImage::new(width, height, values).map_err(verr)? })
    }

    #[staticmethod]
    fn load(path: &str, scale: f64) -> PyResult<Self> {
        Ok(Self { inner: pc::load_disparity(Path::new(path), scale).map_err(verr)? })
    }

    fn save(&self, path: &str, scale: f64) -> PyResult<()> {
        pc::save_disparity(Path::new(path), &self.inner, scale).map_err(verr)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn get(&self, u: usize, v: usize) -> PyResult<f64> {
        self.bounds(u, v)?;
        Ok(self.inner.get(u, v))
    }

    fn is_valid(&self, u: usize, v: usize) -> PyResult<bool> {
        self.bounds(u, v)?;
        Ok(self.inner.is_valid(u, v))
    }

    fn valid_count(&self) -> usize {
        self.inner.valid_count()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "DisparityImage({}x{}, {} valid)",
            self.inner.width(),
            self.inner.height(),
            self.inner.valid_count()
        )
    }
}

impl DisparityImage {
    fn bounds(&self, u: usize, v: usize) -> PyResult<()> {
        if u >= self.inner.width() || v >= self.inner.height() {
            return Err(PyIndexError::new_err(format!(
                "({u}, {v}) outside {}x{}",
                self.inner.width(),
                self.inner.height()
            )));
        }
        Ok(())
    }
}

/// Binary pothole mask.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct LabelMask {
    inner: pc::LabelMask,
}

#[pymethods]
impl LabelMask {
    #[new]
    #[pyo3(signature = (width, height, pixels=None))]
    fn new(width: usize, height: usize, pixels: Option<Vec<bool>>) -> PyResult<Self> {
        let inner = match pixels {
            Some(p) => pc::LabelMask::from_pixels(width, height, p).map_err(verr)?,
            None => pc::LabelMask::empty(width, height),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: pc::LabelMask::load(Path::new(path)).map_err(verr)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(Path::new(path)).map_err(verr)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn get(&self, u: usize, v: usize) -> bool {
        u < self.inner.width() && v < self.inner.height() && self.inner.get(u, v)
    }

    fn set(&mut self, u: usize, v: usize, on: bool) -> PyResult<()> {
        if u >= self.inner.width() || v >= self.inner.height() {
            return Err(PyIndexError::new_err(format!(
                "({u}, {v}) outside {}x{}",
                self.inner.width(),
                self.inner.height()
            )));
        }
        self.inner.set(u, v, on);
        Ok(())
    }

    fn area(&self) -> usize {
        self.inner.area()
    }

    fn pixels(&self) -> Vec<bool> {
        self.inner.pixels().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("LabelMask({}x{}, area {})", self.inner.width(), self.inner.height(), self.inner.area())
    }
}

// ── road model ─────────────────────────────────────────────────────────────

/// Fitted road-surface model: rotation phi, scale varkappa, offset kappa,
/// non-negativity shift lambda.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct RoadModel {
    inner: pc::RoadModel,
}

#[pymethods]
impl RoadModel {
    #[new]
    #[pyo3(signature = (phi, varkappa, kappa, lambda=0.0))]
    fn new(phi: f64, varkappa: f64, kappa: f64, lambda: f64) -> PyResult<Self> {
        let inner = pc::RoadModel { phi, varkappa, kappa, lambda };
        inner.validate().map_err(verr)?;
        Ok(Self { inner })
    }

    #[getter]
    fn phi(&self) -> f64 {
        self.inner.phi
    }

    #[getter]
    fn varkappa(&self) -> f64 {
        self.inner.varkappa
    }

    #[getter]
    fn kappa(&self) -> f64 {
        self.inner.kappa
    }

    #[getter]
    fn lambda(&self) -> f64 {
        self.inner.lambda
    }

    fn __repr__(&self) -> String {
        format!(
            "RoadModel(phi={}, varkappa={}, kappa={}, lambda={})",
            self.inner.phi, self.inner.varkappa, self.inner.kappa, self.inner.lambda
        )
    }
}

/// One road fit: the model plus how the angle search ended.
#[pyclass]
struct RoadFit {
    #[pyo3(get)]
    model: RoadModel,
    #[pyo3(get)]
    cost: f64,
    #[pyo3(get)]
    method: String,
}

#[pymethods]
impl RoadFit {
    fn __repr__(&self) -> String {
        format!("RoadFit({}, cost={}, method={})", self.model.__repr__(), self.cost, self.method)
    }
}

#[pyfunction]
#[pyo3(signature = (img, grid_size=1024, tol=1e-10, closed_form=false, robust_refit=false))]
fn fit_and_transform(
    img: &DisparityImage,
    grid_size: usize,
    tol: f64,
    closed_form: bool,
    robust_refit: bool,
) -> PyResult<(RoadFit, DisparityImage)> {
    let cfg = pc::SolverConfig { grid_size, tol, closed_form, robust_refit };
    let (fit, flat) = pc::fit_and_transform(&img.inner, &cfg).map_err(verr)?;
    Ok((
        RoadFit {
            model: RoadModel { inner: fit.model },
            cost: fit.solution.cost,
            method: fit.solution.method.as_str().to_string(),
        },
        DisparityImage { inner: flat },
    ))
}

#[pyfunction]
fn transform(img: &DisparityImage, model: &RoadModel) -> PyResult<DisparityImage> {
    Ok(DisparityImage { inner: pc::transform(&img.inner, &model.inner).map_err(verr)? })
}

#[pyfunction]
fn v_disparity(img: &DisparityImage, bin_width: f64) -> PyResult<Vec<Vec<u64>>> {
    let hist = pc::v_disparity(&img.inner, bin_width).map_err(verr)?;
    Ok((0..hist.rows())
        .map(|v| (0..hist.cols()).map(|b| hist.count(v, b)).collect())
        .collect())
}

// ── detection ──────────────────────────────────────────────────────────────

#[pyfunction]
#[pyo3(signature = (values, bins=256))]
fn otsu_threshold(values: Vec<f64>, bins: usize) -> PyResult<f64> {
    pc::detect::otsu_threshold(&values, bins).map_err(verr)
}

#[pyfunction]
#[pyo3(signature = (tdisp, model, min_area=1))]
fn segment(tdisp: &DisparityImage, model: &RoadModel, min_area: usize) -> PyResult<LabelMask> {
    Ok(LabelMask { inner: pc::detect::segment(&tdisp.inner, &model.inner, min_area).map_err(verr)? })
}

/// `(id, area, (min_u, min_v, max_u, max_v))` per component, ordered by
/// top-left bounding-box corner.
#[pyfunction]
fn connected_components(mask: &LabelMask) -> Vec<(usize, usize, (usize, usize, usize, usize))> {
    pc::detect::connected_components(&mask.inner)
        .into_iter()
        .map(|c| (c.id, c.area, c.bbox))
        .collect()
}

// ── metrics ────────────────────────────────────────────────────────────────

#[pyfunction]
fn confusion(pred: &LabelMask, gt: &LabelMask) -> PyResult<(u64, u64, u64, u64)> {
    let c = pc::metrics::confusion(&pred.inner, &gt.inner).map_err(verr)?;
    Ok((c.true_pos, c.false_pos, c.false_neg, c.true_neg))
}

#[pyfunction]
#[pyo3(signature = (true_pos, false_pos, false_neg, true_neg=0))]
fn fsc_iou(true_pos: u64, false_pos: u64, false_neg: u64, true_neg: u64) -> (f64, f64) {
    let m = pc::metrics::fsc_iou(&pc::ConfusionCounts { true_pos, false_pos, false_neg, true_neg });
    (m.fsc, m.iou)
}

#[pyfunction]
fn mean_metrics(per_image: Vec<(f64, f64)>) -> PyResult<(f64, f64)> {
    let items: Vec<pc::SegMetrics> =
        per_image.iter().map(|&(fsc, iou)| pc::SegMetrics { fsc, iou }).collect();
    pc::metrics::mean_metrics(&items).map_err(verr)
}

// ── synthetic scenes ───────────────────────────────────────────────────────

/// Build a scene from one `key=value ...` description line (see the synth
/// CLI / scenes.txt format) and render it.
#[pyfunction]
fn generate_scene(line: &str) -> PyResult<(DisparityImage, LabelMask, RoadModel)> {
    let spec = pc::synth::SceneSpec::parse_line(line).map_err(verr)?;
    let (disp, mask, model) = pc::synth::generate(&spec).map_err(verr)?;
    Ok((
        DisparityImage { inner: disp },
        LabelMask { inner: mask },
        RoadModel { inner: model },
    ))
}

/// Draw `count` random scenes with the default ranges; returns their
/// description lines (feed each to `generate_scene`).
#[pyfunction]
fn random_scene_lines(count: usize, seed: u64) -> PyResult<Vec<String>> {
    let ranges = pc::synth::SceneRanges::default();
    let mut r = pc::rng::seeded(seed);
    (0..count)
        .map(|_| Ok(pc::synth::random_scene(&ranges, &mut r).map_err(verr)?.to_line()))
        .collect()
}

#[pyfunction]
#[pyo3(signature = (width, height, seed, count_range=(1, 3), axis_range=(8.0, 40.0)))]
fn random_gt_mask(
    width: usize,
    height: usize,
    seed: u64,
    count_range: (usize, usize),
    axis_range: (f64, f64),
) -> PyResult<LabelMask> {
    Ok(LabelMask {
        inner: pc::adaptation::random_gt_mask(width, height, seed, count_range, axis_range)
            .map_err(verr)?,
    })
}

// ── adaptation losses ──────────────────────────────────────────────────────

#[pyfunction]
fn gan_loss(d_real: Vec<f64>, d_fake: Vec<f64>) -> PyResult<f64> {
    let real = pc::adaptation::ProbBatch::new(d_real).map_err(verr)?;
    let fake = pc::adaptation::ProbBatch::new(d_fake).map_err(verr)?;
    Ok(pc::adaptation::gan_loss(&real, &fake))
}

#[pyfunction]
fn cycle_loss(
    width: usize,
    height: usize,
    original: Vec<Vec<f64>>,
    reconstructed: Vec<Vec<f64>>,
) -> PyResult<f64> {
    let a = pc::adaptation::ImageBatch::new(width, height, original).map_err(verr)?;
    let b = pc::adaptation::ImageBatch::new(width, height, reconstructed).map_err(verr)?;
    pc::adaptation::cycle_loss(&a, &b).map_err(verr)
}

#[pyfunction]
fn full_objective(terms: Vec<f64>) -> PyResult<f64> {
    let arr: [f64; 6] = terms
        .try_into()
        .map_err(|v: Vec<f64>| PyValueError::new_err(format!("expected 6 terms, got {}", v.len())))?;
    pc::adaptation::full_objective(&arr).map_err(verr)
}

// ── attention ──────────────────────────────────────────────────────────────

/// NCHW tensor of f64.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Tensor4 {
    inner: pc::Tensor4,
}

#[pymethods]
impl Tensor4 {
    #[new]
    fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: pc::Tensor4::from_vec(n, c, h, w, data).map_err(verr)? })
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize, usize) {
        self.inner.shape()
    }

    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn __repr__(&self) -> String {
        let (n, c, h, w) = self.inner.shape();
        format!("Tensor4({n}x{c}x{h}x{w})")
    }
}

/// Run a per-level attention scheme (e.g. `"pam,cam,cam,cam,dam"`) over one
/// feature map per level. Parameters are drawn from `seed` level by level.
#[pyfunction]
fn apply_scheme(features: Vec<Tensor4>, scheme: &str, seed: u64) -> PyResult<Vec<Tensor4>> {
    let scheme = AttentionScheme::parse(scheme).map_err(verr)?;
    let mut r = pc::rng::seeded(seed);
    let params: Vec<LevelParams> = scheme
        .levels
        .iter()
        .zip(&features)
        .map(|(&kind, x)| LevelParams::seeded_for(kind, x.inner.shape().1, &mut r).map_err(verr))
        .collect::<PyResult<_>>()?;
    let inputs: Vec<pc::Tensor4> = features.iter().map(|t| t.inner.clone()).collect();
    let out = pc::attention::apply_scheme(&inputs, &scheme, &params).map_err(verr)?;
    Ok(out.into_iter().map(|inner| Tensor4 { inner }).collect())
}

// ── module ─────────────────────────────────────────────────────────────────

#[pymodule]
fn pothole_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<DisparityImage>()?;
    m.add_class::<LabelMask>()?;
    m.add_class::<RoadModel>()?;
    m.add_class::<RoadFit>()?;
    m.add_class::<Tensor4>()?;
    m.add_function(wrap_pyfunction!(fit_and_transform, m)?)?;
    m.add_function(wrap_pyfunction!(transform, m)?)?;
    m.add_function(wrap_pyfunction!(v_disparity, m)?)?;
    m.add_function(wrap_pyfunction!(otsu_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(connected_components, m)?)?;
    m.add_function(wrap_pyfunction!(confusion, m)?)?;
    m.add_function(wrap_pyfunction!(fsc_iou, m)?)?;
    m.add_function(wrap_pyfunction!(mean_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(random_scene_lines, m)?)?;
    m.add_function(wrap_pyfunction!(random_gt_mask, m)?)?;
    m.add_function(wrap_pyfunction!(gan_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cycle_loss, m)?)?;
    m.add_function(wrap_pyfunction!(full_objective, m)?)?;
    m.add_function(wrap_pyfunction!(apply_scheme, m)?)?;
    Ok(())
}
