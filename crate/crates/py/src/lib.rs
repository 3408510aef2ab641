//! Python module `dispose`: flow fields, pose-to-field conversion, flow sampling,
//! correspondence maps, the toy guidance pipeline and the invariant suite.

use std::path::PathBuf;

use dispose_core::checks::run_suite;
use dispose_core::correspondence::{
    build_correspondence_map, extract_point_embeddings, rescale_correspondence, FeatureProvider, SyntheticProvider,
};
use dispose_core::flow_sampling;
use dispose_core::guidance_net::{
    build_dataset, sample_batch, save_checkpoint, train, Component, DatasetConfig, GuidancePipeline as CorePipeline,
    NetConfig, NoiseSchedule, TrainConfig, Variant,
};
use dispose_core::motion_field::{
    frame_constraints, propagate_dense, rasterize_sparse_field, PropagatorParams, ReferenceImage, DEFAULT_SIGMA,
};
use dispose_core::pose_io::{self, MotionFieldStack};
use dispose_core::trajectory::{self, build_trajectory, reference_displacements, track_matrix};
use dispose_core::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Image { .. } => PyIOError::new_err(e.to_string()),
        Error::NonFiniteLoss { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Two-channel displacement field `(u, v)` of size `width x height`.
#[pyclass(module = "dispose", frozen, skip_from_py_object)]
#[derive(Clone)]
struct FlowField {
    inner: pose_io::FlowField,
}

#[pymethods]
impl FlowField {
    #[new]
    fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> PyResult<Self> {
        let inner = pose_io::FlowField::from_planes(width, height, u, v).map_err(to_py)?;
        Ok(FlowField { inner })
    }

    #[staticmethod]
    fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            inner: pose_io::FlowField::zeros(width, height),
        }
    }

    #[staticmethod]
    fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        FlowField {
            inner: pose_io::FlowField::constant(width, height, u, v),
        }
    }

    /// Reads a Middlebury `.flo` file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(FlowField {
            inner: pose_io::load_flow(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        pose_io::save_flow(&self.inner, path).map_err(to_py)
    }

    /// Writes the colour-wheel rendering as PNG.
    fn save_png(&self, path: PathBuf) -> PyResult<()> {
        pose_io::render_flow_png(&MotionFieldStack::single(self.inner.clone()), 0, path).map_err(to_py)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn get(&self, x: usize, y: usize) -> PyResult<(f64, f64)> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err(format!(
                "({x}, {y}) outside {}x{}",
                self.inner.width(),
                self.inner.height()
            )));
        }
        Ok(self.inner.get(x, y))
    }

    /// Row-major `u` plane.
    fn u(&self) -> Vec<f64> {
        self.inner.u().to_vec()
    }

    /// Row-major `v` plane.
    fn v(&self) -> Vec<f64> {
        self.inner.v().to_vec()
    }

    fn max_magnitude(&self) -> f64 {
        self.inner.max_magnitude()
    }

    fn nonzero_fraction(&self) -> f64 {
        self.inner.nonzero_fraction()
    }

    fn __repr__(&self) -> String {
        format!(
            "FlowField({}x{}, max|v|={:.4})",
            self.inner.width(),
            self.inner.height(),
            self.inner.max_magnitude()
        )
    }
}

fn wrap(stack: MotionFieldStack) -> Vec<FlowField> {
    stack.into_frames().into_iter().map(|inner| FlowField { inner }).collect()
}

/// Sparse (splatted) and dense (propagated over `reference` or a uniform image)
/// fields for each driven frame of a pose file.
#[pyfunction]
#[pyo3(signature = (poses, reference=None, sigma=DEFAULT_SIGMA, beta=None, tol=None, conf_threshold=trajectory::DEFAULT_CONF_THRESHOLD))]
fn poses_to_fields(
    poses: PathBuf,
    reference: Option<PathBuf>,
    sigma: f64,
    beta: Option<f64>,
    tol: Option<f64>,
    conf_threshold: f64,
) -> PyResult<(Vec<FlowField>, Vec<FlowField>)> {
    let seq = pose_io::load_pose_sequence(poses).map_err(to_py)?;
    let (w, h) = (seq.width(), seq.height());
    let traj = build_trajectory(&seq, conf_threshold).map_err(to_py)?;
    let sparse = rasterize_sparse_field(&track_matrix(&traj), &traj, w, h, sigma).map_err(to_py)?;
    let image = match reference {
        Some(p) => ReferenceImage::load(p).map_err(to_py)?,
        None => ReferenceImage::uniform(w, h, [1.0; 3]),
    };
    let defaults = PropagatorParams::default();
    let params = PropagatorParams {
        beta: beta.unwrap_or(defaults.beta),
        tol: tol.unwrap_or(defaults.tol),
        ..defaults
    };
    let ref_disp = reference_displacements(&traj);
    let dense = (1..=traj.driven_frames())
        .map(|n| {
            let c = frame_constraints(&ref_disp, &traj, n)?;
            if c.is_empty() {
                Ok(pose_io::FlowField::zeros(w, h))
            } else {
                propagate_dense(&image, &c, &params).map(|(f, _)| f)
            }
        })
        .collect::<Result<Vec<_>, Error>>()
        .and_then(|frames| MotionFieldStack::new(w, h, frames))
        .map_err(to_py)?;
    Ok((wrap(sparse), wrap(dense)))
}

/// Watershed keypoint sampling: `(x, y, u, v)` at distance-map peaks between motion edges.
#[pyfunction]
#[pyo3(signature = (field, edge_threshold=flow_sampling::DEFAULT_EDGE_THRESHOLD, kernel=flow_sampling::DEFAULT_KERNEL))]
fn sample_sparse_flow(field: &FlowField, edge_threshold: f64, kernel: usize) -> PyResult<Vec<(usize, usize, f64, f64)>> {
    let s = flow_sampling::sample_sparse_flow(&field.inner, edge_threshold, kernel).map_err(to_py)?;
    Ok(s.samples().iter().map(|p| (p.x, p.y, p.u, p.v)).collect())
}

/// Per driven frame, the occupied pixels of the correspondence map on a
/// `height x width` grid (full resolution by default) as `(x, y, keypoint, embedding)`.
#[pyfunction]
#[pyo3(signature = (poses, feature_dim=8, seed=0, height=None, width=None, conf_threshold=trajectory::DEFAULT_CONF_THRESHOLD))]
#[allow(clippy::type_complexity)]
fn build_correspondence(
    poses: PathBuf,
    feature_dim: usize,
    seed: u64,
    height: Option<usize>,
    width: Option<usize>,
    conf_threshold: f64,
) -> PyResult<Vec<Vec<(usize, usize, usize, Vec<f64>)>>> {
    let seq = pose_io::load_pose_sequence(poses).map_err(to_py)?;
    let traj = build_trajectory(&seq, conf_threshold).map_err(to_py)?;
    let image = ReferenceImage::uniform(seq.width(), seq.height(), [1.0; 3]);
    let features = SyntheticProvider { dp: feature_dim, seed }
        .features(&image)
        .map_err(to_py)?;
    let emb = extract_point_embeddings(&features, &traj).map_err(to_py)?;
    let stack = match (height, width) {
        (None, None) => build_correspondence_map(&emb, &traj),
        (h, w) => rescale_correspondence(&emb, &traj, h.unwrap_or(traj.height()), w.unwrap_or(traj.width())),
    }
    .map_err(to_py)?;
    Ok(stack.frames.into_iter().map(|f| f.columns).collect())
}

/// Toy hybrid-ControlNet guidance pipeline over a frozen denoiser.
#[pyclass(module = "dispose")]
struct GuidancePipeline {
    inner: CorePipeline,
    dataset: DatasetConfig,
}

#[pymethods]
impl GuidancePipeline {
    /// `variant` is `full`, `exp1` or `exp2`; `tiny` selects the smallest network.
    #[new]
    #[pyo3(signature = (variant="full", seed=0, tiny=false))]
    fn new(variant: &str, seed: u64, tiny: bool) -> PyResult<Self> {
        let variant: Variant = variant.parse().map_err(to_py)?;
        let cfg = if tiny { NetConfig::tiny() } else { NetConfig::default() };
        let mut dataset = DatasetConfig::default();
        if tiny {
            dataset.keypoints = 4;
        }
        Ok(GuidancePipeline {
            inner: CorePipeline::new(cfg, variant, seed).map_err(to_py)?,
            dataset,
        })
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant().to_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    /// SHA-256 over a component's weights: `base`, `motion_encoder`, `point_encoder` or `controlnet`.
    fn checksum(&self, component: &str) -> PyResult<String> {
        let c = match component {
            "base" => Component::Base,
            "motion_encoder" => Component::MotionEncoder,
            "point_encoder" => Component::PointEncoder,
            "controlnet" => Component::ControlNet,
            other => return Err(PyValueError::new_err(format!("unknown component {other:?}"))),
        };
        Ok(self.inner.store().checksum(c))
    }

    /// Largest absolute difference between guided and unguided noise predictions
    /// on one random synthetic batch.
    #[pyo3(signature = (batch_size=2, seed=0))]
    fn transparency_gap(&self, batch_size: usize, seed: u64) -> PyResult<f64> {
        let ds = build_dataset(&self.inner, &self.dataset).map_err(to_py)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = sample_batch(&ds, &NoiseSchedule::default(), batch_size, &mut rng).map_err(to_py)?;
        let guided = self.inner.predict(&b.inputs).map_err(to_py)?;
        let plain = self.inner.unguided(&b.inputs.z_t, &b.inputs.timesteps).map_err(to_py)?;
        Ok(guided
            .data()
            .iter()
            .zip(plain.data())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Trains the guidance branches on the synthetic set. Returns
    /// `(per-step losses, held-out loss before, held-out loss after)`.
    #[pyo3(signature = (steps=200, batch_size=4, seed=None))]
    fn train(&mut self, py: Python<'_>, steps: usize, batch_size: usize, seed: Option<u64>) -> PyResult<(Vec<f64>, f64, f64)> {
        let tcfg = TrainConfig {
            steps,
            batch_size,
            seed: seed.unwrap_or(self.inner.seed()),
            ..TrainConfig::default()
        };
        let inner = &mut self.inner;
        let dcfg = &self.dataset;
        let report = py
            .detach(|| {
                let ds = build_dataset(inner, dcfg)?;
                train(inner, &ds, &tcfg)
            })
            .map_err(to_py)?;
        Ok((report.losses, report.eval_before, report.eval_after))
    }

    fn save_checkpoint(&self, dir: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, dir).map(|_| ()).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("GuidancePipeline(variant={:?}, seed={})", self.inner.variant().name(), self.inner.seed())
    }
}

/// Runs the invariant suite (`all` or a module name); returns `(module, name, passed, witness)`.
#[pyfunction]
#[pyo3(signature = (suite="all"))]
fn run_checks(py: Python<'_>, suite: &str) -> PyResult<Vec<(String, String, bool, String)>> {
    let results = py.detach(|| run_suite(suite)).map_err(to_py)?;
    Ok(results
        .into_iter()
        .map(|r| (r.module.to_string(), r.name.to_string(), r.passed, r.witness))
        .collect())
}

#[pymodule]
fn dispose(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<FlowField>()?;
    m.add_class::<GuidancePipeline>()?;
    m.add_function(wrap_pyfunction!(poses_to_fields, m)?)?;
    m.add_function(wrap_pyfunction!(sample_sparse_flow, m)?)?;
    m.add_function(wrap_pyfunction!(build_correspondence, m)?)?;
    m.add_function(wrap_pyfunction!(run_checks, m)?)?;
    Ok(())
}
