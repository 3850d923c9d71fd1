//! Python bindings: geometry types, the per-stage operations, and the
//! simulate / calibrate / evaluate commands.

use std::path::PathBuf;

use nalgebra::{Vector2, Vector3};
use pyo3::create_exception;
use pyo3::exceptions::PyRuntimeError;
use pyo3::prelude::*;

use sslcal::config::PipelineConfig;
use sslcal::evaluation::normalized_reprojection_error as nre;
use sslcal::extrinsic::{Correspondence, CorrespondenceSet};
use sslcal::integration::IntegrationParams;
use sslcal::refinement::RefinementParams;
use sslcal::simulator::{sample_board_poses, SimConfig};

create_exception!(pysslcal, SslcalError, PyRuntimeError);

fn err(e: sslcal::Error) -> PyErr {
    SslcalError::new_err(format!("{}: {e}", e.kind()))
}

/// A serializable value as plain Python objects.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| SslcalError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn cloud(points: &[[f64; 4]]) -> sslcal::PointCloud {
    sslcal::PointCloud::new(points.iter().map(|p| sslcal::Point3::new(p[0], p[1], p[2], p[3])).collect())
}

#[pyclass(name = "CheckerboardSpec", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySpec(sslcal::CheckerboardSpec);

#[pymethods]
impl PySpec {
    #[new]
    fn new(n_w: usize, n_h: usize, g_s: f64) -> PyResult<Self> {
        sslcal::CheckerboardSpec::new(n_w, n_h, g_s).map(Self).map_err(err)
    }

    #[getter]
    fn n_w(&self) -> usize {
        self.0.n_w
    }

    #[getter]
    fn n_h(&self) -> usize {
        self.0.n_h
    }

    #[getter]
    fn g_s(&self) -> f64 {
        self.0.g_s
    }

    fn __repr__(&self) -> String {
        format!("CheckerboardSpec({}, {}, {})", self.0.n_w, self.0.n_h, self.0.g_s)
    }
}

#[pyclass(name = "CameraIntrinsics", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyIntrinsics(sslcal::CameraIntrinsics);

#[pymethods]
impl PyIntrinsics {
    #[new]
    #[pyo3(signature = (fx, fy, cx, cy, width, height, k1=0.0, k2=0.0, p1=0.0, p2=0.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        k1: f64,
        k2: f64,
        p1: f64,
        p2: f64,
    ) -> PyResult<Self> {
        let i = sslcal::CameraIntrinsics {
            k1,
            k2,
            p1,
            p2,
            ..sslcal::CameraIntrinsics::pinhole(fx, fy, cx, cy, width, height)
        };
        i.validate().map_err(err)?;
        Ok(Self(i))
    }

    /// Pixel of a camera-frame point.
    fn project(&self, p: [f64; 3]) -> PyResult<(f64, f64)> {
        let uv = sslcal::project_point(&Vector3::from(p), &self.0).map_err(err)?;
        Ok((uv.x, uv.y))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0)
    }
}

#[pyclass(name = "RigidTransform", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTransform(sslcal::RigidTransform);

#[pymethods]
impl PyTransform {
    /// From a 4×4 homogeneous matrix given as nested rows.
    #[new]
    fn new(matrix: Vec<Vec<f64>>) -> PyResult<Self> {
        let flat: Vec<f64> = matrix.into_iter().flatten().collect();
        sslcal::RigidTransform::from_row_major(&flat).map(Self).map_err(err)
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(sslcal::RigidTransform::identity())
    }

    /// Axis-angle rotation in radians plus a translation.
    #[staticmethod]
    fn from_axis_angle(rotation: [f64; 3], translation: [f64; 3]) -> Self {
        Self(sslcal::RigidTransform::from_axis_angle(
            Vector3::from(rotation),
            Vector3::from(translation),
        ))
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        self.0.to_row_major().chunks(4).map(|r| r.to_vec()).collect()
    }

    fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        self.0.apply(&Vector3::from(p)).into()
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    /// `self ∘ other`.
    fn compose(&self, other: PyRef<'_, PyTransform>) -> Self {
        Self(self.0.compose(&other.0))
    }

    /// Rotation angle (degrees) and translation distance to `other`.
    fn distance_to(&self, other: PyRef<'_, PyTransform>) -> (f64, f64) {
        sslcal::pipeline::pose_error(&self.0, &other.0)
    }

    fn __repr__(&self) -> String {
        format!("RigidTransform({:?})", self.matrix())
    }
}

/// Indices of the points kept by statistical outlier removal; points are
/// `(x, y, z, intensity)`.
#[pyfunction]
#[pyo3(signature = (points, k=20, scale_std=1.0))]
fn remove_statistical_outliers(py: Python<'_>, points: Vec<[f64; 4]>, k: usize, scale_std: f64) -> Vec<usize> {
    let params = IntegrationParams {
        k,
        scale_std,
        ..IntegrationParams::default()
    };
    py.detach(|| sslcal::integration::remove_statistical_outliers(&cloud(&points), &params).kept)
}

/// Iterative plane refinement: `(plane [a, b, c, d], survivor counts,
/// refined points)`.
#[pyfunction]
#[pyo3(signature = (points, seed=0))]
fn refine_plane(py: Python<'_>, points: Vec<[f64; 4]>, seed: u64) -> PyResult<([f64; 4], Vec<usize>, Vec<[f64; 4]>)> {
    let r = py
        .detach(|| sslcal::refinement::iterative_plane_refine(&cloud(&points), &RefinementParams::default(), seed))
        .map_err(err)?;
    let p = r.plane;
    let pts = r.cloud.points.iter().map(|q| [q.x, q.y, q.z, q.intensity]).collect();
    Ok(([p.a, p.b, p.c, p.d], r.survivors, pts))
}

/// Board corners in canonical order from raw frames of one placement.
#[pyfunction]
#[pyo3(signature = (frames, spec, seed=0))]
fn extract_lidar_corners(
    py: Python<'_>,
    frames: Vec<Vec<[f64; 4]>>,
    spec: PyRef<'_, PySpec>,
    seed: u64,
) -> PyResult<Vec<[f64; 3]>> {
    let cfg = PipelineConfig {
        spec: spec.0,
        ..PipelineConfig::default()
    };
    let clouds: Vec<sslcal::PointCloud> = frames.iter().map(|f| cloud(f)).collect();
    let c = py
        .detach(|| sslcal::pipeline::extract_lidar_corners(&clouds, &cfg, seed))
        .map_err(err)?;
    Ok(c.corners.iter().map(|p| [p.x, p.y, p.z]).collect())
}

fn correspondences(
    points3d: &[[f64; 3]],
    points2d: &[[f64; 2]],
    placement_ids: Option<Vec<usize>>,
    intrinsics: &sslcal::CameraIntrinsics,
) -> PyResult<CorrespondenceSet> {
    if points3d.len() != points2d.len() || placement_ids.as_ref().is_some_and(|p| p.len() != points3d.len()) {
        return Err(SslcalError::new_err("dimension_mismatch: inputs differ in length"));
    }
    let entries = (0..points3d.len())
        .map(|k| Correspondence {
            placement_id: placement_ids.as_ref().map_or(0, |p| p[k]),
            corner_index: k,
            p3d: Vector3::from(points3d[k]),
            p2d: Vector2::from(points2d[k]),
        })
        .collect();
    Ok(CorrespondenceSet::new(entries, *intrinsics))
}

/// Robust extrinsic from 3D-2D pairs: `(extrinsic, inlier mask, errors)`.
#[pyfunction]
#[pyo3(signature = (points3d, points2d, intrinsics, delta_reproj=2.0, iterations=500, seed=0, placement_ids=None))]
#[allow(clippy::too_many_arguments)]
fn calibrate(
    py: Python<'_>,
    points3d: Vec<[f64; 3]>,
    points2d: Vec<[f64; 2]>,
    intrinsics: PyRef<'_, PyIntrinsics>,
    delta_reproj: f64,
    iterations: usize,
    seed: u64,
    placement_ids: Option<Vec<usize>>,
) -> PyResult<(PyTransform, Vec<bool>, Vec<f64>)> {
    let corr = correspondences(&points3d, &points2d, placement_ids, &intrinsics.0)?;
    let r = py
        .detach(|| sslcal::extrinsic::calibrate(&corr, delta_reproj, iterations, seed))
        .map_err(err)?;
    Ok((PyTransform(r.extrinsic), r.inlier_mask, r.per_entry_error))
}

/// Range-weighted reprojection error report as a dict.
#[pyfunction]
fn normalized_reprojection_error<'py>(
    py: Python<'py>,
    points3d: Vec<[f64; 3]>,
    points2d: Vec<[f64; 2]>,
    extrinsic: PyRef<'_, PyTransform>,
    intrinsics: PyRef<'_, PyIntrinsics>,
) -> PyResult<Bound<'py, PyAny>> {
    let c3: Vec<Vector3<f64>> = points3d.iter().map(|p| Vector3::from(*p)).collect();
    let c2: Vec<Vector2<f64>> = points2d.iter().map(|p| Vector2::from(*p)).collect();
    let r = nre(&c3, &c2, &extrinsic.0, &intrinsics.0).map_err(err)?;
    to_py(py, &r)
}

/// Ground-truth corner pairs of `placements` simulated board poses:
/// `(points3d, points2d, placement_ids, extrinsic, intrinsics)`.
#[pyfunction]
#[pyo3(signature = (placements=6, seed=0))]
#[allow(clippy::type_complexity)]
fn simulate_corners(
    placements: usize,
    seed: u64,
) -> PyResult<(Vec<[f64; 3]>, Vec<[f64; 2]>, Vec<usize>, PyTransform, PyIntrinsics)> {
    let sim = SimConfig {
        n_placements: placements,
        ..SimConfig::default()
    };
    sim.validate().map_err(err)?;
    let (e, i) = sim.rig();
    let (mut c3, mut c2, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for (id, pose) in sample_board_poses(&sim, seed).map_err(err)?.into_iter().enumerate() {
        let scene = sim.scene(pose);
        for (p, q) in scene.corners3d_gt().iter().zip(scene.corners2d_gt().map_err(err)?) {
            c3.push([p.x, p.y, p.z]);
            c2.push([q.x, q.y]);
            ids.push(id);
        }
    }
    Ok((c3, c2, ids, PyTransform(e), PyIntrinsics(i)))
}

fn pipeline_config(config: Option<PathBuf>, seed: u64) -> PyResult<PipelineConfig> {
    let mut cfg = match config {
        Some(p) => PipelineConfig::load(&p).map_err(err)?,
        None => PipelineConfig::default(),
    };
    cfg.seed = seed;
    Ok(cfg)
}

/// Writes a synthetic dataset; returns the summary.
#[pyfunction]
#[pyo3(signature = (output, placements=6, frames=50, seed=0, config=None))]
fn simulate<'py>(
    py: Python<'py>,
    output: PathBuf,
    placements: usize,
    frames: usize,
    seed: u64,
    config: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = pipeline_config(config, seed)?;
    cfg.simulation.n_placements = placements;
    cfg.simulation.frames = frames;
    let s = py.detach(|| sslcal::pipeline::cmd_simulate(&cfg, &output)).map_err(err)?;
    to_py(py, &s)
}

/// Calibrates a dataset directory and writes the record to `output`.
#[pyfunction]
#[pyo3(signature = (dataset, output, seed=0, config=None))]
fn calibrate_dataset<'py>(
    py: Python<'py>,
    dataset: PathBuf,
    output: PathBuf,
    seed: u64,
    config: Option<PathBuf>,
) -> PyResult<(PyTransform, Bound<'py, PyAny>)> {
    let cfg = pipeline_config(config, seed)?;
    let r = py
        .detach(|| sslcal::pipeline::cmd_calibrate(&cfg, &dataset, &output, false))
        .map_err(err)?;
    Ok((PyTransform(r.extrinsic), to_py(py, &r)?))
}

/// Scores a calibration record against a dataset; writes overlays.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, record: PathBuf, dataset: PathBuf, output: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let r = py
        .detach(|| sslcal::pipeline::cmd_evaluate(&record, &dataset, &output))
        .map_err(err)?;
    to_py(py, &r)
}

#[pymodule]
fn pysslcal(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SslcalError", m.py().get_type::<SslcalError>())?;
    m.add_class::<PySpec>()?;
    m.add_class::<PyIntrinsics>()?;
    m.add_class::<PyTransform>()?;
    m.add_function(wrap_pyfunction!(remove_statistical_outliers, m)?)?;
    m.add_function(wrap_pyfunction!(refine_plane, m)?)?;
    m.add_function(wrap_pyfunction!(extract_lidar_corners, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_reprojection_error, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_corners, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
