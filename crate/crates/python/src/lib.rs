//! Python bindings. Angles are radians, as in the Rust library.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use camproj::cpl::{self, CorrespondenceSet, ParamVector13, N_COMPONENTS};
use camproj::datagen::{generate_records, ParamRanges};
use camproj::estimator::{fit_parameters, SolverConfig};
use camproj::{metrics, Component, PixelObservation, WorldPoint};

fn err(e: camproj::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "CameraParams", from_py_object)]
#[derive(Clone)]
struct PyCameraParams {
    inner: camproj::CameraParams,
}

#[pymethods]
impl PyCameraParams {
    #[new]
    #[pyo3(signature = (fx, fy, u0, v0, b, d, theta_p, tx, ty, tz))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        fx: f64,
        fy: f64,
        u0: f64,
        v0: f64,
        b: f64,
        d: f64,
        theta_p: f64,
        tx: f64,
        ty: f64,
        tz: f64,
    ) -> PyResult<Self> {
        let inner = camproj::CameraParams::from_array([fx, fy, u0, v0, b, d, theta_p, tx, ty, tz]);
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    /// `[fx, fy, u0, v0, b, d, theta_p, tx, ty, tz]`
    fn to_list(&self) -> Vec<f64> {
        self.inner.to_array().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("CameraParams({:?})", self.inner.to_array())
    }
}

fn observations(points: Vec<(f64, f64, Option<f64>)>) -> PyResult<CorrespondenceSet> {
    let obs = points
        .into_iter()
        .map(|(u, v, d)| match d {
            Some(d) => PixelObservation::with_disparity(u, v, d),
            None => PixelObservation::new(u, v),
        })
        .collect();
    CorrespondenceSet::new(obs).map_err(err)
}

fn vec13(v: Vec<f64>) -> PyResult<ParamVector13> {
    let arr: [f64; N_COMPONENTS] = v.try_into().map_err(|v: Vec<f64>| {
        PyValueError::new_err(format!("expected 13 values, got {}", v.len()))
    })?;
    Ok(ParamVector13(arr))
}

#[pyfunction]
#[pyo3(signature = (params, u, v, disparity=None))]
fn project_to_world(
    params: &PyCameraParams,
    u: f64,
    v: f64,
    disparity: Option<f64>,
) -> PyResult<(f64, f64, f64)> {
    let o = match disparity {
        Some(d) => PixelObservation::with_disparity(u, v, d),
        None => PixelObservation::new(u, v),
    };
    let w = camproj::project_to_world(&o, &params.inner).map_err(err)?;
    Ok((w.x, w.y, w.z))
}

/// World point back to `(u, v, disparity)`.
#[pyfunction]
fn world_to_image(params: &PyCameraParams, x: f64, y: f64, z: f64) -> PyResult<(f64, f64, f64)> {
    let p = &params.inner;
    let c = camproj::world_to_camera(&WorldPoint::new(x, y, z), &p.extrinsics).map_err(err)?;
    let o = camproj::camera_to_image(&c, &p.intrinsics, p.extrinsics.b).map_err(err)?;
    Ok((o.u, o.v, o.disparity.unwrap_or(f64::NAN)))
}

/// 3×10 Jacobian of the world point with respect to the camera parameters.
#[pyfunction]
#[pyo3(signature = (params, u, v, disparity=None))]
fn grad_world_point(
    params: &PyCameraParams,
    u: f64,
    v: f64,
    disparity: Option<f64>,
) -> PyResult<Vec<Vec<f64>>> {
    let o = match disparity {
        Some(d) => PixelObservation::with_disparity(u, v, d),
        None => PixelObservation::new(u, v),
    };
    let j = cpl::grad_world_point(&o, &params.inner).map_err(err)?;
    Ok(j.0.iter().map(|r| r.to_vec()).collect())
}

/// `points` is a list of `(u, v, disparity_or_None)`.
#[pyfunction]
fn cpl_loss(gt: Vec<f64>, pred: Vec<f64>, points: Vec<(f64, f64, Option<f64>)>) -> PyResult<f64> {
    cpl::cpl_loss(&vec13(gt)?, &vec13(pred)?, &observations(points)?).map_err(err)
}

/// Returns `(total, per_component)`; with `alpha` the total is `Σ α·L`.
#[pyfunction]
#[pyo3(signature = (gt, pred, points, alpha=None))]
fn decomposed_loss(
    gt: Vec<f64>,
    pred: Vec<f64>,
    points: Vec<(f64, f64, Option<f64>)>,
    alpha: Option<Vec<f64>>,
) -> PyResult<(f64, Vec<f64>)> {
    let (gt, pred, obs) = (vec13(gt)?, vec13(pred)?, observations(points)?);
    let report = match alpha {
        Some(a) => cpl::decomposed_loss_weighted(&gt, &pred, &obs, &vec13(a)?.0),
        None => cpl::decomposed_loss(&gt, &pred, &obs),
    }
    .map_err(err)?;
    Ok((report.total, report.per_param.to_vec()))
}

#[pyclass(name = "AdaptiveWeights")]
struct PyAdaptiveWeights {
    inner: cpl::AdaptiveWeights,
}

#[pymethods]
impl PyAdaptiveWeights {
    /// `active` (13 booleans) leaves the `False` terms out of the
    /// balancing; they keep weight 1.
    #[new]
    #[pyo3(signature = (decay=0.99, active=None))]
    fn new(decay: f64, active: Option<Vec<bool>>) -> PyResult<Self> {
        let inner = match active {
            Some(a) => {
                let mask: [bool; N_COMPONENTS] = a.try_into().map_err(|a: Vec<bool>| {
                    PyValueError::new_err(format!("expected 13 flags, got {}", a.len()))
                })?;
                cpl::AdaptiveWeights::with_active(decay, mask)
            }
            None => cpl::AdaptiveWeights::new(decay),
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    fn update(&mut self, losses: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.update(&vec13(losses)?.0).to_vec())
    }

    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.inner.alpha().to_vec()
    }
}

#[pyfunction]
fn nmae(targets: Vec<f64>, preds: Vec<f64>) -> PyResult<f64> {
    metrics::nmae(&targets, &preds).map_err(err)
}

#[pyfunction]
fn hfov(f: f64, w: f64) -> PyResult<f64> {
    metrics::hfov(f, w).map_err(err)
}

#[pyfunction]
fn hfov_accuracy(
    gt_f: Vec<f64>,
    pred_f: Vec<f64>,
    w: f64,
    thresholds: Vec<f64>,
) -> PyResult<Vec<f64>> {
    metrics::hfov_accuracy(&gt_f, &pred_f, w, &thresholds).map_err(err)
}

/// Synthetic records as dicts with keys `params` (13 values, pitch in
/// radians), `points` (u, v, disparity) and `world` (X, Y, Z).
#[pyfunction]
#[pyo3(signature = (preset, configs, points, noise=0.0, seed=0))]
fn generate(
    py: Python<'_>,
    preset: &str,
    configs: usize,
    points: usize,
    noise: f64,
    seed: u64,
) -> PyResult<Vec<Py<PyAny>>> {
    let ranges = ParamRanges::preset(preset).map_err(err)?;
    let records = generate_records(&ranges, configs, points, noise, seed).map_err(err)?;
    records
        .iter()
        .map(|r| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("config_id", r.config_id)?;
            d.set_item("params", r.params.0.to_vec())?;
            let pts: Vec<(f64, f64, Option<f64>)> = r
                .observations
                .observations()
                .iter()
                .map(|o| (o.u, o.v, o.disparity))
                .collect();
            d.set_item("points", pts)?;
            let world: Vec<(f64, f64, f64)> = r.world.iter().map(|w| (w.x, w.y, w.z)).collect();
            d.set_item("world", world)?;
            Ok(d.into_any().unbind())
        })
        .collect()
}

/// Runs the Adam solver; `fix` names parameters held at `init`.
/// Returns `(params, loss_trace, converged)`.
#[pyfunction]
#[pyo3(signature = (points, world, init, fix=Vec::new(), max_epochs=200, learning_rate=1e-3, seed=0))]
#[allow(clippy::too_many_arguments)]
fn fit(
    points: Vec<(f64, f64, Option<f64>)>,
    world: Vec<(f64, f64, f64)>,
    init: &PyCameraParams,
    fix: Vec<String>,
    max_epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> PyResult<(PyCameraParams, Vec<f64>, bool)> {
    let fixed = fix
        .iter()
        .map(|s| s.parse::<Component>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let cfg = SolverConfig {
        max_epochs,
        learning_rate,
        seed,
        fixed,
        ..SolverConfig::default()
    };
    let world: Vec<WorldPoint> = world
        .into_iter()
        .map(|(x, y, z)| WorldPoint::new(x, y, z))
        .collect();
    let r = fit_parameters(&observations(points)?, &world, &init.inner, &cfg).map_err(err)?;
    Ok((
        PyCameraParams { inner: r.params },
        r.loss_trace,
        r.converged,
    ))
}

#[pymodule]
#[pyo3(name = "camproj")]
fn camproj_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCameraParams>()?;
    m.add_class::<PyAdaptiveWeights>()?;
    m.add_function(wrap_pyfunction!(project_to_world, m)?)?;
    m.add_function(wrap_pyfunction!(world_to_image, m)?)?;
    m.add_function(wrap_pyfunction!(grad_world_point, m)?)?;
    m.add_function(wrap_pyfunction!(cpl_loss, m)?)?;
    m.add_function(wrap_pyfunction!(decomposed_loss, m)?)?;
    m.add_function(wrap_pyfunction!(nmae, m)?)?;
    m.add_function(wrap_pyfunction!(hfov, m)?)?;
    m.add_function(wrap_pyfunction!(hfov_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    Ok(())
}
