//! Python bindings: material tables, projector, segmentation, lasso decomposition,
//! metrics, raster files and the staged pipeline.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rd::config::{Method, RunConfig};
use rd::decomp::{lasso_admm_pixels, AdmmParams};
use rd::materials::{bundled, effective_mu_matrix, EdgeSide, EnergyBin, EnergyGrid, DetectorResponse};
use rd::phantom::ImageGrid;
use rd::pipeline::{cmd_pipeline, Layout};
use rd::projector::Geometry;
use rd::raster::{Raster, RasterData};
use rd::Error;

fn to_py(e: Error) -> PyErr {
    match e.root() {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(PyValueError::new_err("ragged rows"));
    }
    Array2::from_shape_vec((nr, nc), rows.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Bundled attenuation table for one material.
#[pyclass(name = "MaterialTable", frozen)]
struct PyMaterialTable {
    inner: rd::materials::MaterialTable,
}

#[pymethods]
impl PyMaterialTable {
    #[staticmethod]
    fn bundled(name: &str) -> PyResult<Self> {
        Ok(PyMaterialTable {
            inner: bundled::table(name).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyMaterialTable {
            inner: rd::materials::MaterialTable::load(path).map_err(to_py)?,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn edges(&self) -> Vec<f64> {
        self.inner.edges()
    }

    /// Linear attenuation (1/cm) at the reference density; `above` picks the high side of an edge.
    #[pyo3(signature = (energy, above = true))]
    fn mu(&self, energy: f64, above: bool) -> PyResult<f64> {
        let side = if above { EdgeSide::Right } else { EdgeSide::Left };
        self.inner.mu_at(energy, side).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("MaterialTable({:?}, {:.1}-{:.1} keV)", self.inner.name(), self.inner.min_energy(), self.inner.max_energy())
    }
}

/// Effective attenuation matrix (bins x materials) for the bundled spectrum.
#[pyfunction]
#[pyo3(signature = (materials, bins))]
fn mu_matrix(materials: Vec<String>, bins: Vec<(f64, f64)>) -> PyResult<Vec<Vec<f64>>> {
    let names: Vec<&str> = materials.iter().map(String::as_str).collect();
    let tables = bundled::tables(&names).map_err(to_py)?;
    let spectrum = bundled::spectrum_80kvp();
    let bins = bins.into_iter().map(|(lo, hi)| EnergyBin::new(lo, hi)).collect::<rd::Result<Vec<_>>>().map_err(to_py)?;
    let grid = EnergyGrid::new(spectrum.grid().energies().to_vec()).map_err(to_py)?;
    let response = DetectorResponse::ideal(grid, bins).map_err(to_py)?;
    let m = effective_mu_matrix(&spectrum, &response, &tables).map_err(to_py)?;
    Ok(to_rows(m.entries()))
}

/// Parallel-beam scanner over a square-pixel image.
#[pyclass(name = "Geometry", frozen)]
struct PyGeometry {
    inner: Geometry,
}

#[pymethods]
impl PyGeometry {
    #[new]
    #[pyo3(signature = (width, height, pixel_size, n_detectors, detector_spacing, n_views))]
    fn new(width: usize, height: usize, pixel_size: f64, n_detectors: usize, detector_spacing: f64, n_views: usize) -> PyResult<Self> {
        let grid = ImageGrid::new(width, height, pixel_size).map_err(to_py)?;
        Ok(PyGeometry {
            inner: Geometry::parallel(grid, n_detectors, detector_spacing, n_views).map_err(to_py)?,
        })
    }

    /// Line integrals of an image (rows of pixels), one row per view.
    fn project(&self, image: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let a = to_array(image)?;
        Ok(to_rows(&rd::projector::forward_project(a.view(), &self.inner).map_err(to_py)?))
    }

    /// Adjoint of `project`.
    fn back_project(&self, sinogram: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let s = to_array(sinogram)?;
        Ok(to_rows(&rd::projector::back_project(s.view(), &self.inner).map_err(to_py)?))
    }

    #[getter]
    fn n_views(&self) -> usize {
        self.inner.n_views()
    }
}

/// Fits a 1-D Gaussian mixture; returns (weights, means, variances, log_likelihood).
#[pyfunction]
#[pyo3(signature = (values, k, seed = 0))]
fn gmm_fit(values: Vec<f64>, k: usize, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    let g = rd::segmentation::gmm_fit(&values, k, seed).map_err(to_py)?;
    Ok((g.weights, g.means, g.variances, g.log_likelihood))
}

/// Nonnegative per-pixel lasso: `y` is pixels x bins, `m` is bins x materials.
#[pyfunction]
#[pyo3(signature = (y, m, lam, max_iter = 2000))]
fn lasso(y: Vec<Vec<f64>>, m: Vec<Vec<f64>>, lam: f64, max_iter: usize) -> PyResult<(Vec<Vec<f64>>, bool)> {
    let y = to_array(y)?;
    let m = to_array(m)?;
    let params = AdmmParams {
        lambda: lam,
        max_iter,
        ..AdmmParams::default()
    };
    let out = lasso_admm_pixels(y.view(), m.view(), &params).map_err(to_py)?;
    Ok((to_rows(&out.x), out.converged))
}

#[pyfunction]
fn normalized_error(x: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<f64> {
    let x = to_array(x)?;
    let t = to_array(truth)?;
    rd::metrics::normalized_euclidean(x.view(), t.view()).map_err(to_py)
}

#[pyfunction]
fn format_sig6(v: f64) -> String {
    rd::metrics::format_sig6(v)
}

/// Reads a raster file: (width, height, channels, kind, metadata_json, flat [c][y][x] data).
#[pyfunction]
fn read_raster(path: PathBuf) -> PyResult<(usize, usize, usize, String, String, Vec<f64>)> {
    let r = Raster::read(path).map_err(to_py)?;
    let data = match &r.data {
        RasterData::F32(v) => v.iter().map(|&x| x as f64).collect(),
        RasterData::F64(v) => v.clone(),
        RasterData::I32(v) => v.iter().map(|&x| x as f64).collect(),
    };
    let meta = serde_json::to_string(&r.metadata).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((r.width, r.height, r.channels, r.kind, meta, data))
}

/// Runs every stage; returns the executed flag of each stage.
#[pyfunction]
#[pyo3(signature = (out, config = None, seed = None, methods = None, resume = false))]
fn run_pipeline(
    py: Python<'_>,
    out: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    methods: Option<&str>,
    resume: bool,
) -> PyResult<Vec<(String, bool)>> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p).map_err(to_py)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = methods {
        cfg.methods = Method::parse_list(m).map_err(to_py)?;
    }
    cfg.out = out.to_string_lossy().into_owned();
    cfg.validate().map_err(to_py)?;
    let layout = Layout::new(cfg.out_dir());
    let run = py.detach(|| cmd_pipeline(&cfg, &layout, resume)).map_err(to_py)?;
    Ok(run.executed.into_iter().map(|(s, e)| (s.to_string(), e)).collect())
}

#[pymodule]
fn roidecomp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMaterialTable>()?;
    m.add_class::<PyGeometry>()?;
    m.add_function(wrap_pyfunction!(mu_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(gmm_fit, m)?)?;
    m.add_function(wrap_pyfunction!(lasso, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_error, m)?)?;
    m.add_function(wrap_pyfunction!(format_sig6, m)?)?;
    m.add_function(wrap_pyfunction!(read_raster, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
