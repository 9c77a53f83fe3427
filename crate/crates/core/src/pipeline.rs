//! End-to-end stages: simulate → reconstruct → decompose → evaluate.
//!
//! The in-memory functions do the work; the `cmd_*` functions wrap them with
//! on-disk artifacts under the output directory:
//!
//! ```text
//! simulate/     ground_truth.sctr mean_counts.sctr noisy_counts.sctr decomp_matrix.csv
//! reconstruct/  images.sctr residuals.csv
//! decompose/    <method>.sctr [label_image.sctr roi_labels.sctr roi_coarse.sctr selection.txt]
//! evaluate/     report.csv table.txt figures_<method>.sctr png/ [sweep_threshold.csv sweep_kernel.csv]
//! ```
//!
//! Each of the first three stages leaves a `stamp` file with a fingerprint
//! of the configuration it depends on; `resume` skips a stage whose stamp
//! matches and whose outputs exist. Evaluation always runs.

use ndarray::Array3;
use serde_json::{json, Map};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{Method, RunConfig};
use crate::decomp::{coarse_decompose, fine_decompose, rpt_select, tv_decompose, RoiBasisSelection};
use crate::error::{Error, Result};
use crate::materials::{effective_mu_matrix, DecompMatrix, DetectorResponse, MaterialTable, Spectrum};
use crate::metrics::{compare_methods, reports_csv, EvalReport};
use crate::phantom::{rasterize, DensityMaps, PhantomSpec};
use crate::projector::{acquire_mean, linearize_line_integrals, log_normalize_with_floor, poisson_sample, Geometry, Sinogram, SinogramKind};
use crate::raster::*;
use crate::recon::{reconstruct_all, MultiEnergyImage, ReconLog};
use crate::segmentation::{build_label_image, kernel_kmeans, select_reference_bin, KernelParams, LabelImage, RoiPartition};

/// Everything derived from the configuration before any data exists.
#[derive(Debug, Clone)]
pub struct Setup {
    pub phantom: PhantomSpec,
    pub tables: Vec<MaterialTable>,
    pub spectrum: Spectrum,
    pub response: DetectorResponse,
    pub geometry: Geometry,
    pub matrix: DecompMatrix,
}

impl Setup {
    pub fn material_names(&self) -> Vec<String> {
        self.tables.iter().map(|t| t.name().to_string()).collect()
    }
}

pub fn setup(cfg: &RunConfig) -> Result<Setup> {
    let phantom = cfg.phantom_spec()?;
    let tables = cfg.basis_tables()?;
    let names: Vec<String> = tables.iter().map(|t| t.name().to_string()).collect();
    phantom.validate(&names)?;
    let spectrum = cfg.spectrum()?;
    let response = DetectorResponse::ideal(spectrum.grid().clone(), cfg.energy_bins()?)?;
    let g = &cfg.geometry;
    let geometry = Geometry::parallel(phantom.grid()?, g.n_detectors, g.detector_spacing_cm, g.n_views)?;
    let matrix = effective_mu_matrix(&spectrum, &response, &tables)?;
    Ok(Setup {
        phantom,
        tables,
        spectrum,
        response,
        geometry,
        matrix,
    })
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub ground_truth: DensityMaps,
    pub mean: Sinogram,
    pub noisy: Sinogram,
}

pub fn simulate(cfg: &RunConfig, setup: &Setup) -> Result<Simulation> {
    let ground_truth = rasterize(&setup.phantom, &setup.material_names())?;
    let mean = acquire_mean(&ground_truth, &setup.spectrum, &setup.response, &setup.tables, &setup.geometry)?;
    let noisy = poisson_sample(&mean, cfg.stage_seed("noise"))?;
    Ok(Simulation { ground_truth, mean, noisy })
}

/// Log-normalizes (and optionally linearizes) counts if needed, keeps the configured bins in order, and
/// reconstructs every bin.
pub fn reconstruct(cfg: &RunConfig, setup: &Setup, sino: &Sinogram) -> Result<(MultiEnergyImage, ReconLog)> {
    let wanted = cfg.energy_bins()?;
    let mut index = Vec::with_capacity(wanted.len());
    for b in &wanted {
        match sino.bins.iter().position(|s| (s.lo - b.lo).abs() < 1e-9 && (s.hi - b.hi).abs() < 1e-9) {
            Some(i) => index.push(i),
            None => return Err(Error::invalid(format!("energy bin {b} is missing from the sinogram"))),
        }
    }
    let data = Array3::from_shape_fn((wanted.len(), sino.data.dim().1, sino.data.dim().2), |(b, v, d)| sino.data[[index[b], v, d]]);
    let selected = Sinogram::new(data, sino.kind, sino.geometry.clone(), wanted)?;
    let line = match selected.kind {
        SinogramKind::Counts => {
            let line = log_normalize_with_floor(&selected, &setup.spectrum, &setup.response, cfg.zero_count_floor)?;
            match &cfg.beam_hardening_reference {
                Some(name) => {
                    let table = setup
                        .tables
                        .iter()
                        .find(|t| t.name() == name)
                        .ok_or_else(|| Error::Config(format!("no attenuation table for `{name}`")))?;
                    linearize_line_integrals(&line, &setup.spectrum, &setup.response, table)?
                }
                None => line,
            }
        }
        // already log-normalized upstream; taken as is
        SinogramKind::LineIntegral => selected,
    };
    reconstruct_all(&line, &cfg.sart)
}

/// Intermediate products of the ROI-wise method.
#[derive(Debug, Clone)]
pub struct RoiArtifacts {
    pub ref_bin: usize,
    pub log_likelihoods: Vec<f64>,
    pub label_image: LabelImage,
    pub partition: RoiPartition,
    pub coarse: DensityMaps,
    pub selection: RoiBasisSelection,
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub maps: BTreeMap<Method, DensityMaps>,
    pub roi: Option<RoiArtifacts>,
    /// Methods whose solver hit an iteration cap somewhere.
    pub unconverged: Vec<Method>,
}

pub fn kernel_params(cfg: &RunConfig) -> KernelParams {
    KernelParams {
        seed: cfg.stage_seed("kmeans"),
        ..cfg.kernel
    }
}

/// GMM reference bin and label image.
pub fn label_stage(cfg: &RunConfig, y: &MultiEnergyImage) -> Result<(usize, Vec<f64>, LabelImage)> {
    let seed = cfg.stage_seed("gmm");
    let (ref_bin, lls) = select_reference_bin(y, cfg.kernel.k, seed)?;
    let ys = build_label_image(y, ref_bin, cfg.kernel.k, seed)?;
    Ok((ref_bin, lls, ys))
}

/// RPT selection and fine decomposition for a given partition.
pub fn fine_stage(
    cfg: &RunConfig,
    y: &MultiEnergyImage,
    matrix: &DecompMatrix,
    rois: &LabelImage,
    coarse: &DensityMaps,
    threshold: f64,
) -> Result<(RoiBasisSelection, DensityMaps, bool)> {
    let selection = rpt_select(coarse, rois, threshold, cfg.presence_eps)?;
    let (fine, ok) = fine_decompose(y, rois, &selection, matrix, &cfg.decomp, cfg.beta)?;
    Ok((selection, fine, ok))
}

pub fn decompose(cfg: &RunConfig, y: &MultiEnergyImage, matrix: &DecompMatrix, methods: &[Method]) -> Result<Decomposition> {
    let mut maps = BTreeMap::new();
    let mut unconverged = Vec::new();
    let mut roi = None;
    if methods.contains(&Method::Tv) {
        let out = tv_decompose(y, matrix, &cfg.tv).map_err(|e| e.in_stage("decompose/tv"))?;
        if !out.converged {
            unconverged.push(Method::Tv);
        }
        maps.insert(Method::Tv, out.maps);
    }
    if methods.contains(&Method::Coarse) || methods.contains(&Method::Roi) {
        let (coarse, ok) = coarse_decompose(y, matrix, &cfg.decomp).map_err(|e| e.in_stage("decompose/coarse"))?;
        if methods.contains(&Method::Coarse) {
            if !ok {
                unconverged.push(Method::Coarse);
            }
            maps.insert(Method::Coarse, coarse.clone());
        }
        if methods.contains(&Method::Roi) {
            let (ref_bin, lls, label_image) = label_stage(cfg, y).map_err(|e| e.in_stage("decompose/segmentation"))?;
            let partition = kernel_kmeans(y, &label_image, &kernel_params(cfg)).map_err(|e| e.in_stage("decompose/kernel-kmeans"))?;
            let (selection, fine, fine_ok) =
                fine_stage(cfg, y, matrix, &partition.rois, &coarse, cfg.threshold).map_err(|e| e.in_stage("decompose/fine"))?;
            if !(ok && fine_ok) {
                unconverged.push(Method::Roi);
            }
            maps.insert(Method::Roi, fine);
            roi = Some(RoiArtifacts {
                ref_bin,
                log_likelihoods: lls,
                label_image,
                partition,
                coarse,
                selection,
            });
        }
    }
    Ok(Decomposition { maps, roi, unconverged })
}

pub fn report_metadata(cfg: &RunConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("phantom".into(), cfg.phantom.clone());
    m.insert("seed".into(), cfg.seed.to_string());
    m.insert("threshold".into(), cfg.threshold.to_string());
    m.insert("beta".into(), cfg.beta.to_string());
    m.insert("theta".into(), cfg.kernel.theta.to_string());
    m.insert("sigma2".into(), cfg.kernel.sigma2.to_string());
    m.insert("k".into(), cfg.kernel.k.to_string());
    m
}

pub fn evaluate(cfg: &RunConfig, maps: &BTreeMap<Method, DensityMaps>, gt: &DensityMaps) -> Result<Vec<EvalReport>> {
    maps.iter()
        .map(|(m, x)| EvalReport::evaluate(m.as_str(), x, gt, cfg.presence_eps, report_metadata(cfg)))
        .collect()
}

/// ROI method re-run for every threshold, reusing the partition and coarse maps.
pub fn threshold_sweep(
    cfg: &RunConfig,
    y: &MultiEnergyImage,
    matrix: &DecompMatrix,
    rois: &LabelImage,
    coarse: &DensityMaps,
    gt: &DensityMaps,
    thresholds: &[f64],
) -> Result<Vec<EvalReport>> {
    thresholds
        .iter()
        .map(|&t| {
            let (_, fine, _) = fine_stage(cfg, y, matrix, rois, coarse, t)?;
            EvalReport::evaluate(&format!("roi[T={t}]"), &fine, gt, cfg.presence_eps, report_metadata(cfg))
        })
        .collect()
}

/// ROI method re-run for every (θ, σ²) pair, reusing the label image and coarse maps.
#[allow(clippy::too_many_arguments)]
pub fn kernel_sweep(
    cfg: &RunConfig,
    y: &MultiEnergyImage,
    matrix: &DecompMatrix,
    label_image: &LabelImage,
    coarse: &DensityMaps,
    gt: &DensityMaps,
    thetas: &[f64],
    sigma2s: &[f64],
) -> Result<Vec<EvalReport>> {
    let mut out = Vec::new();
    for &theta in thetas {
        for &sigma2 in sigma2s {
            let params = KernelParams {
                theta,
                sigma2,
                ..kernel_params(cfg)
            };
            let part = kernel_kmeans(y, label_image, &params)?;
            let (_, fine, _) = fine_stage(cfg, y, matrix, &part.rois, coarse, cfg.threshold)?;
            out.push(EvalReport::evaluate(
                &format!("roi[theta={theta},sigma2={sigma2}]"),
                &fine,
                gt,
                cfg.presence_eps,
                report_metadata(cfg),
            )?);
        }
    }
    Ok(out)
}

// ---- on-disk stages -------------------------------------------------------

const SIM_KEYS: &[&str] = &["phantom", "spectrum", "photons_per_ray", "materials", "bins", "seed", "geometry"];
const RECON_KEYS: &[&str] = &["zero_count_floor", "beam_hardening_reference", "sart"];
const DECOMP_KEYS: &[&str] = &["kernel", "decomp", "tv", "threshold", "beta", "presence_eps", "methods"];

fn stage_keys(stage: &str) -> Vec<&'static str> {
    let mut keys = SIM_KEYS.to_vec();
    if stage != "simulate" {
        keys.extend_from_slice(RECON_KEYS);
    }
    if stage == "decompose" {
        keys.extend_from_slice(DECOMP_KEYS);
    }
    keys
}

/// Paths of every artifact, relative to one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    pub fn ground_truth(&self) -> PathBuf {
        self.dir("simulate").join("ground_truth.sctr")
    }

    pub fn mean_counts(&self) -> PathBuf {
        self.dir("simulate").join("mean_counts.sctr")
    }

    pub fn noisy_counts(&self) -> PathBuf {
        self.dir("simulate").join("noisy_counts.sctr")
    }

    pub fn matrix_csv(&self) -> PathBuf {
        self.dir("simulate").join("decomp_matrix.csv")
    }

    pub fn images(&self) -> PathBuf {
        self.dir("reconstruct").join("images.sctr")
    }

    pub fn residuals(&self) -> PathBuf {
        self.dir("reconstruct").join("residuals.csv")
    }

    pub fn method_maps(&self, m: Method) -> PathBuf {
        self.dir("decompose").join(format!("{}.sctr", m.as_str()))
    }

    pub fn label_image(&self) -> PathBuf {
        self.dir("decompose").join("label_image.sctr")
    }

    pub fn roi_labels(&self) -> PathBuf {
        self.dir("decompose").join("roi_labels.sctr")
    }

    pub fn roi_coarse(&self) -> PathBuf {
        self.dir("decompose").join("roi_coarse.sctr")
    }

    pub fn selection(&self) -> PathBuf {
        self.dir("decompose").join("selection.txt")
    }

    pub fn report(&self) -> PathBuf {
        self.dir("evaluate").join("report.csv")
    }

    pub fn stamp(&self, stage: &str) -> PathBuf {
        self.dir(stage).join("stamp")
    }

    fn outputs(&self, stage: &str, methods: &[Method]) -> Vec<PathBuf> {
        match stage {
            "simulate" => vec![self.ground_truth(), self.mean_counts(), self.noisy_counts(), self.matrix_csv()],
            "reconstruct" => vec![self.images(), self.residuals()],
            _ => {
                let mut v: Vec<PathBuf> = methods.iter().map(|&m| self.method_maps(m)).collect();
                if methods.contains(&Method::Roi) {
                    v.extend([self.label_image(), self.roi_labels(), self.roi_coarse(), self.selection()]);
                }
                v
            }
        }
    }
}

fn io_stage(e: std::io::Error, stage: &'static str, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))).in_stage(stage)
}

fn create_dir(path: &Path, stage: &'static str) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_stage(e, stage, path))
}

fn write_text(path: &Path, text: &str, stage: &'static str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_stage(e, stage, path))
}

fn is_fresh(cfg: &RunConfig, layout: &Layout, stage: &str) -> bool {
    let Ok(stamp) = std::fs::read_to_string(layout.stamp(stage)) else {
        return false;
    };
    stamp.trim() == cfg.fingerprint(&stage_keys(stage)) && layout.outputs(stage, &cfg.methods).iter().all(|p| p.is_file())
}

fn write_stamp(cfg: &RunConfig, layout: &Layout, stage: &'static str) -> Result<()> {
    write_text(&layout.stamp(stage), &format!("{}\n", cfg.fingerprint(&stage_keys(stage))), stage)
}

fn log(stage: &str, start: Instant, msg: &str) {
    eprintln!("[{stage}] {msg} ({:.1} s)", start.elapsed().as_secs_f64());
}

pub fn cmd_simulate(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    const STAGE: &str = "simulate";
    let t = Instant::now();
    let setup = setup(cfg).map_err(|e| e.in_stage(STAGE))?;
    let sim = simulate(cfg, &setup).map_err(|e| e.in_stage(STAGE))?;
    create_dir(&layout.dir(STAGE), STAGE)?;
    let write = |r: Result<Raster>, p: PathBuf| r.and_then(|r| r.write(&p)).map_err(|e| e.in_stage(STAGE));
    write(density_to_raster(&sim.ground_truth, Map::new()), layout.ground_truth())?;
    write(sinogram_to_raster(&sim.mean), layout.mean_counts())?;
    write(sinogram_to_raster(&sim.noisy), layout.noisy_counts())?;
    write_text(&layout.matrix_csv(), &setup.matrix.to_csv(), STAGE)?;
    write_stamp(cfg, layout, STAGE)?;
    log(STAGE, t, &format!("wrote {}", layout.dir(STAGE).display()));
    Ok(())
}

pub fn cmd_reconstruct(cfg: &RunConfig, layout: &Layout, sinogram: Option<&Path>) -> Result<()> {
    const STAGE: &str = "reconstruct";
    let t = Instant::now();
    let setup = setup(cfg).map_err(|e| e.in_stage(STAGE))?;
    let path = sinogram.map(Path::to_path_buf).unwrap_or_else(|| layout.noisy_counts());
    let sino = Raster::read(&path).and_then(|r| raster_to_sinogram(&r)).map_err(|e| e.in_stage(STAGE))?;
    let (y, rlog) = reconstruct(cfg, &setup, &sino).map_err(|e| e.in_stage(STAGE))?;
    create_dir(&layout.dir(STAGE), STAGE)?;
    image_to_raster(&y).and_then(|r| r.write(layout.images())).map_err(|e| e.in_stage(STAGE))?;
    let mut csv = String::from("bin,iteration,residual\n");
    for (b, res) in rlog.residuals.iter().enumerate() {
        for (i, r) in res.iter().enumerate() {
            let _ = writeln!(csv, "{b},{},{r:.9e}", i + 1);
        }
    }
    write_text(&layout.residuals(), &csv, STAGE)?;
    write_stamp(cfg, layout, STAGE)?;
    let rel: Vec<String> = rlog.relative_residuals.iter().map(|r| format!("{r:.4}")).collect();
    log(STAGE, t, &format!("relative residuals [{}]", rel.join(", ")));
    Ok(())
}

pub fn cmd_decompose(cfg: &RunConfig, layout: &Layout, images: Option<&Path>) -> Result<()> {
    const STAGE: &str = "decompose";
    let t = Instant::now();
    let setup = setup(cfg).map_err(|e| e.in_stage(STAGE))?;
    let path = images.map(Path::to_path_buf).unwrap_or_else(|| layout.images());
    let y = Raster::read(&path).and_then(|r| raster_to_image(&r)).map_err(|e| e.in_stage(STAGE))?;
    let d = decompose(cfg, &y, &setup.matrix, &cfg.methods)?;
    create_dir(&layout.dir(STAGE), STAGE)?;
    let write = |r: Result<Raster>, p: PathBuf| r.and_then(|r| r.write(&p)).map_err(|e| e.in_stage(STAGE));
    for (m, x) in &d.maps {
        let meta = Map::from_iter([("method".to_string(), json!(m.as_str()))]);
        write(density_to_raster(x, meta), layout.method_maps(*m))?;
    }
    if let Some(roi) = &d.roi {
        let meta = Map::from_iter([
            ("reference_bin".to_string(), json!(roi.ref_bin)),
            ("log_likelihoods".to_string(), json!(roi.log_likelihoods)),
        ]);
        write(labels_to_raster(&roi.label_image, meta), layout.label_image())?;
        let kp = kernel_params(cfg);
        let meta = Map::from_iter([
            ("theta".to_string(), json!(kp.theta)),
            ("sigma2".to_string(), json!(kp.sigma2)),
            ("seed".to_string(), json!(kp.seed)),
            ("objective".to_string(), json!(roi.partition.objective)),
            ("converged".to_string(), json!(roi.partition.converged)),
        ]);
        write(labels_to_raster(&roi.partition.rois, meta), layout.roi_labels())?;
        write(density_to_raster(&roi.coarse, Map::new()), layout.roi_coarse())?;
        write_text(&layout.selection(), &roi.selection.report(), STAGE)?;
    }
    write_stamp(cfg, layout, STAGE)?;
    for m in &d.unconverged {
        eprintln!("[{STAGE}] warning: {} hit its iteration cap", m.as_str());
    }
    log(STAGE, t, &format!("methods {:?}", d.maps.keys().map(|m| m.as_str()).collect::<Vec<_>>()));
    Ok(())
}

/// Fixed display window per material: [0, ground-truth maximum].
fn windows(gt: &DensityMaps) -> BTreeMap<String, [f64; 2]> {
    gt.material_names()
        .iter()
        .enumerate()
        .map(|(a, n)| {
            let hi = gt.map(a).iter().cloned().fold(0.0, f64::max);
            (n.clone(), [0.0, if hi > 0.0 { hi } else { 1e-3 }])
        })
        .collect()
}

fn write_png(path: &Path, map: ndarray::ArrayView2<f64>, window: [f64; 2]) -> Result<()> {
    let (h, w) = map.dim();
    let span = window[1] - window[0];
    let buf: Vec<u8> = map.iter().map(|v| (((v - window[0]) / span).clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, buf).expect("buffer matches the image size");
    img.save(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn cmd_evaluate(cfg: &RunConfig, layout: &Layout) -> Result<Vec<EvalReport>> {
    const STAGE: &str = "evaluate";
    let t = Instant::now();
    let gt = Raster::read(layout.ground_truth()).and_then(|r| raster_to_density(&r)).map_err(|e| e.in_stage(STAGE))?;
    let mut maps = BTreeMap::new();
    for &m in &cfg.methods {
        let x = Raster::read(layout.method_maps(m)).and_then(|r| raster_to_density(&r)).map_err(|e| e.in_stage(STAGE))?;
        maps.insert(m, x);
    }
    let reports = evaluate(cfg, &maps, &gt).map_err(|e| e.in_stage(STAGE))?;
    let dir = layout.dir(STAGE);
    create_dir(&dir.join("png"), STAGE)?;
    let (table, csv) = compare_methods(&reports).map_err(|e| e.in_stage(STAGE))?;
    write_text(&layout.report(), &csv, STAGE)?;
    write_text(&dir.join("table.txt"), &table, STAGE)?;

    let win = windows(&gt);
    for (m, x) in &maps {
        let meta = Map::from_iter([
            ("method".to_string(), json!(m.as_str())),
            ("window".to_string(), serde_json::to_value(&win).expect("windows serialize")),
        ]);
        density_to_raster(x, meta)
            .and_then(|r| r.write(dir.join(format!("figures_{}.sctr", m.as_str()))))
            .map_err(|e| e.in_stage(STAGE))?;
        for (a, name) in x.material_names().iter().enumerate() {
            write_png(&dir.join("png").join(format!("{}_{name}.png", m.as_str())), x.map(a), win[name]).map_err(|e| e.in_stage(STAGE))?;
        }
    }
    for (a, name) in gt.material_names().iter().enumerate() {
        write_png(&dir.join("png").join(format!("ground_truth_{name}.png")), gt.map(a), win[name]).map_err(|e| e.in_stage(STAGE))?;
    }

    let want_sweeps = !cfg.sweep.thresholds.is_empty() || !cfg.sweep.thetas.is_empty();
    if want_sweeps {
        if !cfg.methods.contains(&Method::Roi) {
            eprintln!("[{STAGE}] sweeps need the roi method; skipped");
        } else {
            let setup = setup(cfg).map_err(|e| e.in_stage(STAGE))?;
            let y = Raster::read(layout.images()).and_then(|r| raster_to_image(&r)).map_err(|e| e.in_stage(STAGE))?;
            let coarse = Raster::read(layout.roi_coarse()).and_then(|r| raster_to_density(&r)).map_err(|e| e.in_stage(STAGE))?;
            if !cfg.sweep.thresholds.is_empty() {
                let rois = Raster::read(layout.roi_labels()).and_then(|r| raster_to_labels(&r)).map_err(|e| e.in_stage(STAGE))?;
                let rs = threshold_sweep(cfg, &y, &setup.matrix, &rois, &coarse, &gt, &cfg.sweep.thresholds).map_err(|e| e.in_stage(STAGE))?;
                write_text(&dir.join("sweep_threshold.csv"), &reports_csv(&rs), STAGE)?;
            }
            if !cfg.sweep.thetas.is_empty() {
                let ys = Raster::read(layout.label_image()).and_then(|r| raster_to_labels(&r)).map_err(|e| e.in_stage(STAGE))?;
                let rs = kernel_sweep(cfg, &y, &setup.matrix, &ys, &coarse, &gt, &cfg.sweep.thetas, &cfg.sweep.sigma2s)
                    .map_err(|e| e.in_stage(STAGE))?;
                write_text(&dir.join("sweep_kernel.csv"), &reports_csv(&rs), STAGE)?;
            }
        }
    }
    log(STAGE, t, &format!("wrote {}", layout.report().display()));
    eprint!("{table}");
    Ok(reports)
}

/// Which stages ran (`true`) or were reused (`false`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineRun {
    pub executed: Vec<(&'static str, bool)>,
}

pub fn cmd_pipeline(cfg: &RunConfig, layout: &Layout, resume: bool) -> Result<PipelineRun> {
    let mut executed = Vec::new();
    let mut upstream_ran = false;
    for stage in ["simulate", "reconstruct", "decompose"] {
        if resume && !upstream_ran && is_fresh(cfg, layout, stage) {
            eprintln!("[{stage}] up to date; reusing {}", layout.dir(stage).display());
            executed.push((stage, false));
            continue;
        }
        match stage {
            "simulate" => cmd_simulate(cfg, layout)?,
            "reconstruct" => cmd_reconstruct(cfg, layout, None)?,
            _ => cmd_decompose(cfg, layout, None)?,
        }
        upstream_ran = true;
        executed.push((stage, true));
    }
    cmd_evaluate(cfg, layout)?;
    executed.push(("evaluate", true));
    Ok(PipelineRun { executed })
}
