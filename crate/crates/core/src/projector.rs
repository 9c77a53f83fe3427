//! Parallel-beam line integrals and the photon-counting acquisition model.
//!
//! Rays are traced with Joseph's method: the ray is stepped one pixel row
//! (or column) at a time along its dominant axis and the image is linearly
//! interpolated between the two nearest pixel centres across it. The
//! back-projection applies exactly the same weights transposed, so the pair
//! passes the inner-product adjoint test to rounding error.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materials::{bin_fluence, edge_energies, BinQuadrature, DetectorResponse, EnergyBin, MaterialTable, Spectrum};
use crate::phantom::{coefficients_for, DensityMaps, ImageGrid};

/// Counts below this are clamped before taking the logarithm.
pub const ZERO_COUNT_FLOOR: f64 = 0.5;

/// Views handled per back-projection work unit; partial images are summed
/// in chunk order so the result does not depend on the thread count.
const VIEW_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub n_detectors: usize,
    /// cm
    pub detector_spacing: f64,
    /// radians
    pub angles: Vec<f64>,
    pub grid: ImageGrid,
}

impl Geometry {
    /// `n_views` equally spaced angles over [0, 2π).
    pub fn parallel(grid: ImageGrid, n_detectors: usize, detector_spacing: f64, n_views: usize) -> Result<Self> {
        let angles = (0..n_views).map(|k| 2.0 * PI * k as f64 / n_views as f64).collect();
        Geometry::new(grid, n_detectors, detector_spacing, angles)
    }

    pub fn new(grid: ImageGrid, n_detectors: usize, detector_spacing: f64, angles: Vec<f64>) -> Result<Self> {
        if n_detectors == 0 || angles.is_empty() {
            return Err(Error::invalid("geometry needs at least one detector and one view"));
        }
        if !(detector_spacing.is_finite() && detector_spacing > 0.0) {
            return Err(Error::invalid("detector spacing must be > 0"));
        }
        Ok(Geometry {
            n_detectors,
            detector_spacing,
            angles,
            grid,
        })
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    /// Signed distance of detector `det` from the rotation axis, cm.
    pub fn detector_offset(&self, det: usize) -> f64 {
        (det as f64 + 0.5 - self.n_detectors as f64 / 2.0) * self.detector_spacing
    }

    fn check_image(&self, image: &ArrayView2<f64>) -> Result<()> {
        if image.dim() != (self.grid.height, self.grid.width) {
            return Err(Error::invalid(format!(
                "image is {:?}, geometry expects ({}, {})",
                image.dim(),
                self.grid.height,
                self.grid.width
            )));
        }
        Ok(())
    }

    fn check_sinogram(&self, sino: &ArrayView2<f64>) -> Result<()> {
        if sino.dim() != (self.n_views(), self.n_detectors) {
            return Err(Error::invalid(format!(
                "sinogram is {:?}, geometry expects ({}, {})",
                sino.dim(),
                self.n_views(),
                self.n_detectors
            )));
        }
        Ok(())
    }

    /// Visits every (flat pixel index, weight) of the ray at `(view, det)`.
    /// Weights are path lengths in cm.
    #[inline]
    pub(crate) fn trace<F: FnMut(usize, f64)>(&self, view: usize, det: usize, mut visit: F) {
        let g = &self.grid;
        let (w, h, s) = (g.width, g.height, g.pixel_size);
        let (sin, cos) = self.angles[view].sin_cos();
        let t = self.detector_offset(det);
        // ray: p(l) = t·(cos, sin) + l·(-sin, cos); the interpolation
        // coordinate across the major axis is affine in the step index
        let (n_major, n_minor, step, a, b) = if cos.abs() >= sin.abs() {
            let tan = sin / cos;
            let a = t / (s * cos) - (h as f64 / 2.0 - 0.5) * tan + w as f64 / 2.0 - 0.5;
            (h, w, s / cos.abs(), a, tan)
        } else {
            let cot = cos / sin;
            let a = h as f64 / 2.0 - 0.5 - t / (s * sin) + (0.5 - w as f64 / 2.0) * cot;
            (w, h, s / sin.abs(), a, cot)
        };
        let (lo, hi) = major_range(a, b, n_major, n_minor);
        // stride of one major step and of one minor step in the flat image
        let (major_stride, minor_stride) = if cos.abs() >= sin.abs() { (w, 1) } else { (1, w) };
        let last = n_minor as isize - 1;
        for k in lo..hi {
            let u = a + b * k as f64;
            // truncation is floor here: u + 4 > 0 on the padded range
            let m0 = (u + 4.0) as isize - 4;
            let f = u - m0 as f64;
            let base = k * major_stride;
            if (0..=last).contains(&m0) {
                visit(base + m0 as usize * minor_stride, (1.0 - f) * step);
            }
            if (-1..last).contains(&m0) && f > 0.0 {
                visit(base + (m0 + 1) as usize * minor_stride, f * step);
            }
        }
    }

    /// Line integrals of one view into `out` (length `n_detectors`).
    pub(crate) fn project_view(&self, image: &[f64], view: usize, out: &mut [f64]) {
        for det in 0..self.n_detectors {
            let mut acc = 0.0;
            self.trace(view, det, |p, wgt| acc += wgt * image[p]);
            out[det] = acc;
        }
    }

    /// Adds the back-projection of one view's `values` into `image`.
    pub(crate) fn back_project_view(&self, values: &[f64], view: usize, image: &mut [f64]) {
        for (det, &v) in values.iter().enumerate() {
            if v != 0.0 {
                self.trace(view, det, |p, wgt| image[p] += wgt * v);
            }
        }
    }
}

/// Steps `k` in `0..n` whose coordinate `a + b·k` can touch `[-1, n_minor)`,
/// padded by one step on each side against rounding.
fn major_range(a: f64, b: f64, n: usize, n_minor: usize) -> (usize, usize) {
    if b == 0.0 {
        return if a > -1.0 && a < n_minor as f64 { (0, n) } else { (0, 0) };
    }
    let k1 = (-1.0 - a) / b;
    let k2 = (n_minor as f64 - a) / b;
    let (kmin, kmax) = if k1 < k2 { (k1, k2) } else { (k2, k1) };
    let lo = (kmin.floor() - 1.0).max(0.0);
    let hi = (kmax.ceil() + 1.0).min(n as f64);
    if hi <= lo {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// Whether a sinogram holds photon counts or log-normalized line integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinogramKind {
    Counts,
    LineIntegral,
}

impl SinogramKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SinogramKind::Counts => "counts",
            SinogramKind::LineIntegral => "line_integral",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "counts" => Ok(SinogramKind::Counts),
            "line_integral" => Ok(SinogramKind::LineIntegral),
            other => Err(Error::invalid(format!("unknown sinogram kind `{other}`"))),
        }
    }
}

/// Per-bin projection data, `data[[bin, view, detector]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub data: Array3<f64>,
    pub kind: SinogramKind,
    pub geometry: Geometry,
    pub bins: Vec<EnergyBin>,
}

impl Sinogram {
    pub fn new(data: Array3<f64>, kind: SinogramKind, geometry: Geometry, bins: Vec<EnergyBin>) -> Result<Self> {
        let (b, v, d) = data.dim();
        if b != bins.len() || v != geometry.n_views() || d != geometry.n_detectors {
            return Err(Error::invalid(format!(
                "sinogram data {:?} does not match {} bins × {} views × {} detectors",
                data.dim(),
                bins.len(),
                geometry.n_views(),
                geometry.n_detectors
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("sinogram contains non-finite values"));
        }
        if kind == SinogramKind::Counts && data.iter().any(|&x| x < 0.0) {
            return Err(Error::invalid("count sinogram contains negative values"));
        }
        Ok(Sinogram {
            data,
            kind,
            geometry,
            bins,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn bin(&self, i: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), i)
    }
}

/// Ray-driven line integrals, `n_views × n_detectors`.
pub fn forward_project(image: ArrayView2<f64>, geometry: &Geometry) -> Result<Array2<f64>> {
    geometry.check_image(&image)?;
    let image = image.as_standard_layout();
    let pixels = image.as_slice().expect("standard layout");
    let mut out = vec![0.0; geometry.n_views() * geometry.n_detectors];
    out.par_chunks_mut(geometry.n_detectors)
        .enumerate()
        .for_each(|(view, row)| geometry.project_view(pixels, view, row));
    Ok(Array2::from_shape_vec((geometry.n_views(), geometry.n_detectors), out).expect("shape"))
}

/// Exact adjoint of [`forward_project`].
pub fn back_project(sino: ArrayView2<f64>, geometry: &Geometry) -> Result<Array2<f64>> {
    geometry.check_sinogram(&sino)?;
    let sino = sino.as_standard_layout();
    let n_pix = geometry.grid.n_pixels();
    let views: Vec<usize> = (0..geometry.n_views()).collect();
    let partials: Vec<Vec<f64>> = views
        .par_chunks(VIEW_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; n_pix];
            for &v in chunk {
                let row = sino.row(v);
                geometry.back_project_view(row.as_slice().expect("standard layout"), v, &mut acc);
            }
            acc
        })
        .collect();
    let mut image = vec![0.0; n_pix];
    for p in partials {
        for (a, b) in image.iter_mut().zip(p) {
            *a += b;
        }
    }
    Ok(Array2::from_shape_vec((geometry.grid.height, geometry.grid.width), image).expect("shape"))
}

/// Noiseless expected counts per bin:
/// `s̄_i(u) = Σ_nodes w·exp(−Σ_α μ_mα(E) P_α(u))`, where `P_α` is the
/// projection of material α's density map. Projecting each material once and
/// combining per energy node is the same as projecting the attenuation image
/// at every energy node, by linearity of the projector.
pub fn acquire_mean(
    maps: &DensityMaps,
    spectrum: &Spectrum,
    response: &DetectorResponse,
    tables: &[MaterialTable],
    geometry: &Geometry,
) -> Result<Sinogram> {
    if (maps.height(), maps.width()) != (geometry.grid.height, geometry.grid.width) {
        return Err(Error::invalid("density maps are not on the geometry's image grid"));
    }
    let used: Vec<usize> = (0..maps.n_materials()).filter(|&k| maps.map(k).iter().any(|&v| v != 0.0)).collect();
    let used_names: Vec<String> = used.iter().map(|&k| maps.material_names()[k].clone()).collect();
    let used_tables: Vec<MaterialTable> = used_names
        .iter()
        .map(|n| {
            tables
                .iter()
                .find(|t| t.name() == n)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("no attenuation table for `{n}`")))
        })
        .collect::<Result<_>>()?;
    let quad = BinQuadrature::new(spectrum, response, &edge_energies(&used_tables))?;

    let projections: Vec<Array2<f64>> = used
        .iter()
        .map(|&k| forward_project(maps.map(k), geometry))
        .collect::<Result<_>>()?;

    let shape = (geometry.n_views(), geometry.n_detectors);
    let mut data = Array3::zeros((response.n_bins(), shape.0, shape.1));
    for bin in 0..response.n_bins() {
        let mut out = data.index_axis_mut(Axis(0), bin);
        for node in quad.nodes(bin) {
            let coeffs = coefficients_for(&used_names, &used_tables, node.energy, node.side)?;
            let mut line = Array2::<f64>::zeros(shape);
            for (c, p) in coeffs.iter().zip(&projections) {
                line.scaled_add(*c, p);
            }
            ndarray::Zip::from(&mut out)
                .and(&line)
                .for_each(|s, &l| *s += node.weight * (-l).exp());
        }
    }
    Sinogram::new(data, SinogramKind::Counts, geometry.clone(), response.bins().to_vec())
}

/// Independent Poisson draw for every entry. Each (bin, view) row has its own
/// ChaCha stream, so the result is fixed by `seed` alone.
pub fn poisson_sample(mean: &Sinogram, seed: u64) -> Result<Sinogram> {
    if mean.kind != SinogramKind::Counts {
        return Err(Error::invalid("poisson_sample needs a counts sinogram"));
    }
    if mean.data.iter().any(|&m| m < 0.0) {
        return Err(Error::invalid("negative mean count"));
    }
    let (b, v, d) = mean.data.dim();
    let means = mean.data.as_standard_layout();
    let means = means.as_slice().expect("standard layout");
    let mut data = vec![0.0; b * v * d];
    data.par_chunks_mut(d).enumerate().for_each(|(r, out)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        for (o, &m) in out.iter_mut().zip(&means[r * d..(r + 1) * d]) {
            *o = if m > 0.0 {
                Poisson::new(m).expect("positive finite mean").sample(&mut rng)
            } else {
                0.0
            };
        }
    });
    let data = Array3::from_shape_vec((b, v, d), data).expect("shape");
    Sinogram::new(data, SinogramKind::Counts, mean.geometry.clone(), mean.bins.clone())
}

/// `−ln(max(counts, floor) / blank_i)` with each bin's own blank count.
pub fn log_normalize(counts: &Sinogram, spectrum: &Spectrum, response: &DetectorResponse) -> Result<Sinogram> {
    log_normalize_with_floor(counts, spectrum, response, ZERO_COUNT_FLOOR)
}

pub fn log_normalize_with_floor(
    counts: &Sinogram,
    spectrum: &Spectrum,
    response: &DetectorResponse,
    floor: f64,
) -> Result<Sinogram> {
    if counts.kind != SinogramKind::Counts {
        return Err(Error::invalid("log_normalize needs a counts sinogram"));
    }
    if response.bins() != counts.bins.as_slice() {
        return Err(Error::invalid("sinogram bins differ from the detector response bins"));
    }
    let blank = bin_fluence(spectrum, response)?;
    if let Some(bin) = blank.iter().position(|&b| b <= 0.0) {
        return Err(Error::ZeroFluence { bin });
    }
    let mut data = counts.data.clone();
    for (bin, mut plane) in data.outer_iter_mut().enumerate() {
        let n0 = blank[bin];
        plane.mapv_inplace(|c| -(c.max(floor) / n0).ln());
    }
    Sinogram::new(data, SinogramKind::LineIntegral, counts.geometry.clone(), counts.bins.clone())
}

/// Beam-hardening linearization against one reference material: every line
/// integral `p` is replaced by `μ̄·A`, where `A` is the areal density (g/cm²)
/// of the reference whose polychromatic line integral in that bin equals `p`
/// and `μ̄` is the reference's bin-averaged mass attenuation. The reference
/// itself then reconstructs to exactly its effective attenuation. Negative
/// integrals (noise in air) pass through unchanged, the linear limit at 0.
pub fn linearize_line_integrals(line: &Sinogram, spectrum: &Spectrum, response: &DetectorResponse, reference: &MaterialTable) -> Result<Sinogram> {
    if line.kind != SinogramKind::LineIntegral {
        return Err(Error::invalid("linearization needs a line-integral sinogram"));
    }
    if response.bins() != line.bins.as_slice() {
        return Err(Error::invalid("sinogram bins differ from the detector response bins"));
    }
    let quad = BinQuadrature::new(spectrum, response, &reference.edges())?;
    let mut data = line.data.clone();
    for (bin, mut plane) in data.outer_iter_mut().enumerate() {
        let nodes = quad.nodes(bin);
        let total = quad.bin_weight(bin);
        if total <= 0.0 {
            return Err(Error::ZeroFluence { bin });
        }
        let w: Vec<f64> = nodes.iter().map(|n| n.weight / total).collect();
        let mu: Vec<f64> = nodes.iter().map(|n| reference.mu_at(n.energy, n.side)).collect::<Result<_>>()?;
        let mu_bar: f64 = w.iter().zip(&mu).map(|(w, m)| w * m).sum();
        plane.mapv_inplace(|p| {
            if p <= 0.0 || !p.is_finite() {
                return p;
            }
            // p(A) is increasing and concave, so Newton from A = p/μ̄ climbs
            // monotonically to the root
            let mut a = p / mu_bar;
            for _ in 0..50 {
                let (mut t, mut dt) = (0.0, 0.0);
                for (wk, mk) in w.iter().zip(&mu) {
                    let e = wk * (-mk * a).exp();
                    t += e;
                    dt += mk * e;
                }
                let step = (p + t.ln()) * t / dt;
                a += step;
                if step.abs() <= 1e-14 * a {
                    break;
                }
            }
            mu_bar * a
        });
    }
    Sinogram::new(data, SinogramKind::LineIntegral, line.geometry.clone(), line.bins.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{bundled, interpolate_mu, EnergyGrid};
    use crate::phantom::{rasterize, Component, Insert, PhantomSpec};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn small_geometry(size: usize, views: usize) -> Geometry {
        let grid = ImageGrid::new(size, size, 0.1).unwrap();
        Geometry::parallel(grid, size + 8, 0.1, views).unwrap()
    }

    /// Narrow hat spectrum; the bin quadrature sees it as three equally
    /// weighted nodes at `energy` and `energy ± h/2`.
    pub(crate) fn monochromatic(energy: f64, n0: f64) -> (Spectrum, DetectorResponse) {
        let h = 1.0 / 1024.0;
        let grid = EnergyGrid::new(vec![energy - h, energy, energy + h]).unwrap();
        let s = Spectrum::new(grid.clone(), vec![0.0, n0 / h, 0.0]).unwrap();
        let r = DetectorResponse::ideal(grid, vec![EnergyBin::new(energy - h, energy + h).unwrap()]).unwrap();
        (s, r)
    }

    #[test]
    fn zero_image_projects_to_zero() {
        let g = small_geometry(16, 12);
        let p = forward_project(Array2::zeros((16, 16)).view(), &g).unwrap();
        assert!(p.iter().all(|&v| v == 0.0));
        let b = back_project(Array2::zeros((12, 24)).view(), &g).unwrap();
        assert!(b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn axis_aligned_ray_through_one_pixel_has_pixel_length() {
        let grid = ImageGrid::new(8, 8, 0.25).unwrap();
        // views at 0 and π/2, detectors aligned with pixel centres
        let g = Geometry::new(grid, 8, 0.25, vec![0.0, PI / 2.0]).unwrap();
        let mut img = Array2::zeros((8, 8));
        img[[2, 5]] = 1.0;
        let p = forward_project(img.view(), &g).unwrap();
        // view 0 rays are vertical: detector offset equals pixel x
        assert_relative_eq!(p[[0, 5]], 0.25, max_relative = 1e-12);
        assert_eq!(p.row(0).iter().filter(|&&v| v != 0.0).count(), 1);
        // view π/2 rays are horizontal: offset t maps to y = t, row 2 has y = 1.5 px → det 5
        assert_relative_eq!(p[[1, 5]], 0.25, max_relative = 1e-12);
        assert_eq!(p.row(1).iter().filter(|&&v| v.abs() > 1e-12).count(), 1);
    }

    #[test]
    fn central_chord_through_a_disk() {
        let size = 128;
        let s = 0.05;
        let r = 2.0;
        let spec = PhantomSpec {
            width: size,
            height: size,
            pixel_size_cm: s,
            background: vec![],
            inserts: vec![Insert {
                center_cm: [0.0, 0.0],
                radius_cm: r,
                composition: vec![Component {
                    material: "water".into(),
                    density_mg_cc: 1000.0,
                }],
            }],
        };
        let maps = rasterize(&spec, &["water".to_string()]).unwrap();
        let grid = spec.grid().unwrap();
        let g = Geometry::parallel(grid, size, s, 16).unwrap();
        let p = forward_project(maps.map(0), &g).unwrap();
        for view in 0..16 {
            // central detector pair straddles the axis; take the one at +s/2
            let v = p[[view, size / 2]];
            let chord = 2.0 * (r * r - (s / 2.0).powi(2)).sqrt();
            assert!((v - chord).abs() <= s * 1.0001, "view {view}: {v} vs {chord}");
        }
    }

    #[test]
    fn adjoint_identity_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let grid = ImageGrid::new(23, 17, 0.13).unwrap();
        let g = Geometry::parallel(grid, 29, 0.11, 37).unwrap();
        for _ in 0..5 {
            let x = Array2::from_shape_fn((17, 23), |_| rng.random::<f64>() - 0.5);
            let y = Array2::from_shape_fn((37, 29), |_| rng.random::<f64>() - 0.5);
            let ax = forward_project(x.view(), &g).unwrap();
            let aty = back_project(y.view(), &g).unwrap();
            let lhs = (&ax * &y).sum();
            let rhs = (&x * &aty).sum();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()), "{lhs} {rhs}");
        }
    }

    #[test]
    fn one_ray_back_projects_to_a_stripe() {
        let grid = ImageGrid::new(16, 16, 0.1).unwrap();
        let g = Geometry::new(grid, 16, 0.1, vec![0.0, 0.3, 1.1]).unwrap();
        let mut y = Array2::zeros((3, 16));
        y[[0, 4]] = 1.0;
        let img = back_project(y.view(), &g).unwrap();
        // view 0 is vertical and the detector sits on a pixel column
        for row in 0..16 {
            for col in 0..16 {
                let expect = if col == 4 { 0.1 } else { 0.0 };
                assert_relative_eq!(img[[row, col]], expect, epsilon = 1e-15);
            }
        }
        // a tilted ray touches at most two pixels per row
        let mut y = Array2::zeros((3, 16));
        y[[1, 9]] = 1.0;
        let img = back_project(y.view(), &g).unwrap();
        for row in img.rows() {
            assert!(row.iter().filter(|&&v| v != 0.0).count() <= 2);
        }
    }

    #[test]
    fn vacuum_acquisition_equals_blank_fluence() {
        let spectrum = bundled::spectrum_80kvp();
        let resp = DetectorResponse::ideal(spectrum.grid().clone(), crate::materials::default_bins()).unwrap();
        let tables = bundled::tables(&["water"]).unwrap();
        let g = small_geometry(12, 6);
        let maps = DensityMaps::zeros(vec!["water".into()], 12, 12);
        let sino = acquire_mean(&maps, &spectrum, &resp, &tables, &g).unwrap();
        let blank = bin_fluence(&spectrum, &resp).unwrap();
        for b in 0..5 {
            for &v in sino.bin(b).iter() {
                assert_relative_eq!(v, blank[b], max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn monochromatic_acquisition_is_beer_lambert() {
        let (spectrum, resp) = monochromatic(45.0, 1e4);
        let tables = bundled::tables(&["water", "iodine"]).unwrap();
        let mut spec = PhantomSpec {
            width: 20,
            height: 20,
            pixel_size_cm: 0.1,
            background: vec![],
            inserts: vec![],
        };
        spec.inserts.push(Insert {
            center_cm: [0.1, -0.2],
            radius_cm: 0.7,
            composition: vec![
                Component { material: "water".into(), density_mg_cc: 1000.0 },
                Component { material: "iodine".into(), density_mg_cc: 8.0 },
            ],
        });
        let names = vec!["water".to_string(), "iodine".to_string()];
        let maps = rasterize(&spec, &names).unwrap();
        let g = small_geometry(20, 9);
        let sino = acquire_mean(&maps, &spectrum, &resp, &tables, &g).unwrap();
        let ls: Vec<Array2<f64>> = [45.0 - 1.0 / 2048.0, 45.0, 45.0 + 1.0 / 2048.0]
            .iter()
            .map(|&e| forward_project(crate::phantom::attenuation_image(&maps, &tables, e).unwrap().view(), &g).unwrap())
            .collect();
        for (i, s) in sino.bin(0).iter().enumerate() {
            let want = ls.iter().map(|l| (-l.as_slice().unwrap()[i]).exp()).sum::<f64>() * 1e4 / 3.0;
            assert_relative_eq!(*s, want, max_relative = 1e-10);
        }
        // doubling densities doubles the log attenuation
        let doubled = maps.combine(2.0, &maps, 0.0).unwrap();
        let sino2 = acquire_mean(&doubled, &spectrum, &resp, &tables, &g).unwrap();
        for (a, b) in sino.bin(0).iter().zip(sino2.bin(0).iter()) {
            assert_relative_eq!((b / 1e4).ln(), 2.0 * (a / 1e4).ln(), max_relative = 1e-8, epsilon = 1e-14);
        }
        assert!(interpolate_mu(&tables[1], 45.0).unwrap() > 0.0);
    }

    #[test]
    fn poisson_zero_mean_and_determinism() {
        let g = small_geometry(4, 3);
        let mut data = Array3::from_elem((2, 3, 12), 50.0);
        data[[0, 1, 1]] = 0.0;
        let mean = Sinogram::new(data, SinogramKind::Counts, g, crate::materials::default_bins()[..2].to_vec()).unwrap();
        let a = poisson_sample(&mean, 11).unwrap();
        let b = poisson_sample(&mean, 11).unwrap();
        let c = poisson_sample(&mean, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.data, c.data);
        assert_eq!(a.data[[0, 1, 1]], 0.0);
        assert!(a.data.iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
    }

    #[test]
    fn poisson_large_mean_statistics() {
        let g = Geometry::parallel(ImageGrid::new(2, 2, 1.0).unwrap(), 1000, 1.0, 1).unwrap();
        let mean = Sinogram::new(
            Array3::from_elem((1, 1, 1000), 1e6),
            SinogramKind::Counts,
            g,
            vec![EnergyBin::new(30.0, 40.0).unwrap()],
        )
        .unwrap();
        let draw = poisson_sample(&mean, 3).unwrap();
        let n = 1000.0;
        let m = draw.data.sum() / n;
        let var = draw.data.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        // standard error of the mean is sqrt(1e6 / 1000)
        assert!((m - 1e6).abs() < 5.0 * (1e6f64 / n).sqrt(), "{m}");
        assert!((0.9..=1.1).contains(&(var / m)), "{}", var / m);
    }

    #[test]
    fn poisson_rejects_negative_means_and_wrong_kind() {
        let g = small_geometry(4, 1);
        let bins = vec![EnergyBin::new(30.0, 40.0).unwrap()];
        let li = Sinogram::new(Array3::from_elem((1, 1, 12), -1.0), SinogramKind::LineIntegral, g.clone(), bins.clone()).unwrap();
        assert!(poisson_sample(&li, 0).is_err());
        assert!(Sinogram::new(Array3::from_elem((1, 1, 12), -1.0), SinogramKind::Counts, g, bins).is_err());
    }

    #[test]
    fn log_normalization() {
        let (spectrum, resp) = monochromatic(50.0, 1000.0);
        let g = small_geometry(4, 1);
        let mut data = Array3::zeros((1, 1, 12));
        data[[0, 0, 0]] = 1000.0;
        data[[0, 0, 1]] = 500.0;
        data[[0, 0, 2]] = 0.0;
        let counts = Sinogram::new(data, SinogramKind::Counts, g, resp.bins().to_vec()).unwrap();
        let li = log_normalize(&counts, &spectrum, &resp).unwrap();
        assert_eq!(li.kind, SinogramKind::LineIntegral);
        assert_relative_eq!(li.data[[0, 0, 0]], 0.0, epsilon = 1e-12);
        assert_relative_eq!(li.data[[0, 0, 1]], 2f64.ln(), max_relative = 1e-12);
        assert_relative_eq!(li.data[[0, 0, 2]], -(0.5f64 / 1000.0).ln(), max_relative = 1e-12);
        assert!(log_normalize(&li, &spectrum, &resp).is_err());
    }

    #[test]
    fn linearization_makes_the_reference_linear() {
        let spectrum = bundled::spectrum_80kvp();
        let resp = DetectorResponse::ideal(spectrum.grid().clone(), crate::materials::default_bins()).unwrap();
        let water = bundled::table("water").unwrap();
        let g = small_geometry(24, 8);
        let mut spec = PhantomSpec {
            width: 24,
            height: 24,
            pixel_size_cm: 0.1,
            background: vec![],
            inserts: vec![],
        };
        spec.inserts.push(Insert {
            center_cm: [0.0, 0.0],
            radius_cm: 1.0,
            composition: vec![Component { material: "water".into(), density_mg_cc: 1000.0 }],
        });
        let maps = rasterize(&spec, &["water".to_string()]).unwrap();
        let counts = acquire_mean(&maps, &spectrum, &resp, std::slice::from_ref(&water), &g).unwrap();
        let line = log_normalize(&counts, &spectrum, &resp).unwrap();
        let lin = linearize_line_integrals(&line, &spectrum, &resp, &water).unwrap();
        let m = crate::materials::effective_mu_matrix(&spectrum, &resp, std::slice::from_ref(&water)).unwrap();
        let path = forward_project(maps.map(0), &g).unwrap();
        for b in 0..5 {
            let mut hardened = false;
            for ((l, p), raw) in lin.bin(b).iter().zip(path.iter()).zip(line.bin(b).iter()) {
                assert_relative_eq!(*l, m.entries()[[b, 0]] * p, max_relative = 1e-9, epsilon = 1e-12);
                hardened |= *raw < 0.999 * l;
            }
            if b == 0 {
                assert!(hardened, "the lowest bin should show beam hardening");
            }
        }
    }
}
