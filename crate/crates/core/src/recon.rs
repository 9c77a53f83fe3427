//! Per-bin SART-TV reconstruction of linear attenuation images.
//!
//! One outer iteration is a full SART sweep (views in angular order, each view
//! a simultaneous update normalized by ray lengths and pixel weights), an
//! optional non-negativity clamp, then `tv_inner_steps` steps of normalized
//! TV-gradient descent whose length is `tv_weight` times the size of the SART
//! update just made.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materials::EnergyBin;
use crate::phantom::ImageGrid;
use crate::projector::{forward_project, Geometry, Sinogram, SinogramKind};

pub use crate::projector::back_project;

/// Stack of B linear-attenuation images (1/cm), `data[[bin, row, col]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiEnergyImage {
    pub data: Array3<f64>,
    pub bins: Vec<EnergyBin>,
    pub pixel_size: f64,
}

impl MultiEnergyImage {
    pub fn new(data: Array3<f64>, bins: Vec<EnergyBin>, pixel_size: f64) -> Result<Self> {
        if data.dim().0 != bins.len() {
            return Err(Error::invalid(format!("{} images for {} bins", data.dim().0, bins.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("multi-energy image contains non-finite values"));
        }
        Ok(MultiEnergyImage { data, bins, pixel_size })
    }

    pub fn n_bins(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn n_pixels(&self) -> usize {
        self.height() * self.width()
    }

    pub fn grid(&self) -> ImageGrid {
        ImageGrid {
            width: self.width(),
            height: self.height(),
            pixel_size: self.pixel_size,
        }
    }

    pub fn bin(&self, b: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), b)
    }

    /// The B-vector of pixel `p` (row-major flat index).
    pub fn pixel(&self, p: usize) -> Vec<f64> {
        let (r, c) = (p / self.width(), p % self.width());
        (0..self.n_bins()).map(|b| self.data[[b, r, c]]).collect()
    }

    /// `n_pixels × B` matrix of pixel spectra.
    pub fn pixel_matrix(&self) -> Array2<f64> {
        let (b, h, w) = self.data.dim();
        let mut out = Array2::zeros((h * w, b));
        for (k, plane) in self.data.outer_iter().enumerate() {
            for (p, v) in plane.iter().enumerate() {
                out[[p, k]] = *v;
            }
        }
        out
    }

    pub fn from_pixel_matrix(pixels: &Array2<f64>, height: usize, width: usize, bins: Vec<EnergyBin>, pixel_size: f64) -> Result<Self> {
        let b = pixels.ncols();
        if pixels.nrows() != height * width {
            return Err(Error::invalid("pixel matrix does not match the image size"));
        }
        let data = Array3::from_shape_fn((b, height, width), |(k, r, c)| pixels[[r * width + c, k]]);
        MultiEnergyImage::new(data, bins, pixel_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SartTvParams {
    pub n_iterations: usize,
    /// SART relaxation, in (0, 2).
    pub relaxation: f64,
    /// TV step length relative to the preceding SART update.
    pub tv_weight: f64,
    pub tv_inner_steps: usize,
    pub nonneg: bool,
}

impl Default for SartTvParams {
    fn default() -> Self {
        SartTvParams {
            n_iterations: 100,
            relaxation: 1.0,
            tv_weight: 0.2,
            tv_inner_steps: 10,
            nonneg: true,
        }
    }
}

impl SartTvParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 {
            return Err(Error::Config("sart.n_iterations must be >= 1".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(Error::Config("sart.relaxation must lie in (0, 2)".into()));
        }
        if !(self.tv_weight >= 0.0 && self.tv_weight.is_finite()) {
            return Err(Error::Config("sart.tv_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Reconstructed image with the data-residual trace `‖Ax − b‖` per outer iteration.
#[derive(Debug, Clone)]
pub struct SartTvOutput {
    pub image: Array2<f64>,
    pub residuals: Vec<f64>,
    /// `‖Ax − b‖ / ‖b‖` of the returned image.
    pub relative_residual: f64,
}

const DIVERGENCE_FACTOR: f64 = 10.0;
const TV_EPSILON: f64 = 1e-8;

/// Reconstructs one bin from its line integrals.
pub fn sart_tv(sino: ArrayView2<f64>, geometry: &Geometry, params: &SartTvParams) -> Result<SartTvOutput> {
    params.validate()?;
    if sino.dim() != (geometry.n_views(), geometry.n_detectors) {
        return Err(Error::invalid("sinogram does not match the geometry"));
    }
    let sino = sino.as_standard_layout();
    let b = sino.as_slice().expect("standard layout");
    let (h, w) = (geometry.grid.height, geometry.grid.width);
    let n_pix = h * w;
    let n_det = geometry.n_detectors;

    // ray lengths through the image, per view
    let ones = Array2::from_elem((h, w), 1.0);
    let ray_len = forward_project(ones.view(), geometry)?;
    let ray_len = ray_len.as_slice().expect("standard layout");

    let mut x = vec![0.0; n_pix];
    let mut num = vec![0.0; n_pix];
    let mut den = vec![0.0; n_pix];
    let mut proj = vec![0.0; n_det];
    let mut residuals = Vec::with_capacity(params.n_iterations);
    let mut best = f64::INFINITY;

    for _ in 0..params.n_iterations {
        let before = x.clone();
        for view in 0..geometry.n_views() {
            geometry.project_view(&x, view, &mut proj);
            num.fill(0.0);
            den.fill(0.0);
            for det in 0..n_det {
                let len = ray_len[view * n_det + det];
                if len <= 0.0 {
                    continue;
                }
                let r = (b[view * n_det + det] - proj[det]) / len;
                geometry.trace(view, det, |p, wgt| {
                    num[p] += wgt * r;
                    den[p] += wgt;
                });
            }
            for p in 0..n_pix {
                if den[p] > 0.0 {
                    x[p] += params.relaxation * num[p] / den[p];
                }
            }
        }
        if params.nonneg {
            x.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let residual = data_residual(&x, b, geometry, &mut proj);
        if !residual.is_finite() {
            return Err(Error::Numerical("SART-TV produced a non-finite residual".into()));
        }
        residuals.push(residual);
        best = best.min(residual);
        if best > 0.0 && residual > DIVERGENCE_FACTOR * best {
            return Err(Error::Numerical(format!(
                "SART-TV diverged: residual {residual:.4e} exceeds {DIVERGENCE_FACTOR}x its minimum {best:.4e}"
            )));
        }

        if params.tv_weight > 0.0 && params.tv_inner_steps > 0 {
            let dp = x.iter().zip(&before).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            tv_descent(&mut x, h, w, params.tv_weight * dp, params.tv_inner_steps, params.nonneg);
        }
    }

    let image = Array2::from_shape_vec((h, w), x).expect("shape");
    let ax = forward_project(image.view(), geometry)?;
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rnorm = ax.iter().zip(b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let relative_residual = if bnorm > 0.0 { rnorm / bnorm } else { rnorm };
    Ok(SartTvOutput {
        image,
        residuals,
        relative_residual,
    })
}

fn data_residual(x: &[f64], b: &[f64], geometry: &Geometry, proj: &mut [f64]) -> f64 {
    let n_det = geometry.n_detectors;
    let mut res2 = 0.0;
    for view in 0..geometry.n_views() {
        geometry.project_view(x, view, proj);
        let row = &b[view * n_det..(view + 1) * n_det];
        res2 += proj.iter().zip(row).map(|(p, b)| (p - b).powi(2)).sum::<f64>();
    }
    res2.sqrt()
}

/// Normalized-gradient TV descent with backtracking, so no inner step raises
/// the (smoothed) TV.
fn tv_descent(x: &mut [f64], h: usize, w: usize, step: f64, n_steps: usize, nonneg: bool) {
    if step <= 0.0 {
        return;
    }
    let mut grad = vec![0.0; x.len()];
    let mut trial = vec![0.0; x.len()];
    let mut tv = smooth_tv(x, h, w);
    for _ in 0..n_steps {
        tv_gradient(x, h, w, &mut grad);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm == 0.0 {
            return;
        }
        let mut alpha = step / norm;
        let mut accepted = false;
        for _ in 0..20 {
            for ((t, v), g) in trial.iter_mut().zip(x.iter()).zip(&grad) {
                *t = v - alpha * g;
                if nonneg {
                    *t = t.max(0.0);
                }
            }
            let tv_trial = smooth_tv(&trial, h, w);
            if tv_trial <= tv {
                x.copy_from_slice(&trial);
                tv = tv_trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return;
        }
    }
}

fn smooth_tv(x: &[f64], h: usize, w: usize) -> f64 {
    let mut s = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = x[r * w + c];
            let dx = if c > 0 { v - x[r * w + c - 1] } else { 0.0 };
            let dy = if r > 0 { v - x[(r - 1) * w + c] } else { 0.0 };
            s += (dx * dx + dy * dy + TV_EPSILON * TV_EPSILON).sqrt();
        }
    }
    s
}

/// Gradient of the smoothed isotropic TV, `Σ sqrt(dx² + dy² + ε²)` with
/// backward differences.
fn tv_gradient(x: &[f64], h: usize, w: usize, grad: &mut [f64]) {
    grad.fill(0.0);
    let at = |r: usize, c: usize| x[r * w + c];
    for r in 0..h {
        for c in 0..w {
            let v = at(r, c);
            let dx = if c > 0 { v - at(r, c - 1) } else { 0.0 };
            let dy = if r > 0 { v - at(r - 1, c) } else { 0.0 };
            let mag = (dx * dx + dy * dy + TV_EPSILON * TV_EPSILON).sqrt();
            // d/dv of this term, and of the same term w.r.t. its two neighbours
            grad[r * w + c] += (dx + dy) / mag;
            if c > 0 {
                grad[r * w + c - 1] -= dx / mag;
            }
            if r > 0 {
                grad[(r - 1) * w + c] -= dy / mag;
            }
        }
    }
}

/// Isotropic TV of an image with backward differences.
pub fn total_variation(image: ArrayView2<f64>) -> f64 {
    let (h, w) = image.dim();
    let mut tv = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = image[[r, c]];
            let dx = if c > 0 { v - image[[r, c - 1]] } else { 0.0 };
            let dy = if r > 0 { v - image[[r - 1, c]] } else { 0.0 };
            tv += (dx * dx + dy * dy).sqrt();
        }
    }
    tv
}

/// Residual traces of every bin, in bin order.
#[derive(Debug, Clone)]
pub struct ReconLog {
    pub residuals: Vec<Vec<f64>>,
    pub relative_residuals: Vec<f64>,
}

/// Reconstructs all bins of a line-integral sinogram independently.
pub fn reconstruct_all(sino: &Sinogram, params: &SartTvParams) -> Result<(MultiEnergyImage, ReconLog)> {
    if sino.kind != SinogramKind::LineIntegral {
        return Err(Error::invalid("reconstruction needs a line-integral sinogram"));
    }
    let outputs: Vec<SartTvOutput> = (0..sino.n_bins())
        .into_par_iter()
        .map(|b| sart_tv(sino.bin(b), &sino.geometry, params))
        .collect::<Result<_>>()?;
    let g = sino.geometry.grid;
    let mut data = Array3::zeros((sino.n_bins(), g.height, g.width));
    for (b, out) in outputs.iter().enumerate() {
        data.index_axis_mut(Axis(0), b).assign(&out.image);
    }
    let log = ReconLog {
        residuals: outputs.iter().map(|o| o.residuals.clone()).collect(),
        relative_residuals: outputs.iter().map(|o| o.relative_residual).collect(),
    };
    Ok((MultiEnergyImage::new(data, sino.bins.clone(), g.pixel_size)?, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{rasterize, Component, Insert, PhantomSpec};

    fn disk_case(size: usize, views: usize) -> (Array2<f64>, Geometry) {
        let spec = PhantomSpec {
            width: size,
            height: size,
            pixel_size_cm: 0.1,
            background: vec![],
            inserts: vec![Insert {
                center_cm: [0.3, -0.2],
                radius_cm: 0.3 * size as f64 * 0.1,
                composition: vec![Component {
                    material: "water".into(),
                    density_mg_cc: 1000.0,
                }],
            }],
        };
        let maps = rasterize(&spec, &["water".to_string()]).unwrap();
        let mu = maps.map(0).mapv(|v| v * 0.25);
        let g = Geometry::parallel(spec.grid().unwrap(), size, 0.1, views).unwrap();
        (mu, g)
    }

    #[test]
    fn zero_data_reconstructs_to_zero() {
        let (_, g) = disk_case(32, 30);
        let out = sart_tv(Array2::zeros((30, 32)).view(), &g, &SartTvParams::default()).unwrap();
        assert!(out.image.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn noiseless_disk_converges() {
        let (mu, g) = disk_case(32, 60);
        let b = forward_project(mu.view(), &g).unwrap();
        let params = SartTvParams {
            n_iterations: 40,
            ..Default::default()
        };
        let out = sart_tv(b.view(), &g, &params).unwrap();
        assert!(out.relative_residual < 0.02, "{}", out.relative_residual);
        assert_eq!(out.residuals.len(), 40);
        assert!(out.residuals.last().unwrap() < &out.residuals[0]);
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        let (h, w) = (5, 6);
        let x: Vec<f64> = (0..h * w).map(|k| ((k * 7919) % 13) as f64 * 0.1).collect();
        let mut g = vec![0.0; h * w];
        tv_gradient(&x, h, w, &mut g);
        let smooth_tv = |x: &[f64]| smooth_tv(x, h, w);
        let eps = 1e-7;
        for p in 0..h * w {
            let mut xp = x.clone();
            xp[p] += eps;
            let mut xm = x.clone();
            xm[p] -= eps;
            let fd = (smooth_tv(&xp) - smooth_tv(&xm)) / (2.0 * eps);
            assert!((fd - g[p]).abs() < 1e-5, "pixel {p}: {fd} vs {}", g[p]);
        }
    }

    #[test]
    fn tv_steps_never_raise_tv() {
        let (h, w) = (16, 16);
        let mut x: Vec<f64> = (0..h * w).map(|k| ((k * 7919) % 17) as f64 * 0.05).collect();
        for _ in 0..10 {
            let before = smooth_tv(&x, h, w);
            tv_descent(&mut x, h, w, 0.5, 1, true);
            assert!(smooth_tv(&x, h, w) <= before);
        }
    }

    #[test]
    fn residual_is_monotone_on_noiseless_data() {
        let (mu, g) = disk_case(32, 60);
        let b = forward_project(mu.view(), &g).unwrap();
        let params = SartTvParams {
            n_iterations: 20,
            ..Default::default()
        };
        let out = sart_tv(b.view(), &g, &params).unwrap();
        for k in 3..out.residuals.len() {
            assert!(out.residuals[k] <= out.residuals[k - 1] * (1.0 + 1e-9), "{:?}", out.residuals);
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let grid = ImageGrid::new(8, 8, 0.1).unwrap();
        let g = Geometry::parallel(grid, 8, 0.1, 4).unwrap();
        let bad = SartTvParams {
            relaxation: 2.5,
            ..Default::default()
        };
        assert!(sart_tv(Array2::zeros((4, 8)).view(), &g, &bad).is_err());
        let bad = SartTvParams {
            n_iterations: 0,
            ..Default::default()
        };
        assert!(sart_tv(Array2::zeros((4, 8)).view(), &g, &bad).is_err());
    }

    #[test]
    fn pixel_matrix_round_trip() {
        let data = Array3::from_shape_fn((3, 4, 5), |(b, r, c)| (b * 100 + r * 10 + c) as f64);
        let bins = crate::materials::default_bins()[..3].to_vec();
        let img = MultiEnergyImage::new(data, bins.clone(), 0.1).unwrap();
        let m = img.pixel_matrix();
        assert_eq!(m.dim(), (20, 3));
        assert_eq!(img.pixel(7), vec![12.0, 112.0, 212.0]);
        let back = MultiEnergyImage::from_pixel_matrix(&m, 4, 5, bins, 0.1).unwrap();
        assert_eq!(back, img);
    }
}
