//! Image-domain material decomposition: per-pixel lasso by ADMM, the coarse
//! and ROI-wise fine stages, relative population thresholding, and the
//! TV-regularized baseline.
//!
//! The coarse and fine stages solve on column-normalized matrices (`M D⁻¹`,
//! `D` the column norms) so one λ acts comparably on materials whose
//! attenuation differs by orders of magnitude; solutions are mapped back to
//! g/cm³.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::materials::DecompMatrix;
use crate::phantom::DensityMaps;
use crate::recon::MultiEnergyImage;
use crate::segmentation::LabelImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdmmParams {
    pub lambda: f64,
    pub rho: f64,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub nonneg: bool,
}

impl Default for AdmmParams {
    fn default() -> Self {
        AdmmParams {
            lambda: 0.0,
            rho: 1.0,
            max_iter: 2000,
            tol_primal: 1e-7,
            tol_dual: 1e-7,
            nonneg: true,
        }
    }
}

impl AdmmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("admm.lambda must be >= 0".into()));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config("admm.rho must be > 0".into()));
        }
        if !(self.tol_primal > 0.0 && self.tol_dual > 0.0) {
            return Err(Error::Config("admm tolerances must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("admm.max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-pixel lasso solutions, `n_pixels × M`.
#[derive(Debug, Clone)]
pub struct LassoOutput {
    pub x: Array2<f64>,
    /// Every pixel met both tolerances.
    pub converged: bool,
    pub max_iterations: usize,
}

const BALANCE_RATIO: f64 = 10.0;
const BALANCE_FACTOR: f64 = 2.0;

struct Factor {
    rho: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

fn factor(mtm: &DMatrix<f64>, rho: f64) -> Factor {
    let n = mtm.nrows();
    let a = mtm + DMatrix::identity(n, n) * rho;
    Factor {
        rho,
        chol: a.cholesky().expect("MᵀM + ρI is positive definite for ρ > 0"),
    }
}

fn shrink(v: f64, t: f64, nonneg: bool) -> f64 {
    if nonneg {
        (v - t).max(0.0)
    } else {
        v.signum() * (v.abs() - t).max(0.0)
    }
}

/// Solves `argmin ½‖y − Mx‖² + λ‖x‖₁` (optionally with x ≥ 0) for one pixel.
fn admm_pixel(mtm: &DMatrix<f64>, base: &Factor, mty: &DVector<f64>, p: &AdmmParams) -> (DVector<f64>, bool, usize) {
    let n = mtm.ncols();
    let mut owned: Option<Factor> = None;
    let mut z = DVector::<f64>::zeros(n);
    let mut u = DVector::<f64>::zeros(n);
    let mut rho = base.rho;
    for it in 1..=p.max_iter {
        let f = owned.as_ref().unwrap_or(base);
        let x = f.chol.solve(&(mty + (&z - &u) * rho));
        let z_old = z.clone();
        let t = p.lambda / rho;
        for j in 0..n {
            z[j] = shrink(x[j] + u[j], t, p.nonneg);
        }
        u += &x - &z;
        let r = (&x - &z).norm();
        let s = rho * (&z - &z_old).norm();
        if r < p.tol_primal && s < p.tol_dual {
            return (z, true, it);
        }
        let new_rho = if r > BALANCE_RATIO * s {
            rho * BALANCE_FACTOR
        } else if s > BALANCE_RATIO * r {
            rho / BALANCE_FACTOR
        } else {
            rho
        };
        if new_rho != rho {
            u *= rho / new_rho;
            rho = new_rho;
            owned = Some(factor(mtm, rho));
        }
    }
    (z, false, p.max_iter)
}

/// Per-pixel ADMM lasso on rows of `y` (`n_pixels × B`) with matrix `m` (`B × M`).
pub fn lasso_admm_pixels(y: ArrayView2<f64>, m: ArrayView2<f64>, params: &AdmmParams) -> Result<LassoOutput> {
    params.validate()?;
    let (np, b) = y.dim();
    if m.nrows() != b {
        return Err(Error::invalid(format!("matrix has {} rows for {b} bins", m.nrows())));
    }
    let nm = m.ncols();
    if nm == 0 {
        return Err(Error::invalid("decomposition matrix has no columns"));
    }
    let md = DMatrix::from_fn(b, nm, |i, j| m[[i, j]]);
    let mtm = md.transpose() * &md;
    let base = factor(&mtm, params.rho);
    let results: Vec<(DVector<f64>, bool, usize)> = (0..np)
        .into_par_iter()
        .map(|p| {
            let yp = DVector::from_fn(b, |i, _| y[[p, i]]);
            let mty = md.transpose() * yp;
            admm_pixel(&mtm, &base, &mty, params)
        })
        .collect();
    let mut x = Array2::zeros((np, nm));
    let mut converged = true;
    let mut max_iterations = 0;
    for (p, (xp, c, it)) in results.into_iter().enumerate() {
        for j in 0..nm {
            x[[p, j]] = xp[j];
        }
        converged &= c;
        max_iterations = max_iterations.max(it);
    }
    Ok(LassoOutput {
        x,
        converged,
        max_iterations,
    })
}

fn maps_from_pixels(x: &Array2<f64>, names: Vec<String>, h: usize, w: usize) -> Result<DensityMaps> {
    let m = x.ncols();
    let maps = Array3::from_shape_fn((m, h, w), |(k, r, c)| x[[r * w + c, k]]);
    DensityMaps::new(maps, names)
}

fn check_bins(y: &MultiEnergyImage, m: &DecompMatrix) -> Result<()> {
    if y.n_bins() != m.n_bins() {
        return Err(Error::invalid(format!("image has {} bins, matrix has {}", y.n_bins(), m.n_bins())));
    }
    Ok(())
}

/// Per-pixel lasso over the whole image with the plain (unscaled) matrix.
pub fn lasso_admm(y: &MultiEnergyImage, m: &DecompMatrix, params: &AdmmParams) -> Result<(DensityMaps, bool)> {
    check_bins(y, m)?;
    let out = lasso_admm_pixels(y.pixel_matrix().view(), m.entries().view(), params)?;
    Ok((maps_from_pixels(&out.x, m.material_names().to_vec(), y.height(), y.width())?, out.converged))
}

/// Settings shared by the coarse and fine stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecompParams {
    /// λ = lambda_scale · max |M'ᵀy| over the pixels of a block (M' column-normalized).
    pub lambda_scale: f64,
    pub admm: AdmmParams,
}

impl Default for DecompParams {
    fn default() -> Self {
        DecompParams {
            lambda_scale: 0.01,
            admm: AdmmParams::default(),
        }
    }
}

/// Column-normalized lasso on a block of pixels; returns g/cm³ per pixel.
fn scaled_block(y: &Array2<f64>, m: ArrayView2<f64>, params: &DecompParams) -> Result<LassoOutput> {
    let norms: Vec<f64> = m.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
    let ms = Array2::from_shape_fn(m.dim(), |(i, j)| m[[i, j]] / norms[j]);
    let corr = y.dot(&ms);
    let lam_max = corr.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let admm = AdmmParams {
        lambda: params.lambda_scale * lam_max,
        ..params.admm
    };
    let mut out = lasso_admm_pixels(y.view(), ms.view(), &admm)?;
    for mut row in out.x.rows_mut() {
        for (v, n) in row.iter_mut().zip(&norms) {
            *v /= n;
        }
    }
    Ok(out)
}

/// Coarse decomposition: every pixel against the full basis.
pub fn coarse_decompose(y: &MultiEnergyImage, m: &DecompMatrix, params: &DecompParams) -> Result<(DensityMaps, bool)> {
    check_bins(y, m)?;
    let out = scaled_block(&y.pixel_matrix(), m.entries().view(), params)?;
    Ok((maps_from_pixels(&out.x, m.material_names().to_vec(), y.height(), y.width())?, out.converged))
}

/// Per-ROI basis after relative population thresholding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiBasisSelection {
    pub material_names: Vec<String>,
    /// Kept material indices per ROI, ascending.
    pub kept: Vec<Vec<usize>>,
    /// `fractions[roi][material]`: share of ROI pixels containing the material.
    pub fractions: Vec<Vec<f64>>,
    pub threshold: f64,
    pub presence_eps: f64,
    /// ROIs without pixels.
    pub empty_rois: Vec<usize>,
}

impl RoiBasisSelection {
    /// Plain-text report, one line per ROI.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# threshold {} presence_eps {}", self.threshold, self.presence_eps);
        for (k, (kept, fr)) in self.kept.iter().zip(&self.fractions).enumerate() {
            let names: Vec<&str> = kept.iter().map(|&i| self.material_names[i].as_str()).collect();
            let fracs: Vec<String> = fr.iter().zip(&self.material_names).map(|(f, n)| format!("{n}={f:.4}")).collect();
            let flag = if self.empty_rois.contains(&k) { " (empty)" } else { "" };
            let _ = writeln!(s, "roi {k}: kept [{}] fractions {}{flag}", names.join(","), fracs.join(" "));
        }
        s
    }
}

/// Keeps, per ROI, the materials present (density > `presence_eps`) in at
/// least a fraction `t` of its pixels; if none qualifies, the most frequent
/// one (ties to the lowest index).
pub fn rpt_select(x_coarse: &DensityMaps, rois: &LabelImage, t: f64, presence_eps: f64) -> Result<RoiBasisSelection> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("threshold T = {t} outside [0, 1]")));
    }
    let (h, w) = (x_coarse.height(), x_coarse.width());
    if rois.n_pixels() != h * w {
        return Err(Error::invalid("ROI partition does not match the density maps"));
    }
    let nm = x_coarse.n_materials();
    let sizes = rois.sizes();
    let mut counts = vec![vec![0usize; nm]; rois.k];
    for (p, &l) in rois.labels.iter().enumerate() {
        let (r, c) = (p / w, p % w);
        for (a, cnt) in counts[l].iter_mut().enumerate() {
            if x_coarse.maps()[[a, r, c]] > presence_eps {
                *cnt += 1;
            }
        }
    }
    let mut kept = Vec::with_capacity(rois.k);
    let mut fractions = Vec::with_capacity(rois.k);
    let mut empty_rois = Vec::new();
    for k in 0..rois.k {
        if sizes[k] == 0 {
            empty_rois.push(k);
            kept.push(Vec::new());
            fractions.push(vec![0.0; nm]);
            continue;
        }
        let fr: Vec<f64> = counts[k].iter().map(|&c| c as f64 / sizes[k] as f64).collect();
        let mut sel: Vec<usize> = (0..nm).filter(|&a| fr[a] >= t).collect();
        if sel.is_empty() {
            let mut best = 0;
            for a in 1..nm {
                if fr[a] > fr[best] {
                    best = a;
                }
            }
            sel.push(best);
        }
        kept.push(sel);
        fractions.push(fr);
    }
    Ok(RoiBasisSelection {
        material_names: x_coarse.material_names().to_vec(),
        kept,
        fractions,
        threshold: t,
        presence_eps,
        empty_rois,
    })
}

/// Fine decomposition: each ROI against its selected basis, on pixel spectra
/// blended toward the ROI mean by `beta`.
pub fn fine_decompose(
    y: &MultiEnergyImage,
    rois: &LabelImage,
    selection: &RoiBasisSelection,
    m: &DecompMatrix,
    params: &DecompParams,
    beta: f64,
) -> Result<(DensityMaps, bool)> {
    check_bins(y, m)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta = {beta} outside [0, 1]")));
    }
    if selection.kept.len() != rois.k || rois.n_pixels() != y.n_pixels() {
        return Err(Error::invalid("selection does not cover the ROI partition"));
    }
    if selection.material_names != m.material_names() {
        return Err(Error::invalid("selection and matrix list different materials"));
    }
    let pix = y.pixel_matrix();
    let b = y.n_bins();
    let nm = m.n_materials();
    let mut x = Array2::zeros((y.n_pixels(), nm));
    let mut converged = true;
    for (k, members) in rois.members().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let cols = &selection.kept[k];
        if cols.is_empty() {
            return Err(Error::invalid(format!("ROI {k} has no selected materials")));
        }
        let mut mean = vec![0.0; b];
        for &p in &members {
            for j in 0..b {
                mean[j] += pix[[p, j]];
            }
        }
        mean.iter_mut().for_each(|v| *v /= members.len() as f64);
        let block = Array2::from_shape_fn((members.len(), b), |(i, j)| (1.0 - beta) * pix[[members[i], j]] + beta * mean[j]);
        let sub = m.select_columns(cols)?;
        let out = scaled_block(&block, sub.entries().view(), params)?;
        converged &= out.converged;
        for (i, &p) in members.iter().enumerate() {
            for (c, &a) in cols.iter().enumerate() {
                x[[p, a]] = out.x[[i, c]];
            }
        }
    }
    Ok((maps_from_pixels(&x, m.material_names().to_vec(), y.height(), y.width())?, converged))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TvDecompParams {
    pub tv_weight: f64,
    pub max_iter: usize,
    /// Iterations of the dual TV-prox solver per outer step.
    pub prox_iter: usize,
    pub nonneg: bool,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
}

impl Default for TvDecompParams {
    fn default() -> Self {
        TvDecompParams {
            tv_weight: 1e-3,
            max_iter: 300,
            prox_iter: 30,
            nonneg: true,
            tol: 1e-7,
        }
    }
}

/// TV-baseline result with its objective trace.
#[derive(Debug, Clone)]
pub struct TvDecompOutput {
    pub maps: DensityMaps,
    pub objective: Vec<f64>,
    pub converged: bool,
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn power_iteration(a: &DMatrix<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lam = 0.0;
    for _ in 0..iters {
        let w = a * &v;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        lam = v.dot(&w);
        v = w / nw;
    }
    lam.max((a * &v).norm())
}

fn image_tv(x: &[f64], h: usize, w: usize) -> f64 {
    let mut tv = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = x[r * w + c];
            let dx = if c + 1 < w { x[r * w + c + 1] - v } else { 0.0 };
            let dy = if r + 1 < h { x[(r + 1) * w + c] - v } else { 0.0 };
            tv += (dx * dx + dy * dy).sqrt();
        }
    }
    tv
}

/// `argmin_x ½‖x − b‖² + weight·TV(x)` (x ≥ 0 when `nonneg`) by the fast
/// gradient projection on the dual.
pub fn tv_prox(b: &[f64], h: usize, w: usize, weight: f64, iters: usize, nonneg: bool) -> Vec<f64> {
    let n = h * w;
    let proj = |v: f64| if nonneg { v.max(0.0) } else { v };
    if weight <= 0.0 {
        return b.iter().map(|&v| proj(v)).collect();
    }
    // dual fields on forward differences
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut rp = p.clone();
    let mut rq = q.clone();
    let mut tk = 1.0f64;
    let mut x = vec![0.0; n];
    let primal = |rp: &[f64], rq: &[f64], x: &mut [f64]| {
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                // divergence (negative adjoint of forward differences)
                let mut div = 0.0;
                if c + 1 < w {
                    div += rp[i];
                }
                if c > 0 {
                    div -= rp[i - 1];
                }
                if r + 1 < h {
                    div += rq[i];
                }
                if r > 0 {
                    div -= rq[i - w];
                }
                x[i] = proj(b[i] + weight * div);
            }
        }
    };
    let step = 1.0 / (8.0 * weight);
    for _ in 0..iters {
        primal(&rp, &rq, &mut x);
        let (p_old, q_old) = (p.clone(), q.clone());
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                // gradient step: ascend along -∇x
                let gx = if c + 1 < w { x[i + 1] - x[i] } else { 0.0 };
                let gy = if r + 1 < h { x[i + w] - x[i] } else { 0.0 };
                let a = rp[i] - step * weight * gx;
                let bq = rq[i] - step * weight * gy;
                let norm = (a * a + bq * bq).sqrt().max(1.0);
                p[i] = a / norm;
                q[i] = bq / norm;
            }
        }
        let t_next = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
        let m = (tk - 1.0) / t_next;
        for i in 0..n {
            rp[i] = p[i] + m * (p[i] - p_old[i]);
            rq[i] = q[i] + m * (q[i] - q_old[i]);
        }
        tk = t_next;
    }
    primal(&p, &q, &mut x);
    x
}

/// TV-regularized baseline: `argmin ½‖Y − MX‖²_F + tv_weight·Σ_α TV(x_α)`.
///
/// Proximal gradient in column-normalized variables (same objective, better
/// conditioned), step 1/L with L from power iteration, warm-started from the
/// per-pixel least-squares solution. A step that would raise the objective
/// (inexact prox) is retried with twice the prox iterations, then ends the run.
pub fn tv_decompose(y: &MultiEnergyImage, m: &DecompMatrix, params: &TvDecompParams) -> Result<TvDecompOutput> {
    check_bins(y, m)?;
    if !(params.tv_weight >= 0.0) || params.max_iter == 0 {
        return Err(Error::Config("tv.tv_weight must be >= 0 and tv.max_iter >= 1".into()));
    }
    let (h, w) = (y.height(), y.width());
    let np = h * w;
    let b = y.n_bins();
    let nm = m.n_materials();
    let e = m.entries();
    let norms: Vec<f64> = e.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
    let ms = DMatrix::from_fn(b, nm, |i, j| e[[i, j]] / norms[j]);
    let mtm = ms.transpose() * &ms;
    let lip = power_iteration(&mtm, 200) * 1.01;
    let step = 1.0 / lip;
    let pix = y.pixel_matrix();

    // channel-major scaled variables u[α][p] = D_α x_α(p)
    let mut mty = vec![vec![0.0; np]; nm];
    for p in 0..np {
        for a in 0..nm {
            mty[a][p] = (0..b).map(|i| ms[(i, a)] * pix[[p, i]]).sum();
        }
    }
    let pinv = mtm.clone().try_inverse().ok_or_else(|| Error::Numerical("basis matrix is rank deficient".into()))?;
    let mut u = vec![vec![0.0; np]; nm];
    for p in 0..np {
        let v = &pinv * DVector::from_fn(nm, |a, _| mty[a][p]);
        for a in 0..nm {
            u[a][p] = if params.nonneg { v[a].max(0.0) } else { v[a] };
        }
    }
    let weights: Vec<f64> = norms.iter().map(|n| params.tv_weight / n).collect();
    let objective = |u: &[Vec<f64>]| -> f64 {
        let mut fit = 0.0;
        for p in 0..np {
            for i in 0..b {
                let pred: f64 = (0..nm).map(|a| ms[(i, a)] * u[a][p]).sum();
                fit += (pix[[p, i]] - pred).powi(2);
            }
        }
        let tv: f64 = (0..nm).map(|a| weights[a] * image_tv(&u[a], h, w)).sum();
        0.5 * fit + tv
    };
    let mut obj = objective(&u);
    let mut trace = vec![obj];
    let mut converged = false;
    for _ in 0..params.max_iter {
        // gradient of the data term: MᵀM u − Mᵀy
        let mut g = vec![vec![0.0; np]; nm];
        for p in 0..np {
            for a in 0..nm {
                let s: f64 = (0..nm).map(|c| mtm[(a, c)] * u[c][p]).sum();
                g[a][p] = s - mty[a][p];
            }
        }
        let mut accepted = None;
        for prox_iter in [params.prox_iter, params.prox_iter * 2] {
            let cand: Vec<Vec<f64>> = (0..nm)
                .into_par_iter()
                .map(|a| {
                    let v: Vec<f64> = u[a].iter().zip(&g[a]).map(|(x, gx)| x - step * gx).collect();
                    tv_prox(&v, h, w, step * weights[a], prox_iter, params.nonneg)
                })
                .collect();
            let cand_obj = objective(&cand);
            if cand_obj <= obj {
                accepted = Some((cand, cand_obj));
                break;
            }
        }
        let Some((cand, cand_obj)) = accepted else {
            converged = true;
            break;
        };
        let rel = (obj - cand_obj) / obj.abs().max(1e-300);
        u = cand;
        obj = cand_obj;
        trace.push(obj);
        if rel < params.tol {
            converged = true;
            break;
        }
    }
    let maps = Array3::from_shape_fn((nm, h, w), |(a, r, c)| u[a][r * w + c] / norms[a]);
    Ok(TvDecompOutput {
        maps: DensityMaps::new(maps, m.material_names().to_vec())?,
        objective: trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{default_bins, EnergyBin};
    use ndarray::array;

    fn params(lambda: f64) -> AdmmParams {
        AdmmParams {
            lambda,
            max_iter: 20000,
            tol_primal: 1e-12,
            tol_dual: 1e-12,
            nonneg: false,
            ..Default::default()
        }
    }

    #[test]
    fn orthonormal_soft_threshold() {
        let m = Array2::eye(2);
        let y = array![[1.0, 0.1]];
        for rho in [0.1, 1.0, 10.0] {
            let out = lasso_admm_pixels(y.view(), m.view(), &AdmmParams { rho, ..params(0.2) }).unwrap();
            assert!((out.x[[0, 0]] - 0.8).abs() < 1e-9);
            assert!(out.x[[0, 1]].abs() < 1e-12);
            assert!(out.converged);
        }
    }

    #[test]
    fn unregularized_inverse() {
        let m = array![[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]];
        let xt = [0.5, -1.0, 2.0];
        let y = Array2::from_shape_fn((1, 3), |(_, i)| (0..3).map(|j| m[[i, j]] * xt[j]).sum());
        let out = lasso_admm_pixels(y.view(), m.view(), &params(0.0)).unwrap();
        for j in 0..3 {
            assert!((out.x[[0, j]] - xt[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let m = array![[2.0, 1.0], [1.0, 3.0], [0.5, 0.5]];
        let out = lasso_admm_pixels(Array2::zeros((4, 3)).view(), m.view(), &params(0.1)).unwrap();
        assert!(out.x.iter().all(|v| *v == 0.0));
    }

    fn bins(n: usize) -> Vec<EnergyBin> {
        default_bins()[..n].to_vec()
    }

    fn toy_matrix() -> DecompMatrix {
        let e = array![[4.0, 1.0, 0.5], [2.0, 1.5, 0.4], [1.0, 2.0, 0.3], [0.5, 2.5, 0.2], [0.3, 3.0, 0.1]];
        DecompMatrix::new(e, vec!["a".into(), "b".into(), "c".into()], bins(5)).unwrap()
    }

    fn image(x: &Array2<f64>, m: &DecompMatrix, h: usize, w: usize) -> MultiEnergyImage {
        let pix = x.dot(&m.entries().t());
        MultiEnergyImage::from_pixel_matrix(&pix, h, w, bins(m.n_bins()), 0.1).unwrap()
    }

    fn roi_of(y: &MultiEnergyImage, labels: Vec<usize>, k: usize) -> LabelImage {
        LabelImage::from_labels(y, &labels, k).unwrap()
    }

    #[test]
    fn rpt_threshold_arithmetic() {
        let names = vec!["a".to_string(), "b".to_string()];
        let mut maps = Array3::zeros((2, 10, 10));
        for p in 0..45 {
            maps[[1, p / 10, p % 10]] = 0.01;
        }
        maps.index_axis_mut(ndarray::Axis(0), 0).fill(1.0);
        let x = DensityMaps::new(maps, names).unwrap();
        let y = MultiEnergyImage::new(Array3::zeros((2, 10, 10)), bins(2), 0.1).unwrap();
        let rois = roi_of(&y, vec![0; 100], 1);
        assert_eq!(rpt_select(&x, &rois, 0.4, 1e-4).unwrap().kept[0], vec![0, 1]);
        assert_eq!(rpt_select(&x, &rois, 0.5, 1e-4).unwrap().kept[0], vec![0]);
        assert_eq!(rpt_select(&x, &rois, 0.0, 1e-4).unwrap().kept[0], vec![0, 1]);
        let zero = DensityMaps::zeros(vec!["a".into(), "b".into()], 10, 10);
        assert_eq!(rpt_select(&zero, &rois, 0.4, 1e-4).unwrap().kept[0], vec![0]);
        assert!(rpt_select(&x, &rois, 1.5, 1e-4).is_err());
    }

    #[test]
    fn fine_with_full_selection_matches_coarse() {
        let m = toy_matrix();
        let x = Array2::from_shape_fn((16, 3), |(p, a)| ((p * 3 + a) % 5) as f64 * 0.1);
        let y = image(&x, &m, 4, 4);
        let rois = roi_of(&y, vec![0; 16], 1);
        let sel = RoiBasisSelection {
            material_names: m.material_names().to_vec(),
            kept: vec![vec![0, 1, 2]],
            fractions: vec![vec![1.0; 3]],
            threshold: 0.0,
            presence_eps: 1e-4,
            empty_rois: vec![],
        };
        let p = DecompParams {
            admm: AdmmParams { tol_primal: 1e-11, tol_dual: 1e-11, max_iter: 50000, ..Default::default() },
            ..Default::default()
        };
        let (coarse, _) = coarse_decompose(&y, &m, &p).unwrap();
        let (fine, _) = fine_decompose(&y, &rois, &sel, &m, &p, 0.0).unwrap();
        for (a, b) in coarse.maps().iter().zip(fine.maps().iter()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn unselected_materials_are_exact_zeros() {
        let m = toy_matrix();
        let x = Array2::from_shape_fn((16, 3), |(p, a)| if a == 0 { 0.2 + 0.01 * p as f64 } else { 0.05 });
        let y = image(&x, &m, 4, 4);
        let rois = roi_of(&y, (0..16).map(|p| p / 8).collect(), 2);
        let sel = RoiBasisSelection {
            material_names: m.material_names().to_vec(),
            kept: vec![vec![0], vec![1, 2]],
            fractions: vec![vec![1.0; 3]; 2],
            threshold: 0.4,
            presence_eps: 1e-4,
            empty_rois: vec![],
        };
        let (fine, _) = fine_decompose(&y, &rois, &sel, &m, &DecompParams::default(), 0.5).unwrap();
        for p in 0..16 {
            let (r, c) = (p / 4, p % 4);
            if p < 8 {
                assert_eq!(fine.maps()[[1, r, c]], 0.0);
                assert_eq!(fine.maps()[[2, r, c]], 0.0);
            } else {
                assert_eq!(fine.maps()[[0, r, c]], 0.0);
            }
        }
    }

    #[test]
    fn single_material_roi_matches_closed_form() {
        let m = toy_matrix();
        let x = Array2::from_shape_fn((4, 3), |(p, a)| if a == 1 { 0.3 + 0.1 * p as f64 } else { 0.0 });
        let y = image(&x, &m, 2, 2);
        let rois = roi_of(&y, vec![0; 4], 1);
        let sel = RoiBasisSelection {
            material_names: m.material_names().to_vec(),
            kept: vec![vec![1]],
            fractions: vec![vec![0.0, 1.0, 0.0]],
            threshold: 0.4,
            presence_eps: 1e-4,
            empty_rois: vec![],
        };
        let p = DecompParams {
            admm: AdmmParams { tol_primal: 1e-13, tol_dual: 1e-13, max_iter: 50000, ..Default::default() },
            ..Default::default()
        };
        let (fine, _) = fine_decompose(&y, &rois, &sel, &m, &p, 0.0).unwrap();
        // one scaled column: u = max(c·y − λ, 0), x = u / ‖c‖
        let col = m.entries().column(1).to_owned();
        let n = col.dot(&col).sqrt();
        let pix = y.pixel_matrix();
        let lam = 0.01 * (0..4).map(|q| pix.row(q).dot(&col) / n).fold(0.0f64, f64::max);
        for q in 0..4 {
            let expect = ((pix.row(q).dot(&col) / n - lam).max(0.0)) / n;
            assert!((fine.maps()[[1, q / 2, q % 2]] - expect).abs() < 1e-6 * expect.max(1.0));
        }
    }

    #[test]
    fn huge_lambda_zeroes_everything() {
        let m = toy_matrix();
        let x = Array2::from_elem((4, 3), 0.2);
        let y = image(&x, &m, 2, 2);
        let p = DecompParams { lambda_scale: 2.0, ..Default::default() };
        let (maps, _) = coarse_decompose(&y, &m, &p).unwrap();
        assert!(maps.maps().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn column_permutation_permutes_maps() {
        let m = toy_matrix();
        let x = Array2::from_shape_fn((9, 3), |(p, a)| ((p + 2 * a) % 4) as f64 * 0.1);
        let y = image(&x, &m, 3, 3);
        let perm = [2, 0, 1];
        let mp = m.select_columns(&perm).unwrap();
        let (a, _) = coarse_decompose(&y, &m, &DecompParams::default()).unwrap();
        let (b, _) = coarse_decompose(&y, &mp, &DecompParams::default()).unwrap();
        for (j, &src) in perm.iter().enumerate() {
            for (u, v) in a.map(src).iter().zip(b.map(j).iter()) {
                assert!((u - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tv_baseline_without_regularizer_is_least_squares() {
        let e = array![[3.0, 1.0], [1.0, 2.0]];
        let m = DecompMatrix::new(e, vec!["a".into(), "b".into()], bins(2)).unwrap();
        let x = Array2::from_shape_fn((9, 2), |(p, a)| 0.1 + 0.05 * ((p + a) % 3) as f64);
        let y = image(&x, &m, 3, 3);
        let p = TvDecompParams { tv_weight: 0.0, ..Default::default() };
        let out = tv_decompose(&y, &m, &p).unwrap();
        for q in 0..9 {
            for a in 0..2 {
                assert!((out.maps.maps()[[a, q / 3, q % 3]] - x[[q, a]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tv_baseline_keeps_constant_images_constant() {
        let m = toy_matrix();
        let x = Array2::from_shape_fn((25, 3), |(_, a)| [0.3, 0.1, 0.2][a]);
        let y = image(&x, &m, 5, 5);
        let out = tv_decompose(&y, &m, &TvDecompParams { tv_weight: 0.05, ..Default::default() }).unwrap();
        for a in 0..3 {
            let map = out.maps.map(a);
            let v0 = map[[0, 0]];
            assert!(map.iter().all(|v| (v - v0).abs() < 1e-6));
        }
    }

    #[test]
    fn tv_baseline_objective_never_increases() {
        let m = toy_matrix();
        let x = Array2::from_shape_fn((64, 3), |(p, a)| (((p * 37 + a * 11) % 17) as f64) * 0.02);
        let y = image(&x, &m, 8, 8);
        let out = tv_decompose(&y, &m, &TvDecompParams { tv_weight: 0.02, max_iter: 50, ..Default::default() }).unwrap();
        for w in out.objective.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn tv_prox_reduces_to_projection_without_weight() {
        let b = vec![-1.0, 0.5, 2.0, -0.1];
        assert_eq!(tv_prox(&b, 2, 2, 0.0, 10, true), vec![0.0, 0.5, 2.0, 0.0]);
        let flat = tv_prox(&[1.0; 9], 3, 3, 0.5, 50, false);
        assert!(flat.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn power_iteration_finds_top_eigenvalue() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 1.0]);
        let top = (7.0 + 5f64.sqrt()) / 2.0;
        assert!((power_iteration(&a, 500) - top).abs() < 1e-9);
    }
}
