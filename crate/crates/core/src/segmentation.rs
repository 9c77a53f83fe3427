//! Spatio-energy segmentation into ROIs.
//!
//! Pipeline: per-bin GMM fits pick the most reliable bin, its GMM classes give
//! a mean-spectrum image `Y_s`, and kernel k-means on a blend of a spectral
//! kernel (on `Y`) and a spatial kernel (on `Y_s`) yields the ROI partition.

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recon::MultiEnergyImage;

const GMM_MAX_ITER: usize = 200;
const GMM_TOL: f64 = 1e-6;
const VARIANCE_FLOOR: f64 = 1e-8;

/// One-dimensional Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Log of `α_k N(v; m_k, σ_k)` for every component.
    fn log_joint(&self, v: f64, out: &mut [f64]) {
        for k in 0..self.k() {
            let var = self.variances[k];
            out[k] = self.weights[k].ln() - 0.5 * (2.0 * std::f64::consts::PI * var).ln() - (v - self.means[k]).powi(2) / (2.0 * var);
        }
    }

    /// Maximum-posterior component; ties go to the lowest index.
    pub fn classify(&self, v: f64) -> usize {
        let mut lj = vec![0.0; self.k()];
        self.log_joint(v, &mut lj);
        argmax(&lj)
    }

    pub fn log_likelihood_of(&self, values: &[f64]) -> f64 {
        let mut lj = vec![0.0; self.k()];
        values
            .iter()
            .map(|&v| {
                self.log_joint(v, &mut lj);
                log_sum_exp(&lj)
            })
            .sum()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Fits a K-component GMM by EM.
///
/// Means start at quantiles of the data (coincident starts are replaced by
/// seeded draws of distinct data values), weights uniform, variances pooled.
/// Stops when the relative log-likelihood change drops below 1e-6 or after
/// 200 iterations.
pub fn gmm_fit(values: &[f64], k: usize, seed: u64) -> Result<GmmModel> {
    let n = values.len();
    if k == 0 || n <= k {
        return Err(Error::invalid(format!("GMM needs more samples ({n}) than components ({k})")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("GMM input contains non-finite values"));
    }
    let (_, data_var) = mean_var(values);
    let floor = if data_var > 0.0 { VARIANCE_FLOOR * data_var } else { 1e-12 };

    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut means: Vec<f64> = (0..k).map(|i| sorted[((i as f64 + 0.5) / k as f64 * n as f64) as usize]).collect();
    let scale = (sorted[n - 1] - sorted[0]).abs().max(1e-300);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 1..k {
        if means[..i].iter().any(|m| (m - means[i]).abs() <= 1e-12 * scale) {
            // bounded retries; leftover duplicates are separated by EM's empty-component repair
            for _ in 0..64 {
                let cand = values[rng.random_range(0..n)];
                if means[..i].iter().all(|m| (m - cand).abs() > 1e-12 * scale) {
                    means[i] = cand;
                    break;
                }
            }
        }
    }
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means,
        variances: vec![data_var.max(floor); k],
        log_likelihood: f64::NEG_INFINITY,
        iterations: 0,
        converged: false,
    };

    let mut resp = vec![0.0; n * k];
    let mut point_ll = vec![0.0; n];
    let mut prev = f64::NEG_INFINITY;
    for iter in 1..=GMM_MAX_ITER {
        // E step
        let ll: f64 = resp
            .par_chunks_mut(k)
            .zip(point_ll.par_iter_mut())
            .zip(values.par_iter())
            .map(|((r, pl), &v)| {
                model.log_joint(v, r);
                let lse = log_sum_exp(r);
                r.iter_mut().for_each(|x| *x = (*x - lse).exp());
                *pl = lse;
                lse
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        model.log_likelihood = ll;
        model.iterations = iter;
        if iter > 1 && (ll - prev).abs() <= GMM_TOL * prev.abs().max(1e-300) {
            model.converged = true;
            break;
        }
        prev = ll;

        // M step
        let mut nk = vec![0.0; k];
        let mut sx = vec![0.0; k];
        for (r, &v) in resp.chunks(k).zip(values) {
            for j in 0..k {
                nk[j] += r[j];
                sx[j] += r[j] * v;
            }
        }
        for j in 0..k {
            if nk[j] > 1e-10 * n as f64 {
                model.means[j] = sx[j] / nk[j];
            }
        }
        let mut sv = vec![0.0; k];
        for (r, &v) in resp.chunks(k).zip(values) {
            for j in 0..k {
                sv[j] += r[j] * (v - model.means[j]).powi(2);
            }
        }
        for j in 0..k {
            if nk[j] > 1e-10 * n as f64 {
                model.weights[j] = nk[j] / n as f64;
                model.variances[j] = (sv[j] / nk[j]).max(floor);
            } else {
                // empty component: restart it on the worst-explained point
                let worst = point_ll
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, v)| if *v < point_ll[b] { i } else { b });
                model.means[j] = values[worst];
                model.variances[j] = data_var.max(floor);
                model.weights[j] = 1.0 / n as f64;
                point_ll[worst] = f64::INFINITY;
            }
        }
        let total: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= total);
    }
    Ok(model)
}

/// Per-bin min-max normalization to [0, 1]; a constant bin maps to zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / span).collect()
}

fn bin_values(y: &MultiEnergyImage, b: usize) -> Vec<f64> {
    y.bin(b).iter().cloned().collect()
}

/// Bin whose normalized image is best explained by a K-component GMM.
pub fn select_reference_bin(y: &MultiEnergyImage, k: usize, seed: u64) -> Result<(usize, Vec<f64>)> {
    if y.n_bins() < 2 {
        return Err(Error::invalid("reference-bin selection needs at least 2 bins"));
    }
    let lls: Vec<f64> = (0..y.n_bins())
        .into_par_iter()
        .map(|b| gmm_fit(&min_max_normalize(&bin_values(y, b)), k, seed).map(|m| m.log_likelihood))
        .collect::<Result<_>>()?;
    Ok((argmax(&lls), lls))
}

/// Pixel partition with the per-cluster mean spectra of `Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelImage {
    pub labels: Vec<usize>,
    pub width: usize,
    pub height: usize,
    pub k: usize,
    /// `k × B` mean spectra.
    pub means: Array2<f64>,
    /// Clusters dropped for being empty (indices before compaction).
    pub dropped: Vec<usize>,
}

impl LabelImage {
    /// Builds a label image from raw labels, dropping empty clusters and
    /// relabelling the rest in order.
    pub fn from_labels(y: &MultiEnergyImage, raw: &[usize], k: usize) -> Result<Self> {
        if raw.len() != y.n_pixels() {
            return Err(Error::invalid("label count does not match the image"));
        }
        let mut counts = vec![0usize; k];
        for &l in raw {
            if l >= k {
                return Err(Error::invalid(format!("label {l} out of range for k = {k}")));
            }
            counts[l] += 1;
        }
        let mut remap = vec![usize::MAX; k];
        let mut dropped = Vec::new();
        let mut next = 0;
        for (c, &n) in counts.iter().enumerate() {
            if n > 0 {
                remap[c] = next;
                next += 1;
            } else {
                dropped.push(c);
            }
        }
        let labels: Vec<usize> = raw.iter().map(|&l| remap[l]).collect();
        let b = y.n_bins();
        let mut means = Array2::zeros((next, b));
        let mut sizes = vec![0usize; next];
        let pix = y.pixel_matrix();
        for (p, &l) in labels.iter().enumerate() {
            sizes[l] += 1;
            for j in 0..b {
                means[[l, j]] += pix[[p, j]];
            }
        }
        for (l, &s) in sizes.iter().enumerate() {
            for j in 0..b {
                means[[l, j]] /= s as f64;
            }
        }
        Ok(LabelImage {
            labels,
            width: y.width(),
            height: y.height(),
            k: next,
            means,
            dropped,
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        self.labels.iter().for_each(|&l| s[l] += 1);
        s
    }

    /// Pixel indices of every cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (p, &l) in self.labels.iter().enumerate() {
            m[l].push(p);
        }
        m
    }

    /// `Np × B` matrix where each pixel carries its cluster's mean spectrum.
    pub fn mean_image(&self) -> Array2<f64> {
        let b = self.means.ncols();
        Array2::from_shape_fn((self.labels.len(), b), |(p, j)| self.means[[self.labels[p], j]])
    }

    pub fn label_raster(&self) -> Array2<i32> {
        Array2::from_shape_fn((self.height, self.width), |(r, c)| self.labels[r * self.width + c] as i32)
    }
}

/// Classifies pixels by the reference bin's GMM and replaces each pixel by
/// its class mean spectrum.
pub fn build_label_image(y: &MultiEnergyImage, ref_bin: usize, k: usize, seed: u64) -> Result<LabelImage> {
    if ref_bin >= y.n_bins() {
        return Err(Error::invalid(format!("reference bin {ref_bin} out of range")));
    }
    let values = min_max_normalize(&bin_values(y, ref_bin));
    let raw: Vec<usize> = if k == 1 {
        vec![0; values.len()]
    } else {
        let model = gmm_fit(&values, k, seed)?;
        values.par_iter().map(|&v| model.classify(v)).collect()
    };
    LabelImage::from_labels(y, &raw, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelParams {
    /// Weight of the spatial kernel, in [0, 1].
    pub theta: f64,
    /// Kernel variance on min-max normalized spectra.
    pub sigma2: f64,
    pub k: usize,
    pub n_init: usize,
    pub max_iter: usize,
    /// Set by the pipeline from the run seed; not read from config files.
    #[serde(skip)]
    pub seed: u64,
    /// Above this many pixels, cluster a uniform subsample of `subsample`
    /// pixels and assign the rest by kernel distance.
    pub direct_cap: usize,
    pub subsample: usize,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            theta: 0.2,
            sigma2: 0.01,
            k: 6,
            n_init: 3,
            max_iter: 100,
            seed: 0,
            direct_cap: 1 << 13,
            subsample: 1 << 13,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config("kernel.theta must lie in [0, 1]".into()));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config("kernel.sigma2 must be > 0".into()));
        }
        if self.k < 2 {
            return Err(Error::Config("kernel.k must be >= 2".into()));
        }
        if self.n_init == 0 || self.max_iter == 0 {
            return Err(Error::Config("kernel.n_init and kernel.max_iter must be >= 1".into()));
        }
        if self.subsample < self.k || self.direct_cap < self.k {
            return Err(Error::Config("kernel.subsample and kernel.direct_cap must be >= k".into()));
        }
        Ok(())
    }
}

/// Lazily evaluated blend of a spectral and a spatial Gaussian kernel.
pub struct CombinedKernel<'a> {
    y: ArrayView2<'a, f64>,
    ys: ArrayView2<'a, f64>,
    theta: f64,
    inv_two_sigma2: f64,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

impl<'a> CombinedKernel<'a> {
    pub fn spectral(&self, i: usize, j: usize) -> f64 {
        (-sq_dist(self.y.row(i), self.y.row(j)) * self.inv_two_sigma2).exp()
    }

    pub fn spatial(&self, i: usize, j: usize) -> f64 {
        (-sq_dist(self.ys.row(i), self.ys.row(j)) * self.inv_two_sigma2).exp()
    }

    pub fn eval(&self, i: usize, j: usize) -> f64 {
        (1.0 - self.theta) * self.spectral(i, j) + self.theta * self.spatial(i, j)
    }

    pub fn len(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.nrows() == 0
    }
}

/// Kernel over pixel spectra `y_pixels` and label-image spectra `ys_pixels`
/// (both `Np × B`).
pub fn combined_kernel<'a>(y_pixels: ArrayView2<'a, f64>, ys_pixels: ArrayView2<'a, f64>, params: &KernelParams) -> Result<CombinedKernel<'a>> {
    if y_pixels.dim() != ys_pixels.dim() {
        return Err(Error::invalid("spectral and spatial features differ in shape"));
    }
    params.validate()?;
    Ok(CombinedKernel {
        y: y_pixels,
        ys: ys_pixels,
        theta: params.theta,
        inv_two_sigma2: 0.5 / params.sigma2,
    })
}

/// Partition of the rows of a Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub objective: f64,
    /// Objective after seeding and after every update of the best restart.
    pub trace: Vec<f64>,
    pub converged: bool,
}

struct ClusterStats {
    sizes: Vec<usize>,
    // Σ_{j∈π_k} K(i,j), row-major n × k
    sums: Vec<f64>,
    // Σ_{i,j∈π_k} K(i,j)
    within: Vec<f64>,
}

fn cluster_stats(gram: &Array2<f64>, labels: &[usize], k: usize) -> ClusterStats {
    let n = labels.len();
    let mut sizes = vec![0; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    let mut sums = vec![0.0; n * k];
    sums.par_chunks_mut(k).enumerate().for_each(|(i, s)| {
        for (j, g) in gram.row(i).iter().enumerate() {
            s[labels[j]] += g;
        }
    });
    let mut within = vec![0.0; k];
    for i in 0..n {
        within[labels[i]] += sums[i * k + labels[i]];
    }
    ClusterStats { sizes, sums, within }
}

fn distance(gram_ii: f64, stats: &ClusterStats, i: usize, c: usize, k: usize) -> f64 {
    let nc = stats.sizes[c] as f64;
    gram_ii - 2.0 * stats.sums[i * k + c] / nc + stats.within[c] / (nc * nc)
}

fn objective(gram: &Array2<f64>, stats: &ClusterStats) -> f64 {
    let diag: f64 = gram.diag().sum();
    diag - stats
        .within
        .iter()
        .zip(&stats.sizes)
        .filter(|(_, &s)| s > 0)
        .map(|(w, &s)| w / s as f64)
        .sum::<f64>()
}

/// k-means++ seeding with kernel distances, then nearest-seed assignment.
fn seed_labels(gram: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = gram.nrows();
    let kd = |i: usize, c: usize| (gram[[i, i]] + gram[[c, c]] - 2.0 * gram[[i, c]]).max(0.0);
    let mut centers = vec![rng.random_range(0..n)];
    let mut d: Vec<f64> = (0..n).map(|i| kd(i, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, di) in d.iter().enumerate() {
                if *di > 0.0 {
                    if u < *di {
                        pick = i;
                        break;
                    }
                    u -= di;
                }
            }
            pick
        } else {
            // all points coincide with some center: take the first unused index
            (0..n).find(|i| !centers.contains(i)).unwrap_or(0)
        };
        centers.push(next);
        for (i, di) in d.iter_mut().enumerate() {
            *di = di.min(kd(i, next));
        }
    }
    (0..n)
        .map(|i| {
            let ds: Vec<f64> = centers.iter().map(|&c| -kd(i, c)).collect();
            argmax(&ds)
        })
        .collect()
}

/// Moves the farthest points into empty clusters. Never raises the objective.
fn repair_empty(gram: &Array2<f64>, labels: &mut [usize], k: usize) {
    loop {
        let stats = cluster_stats(gram, labels, k);
        let Some(empty) = stats.sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for i in 0..labels.len() {
            if stats.sizes[labels[i]] < 2 {
                continue;
            }
            let d = distance(gram[[i, i]], &stats, i, labels[i], k);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        match far {
            Some(i) => labels[i] = empty,
            None => return,
        }
    }
}

fn lloyd(gram: &Array2<f64>, mut labels: Vec<usize>, k: usize, max_iter: usize) -> Clustering {
    let n = gram.nrows();
    repair_empty(gram, &mut labels, k);
    let mut stats = cluster_stats(gram, &labels, k);
    let mut obj = objective(gram, &stats);
    let mut trace = vec![obj];
    let mut converged = false;
    for _ in 0..max_iter {
        let mut next: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut best = labels[i];
                let mut best_d = distance(gram[[i, i]], &stats, i, best, k);
                for c in 0..k {
                    if stats.sizes[c] == 0 {
                        continue;
                    }
                    let d = distance(gram[[i, i]], &stats, i, c, k);
                    if d < best_d || (d == best_d && c < best) {
                        best = c;
                        best_d = d;
                    }
                }
                best
            })
            .collect();
        repair_empty(gram, &mut next, k);
        if next == labels {
            converged = true;
            break;
        }
        let next_stats = cluster_stats(gram, &next, k);
        let next_obj = objective(gram, &next_stats);
        if next_obj >= obj {
            // only rounding-level changes remain
            converged = true;
            break;
        }
        labels = next;
        stats = next_stats;
        obj = next_obj;
        trace.push(obj);
    }
    Clustering {
        labels,
        objective: obj,
        trace,
        converged,
    }
}

/// Kernel k-means on an explicit Gram matrix with `n_init` seeded restarts;
/// returns the best-objective partition (ties: earliest restart).
pub fn kernel_kmeans_gram(gram: &Array2<f64>, k: usize, n_init: usize, max_iter: usize, seed: u64) -> Result<Clustering> {
    let n = gram.nrows();
    if gram.ncols() != n {
        return Err(Error::invalid("Gram matrix must be square"));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot form {k} clusters from {n} points")));
    }
    let mut best: Option<Clustering> = None;
    for restart in 0..n_init.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let init = seed_labels(gram, k, &mut rng);
        let run = lloyd(gram, init, k, max_iter);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Spectra of `y` and of the label image, min-max normalized per bin with
/// the range of `y`.
pub fn kernel_features(y: &MultiEnergyImage, ys: &LabelImage) -> (Array2<f64>, Array2<f64>) {
    let mut py = y.pixel_matrix();
    let mut ps = ys.mean_image();
    for b in 0..py.ncols() {
        let col = py.column(b);
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        py.column_mut(b).mapv_inplace(|v| (v - lo) / span);
        ps.column_mut(b).mapv_inplace(|v| (v - lo) / span);
    }
    (py, ps)
}

/// Result of the ROI partition.
#[derive(Debug, Clone)]
pub struct RoiPartition {
    pub rois: LabelImage,
    /// Objective on the clustered pixels (the subsample when one was taken).
    pub objective: f64,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub n_clustered: usize,
}

/// Kernel k-means ROI partition of `y` guided by the label image `ys`.
pub fn kernel_kmeans(y: &MultiEnergyImage, ys: &LabelImage, params: &KernelParams) -> Result<RoiPartition> {
    params.validate()?;
    if ys.n_pixels() != y.n_pixels() {
        return Err(Error::invalid("label image does not match the multi-energy image"));
    }
    let n = y.n_pixels();
    let (fy, fs) = kernel_features(y, ys);
    let kernel = combined_kernel(fy.view(), fs.view(), params)?;

    let chosen: Vec<usize> = if n <= params.direct_cap {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(u64::MAX);
        let mut idx = sample(&mut rng, n, params.subsample.min(n)).into_vec();
        idx.sort_unstable();
        idx
    };
    let m = chosen.len();
    let mut gram = Array2::zeros((m, m));
    gram.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(a, row)| {
            for (b, g) in row.iter_mut().enumerate() {
                *g = kernel.eval(chosen[a], chosen[b]);
            }
        });
    let clustering = kernel_kmeans_gram(&gram, params.k, params.n_init, params.max_iter, params.seed)?;

    let raw: Vec<usize> = if m == n {
        clustering.labels.clone()
    } else {
        let k = params.k;
        let stats = cluster_stats(&gram, &clustering.labels, k);
        let mut members = vec![Vec::new(); k];
        for (a, &l) in clustering.labels.iter().enumerate() {
            members[l].push(chosen[a]);
        }
        let mut raw = vec![0usize; n];
        raw.par_iter_mut().enumerate().for_each(|(p, out)| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                if stats.sizes[c] == 0 {
                    continue;
                }
                let nc = stats.sizes[c] as f64;
                let s: f64 = members[c].iter().map(|&q| kernel.eval(p, q)).sum();
                let d = kernel.eval(p, p) - 2.0 * s / nc + stats.within[c] / (nc * nc);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            *out = best;
        });
        for (a, &l) in clustering.labels.iter().enumerate() {
            raw[chosen[a]] = l;
        }
        raw
    };
    Ok(RoiPartition {
        rois: LabelImage::from_labels(y, &raw, params.k)?,
        objective: clustering.objective,
        trace: clustering.trace,
        converged: clustering.converged,
        n_clustered: m,
    })
}
