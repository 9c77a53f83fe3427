//! Reference implementations shared by the oracle tests and the acceptance runner.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roidecomp::decomp::{lasso_admm_pixels, AdmmParams};
use roidecomp::materials::{effective_mu_matrix, DetectorResponse, EnergyBin, EnergyGrid, MaterialTable, Spectrum};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- lasso ----------------------------------------------------------------

pub fn lasso_objective(m: &DMatrix<f64>, y: &DVector<f64>, x: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * (y - m * x).norm_squared() + lambda * x.iter().map(|v| v.abs()).sum::<f64>()
}

/// Accelerated proximal gradient with restarts, run until the iterates stop moving.
pub fn ista(m: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let mtm = m.transpose() * m;
    let mty = m.transpose() * y;
    let l = mtm.symmetric_eigenvalues().max();
    let step = 1.0 / l;
    let n = m.ncols();
    let soft = |v: f64, t: f64| v.signum() * (v.abs() - t).max(0.0);
    let mut x = DVector::zeros(n);
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut f_prev = f64::INFINITY;
    for _ in 0..2_000_000 {
        let g = &mtm * &z - &mty;
        let x_new = DVector::from_fn(n, |i, _| soft(z[i] - step * g[i], step * lambda));
        let f = lasso_objective(m, y, &x_new, lambda);
        if f > f_prev {
            // restart momentum
            t = 1.0;
            z = x.clone();
            f_prev = f64::INFINITY;
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let moved = (&x_new - &x).norm();
        z = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
        x = x_new;
        t = t_new;
        f_prev = f;
        if moved < 1e-15 * (1.0 + x.norm()) {
            break;
        }
    }
    x
}

/// Worst violation of the lasso optimality conditions, relative to λ.
pub fn kkt_violation(m: &DMatrix<f64>, y: &DVector<f64>, x: &DVector<f64>, lambda: f64) -> (f64, f64) {
    let g = m.transpose() * (m * x - y);
    let mut active: f64 = 0.0;
    let mut zero: f64 = 0.0;
    for i in 0..x.len() {
        if x[i] != 0.0 {
            active = active.max((g[i] + lambda * x[i].signum()).abs() / lambda);
        } else {
            zero = zero.max(g[i].abs() / lambda - 1.0);
        }
    }
    (active, zero)
}

pub struct LassoInstance {
    pub m: DMatrix<f64>,
    pub y: DVector<f64>,
    pub lambda: f64,
}

/// `B × M` instance with `λ = λ_max · 10^U(-3, 0)`.
pub fn lasso_instance(rng: &mut ChaCha8Rng, b: usize, n: usize) -> LassoInstance {
    let m = DMatrix::from_fn(b, n, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(b, |_, _| rng.random_range(-1.0..1.0));
    let lambda_max = (m.transpose() * &y).amax();
    let lambda = lambda_max * 10f64.powf(rng.random_range(-3.0..0.0));
    LassoInstance { m, y, lambda }
}

pub fn admm_solve(inst: &LassoInstance) -> DVector<f64> {
    let params = AdmmParams {
        lambda: inst.lambda,
        nonneg: false,
        max_iter: 200_000,
        tol_primal: 1e-12,
        tol_dual: 1e-12,
        ..AdmmParams::default()
    };
    let (b, n) = inst.m.shape();
    let y = Array2::from_shape_fn((1, b), |(_, i)| inst.y[i]);
    let m = Array2::from_shape_fn((b, n), |(i, j)| inst.m[(i, j)]);
    let out = lasso_admm_pixels(y.view(), m.view(), &params).expect("valid instance");
    DVector::from_fn(n, |j, _| out.x[[0, j]])
}

/// Checks one instance; `Err` carries a description of the failure.
pub fn check_lasso_instance(inst: &LassoInstance) -> Result<(), String> {
    let x = admm_solve(inst);
    let x_ref = ista(&inst.m, &inst.y, inst.lambda);
    let f = lasso_objective(&inst.m, &inst.y, &x, inst.lambda);
    let f_ref = lasso_objective(&inst.m, &inst.y, &x_ref, inst.lambda);
    let rel = (f - f_ref).abs() / f_ref.abs().max(f64::MIN_POSITIVE);
    if rel > 1e-6 {
        return Err(format!("objective {f} vs oracle {f_ref} (rel {rel:.2e})"));
    }
    let (active, zero) = kkt_violation(&inst.m, &inst.y, &x, inst.lambda);
    if active >= 1e-4 || zero > 1e-4 {
        return Err(format!("KKT violation: active {active:.2e}, zero {zero:.2e}"));
    }
    Ok(())
}

// ---- effective attenuation --------------------------------------------------

/// `μ_m(E) = c · E^-p` tabulated on a 1 keV grid; log-log interpolation reproduces it exactly.
pub fn power_law_table(name: &str, c: f64, p: f64) -> MaterialTable {
    let energies: Vec<f64> = (10..=120).map(|e| e as f64).collect();
    let mu = energies.iter().map(|e| c * e.powf(-p)).collect();
    MaterialTable::new(name, energies, mu, 1.0).unwrap()
}

/// Smooth, non-flat fluence on a 0.5 keV grid.
pub fn smooth_spectrum() -> Spectrum {
    let energies: Vec<f64> = (40..=200).map(|k| k as f64 * 0.5).collect();
    let fluence = energies.iter().map(|e| 100.0 + 3.0 * (e - 20.0) - 0.02 * (e - 20.0).powi(2)).collect();
    Spectrum::new(EnergyGrid::new(energies).unwrap(), fluence).unwrap()
}

pub fn flat_spectrum() -> Spectrum {
    let energies: Vec<f64> = (20..=100).map(|e| e as f64).collect();
    let n = energies.len();
    Spectrum::new(EnergyGrid::new(energies).unwrap(), vec![1.0; n]).unwrap()
}

pub fn five_bins() -> Vec<EnergyBin> {
    (0..5).map(|k| EnergyBin::new(30.0 + 10.0 * k as f64, 40.0 + 10.0 * k as f64).unwrap()).collect()
}

/// Composite Simpson with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Largest relative deviation of the effective matrix from a fine Simpson
/// integration of fluence × μ over every bin.
pub fn effective_matrix_deviation(spectrum: &Spectrum, tables: &[MaterialTable]) -> f64 {
    let bins = five_bins();
    let resp = DetectorResponse::ideal(spectrum.grid().clone(), bins.clone()).unwrap();
    let m = effective_mu_matrix(spectrum, &resp, tables).unwrap();
    let mut worst: f64 = 0.0;
    for (i, b) in bins.iter().enumerate() {
        let w = simpson(|e| spectrum.at(e), b.lo, b.hi, 20_000);
        for (a, t) in tables.iter().enumerate() {
            let num = simpson(|e| spectrum.at(e) * roidecomp::materials::interpolate_mu(t, e).unwrap(), b.lo, b.hi, 20_000);
            let want = num / w;
            worst = worst.max((m.entries()[[i, a]] - want).abs() / want);
        }
    }
    worst
}

/// Largest deviation of the effective matrix from `c` for constant-μ tables under a flat spectrum.
pub fn flat_identity_deviation() -> f64 {
    let spectrum = flat_spectrum();
    let consts = [0.2, 1.0, 3.7, 41.5];
    let tables: Vec<MaterialTable> = consts
        .iter()
        .enumerate()
        .map(|(k, &c)| MaterialTable::new(format!("c{k}"), vec![10.0, 120.0], vec![c, c], 1.0).unwrap())
        .collect();
    let resp = DetectorResponse::ideal(spectrum.grid().clone(), five_bins()).unwrap();
    let m = effective_mu_matrix(&spectrum, &resp, &tables).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..m.n_bins() {
        for (a, c) in consts.iter().enumerate() {
            worst = worst.max((m.entries()[[i, a]] - c).abs() / c);
        }
    }
    worst
}
