mod common;

use common::*;
use rand::Rng;

#[test]
fn admm_matches_proximal_gradient_on_random_instances() {
    let mut r = rng(11);
    let mut failures = Vec::new();
    for k in 0..200 {
        let n = r.random_range(2..=5);
        let inst = lasso_instance(&mut r, 5, n);
        if let Err(msg) = check_lasso_instance(&inst) {
            failures.push(format!("instance {k} (M={n}, λ={:.3e}): {msg}", inst.lambda));
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn zero_lambda_is_least_squares() {
    let mut r = rng(3);
    for _ in 0..20 {
        let mut inst = lasso_instance(&mut r, 5, 3);
        inst.lambda = 0.0;
        let x = admm_solve(&inst);
        let ls = inst.m.clone().svd(true, true).solve(&inst.y, 1e-14).unwrap();
        assert!((x - &ls).norm() < 1e-8 * (1.0 + ls.norm()));
    }
}

#[test]
fn lambda_above_max_gives_zero() {
    let mut r = rng(5);
    for _ in 0..20 {
        let mut inst = lasso_instance(&mut r, 5, 4);
        inst.lambda = 1.01 * (inst.m.transpose() * &inst.y).amax();
        assert!(admm_solve(&inst).iter().all(|&v| v.abs() < 1e-10));
    }
}
