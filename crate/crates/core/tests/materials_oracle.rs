mod common;

use common::*;
use roidecomp::materials::bundled;

#[test]
fn effective_matrix_matches_fine_integration_for_power_laws() {
    let tables = [power_law_table("a", 5e3, 2.8), power_law_table("b", 800.0, 3.1), power_law_table("c", 40.0, 1.2)];
    let dev = effective_matrix_deviation(&smooth_spectrum(), &tables);
    assert!(dev < 1e-6, "{dev:e}");
    let dev = effective_matrix_deviation(&flat_spectrum(), &tables);
    assert!(dev < 1e-6, "{dev:e}");
}

#[test]
fn constant_tables_under_flat_spectrum_give_their_constant() {
    let dev = flat_identity_deviation();
    assert!(dev <= 4.0 * f64::EPSILON, "{dev:e}");
}

#[test]
fn bundled_spectrum_weights_smooth_tables_accurately() {
    let s = bundled::spectrum_80kvp();
    let dev = effective_matrix_deviation(&s, &[power_law_table("a", 5e3, 2.8)]);
    assert!(dev < 1e-6, "{dev:e}");
}
