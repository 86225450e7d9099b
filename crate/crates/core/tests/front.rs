//! Front computations beyond the acceptance run: regression on the
//! asymmetric baseline, grid independence and a periodic habitat.

use bistable_fronts::cooperative_transform::CooperativeSystem;
use bistable_fronts::discretization::{LineGrid, PeriodicGrid};
use bistable_fronts::front_solver::{estimate_speed, extract_profile, CauchyState, FrontProfile, Integrator, ProfileOptions};
use bistable_fronts::periodic_coeffs::CompetitionSystem;
use bistable_fronts::steady_states::cooperative_system;

/// Speed of the `unit_constants(1, 1.8, 1.3, 1)` front from an `N = 128`,
/// `dt = 0.01` run.
const BASELINE_C: f64 = -0.269675;

fn front(sys: &CooperativeSystem, period: f64, n: usize, periods: usize) -> FrontProfile {
    let grid = LineGrid::centered(period, periods, n).unwrap();
    let est = estimate_speed(sys, &CauchyState::smooth_step(grid, 0.0, 2.0), 40.0, 0.02, Integrator::Sbdf2).unwrap();
    let mut start = est.final_state.clone().unwrap();
    start.t = 0.0;
    extract_profile(sys, est.c, &start, &ProfileOptions::default()).unwrap()
}

fn baseline(a12: f64, n: usize) -> FrontProfile {
    let s = CompetitionSystem::unit_constants(1.0, a12, 1.3, 1.0);
    front(&CooperativeSystem::from_constants(&s, n).unwrap(), 1.0, n, 80)
}

#[test]
fn baseline_speed_matches_the_regression_value() {
    let p = baseline(1.8, 64);
    assert!((p.meta.c - BASELINE_C).abs() < 1e-3, "c = {}", p.meta.c);
    assert!(p.meta.monotone);
}

#[test]
fn speed_is_grid_independent() {
    let coarse = baseline(1.8, 32).meta.c;
    let fine = baseline(1.8, 64).meta.c;
    assert!((coarse - fine).abs() < 1e-4, "{coarse} vs {fine}");
}

#[test]
fn regression_value_is_sensitive_to_the_coefficients() {
    // a 10% stronger second competitor moves the front well beyond the tolerance
    let shifted = baseline(1.98, 32).meta.c;
    assert!((shifted - BASELINE_C).abs() > 1e-2, "c = {shifted}");
    assert!(shifted < BASELINE_C);
}

#[test]
fn periodic_habitat_front_is_pulsating_and_monotone() {
    let s = CompetitionSystem::from_toml_str(
        r#"
period = 1.0
d1 = { mean = 1.0, cos = [0.3] }
d2 = { mean = 1.0 }
a1 = { mean = 0.0, sin = [0.5] }
b1 = { mean = 1.0 }
b2 = { mean = 1.0 }
a11 = { mean = 1.0 }
a12 = { mean = 1.8, cos = [0.3] }
a21 = { mean = 1.3 }
a22 = { mean = 1.0 }
"#,
    )
    .unwrap();
    let n = 32;
    let sys = cooperative_system(&s, &PeriodicGrid::new(1.0, n).unwrap()).unwrap();
    let p = front(&sys, 1.0, n, 80);
    let m = &p.meta;
    assert!(!m.stationary && m.c.abs() > 1e-2, "c = {}", m.c);
    assert!(m.monotone, "min slope {}", m.min_slope);
    assert!(m.periodicity_defect < 1e-8);
    assert!(m.far_field.low.max(m.far_field.high) < 1e-4);
    assert!(m.residual < 1e-3, "residual {}", m.residual);
    // the table varies with the phase, unlike a constant-coefficient front
    let mid = m.nz / 2;
    let spread = (0..n).map(|i| p.value(i, mid).0).fold(f64::NEG_INFINITY, f64::max)
        - (0..n).map(|i| p.value(i, mid).0).fold(f64::INFINITY, f64::min);
    assert!(spread > 1e-3, "phase spread {spread}");
}
