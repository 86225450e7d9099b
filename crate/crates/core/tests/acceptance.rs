//! Acceptance run: one PASS/FAIL line per criterion, every tolerance and
//! time budget pinned below. Runs without the libtest harness so the lines
//! always reach the output.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use bistable_fronts::cooperative_transform::CooperativeSystem;
use bistable_fronts::discretization::{LineGrid, PeriodicGrid, SchemeChoice};
use bistable_fronts::front_solver::{
    dt_max, estimate_speed, extract_profile, CauchyState, FrontProfile, Integrator, ProfileOptions, Stepper,
};
use bistable_fronts::periodic_coeffs::{CompetitionSystem, PeriodicFn};
use bistable_fronts::spectral::{lambda_sweep, principal_eigen, principal_eigen_samples, triangular_pair, Around};
use bistable_fronts::steady_states::{
    audit_assumptions, cooperative_system, find_coexistence_states, semitrivial_pair, AuditOptions,
};
use bistable_fronts::subsuper_verifier::{
    bracket_shifts, build_pack, global_stability_experiment, sandwich_experiment, verify_inequalities, Lattice,
    PackOptions,
};
use bistable_fronts::wave_speeds::{minimal_speed, Orientation, ScalarFamily};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances, one per quantity checked.
const TOL_CONSTANT_EIGEN: f64 = 1e-10;
const TOL_KPP_SPEED: f64 = 1e-6;
const TOL_CROSS_IDENTITY: f64 = 1e-6;
const TOL_CONVEXITY: f64 = 1e-8;
const TOL_EVEN_SYMMETRY: f64 = 1e-8;
const TOL_TRIANGULAR: f64 = 1e-8;
const TOL_AUDIT_MARGIN: f64 = 1e-8;
const TOL_B2_SUM: f64 = 1e-6;
const TOL_ORDER: f64 = 1e-12;
const TOL_AGREEMENT: f64 = 1e-12;
const TOL_SYMMETRIC_SPEED: f64 = 1e-3;
const TOL_PERIODICITY: f64 = 1e-8;
const TOL_FAR_FIELD: f64 = 1e-4;
const RESIDUAL_RATIO_BAND: (f64, f64) = (3.0, 6.0);
const TOL_SPEED_REFINEMENT: f64 = 1e-3;
const TOL_SANDWICH: f64 = 1e-10;
const TOL_STABILITY: f64 = 1e-3;
const TOL_UNSTABLE: f64 = 1e-7;

// Time budgets in seconds.
const BUDGETS: [f64; 13] = [1.0, 30.0, 60.0, 60.0, 1.0, 60.0, 60.0, 60.0, 300.0, 600.0, 600.0, 900.0, 300.0];

/// Periodic test systems: drift, varying diffusion and varying competition.
const PERIODIC: [&str; 3] = [
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
    r#"
period = 1.0
d1 = { mean = 1.0 }
d2 = { mean = 0.8, sin = [0.2] }
b1 = { mean = 1.0, cos = [0.4] }
b2 = { mean = 1.0 }
a11 = { mean = 1.0 }
a12 = { mean = 1.5 }
a21 = { mean = 1.3, sin = [0.2] }
a22 = { mean = 1.0 }
"#,
    r#"
period = 2.0
d1 = { mean = 0.7, cos = [0.1, 0.05] }
d2 = { mean = 1.2 }
a2 = { mean = 0.0, cos = [-0.4] }
b1 = { mean = 1.0 }
b2 = { mean = 1.2, sin = [0.3] }
a11 = { mean = 1.0, cos = [0.2] }
a12 = { mean = 1.6 }
a21 = { mean = 1.7 }
a22 = { mean = 1.1 }
"#,
];

fn periodic_system(k: usize) -> CompetitionSystem {
    CompetitionSystem::from_toml_str(PERIODIC[k]).unwrap()
}

fn symmetric() -> CompetitionSystem {
    CompetitionSystem::unit_constants(1.0, 1.5, 1.5, 1.0)
}

fn baseline() -> CompetitionSystem {
    CompetitionSystem::unit_constants(1.0, 1.8, 1.3, 1.0)
}

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_constant_eigenvalues() -> Check {
    let grid = PeriodicGrid::new(1.0, 64).unwrap();
    let mut worst: f64 = 0.0;
    for (d, a, q) in [(1.0, 0.0, 1.0), (0.5, 1.0, -0.3), (2.0, -0.7, 2.5), (0.1, 3.0, 0.0)] {
        let c = |v| PeriodicFn::constant(1.0, v);
        let e = principal_eigen(&c(d), &c(a), &c(q), &grid).map_err(|e| e.to_string())?;
        worst = worst.max((e.value - q).abs());
    }
    ensure(worst < TOL_CONSTANT_EIGEN, format!("max |lambda - q| = {worst:.2e}"))
}

fn c2_kpp_speeds() -> Check {
    let mut worst: f64 = 0.0;
    for d in [0.5, 1.0, 2.0] {
        for a in [-1.0, 0.0, 1.5] {
            for q in [0.25, 1.0, 3.0] {
                let fam = ScalarFamily::constant(d, a, q);
                let right = minimal_speed(&fam, Orientation::Rightward).map_err(|e| e.to_string())?.c_star;
                let left = minimal_speed(&fam, Orientation::Leftward).map_err(|e| e.to_string())?.c_star;
                let root = 2.0 * (d * q).sqrt();
                worst = worst.max((right - (a + root)).abs()).max((left - (root - a)).abs());
            }
        }
    }
    ensure(worst < TOL_KPP_SPEED, format!("27 cases, both directions, max error {worst:.2e}"))
}

/// Richardson value of `lambda` from the `n` and `2n` samples.
fn richardson(coarse: f64, fine: f64) -> f64 {
    fine + (fine - coarse) / 3.0
}

fn c3_cross_identity() -> Check {
    let mut worst: f64 = 0.0;
    for k in 0..PERIODIC.len() {
        let s = periodic_system(k);
        let mut transformed = [[0.0; 2]; 2];
        let mut original = [[0.0; 2]; 2];
        for (level, n) in [256usize, 512].into_iter().enumerate() {
            let grid = PeriodicGrid::new(s.period, n).unwrap();
            let (u1, u2) = semitrivial_pair(&s, &grid).map_err(|e| e.to_string())?;
            let sys = cooperative_system(&s, &grid).map_err(|e| e.to_string())?;
            let h = grid.h();
            let eig = |d: &[f64], a: &[f64], q: &[f64]| {
                principal_eigen_samples(d, a, q, h, SchemeChoice::Centered, None).map(|e| e.value)
            };
            let q1: Vec<f64> = sys.a11_star.iter().zip(&sys.a12_star).map(|(p, m)| p - m).collect();
            let q2: Vec<f64> = sys.a22_star.iter().zip(&sys.a21_star).map(|(p, m)| p - m).collect();
            transformed[0][level] = eig(&sys.d1, &sys.a1_star, &q1).map_err(|e| e.to_string())?;
            transformed[1][level] = eig(&sys.d2, &sys.a2_star, &q2).map_err(|e| e.to_string())?;
            let (b1, a12, b2, a21) = (s.b1.sample(n), s.a12.sample(n), s.b2.sample(n), s.a21.sample(n));
            let p1: Vec<f64> = (0..n).map(|j| b1[j] - a12[j] * u2.u1[j]).collect();
            let p2: Vec<f64> = (0..n).map(|j| b2[j] - a21[j] * u1.u1[j]).collect();
            original[0][level] = eig(&s.d1.sample(n), &s.a1.sample(n), &p1).map_err(|e| e.to_string())?;
            original[1][level] = eig(&s.d2.sample(n), &s.a2.sample(n), &p2).map_err(|e| e.to_string())?;
        }
        for i in 0..2 {
            let gap = richardson(transformed[i][0], transformed[i][1]) - richardson(original[i][0], original[i][1]);
            worst = worst.max(gap.abs());
        }
    }
    ensure(worst < TOL_CROSS_IDENTITY, format!("3 systems x 2 species, max defect {worst:.2e}"))
}

fn c4_convexity_and_symmetry() -> Check {
    let n = 128;
    let grid = PeriodicGrid::new(1.0, n).unwrap();
    let h = grid.h();
    let mus: Vec<f64> = (0..21).map(|k| -2.0 + 0.2 * k as f64).collect();
    let d = PeriodicFn::new(1.0, 1.0, vec![0.3], vec![0.1]).unwrap().sample(n);
    let a = PeriodicFn::sine(1.0, 0.4, 0.5).sample(n);
    let q = PeriodicFn::new(1.0, 0.5, vec![0.4, 0.2], vec![0.3]).unwrap().sample(n);
    let lam = lambda_sweep(&d, &a, &q, h, &mus).map_err(|e| e.to_string())?;
    let step = mus[1] - mus[0];
    let min_second = lam.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]) / (step * step)).fold(f64::INFINITY, f64::min);
    // even coefficients and no drift
    let de = PeriodicFn::cosine(1.0, 1.0, 0.3).sample(n);
    let ze = vec![0.0; n];
    let qe = PeriodicFn::new(1.0, 0.5, vec![0.4, -0.2], vec![]).unwrap().sample(n);
    let le = lambda_sweep(&de, &ze, &qe, h, &mus).map_err(|e| e.to_string())?;
    let asym = (0..21).map(|k| (le[k] - le[20 - k]).abs()).fold(0.0, f64::max);
    ensure(
        min_second >= -TOL_CONVEXITY && asym < TOL_EVEN_SYMMETRY,
        format!("min second difference {min_second:.3e}, even asymmetry {asym:.2e}"),
    )
}

fn c5_triangular_constants() -> Check {
    let sys = CooperativeSystem::from_constants(&symmetric(), 64).map_err(|e| e.to_string())?;
    let e = triangular_pair(&sys, Around::Zero).map_err(|e| e.to_string())?;
    // mu0 = a11 - a12, and (mu0 + a22) phi02 = a21 phi01
    let mu = 1.0 - 1.5;
    let ratio = 1.5 / (mu + 1.0);
    let ratio_err = e.phi2.iter().zip(&e.phi1).map(|(p2, p1)| (p2 / p1 - ratio).abs()).fold(0.0, f64::max);
    let err = (e.value - mu).abs();
    ensure(
        err < TOL_TRIANGULAR && ratio_err < TOL_TRIANGULAR,
        format!("mu0 = {:.12}, ratio error {ratio_err:.2e}", e.value),
    )
}

fn c6_symmetric_audit() -> Check {
    let grid = PeriodicGrid::new(1.0, 64).unwrap();
    let r = audit_assumptions(&symmetric(), &grid, AuditOptions::default()).map_err(|e| e.to_string())?;
    let h1 = r.h1.iter().map(|m| (m + 0.5).abs()).fold(0.0, f64::max);
    let b1 = r.b1.iter().map(|m| (m - 0.5).abs()).fold(0.0, f64::max);
    let b2 = (r.b2.sum - 4.0).abs();
    ensure(
        r.verdict && h1 < TOL_AUDIT_MARGIN && b1 < TOL_AUDIT_MARGIN && b2 < TOL_B2_SUM,
        format!("verdict {}, H1 {:?}, B1 {:?}, B2 sum {:.9}", r.verdict, r.h1, r.b1, r.b2.sum),
    )
}

/// Smooth random field with values in `[0, 1]`.
fn random_field(rng: &mut ChaCha8Rng, grid: &LineGrid) -> Vec<f64> {
    let modes: Vec<(f64, f64, f64)> =
        (0..4).map(|_| (rng.random_range(-1.5..1.5), rng.random_range(0.05..1.0), rng.random_range(0.0..6.3))).collect();
    grid.nodes()
        .iter()
        .map(|&x| {
            let s: f64 = modes.iter().map(|(a, k, p)| a * (k * x + p).sin()).sum();
            1.0 / (1.0 + (-s).exp())
        })
        .collect()
}

fn test_grid(s: &CompetitionSystem, n: usize) -> (CooperativeSystem, LineGrid) {
    let sys = cooperative_system(s, &PeriodicGrid::new(s.period, n).unwrap()).unwrap();
    let grid = LineGrid::centered(s.period, 32, n).unwrap();
    (sys, grid)
}

fn c7_comparison() -> Check {
    let (sys, grid) = test_grid(&periodic_system(0), 32);
    let stepper = Stepper::new(&sys, grid, dt_max(&sys, false), false).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (l1, l2) = (random_field(&mut rng, &grid), random_field(&mut rng, &grid));
        let (w1, w2) = (random_field(&mut rng, &grid), random_field(&mut rng, &grid));
        let mut lo = CauchyState { grid, u1: l1.clone(), u2: l2.clone(), t: 0.0 };
        let hi1 = l1.iter().zip(&w1).map(|(u, w)| u + (1.0 - u) * w).collect();
        let hi2 = l2.iter().zip(&w2).map(|(u, w)| u + (1.0 - u) * w).collect();
        let mut hi = CauchyState { grid, u1: hi1, u2: hi2, t: 0.0 };
        lo.enforce_clamps();
        hi.enforce_clamps();
        for _ in 0..500 {
            stepper.step(&mut lo).map_err(|e| e.to_string())?;
            stepper.step(&mut hi).map_err(|e| e.to_string())?;
            worst = worst.max(lo.order_violation(&hi));
        }
    }
    ensure(worst <= TOL_ORDER, format!("10 pairs x 500 steps, worst violation {worst:.2e}"))
}

fn c8_box_and_agreement() -> Check {
    let (sys, grid) = test_grid(&periodic_system(1), 32);
    let dt = dt_max(&sys, true);
    let standard = Stepper::new(&sys, grid, dt, false).map_err(|e| e.to_string())?;
    let extended = Stepper::new(&sys, grid, dt, true).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut gap, mut outside): (f64, f64) = (0.0, 0.0);
    for _ in 0..3 {
        let mut a = CauchyState { grid, u1: random_field(&mut rng, &grid), u2: random_field(&mut rng, &grid), t: 0.0 };
        a.enforce_clamps();
        let mut b = a.clone();
        for _ in 0..500 {
            standard.step(&mut a).map_err(|e| e.to_string())?;
            extended.step(&mut b).map_err(|e| e.to_string())?;
            gap = gap.max(a.sup_distance(&b));
            for v in a.u1.iter().chain(&a.u2) {
                outside = outside.max(-v).max(v - 1.0);
            }
        }
    }
    ensure(
        gap <= TOL_AGREEMENT && outside <= TOL_AGREEMENT,
        format!("3 data x 500 steps, agreement {gap:.2e}, box excursion {outside:.2e}"),
    )
}

fn c9_symmetric_speed() -> Check {
    let sys = CooperativeSystem::from_constants(&symmetric(), 64).map_err(|e| e.to_string())?;
    let grid = LineGrid::centered(1.0, 80, 64).unwrap();
    let est = estimate_speed(&sys, &CauchyState::smooth_step(grid, 0.0, 2.0), 60.0, 0.02, Integrator::Sbdf2)
        .map_err(|e| e.to_string())?;
    ensure(est.c.abs() < TOL_SYMMETRIC_SPEED, format!("fitted c = {:.3e}", est.c))
}

fn baseline_front(n: usize, dt: f64) -> Result<(CooperativeSystem, FrontProfile), String> {
    let sys = CooperativeSystem::from_constants(&baseline(), n).map_err(|e| e.to_string())?;
    let grid = LineGrid::centered(1.0, 80, n).unwrap();
    let est = estimate_speed(&sys, &CauchyState::smooth_step(grid, 0.0, 2.0), 60.0, dt, Integrator::Sbdf2)
        .map_err(|e| e.to_string())?;
    let mut start = est.final_state.clone().unwrap();
    start.t = 0.0;
    let opts = ProfileOptions { dt_target: dt, ..ProfileOptions::default() };
    let p = extract_profile(&sys, est.c, &start, &opts).map_err(|e| e.to_string())?;
    Ok((sys, p))
}

fn c10_profile_quality() -> Check {
    let (_, coarse) = baseline_front(64, 0.02)?;
    let (_, fine) = baseline_front(128, 0.01)?;
    let m = &coarse.meta;
    let ratio = m.residual / fine.meta.residual;
    let dc = (m.c - fine.meta.c).abs();
    let far = m.far_field.low.max(m.far_field.high);
    ensure(
        m.monotone
            && fine.meta.monotone
            && m.periodicity_defect < TOL_PERIODICITY
            && far < TOL_FAR_FIELD
            && (RESIDUAL_RATIO_BAND.0..=RESIDUAL_RATIO_BAND.1).contains(&ratio)
            && dc < TOL_SPEED_REFINEMENT,
        format!(
            "c = {:.7}, monotone, periodicity {:.1e}, far field {far:.1e}, residual {:.2e} -> {:.2e} (ratio {ratio:.2}), |dc| {dc:.1e}",
            m.c, m.periodicity_defect, m.residual, fine.meta.residual
        ),
    )
}

fn c11_subsuper() -> Check {
    let (sys, p) = baseline_front(64, 0.02)?;
    let e0 = triangular_pair(&sys, Around::Zero).map_err(|e| e.to_string())?;
    let e1 = triangular_pair(&sys, Around::One).map_err(|e| e.to_string())?;
    let pack = build_pack(&p, &sys, &e0, &e1, PackOptions::default()).map_err(|e| e.to_string())?;
    let lattice = Lattice { nt: 64, nx: 256, ..Lattice::default_for(&pack) };
    let rep = verify_inequalities(&pack, lattice);
    let eps = rep.eps_num;
    let buckets_ok = rep.buckets.len() == 3
        && rep.buckets.iter().all(|b| b.count > 0 && b.min_super >= -eps && b.max_sub <= eps);
    let grid = LineGrid::centered(1.0, 100, 64).unwrap();
    let init = CauchyState::sharp_step(grid, 0.0);
    let (zm, zp) = bracket_shifts(&pack, &init, 0.5).map_err(|e| e.to_string())?;
    let sw = sandwich_experiment(&pack.clone().with_shifts(zm, zp), &sys, &init, 40.0, dt_max(&sys, true))
        .map_err(|e| e.to_string())?;
    let worst = sw.worst_upper.max(sw.worst_lower);
    let counts: Vec<usize> = rep.buckets.iter().map(|b| b.count).collect();
    ensure(
        buckets_ok && sw.violations == 0 && worst <= TOL_SANDWICH,
        format!(
            "64x256 lattice buckets {counts:?}, eps_num {eps:.1e}, min N[u+] {:.1e}; sandwich {} checks, worst {worst:.1e}",
            rep.buckets.iter().map(|b| b.min_super).fold(f64::INFINITY, f64::min),
            sw.checks
        ),
    )
}

fn c12_global_stability() -> Check {
    let (sys, p) = baseline_front(64, 0.02)?;
    let interp = p.interp(&sys).map_err(|e| e.to_string())?;
    let grid = LineGrid::centered(1.0, 100, 64).unwrap();
    let data = vec![
        ("sharp".to_string(), CauchyState::sharp_step(grid, 0.0)),
        ("smooth".to_string(), CauchyState::smooth_step(grid, 3.0, 4.0)),
    ];
    let rep = global_stability_experiment(&sys, &interp, &data, 60.0, 0.02, TOL_STABILITY).map_err(|e| e.to_string())?;
    let worst = rep.runs.iter().map(|r| r.final_error).fold(0.0, f64::max);
    ensure(
        worst < TOL_STABILITY && rep.pairwise_speed_gap < TOL_STABILITY && rep.speed_gap < TOL_STABILITY,
        format!(
            "final distance {worst:.1e}, speed gap to profile {:.1e}, pairwise {:.1e}",
            rep.speed_gap, rep.pairwise_speed_gap
        ),
    )
}

fn c13_coexistence_unstable() -> Check {
    let mut systems = vec![symmetric(), baseline()];
    systems.extend((0..PERIODIC.len()).map(periodic_system));
    let (mut found, mut least) = (0usize, f64::INFINITY);
    for s in &systems {
        let sys = cooperative_system(s, &PeriodicGrid::new(s.period, 64).unwrap()).map_err(|e| e.to_string())?;
        let states = find_coexistence_states(&sys, 64, 0).map_err(|e| e.to_string())?;
        found += states.len();
        for st in &states {
            least = least.min(st.eigenvalue);
        }
    }
    ensure(
        found > 0 && least > TOL_UNSTABLE,
        format!("{} systems, {found} interior states, least lambda_hat {least:.3e}", systems.len()),
    )
}

fn main() {
    let criteria: [Criterion; 13] = [
        ("constant-coefficient eigenvalue equals q", c1_constant_eigenvalues),
        ("KPP speed closed form", c2_kpp_speeds),
        ("cross-identity of transformed eigenvalues", c3_cross_identity),
        ("dispersion convexity and even symmetry", c4_convexity_and_symmetry),
        ("triangular eigenpair, constant case", c5_triangular_constants),
        ("assumption audit, symmetric constants", c6_symmetric_audit),
        ("discrete comparison principle", c7_comparison),
        ("box invariance and extended/standard agreement", c8_box_and_agreement),
        ("symmetric front stands still", c9_symmetric_speed),
        ("baseline profile quality under refinement", c10_profile_quality),
        ("sub/supersolution inequalities and sandwich", c11_subsuper),
        ("global stability from two data", c12_global_stability),
        ("coexistence states are unstable", c13_coexistence_unstable),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let budget = BUDGETS[k];
        let (ok, detail) = match outcome {
            Ok(d) if secs <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget} s budget")),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!("{} {:>2} {name}: {detail} [{secs:.1} s]", if ok { "PASS" } else { "FAIL" }, k + 1);
    }
    println!("acceptance: {} of 13 criteria pass", 13 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
