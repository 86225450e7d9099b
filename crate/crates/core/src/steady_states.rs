//! Periodic steady states: the semitrivial logistic states, interior
//! coexistence states of the cooperative system, and the assumption audit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cooperative_transform::{transform, CooperativeSystem};
use crate::discretization::{assemble_periodic_samples, PeriodicGrid, SchemeChoice};
use crate::error::{Error, Result};
use crate::periodic_coeffs::{CompetitionSystem, PeriodicFn};
use crate::spectral::{
    coexistence_linearization_eigen, interior_distance, principal_eigen, principal_eigen_samples, CoupledOperator,
};
use crate::wave_speeds::{check_b2, B2Report};

/// Residual every returned steady state must meet.
pub const RESIDUAL_TOL: f64 = 1e-9;
/// `|lambda_hat|` below this is reported as marginal.
pub const MARGINAL_BAND: f64 = 1e-7;
/// Minimum pass margin in the audit.
pub const AUDIT_MARGIN: f64 = 1e-8;
/// States closer than this in the sup norm are the same state.
pub const DEDUP_TOL: f64 = 1e-6;
pub const DEFAULT_SEEDS: usize = 64;
/// Step change at which the logistic march hands over to Newton. Smaller
/// values sit under the rounding floor of the implicit solve on fine grids.
const MARCH_HANDOFF: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

impl Stability {
    pub fn classify(lambda: f64) -> Self {
        if lambda.abs() < MARGINAL_BAND {
            Stability::Marginal
        } else if lambda < 0.0 {
            Stability::Stable
        } else {
            Stability::Unstable
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSteadyState {
    pub u1: Vec<f64>,
    /// Second component for coexistence states.
    pub u2: Option<Vec<f64>>,
    pub residual: f64,
    pub stability: Stability,
    /// Principal eigenvalue of the linearization.
    pub eigenvalue: f64,
}

fn logistic_residual(op: &crate::discretization::DiscreteOperator, b: &[f64], c: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let mut r = op.apply(u)?;
    for j in 0..u.len() {
        r[j] += u[j] * (b[j] - c[j] * u[j]);
    }
    Ok(r)
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Unique positive periodic solution of `0 = d u'' - a u' + u (b - c u)`.
pub fn semitrivial_state(
    d: &PeriodicFn,
    a: &PeriodicFn,
    b: &PeriodicFn,
    c: &PeriodicFn,
    grid: &PeriodicGrid,
) -> Result<PeriodicSteadyState> {
    let n = grid.n;
    let (ds, as_, bs, cs) = (d.sample(n), a.sample(n), b.sample(n), c.sample(n));
    if let Some(j) = cs.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NotPositive { coefficient: "c".into(), x: j as f64 * grid.h(), value: cs[j] });
    }
    let lin = principal_eigen(d, a, b, grid)?;
    if lin.value <= 0.0 {
        return Err(Error::NoPositiveState { lambda: lin.value });
    }
    let op = assemble_periodic_samples(&ds, &as_, &vec![0.0; n], grid.h(), SchemeChoice::Auto)?;

    let ratio_min = bs.iter().zip(&cs).map(|(b, c)| b / c).fold(f64::INFINITY, f64::min);
    let cmax = cs.iter().copied().fold(0.0, f64::max);
    let scale = if ratio_min > 0.0 { ratio_min } else { lin.value / cmax };
    let mut u: Vec<f64> = lin.eigenfunction.iter().map(|p| scale * p).collect();

    // semi-implicit march: implicit diffusion-advection, explicit reaction
    let dmax = ds.iter().copied().fold(0.0, f64::max);
    let bmax = bs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut dt = 0.1 * grid.h() * grid.h() / dmax;
    let mut last_change = f64::INFINITY;
    let mut next = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut converged = false;
    for _ in 0..200_000 {
        let umax = u.iter().copied().fold(0.0, f64::max);
        let cap = 0.5 / (bmax + 2.0 * cmax * umax);
        dt = dt.min(cap);
        let sigma = 1.0 / dt;
        for j in 0..n {
            rhs[j] = sigma * u[j] + u[j] * (bs[j] - cs[j] * u[j]);
        }
        op.factor_shifted(sigma)?.solve_into(&rhs, &mut next)?;
        let change = next.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut u, &mut next);
        if change < MARCH_HANDOFF {
            converged = true;
            break;
        }
        if change < last_change {
            dt *= 2.0;
        }
        last_change = change;
    }
    if !converged {
        return Err(Error::NoConvergence { what: "logistic time march".into(), iterations: 200_000, residual: last_change });
    }
    // Newton polish on J = L + diag(b - 2 c u)
    let mut residual = sup(&logistic_residual(&op, &bs, &cs, &u)?);
    for _ in 0..8 {
        if residual < 1e-13 {
            break;
        }
        let f = logistic_residual(&op, &bs, &cs, &u)?;
        let jac = op.with_potential(&(0..n).map(|j| bs[j] - 2.0 * cs[j] * u[j]).collect::<Vec<_>>())?;
        let delta = jac.solve_shifted(0.0, &f)?;
        let trial: Vec<f64> = u.iter().zip(&delta).map(|(u, d)| u + d).collect();
        let r = sup(&logistic_residual(&op, &bs, &cs, &trial)?);
        if r >= residual {
            break;
        }
        u = trial;
        residual = r;
    }
    if residual >= RESIDUAL_TOL {
        return Err(Error::NoConvergence { what: "logistic steady state".into(), iterations: 0, residual });
    }
    let min = u.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::NotPositiveEigenfunction { min });
    }
    let q: Vec<f64> = (0..n).map(|j| bs[j] - 2.0 * cs[j] * u[j]).collect();
    let eig = principal_eigen_samples(&ds, &as_, &q, grid.h(), SchemeChoice::Auto, None)?;
    Ok(PeriodicSteadyState {
        u1: u,
        u2: None,
        residual,
        stability: Stability::classify(eig.value),
        eigenvalue: eig.value,
    })
}

/// `(u1*, u2*)` of a competition system.
pub fn semitrivial_pair(s: &CompetitionSystem, grid: &PeriodicGrid) -> Result<(PeriodicSteadyState, PeriodicSteadyState)> {
    let u1 = semitrivial_state(&s.d1, &s.a1, &s.b1, &s.a11, grid)?;
    let u2 = semitrivial_state(&s.d2, &s.a2, &s.b2, &s.a22, grid)?;
    Ok((u1, u2))
}

/// Semitrivial states followed by the change of variables.
pub fn cooperative_system(s: &CompetitionSystem, grid: &PeriodicGrid) -> Result<CooperativeSystem> {
    let (u1, u2) = semitrivial_pair(s, grid)?;
    transform(s, &u1.u1, &u2.u1, grid)
}

/// `(L1 u1 + f1, L2 u2 + f2)` and its Jacobian as a coupled operator.
fn coexistence_residual(sys: &CooperativeSystem, u1: &[f64], u2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let zero = vec![0.0; sys.n()];
    let mut r1 = sys.periodic_operator(0, &zero)?.apply(u1)?;
    let mut r2 = sys.periodic_operator(1, &zero)?.apply(u2)?;
    for j in 0..sys.n() {
        let (f1, f2) = sys.reaction(j, u1[j], u2[j]);
        r1[j] += f1;
        r2[j] += f2;
    }
    Ok((r1, r2))
}

fn coexistence_jacobian(sys: &CooperativeSystem, u1: &[f64], u2: &[f64]) -> Result<DMatrix<f64>> {
    let n = sys.n();
    let (mut q1, mut q2, mut c12, mut c21) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for j in 0..n {
        let m = sys.reaction_partials(j, u1[j], u2[j]);
        q1[j] = m[0][0];
        c12[j] = m[0][1];
        c21[j] = m[1][0];
        q2[j] = m[1][1];
    }
    let op = CoupledOperator { op1: sys.periodic_operator(0, &q1)?, op2: sys.periodic_operator(1, &q2)?, c12, c21 };
    Ok(op.to_dense())
}

/// Damped Newton from one seed; `None` when it fails to converge.
fn newton_coexistence(sys: &CooperativeSystem, mut u1: Vec<f64>, mut u2: Vec<f64>) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let n = sys.n();
    let norm = |r: &(Vec<f64>, Vec<f64>)| sup(&r.0).max(sup(&r.1));
    let mut r = coexistence_residual(sys, &u1, &u2).ok()?;
    let mut res = norm(&r);
    for _ in 0..60 {
        if res < 1e-12 {
            break;
        }
        let jac = coexistence_jacobian(sys, &u1, &u2).ok()?;
        let rhs = DVector::from_iterator(2 * n, r.0.iter().chain(&r.1).map(|v| -v));
        let delta = jac.lu().solve(&rhs)?;
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-4 {
            let t1: Vec<f64> = (0..n).map(|j| u1[j] + alpha * delta[j]).collect();
            let t2: Vec<f64> = (0..n).map(|j| u2[j] + alpha * delta[n + j]).collect();
            let tr = coexistence_residual(sys, &t1, &t2).ok()?;
            let tres = norm(&tr);
            if tres < (1.0 - 1e-4 * alpha) * res || tres < 1e-13 {
                u1 = t1;
                u2 = t2;
                r = tr;
                res = tres;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        // states far outside the order interval will not come back
        if u1.iter().chain(&u2).any(|v| !(-1.0..=2.0).contains(v)) {
            return None;
        }
    }
    (res < RESIDUAL_TOL).then_some((u1, u2, res))
}

/// Seed `i` of the multistart: an interior constant plus a small low-mode wiggle.
fn seed_state(n: usize, seed: u64, i: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    let base1 = rng.random_range(0.05..0.95);
    let base2 = rng.random_range(0.05..0.95);
    let mut wiggle = |base: f64| -> Vec<f64> {
        let k = rng.random_range(1..=2) as f64;
        let amp = rng.random_range(0.0..0.04);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        (0..n).map(|j| base + amp * (std::f64::consts::TAU * k * j as f64 / n as f64 + phase).cos()).collect()
    };
    let u1 = wiggle(base1);
    let u2 = wiggle(base2);
    (u1, u2)
}

/// Interior periodic steady states found by damped-Newton multistart,
/// deduplicated and classified by the coupled linearization.
pub fn find_coexistence_states(sys: &CooperativeSystem, n_seeds: usize, seed: u64) -> Result<Vec<PeriodicSteadyState>> {
    let n = sys.n();
    let mut found: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..n_seeds)
        .into_par_iter()
        .filter_map(|i| {
            let (u1, u2) = seed_state(n, seed, i);
            newton_coexistence(sys, u1, u2)
        })
        .filter(|(u1, u2, _)| interior_distance(u1, u2) > DEDUP_TOL)
        .collect();
    found.sort_by(|a, b| {
        let ka = a.0.iter().chain(&a.1);
        let kb = b.0.iter().chain(&b.1);
        ka.zip(kb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut distinct: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    for cand in found {
        let dup = distinct.iter().any(|(v1, v2, _)| {
            let d1 = v1.iter().zip(&cand.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let d2 = v2.iter().zip(&cand.1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            d1.max(d2) < DEDUP_TOL
        });
        if !dup {
            distinct.push(cand);
        }
    }
    distinct
        .into_iter()
        .map(|(u1, u2, residual)| {
            let e = coexistence_linearization_eigen(sys, &u1, &u2)?;
            Ok(PeriodicSteadyState {
                u1,
                u2: Some(u2),
                residual,
                stability: Stability::classify(e.value),
                eigenvalue: e.value,
            })
        })
        .collect()
}

/// Sufficient condition for the gap inequalities when the two species share
/// diffusion and drift: `(a21 - 2 a11) u1* <= b2 - b1 <= (2 a22 - a12) u2*`,
/// each not identically equal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedMotilityCheck {
    /// `min_x (b2 - b1) - (a21 - 2 a11) u1*`
    pub lower_min: f64,
    pub lower_max: f64,
    /// `min_x (2 a22 - a12) u2* - (b2 - b1)`
    pub upper_min: f64,
    pub upper_max: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoexistenceFinding {
    pub mean_u1: f64,
    pub mean_u2: f64,
    pub lambda_hat: f64,
    pub stability: Stability,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub n: usize,
    /// `lambda_0(d_i, a_i, b_i)`, both must be positive.
    pub lambda_00: [f64; 2],
    /// `lambda_0(d1, a1, b1 - a12 u2*)`, `lambda_0(d2, a2, b2 - a21 u1*)`.
    pub h1: [f64; 2],
    pub h1_pass: bool,
    /// The same eigenvalues in cooperative coordinates.
    pub a1: [f64; 2],
    /// `|h1 - a1|` per species.
    pub identity_defect: [f64; 2],
    pub a1_pass: bool,
    /// Gap margins around `0` and around `1`.
    pub b1: [f64; 2],
    pub b1_pass: bool,
    pub b2: B2Report,
    pub a2_states: Vec<CoexistenceFinding>,
    pub a2_pass: bool,
    pub a2_caveat: String,
    pub shared_motility: Option<SharedMotilityCheck>,
    pub verdict: bool,
}

/// Search options for the audit.
#[derive(Clone, Copy, Debug)]
pub struct AuditOptions {
    pub n_seeds: usize,
    pub seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self { n_seeds: DEFAULT_SEEDS, seed: 0 }
    }
}

fn lambda_samples(d: &[f64], a: &[f64], q: &[f64], h: f64) -> Result<f64> {
    Ok(principal_eigen_samples(d, a, q, h, SchemeChoice::Auto, None)?.value)
}

/// Evaluates every standing assumption on one grid.
pub fn audit_assumptions(s: &CompetitionSystem, grid: &PeriodicGrid, opts: AuditOptions) -> Result<AssumptionReport> {
    let n = grid.n;
    let h = grid.h();
    let lambda_00 = [
        principal_eigen(&s.d1, &s.a1, &s.b1, grid)?.value,
        principal_eigen(&s.d2, &s.a2, &s.b2, grid)?.value,
    ];
    let (st1, st2) = semitrivial_pair(s, grid)?;
    let (u1s, u2s) = (&st1.u1, &st2.u1);
    let sm = |f: &PeriodicFn| f.sample(n);
    let (d1, d2, a1, a2) = (sm(&s.d1), sm(&s.d2), sm(&s.a1), sm(&s.a2));
    let q1: Vec<f64> = (0..n).map(|j| sm(&s.b1)[j] - sm(&s.a12)[j] * u2s[j]).collect();
    let q2: Vec<f64> = (0..n).map(|j| sm(&s.b2)[j] - sm(&s.a21)[j] * u1s[j]).collect();
    let h1 = [lambda_samples(&d1, &a1, &q1, h)?, lambda_samples(&d2, &a2, &q2, h)?];
    let h1_pass = h1.iter().all(|&v| v <= -AUDIT_MARGIN);

    let sys = transform(s, u1s, u2s, grid)?;
    let diff = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(a, b)| a - b).collect() };
    let neg = |x: &[f64]| -> Vec<f64> { x.iter().map(|v| -v).collect() };
    let mu0 = lambda_samples(&sys.d1, &sys.a1_star, &diff(&sys.a11_star, &sys.a12_star), h)?;
    let mu1 = lambda_samples(&sys.d2, &sys.a2_star, &diff(&sys.a22_star, &sys.a21_star), h)?;
    let a1v = [mu0, mu1];
    let identity_defect = [(h1[0] - mu0).abs(), (h1[1] - mu1).abs()];
    let a1_pass = a1v.iter().all(|&v| v <= -AUDIT_MARGIN);
    let other0 = lambda_samples(&sys.d2, &sys.a2_star, &neg(&sys.a22_star), h)?;
    let other1 = lambda_samples(&sys.d1, &sys.a1_star, &neg(&sys.a11_star), h)?;
    let b1 = [mu0 - other0, mu1 - other1];
    let b1_pass = b1.iter().all(|&v| v >= AUDIT_MARGIN);

    let b2 = check_b2(&sys)?;

    let states = find_coexistence_states(&sys, opts.n_seeds, opts.seed)?;
    let a2_states: Vec<CoexistenceFinding> = states
        .iter()
        .map(|st| CoexistenceFinding {
            mean_u1: st.u1.iter().sum::<f64>() / n as f64,
            mean_u2: st.u2.as_ref().map_or(0.0, |v| v.iter().sum::<f64>() / n as f64),
            lambda_hat: st.eigenvalue,
            stability: st.stability,
            residual: st.residual,
        })
        .collect();
    let a2_pass = a2_states.iter().all(|f| f.stability != Stability::Stable);
    let a2_caveat = format!(
        "evidence only: {} seeds found {} interior state(s); states the search missed are not covered",
        opts.n_seeds,
        a2_states.len()
    );

    let shared_motility = (s.d1 == s.d2 && s.a1 == s.a2).then(|| {
        let (b1s, b2s, a11, a12, a21, a22) = (sm(&s.b1), sm(&s.b2), sm(&s.a11), sm(&s.a12), sm(&s.a21), sm(&s.a22));
        let lower: Vec<f64> = (0..n).map(|j| (b2s[j] - b1s[j]) - (a21[j] - 2.0 * a11[j]) * u1s[j]).collect();
        let upper: Vec<f64> = (0..n).map(|j| (2.0 * a22[j] - a12[j]) * u2s[j] - (b2s[j] - b1s[j])).collect();
        let mn = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let mx = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pass = mn(&lower) >= 0.0 && mx(&lower) > 0.0 && mn(&upper) >= 0.0 && mx(&upper) > 0.0;
        SharedMotilityCheck { lower_min: mn(&lower), lower_max: mx(&lower), upper_min: mn(&upper), upper_max: mx(&upper), pass }
    });

    let verdict = lambda_00.iter().all(|&v| v >= AUDIT_MARGIN) && h1_pass && a1_pass && b1_pass && b2.pass && a2_pass;
    Ok(AssumptionReport {
        n,
        lambda_00,
        h1,
        h1_pass,
        a1: a1v,
        identity_defect,
        a1_pass,
        b1,
        b1_pass,
        b2,
        a2_states,
        a2_pass,
        a2_caveat,
        shared_motility,
        verdict,
    })
}

impl AssumptionReport {
    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let mark = |p: bool| if p { "pass" } else { "FAIL" };
        let mut s = String::new();
        s.push_str(&format!("grid N = {}\n", self.n));
        s.push_str(&format!(
            "lambda_0(d_i,a_i,b_i)      {:>14.6e} {:>14.6e}  {}\n",
            self.lambda_00[0],
            self.lambda_00[1],
            mark(self.lambda_00.iter().all(|&v| v >= AUDIT_MARGIN))
        ));
        s.push_str(&format!("(H1) eigenvalues           {:>14.6e} {:>14.6e}  {}\n", self.h1[0], self.h1[1], mark(self.h1_pass)));
        s.push_str(&format!("(A1) transformed           {:>14.6e} {:>14.6e}  {}\n", self.a1[0], self.a1[1], mark(self.a1_pass)));
        s.push_str(&format!(
            "     identity defect       {:>14.3e} {:>14.3e}\n",
            self.identity_defect[0], self.identity_defect[1]
        ));
        s.push_str(&format!("(B1) gap margins           {:>14.6e} {:>14.6e}  {}\n", self.b1[0], self.b1[1], mark(self.b1_pass)));
        s.push_str(&format!(
            "(B2) c1- + c2+             {:>14.6e} = {:.6e} + {:.6e}  {}\n",
            self.b2.sum, self.b2.c1_minus.c_star, self.b2.c2_plus.c_star, mark(self.b2.pass)
        ));
        s.push_str(&format!(
            "     mirror c1+ + c2-      {:>14.6e}  {}\n",
            self.b2.mirror_sum,
            mark(self.b2.mirror_pass)
        ));
        for st in &self.a2_states {
            s.push_str(&format!(
                "(A2) state mean ({:.6}, {:.6}) lambda_hat {:>12.6e} {:?}\n",
                st.mean_u1, st.mean_u2, st.lambda_hat, st.stability
            ));
        }
        s.push_str(&format!("(A2) {}  {}\n", self.a2_caveat, mark(self.a2_pass)));
        if let Some(m) = &self.shared_motility {
            s.push_str(&format!(
                "shared-motility condition  lower min {:.3e}, upper min {:.3e}  {}\n",
                m.lower_min,
                m.upper_min,
                mark(m.pass)
            ));
        }
        s.push_str(&format!("verdict: {}\n", mark(self.verdict)));
        s
    }
}
