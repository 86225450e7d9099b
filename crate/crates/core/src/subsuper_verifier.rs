//! Explicit sub- and supersolutions built from a pulsating front and the
//! principal eigenpairs at the two stable states, plus numerical checks of
//! their differential inequalities and of the comparison and convergence
//! statements that rest on them.
//!
//! With `E = exp(-beta0 t)` and `s(t) = sigma0 delta (1 - E)`,
//!
//! ```text
//! u+(t, x) = U(x, x + c t + z+ + s) + delta p(x, x + c t + z+ + s) E
//! u-(t, x) = U(x, x + c t + z- - s) - delta p(x, x + c t + z- - s) E
//! ```
//!
//! where `p` blends the eigenfunctions at `0` and at `1` through a cutoff.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cooperative_transform::CooperativeSystem;
use crate::discretization::LineGrid;
use crate::error::{Error, Result};
use crate::front_solver::{
    CauchyState, FrontProfile, ProfileInterp, Sbdf2, Stepper, BOUNDARY_MARGIN_PERIODS, INTERFACE_LEVEL,
    STATIONARY_SPEED,
};
use crate::periodic_coeffs::PeriodicFn;
use crate::spectral::CoupledEigenPair;

/// Points of `theta` used for the suprema of the linearization gaps.
pub const THETA_SAMPLES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
/// Safety factor on sampled suprema.
pub const GAMMA_INFLATION: f64 = 1.1;
/// `sigma0` is set this factor above its lower bound.
pub const SIGMA_SLACK: f64 = 1.05;
/// Default `delta / delta0`.
pub const DELTA_FRACTION: f64 = 0.5;
/// Default verification lattice.
pub const LATTICE_T: usize = 64;
pub const LATTICE_X: usize = 256;
/// Ordering violations below this count as rounding.
pub const SANDWICH_TOL: f64 = 1e-10;

/// Quintic smoothstep on `[-2, 2]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Cutoff;

/// Sampled and analytic extrema of the cutoff derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffCertificate {
    pub samples: usize,
    pub max_d1: f64,
    pub max_abs_d2: f64,
    pub min_d1: f64,
    /// `30 t^2 (1 - t)^2 / 4` at `t = 1/2`.
    pub analytic_d1: f64,
    /// `60 t (1 - t)(1 - 2t) / 16` at `t = (3 - sqrt 3) / 6`.
    pub analytic_d2: f64,
}

pub fn build_cutoff() -> Cutoff {
    Cutoff
}

impl Cutoff {
    /// `(chi, chi', chi'')` at `xi`.
    pub fn eval(&self, xi: f64) -> (f64, f64, f64) {
        if xi <= -2.0 {
            return (0.0, 0.0, 0.0);
        }
        if xi >= 2.0 {
            return (1.0, 0.0, 0.0);
        }
        let t = (xi + 2.0) / 4.0;
        let (t2, t3) = (t * t, t * t * t);
        let v = t3 * (10.0 - 15.0 * t + 6.0 * t2);
        let d1 = 30.0 * t2 * (1.0 - t) * (1.0 - t) / 4.0;
        let d2 = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / 16.0;
        (v, d1, d2)
    }

    pub fn certify(&self, samples: usize) -> CutoffCertificate {
        let mut max_d1: f64 = 0.0;
        let mut min_d1 = f64::INFINITY;
        let mut max_abs_d2: f64 = 0.0;
        for k in 0..samples {
            let xi = -2.5 + 5.0 * k as f64 / (samples - 1).max(1) as f64;
            let (_, d1, d2) = self.eval(xi);
            max_d1 = max_d1.max(d1);
            min_d1 = min_d1.min(d1);
            max_abs_d2 = max_abs_d2.max(d2.abs());
        }
        let ts = (3.0 - 3f64.sqrt()) / 6.0;
        CutoffCertificate {
            samples,
            max_d1,
            max_abs_d2,
            min_d1,
            analytic_d1: 30.0 * 0.0625 / 4.0,
            analytic_d2: 60.0 * ts * (1.0 - ts) * (1.0 - 2.0 * ts) / 16.0,
        }
    }
}

/// `p` and its derivatives at one point, per component.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BlendSample {
    pub p: [f64; 2],
    pub px: [f64; 2],
    pub pxi: [f64; 2],
    pub pxx: [f64; 2],
    pub pxxi: [f64; 2],
    pub pxixi: [f64; 2],
}

/// `p(x, xi) = (1 - chi(xi)) phi0(x) + chi(xi) phi1(x)`, componentwise.
#[derive(Clone, Debug)]
pub struct Blend {
    pub cutoff: Cutoff,
    /// `phi[i][comp]`; `i = 0` around the zero state.
    pub phi: [[PeriodicFn; 2]; 2],
}

impl Blend {
    pub fn new(period: f64, eig0: &CoupledEigenPair, eig1: &CoupledEigenPair) -> Result<Self> {
        let f = |v: &[f64]| PeriodicFn::interpolate(period, v);
        Ok(Self { cutoff: Cutoff, phi: [[f(&eig0.phi1)?, f(&eig0.phi2)?], [f(&eig1.phi1)?, f(&eig1.phi2)?]] })
    }

    /// `p` alone, skipping the derivatives.
    pub fn value(&self, x: f64, xi: f64) -> [f64; 2] {
        let chi = self.cutoff.eval(xi).0;
        let mix = |c: usize| {
            let a = if chi < 1.0 { self.phi[0][c].eval(x) } else { 0.0 };
            let b = if chi > 0.0 { self.phi[1][c].eval(x) } else { 0.0 };
            (1.0 - chi) * a + chi * b
        };
        [mix(0), mix(1)]
    }

    pub fn eval(&self, x: f64, xi: f64) -> BlendSample {
        let (chi, d1, d2) = self.cutoff.eval(xi);
        let mut out = BlendSample::default();
        for c in 0..2 {
            let (a, b) = (&self.phi[0][c], &self.phi[1][c]);
            let (a0, b0) = (a.eval(x), b.eval(x));
            let (a1, b1) = (a.eval_d1(x), b.eval_d1(x));
            out.p[c] = (1.0 - chi) * a0 + chi * b0;
            out.px[c] = (1.0 - chi) * a1 + chi * b1;
            out.pxx[c] = (1.0 - chi) * a.eval_d2(x) + chi * b.eval_d2(x);
            out.pxi[c] = d1 * (b0 - a0);
            out.pxxi[c] = d1 * (b1 - a1);
            out.pxixi[c] = d2 * (b0 - a0);
        }
        out
    }
}

/// Far-field bounds on the linearization gaps and the resulting `xi_hat`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaBounds {
    pub delta1: f64,
    pub xi_hat: f64,
    /// Right-hand sides the sampled suprema must not exceed.
    pub bound0: f64,
    pub bound1: f64,
    /// Inflated sampled suprema beyond `-xi_hat` and `xi_hat`.
    pub sup0: f64,
    pub sup1: f64,
}

fn minmax(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn gap_bound(mu: f64, phi1: &[f64], phi2: &[f64]) -> f64 {
    let low = minmax(phi1).0.min(minmax(phi2).0);
    let top = phi1.iter().zip(phi2).map(|(a, b)| a + b).fold(f64::NEG_INFINITY, f64::max);
    mu.abs() * low / (2.0 * top)
}

// sum_ij |J(x_j, u) - J(x_j, base)|
fn jac_gap(sys: &CooperativeSystem, j: usize, u: [f64; 2], base: f64) -> f64 {
    let a = sys.reaction_partials(j, u[0], u[1]);
    let b = sys.reaction_partials(j, base, base);
    (0..2).flat_map(|r| (0..2).map(move |s| (r, s))).map(|(r, s)| (a[r][s] - b[r][s]).abs()).sum()
}

/// Chooses `delta1` so the gaps at the limit states use at most half of
/// their budgets, then widens `xi_hat` until the sampled, inflated suprema
/// beyond `+-xi_hat` fit. Works on the nodes of the table.
pub fn gamma_bounds(
    profile: &FrontProfile,
    sys: &CooperativeSystem,
    eig0: &CoupledEigenPair,
    eig1: &CoupledEigenPair,
) -> Result<GammaBounds> {
    let (n, nz) = (profile.meta.n, profile.meta.nz);
    if n != sys.n() || eig0.phi1.len() != n || eig1.phi1.len() != n {
        return Err(Error::Dimension { expected: sys.n(), got: n });
    }
    let bound0 = gap_bound(eig0.value, &eig0.phi1, &eig0.phi2);
    let bound1 = gap_bound(eig1.value, &eig1.phi1, &eig1.phi2);
    let phi = [[&eig0.phi1, &eig0.phi2], [&eig1.phi1, &eig1.phi2]];
    let limit_gap = |delta: f64, which: usize| {
        let base = which as f64;
        (0..n)
            .map(|j| jac_gap(sys, j, [base + delta * phi[which][0][j], base + delta * phi[which][1][j]], base))
            .fold(0.0, f64::max)
            * GAMMA_INFLATION
    };
    let mut delta1 = 0.5;
    let mut tries = 0;
    while limit_gap(delta1, 0) > 0.5 * bound0 || limit_gap(delta1, 1) > 0.5 * bound1 {
        delta1 *= 0.5;
        tries += 1;
        if tries > 60 {
            return Err(Error::CutoffSearch(format!(
                "no delta1 found: gaps at the limit states {:.3e} and {:.3e} against budgets {bound0:.3e} and {bound1:.3e}",
                limit_gap(delta1, 0),
                limit_gap(delta1, 1)
            )));
        }
    }
    let cutoff = Cutoff;
    let zs = profile.z_nodes();
    // inflated column suprema over phases and theta
    let column = |k: usize, which: usize| {
        let (chi, _, _) = cutoff.eval(zs[k]);
        let mut g: f64 = 0.0;
        for j in 0..n {
            let (u1, u2) = profile.value(j, k);
            let p = [
                (1.0 - chi) * phi[0][0][j] + chi * phi[1][0][j],
                (1.0 - chi) * phi[0][1][j] + chi * phi[1][1][j],
            ];
            for th in THETA_SAMPLES {
                let u = [u1 + th * delta1 * p[0], u2 + th * delta1 * p[1]];
                g = g.max(jac_gap(sys, j, u, which as f64));
            }
        }
        g * GAMMA_INFLATION
    };
    let g0: Vec<f64> = (0..nz).map(|k| column(k, 0)).collect();
    let g1: Vec<f64> = (0..nz).map(|k| column(k, 1)).collect();
    let mut run = limit_gap(delta1, 0);
    let mut k0 = None;
    for k in 0..nz {
        run = run.max(g0[k]);
        if run > bound0 {
            break;
        }
        k0 = Some(k);
    }
    let mut run = limit_gap(delta1, 1);
    let mut k1 = None;
    for k in (0..nz).rev() {
        run = run.max(g1[k]);
        if run > bound1 {
            break;
        }
        k1 = Some(k);
    }
    let (k0, k1) = match (k0, k1) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::CutoffSearch(format!(
                "table too short for the far-field bounds: edge gaps {:.3e} (budget {bound0:.3e}) and {:.3e} (budget {bound1:.3e})",
                g0[0],
                g1[nz - 1]
            )))
        }
    };
    let dz = profile.meta.dz;
    let xi_hat = (2.0 + dz).max(-zs[k0]).max(zs[k1]);
    if -xi_hat <= zs[0] || xi_hat >= zs[nz - 1] {
        return Err(Error::CutoffSearch(format!(
            "xi_hat = {xi_hat:.4} reaches the end of the table [{:.4}, {:.4}]",
            zs[0],
            zs[nz - 1]
        )));
    }
    let sup0 = (0..nz).filter(|&k| zs[k] <= -xi_hat).map(|k| g0[k]).fold(limit_gap(delta1, 0), f64::max);
    let sup1 = (0..nz).filter(|&k| zs[k] >= xi_hat).map(|k| g1[k]).fold(limit_gap(delta1, 1), f64::max);
    Ok(GammaBounds { delta1, xi_hat, bound0, bound1, sup0, sup1 })
}

/// Every constant of the construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackConstants {
    pub c: f64,
    pub period: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub rho_upper: f64,
    pub rho_lower: f64,
    pub gamma: GammaBounds,
    /// `max d_i`
    pub d: f64,
    /// `max |a_i*|`
    pub a_star: f64,
    /// `max(D1, D2)`
    pub big_d: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub beta0: f64,
    pub delta0: f64,
    pub sigma0: f64,
    pub delta: f64,
    pub z_plus: f64,
    pub z_minus: f64,
}

impl PackConstants {
    /// `min{delta1, |mu0|/(4 D rho*), |mu1|/(4 D rho*), C3/(2 C1)}`
    pub fn delta0_formula(&self) -> f64 {
        let dr = 4.0 * self.big_d * self.rho_upper;
        self.gamma.delta1.min(self.mu0.abs() / dr).min(self.mu1.abs() / dr).min(self.c3 / (2.0 * self.c1))
    }

    /// `2 C1 [|c| + beta0 + 4d + 2a* + delta0 C1 D + C2] / (beta0 C3)`
    pub fn sigma0_lower(&self) -> f64 {
        2.0 * self.c1 * self.core_load() / (self.beta0 * self.c3)
    }

    fn core_load(&self) -> f64 {
        self.c.abs()
            + self.beta0
            + 4.0 * self.d
            + 2.0 * self.a_star
            + self.delta0 * self.c1 * self.big_d
            + self.c2
    }

    /// Lower bound of `N[u+] / (delta E)` on the core from the chain of
    /// estimates: `beta0 sigma0 (C3 - delta C1) - C1 (...)`.
    pub fn core_margin(&self) -> f64 {
        self.beta0 * self.sigma0 * (self.c3 - self.delta * self.c1) - self.c1 * self.core_load()
    }

    /// Far-field lower bound `rho_* |mu| / 4` of `N[u+] / (delta E)`.
    pub fn far_margin(&self, which: usize) -> f64 {
        let mu = if which == 0 { self.mu0 } else { self.mu1 };
        self.rho_lower * mu.abs() / 4.0
    }
}

/// Constants together with the interpolated front and the blend.
#[derive(Clone, Debug)]
pub struct SubSuperPack {
    pub constants: PackConstants,
    pub interp: ProfileInterp,
    pub blend: Blend,
    /// `(D1, D2)` of the extended reaction.
    pub big_d: [f64; 2],
}

/// Options for [`build_pack`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackOptions {
    /// `delta = delta_fraction * delta0`, in `(0, 1]`.
    pub delta_fraction: f64,
    pub z_plus: f64,
    pub z_minus: f64,
}

impl Default for PackOptions {
    fn default() -> Self {
        Self { delta_fraction: DELTA_FRACTION, z_plus: 0.0, z_minus: 0.0 }
    }
}

fn sup_abs(f: &PeriodicFn, samples: usize, order: u32) -> f64 {
    let l = f.period;
    (0..samples)
        .map(|k| {
            let x = l * k as f64 / samples as f64;
            match order {
                0 => f.eval(x),
                1 => f.eval_d1(x),
                _ => f.eval_d2(x),
            }
            .abs()
        })
        .fold(0.0, f64::max)
}

pub fn build_pack(
    profile: &FrontProfile,
    sys: &CooperativeSystem,
    eig0: &CoupledEigenPair,
    eig1: &CoupledEigenPair,
    opts: PackOptions,
) -> Result<SubSuperPack> {
    let c = profile.meta.c;
    if profile.meta.stationary || c.abs() < STATIONARY_SPEED {
        return Err(Error::Precondition(format!("the construction needs a moving front, got c = {c:.3e}")));
    }
    if !(eig0.value < 0.0 && eig1.value < 0.0) {
        return Err(Error::Precondition(format!(
            "both limit states must be linearly stable, got mu0 = {:.3e}, mu1 = {:.3e}",
            eig0.value, eig1.value
        )));
    }
    if !(opts.delta_fraction > 0.0 && opts.delta_fraction <= 1.0) {
        return Err(Error::Invalid(format!("delta fraction must lie in (0, 1], got {}", opts.delta_fraction)));
    }
    let gamma = gamma_bounds(profile, sys, eig0, eig1)?;
    let comps = [&eig0.phi1, &eig0.phi2, &eig1.phi1, &eig1.phi2];
    let rho_upper = comps.iter().map(|v| minmax(v).1).fold(f64::NEG_INFINITY, f64::max);
    let rho_lower = comps.iter().map(|v| minmax(v).0).fold(f64::INFINITY, f64::min);
    let blend = Blend::new(profile.meta.period, eig0, eig1)?;
    // sups over x on a grid 8 times finer than the nodes
    let fine = 8 * sys.n();
    let cut = Cutoff.certify(10_001);
    let mut c1: f64 = 0.0;
    for comp in 0..2 {
        let (a, b) = (&blend.phi[0][comp], &blend.phi[1][comp]);
        let diff = |order| {
            let l = a.period;
            (0..fine)
                .map(|k| {
                    let x = l * k as f64 / fine as f64;
                    match order {
                        0 => b.eval(x) - a.eval(x),
                        _ => b.eval_d1(x) - a.eval_d1(x),
                    }
                    .abs()
                })
                .fold(0.0, f64::max)
        };
        for order in 0..3 {
            c1 = c1.max(sup_abs(a, fine, order)).max(sup_abs(b, fine, order));
        }
        c1 = c1.max(cut.max_d1 * diff(0)).max(cut.max_d1 * diff(1)).max(cut.max_abs_d2 * diff(0));
    }
    let c2 = sys.c2_constant();
    let xi = gamma.xi_hat;
    let zs = profile.z_nodes();
    let dz = profile.meta.dz;
    let mut c3 = f64::INFINITY;
    for k in 1..profile.meta.nz - 1 {
        if zs[k] < -xi || zs[k] > xi {
            continue;
        }
        for j in 0..profile.meta.n {
            let (a1, a2) = profile.value(j, k + 1);
            let (b1, b2) = profile.value(j, k - 1);
            c3 = c3.min((a1 - b1) / (2.0 * dz)).min((a2 - b2) / (2.0 * dz));
        }
    }
    if !(c3 > 0.0) {
        return Err(Error::NotMonotone { min_slope: c3 });
    }
    let maxv = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut k = PackConstants {
        c,
        period: profile.meta.period,
        mu0: eig0.value,
        mu1: eig1.value,
        rho_upper,
        rho_lower,
        gamma,
        d: maxv(&sys.d1).max(maxv(&sys.d2)),
        a_star: maxv(&sys.a1_star).max(maxv(&sys.a2_star)),
        big_d: sys.big_d1.max(sys.big_d2),
        c1,
        c2,
        c3,
        beta0: eig0.value.abs().min(eig1.value.abs()) / 8.0,
        delta0: 0.0,
        sigma0: 0.0,
        delta: 0.0,
        z_plus: opts.z_plus,
        z_minus: opts.z_minus,
    };
    k.delta0 = k.delta0_formula();
    k.sigma0 = SIGMA_SLACK * k.sigma0_lower();
    k.delta = opts.delta_fraction * k.delta0;
    let interp = profile.interp(sys)?;
    Ok(SubSuperPack { constants: k, interp, blend, big_d: [sys.big_d1, sys.big_d2] })
}

/// Supersolution (`Plus`) or subsolution (`Minus`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }
}

/// Value of an envelope; `clamped` is set when the phase left the table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Envelope {
    pub u: [f64; 2],
    pub xi: f64,
    pub clamped: bool,
}

impl SubSuperPack {
    pub fn with_shifts(mut self, z_minus: f64, z_plus: f64) -> Self {
        self.constants.z_minus = z_minus;
        self.constants.z_plus = z_plus;
        self
    }

    /// `xi(t, x)` for one side.
    pub fn phase(&self, side: Side, t: f64, x: f64) -> f64 {
        let k = &self.constants;
        let z = match side {
            Side::Plus => k.z_plus,
            Side::Minus => k.z_minus,
        };
        x + k.c * t + z + side.sign() * k.sigma0 * k.delta * (1.0 - (-k.beta0 * t).exp())
    }

    /// `N[u] = u_t - L* u - F(x, u)` and the front residual at the same
    /// point, both componentwise.
    pub fn operator_at(&self, side: Side, t: f64, x: f64) -> ([f64; 2], [f64; 2]) {
        let k = &self.constants;
        let sg = side.sign();
        let e = (-k.beta0 * t).exp();
        let xi = self.phase(side, t, x);
        let ds = sg * k.sigma0 * k.delta * k.beta0 * e;
        let u = self.interp.eval(x, xi);
        let p = self.blend.eval(x, xi);
        let de = sg * k.delta * e;
        let vals = [u.u[0] + de * p.p[0], u.u[1] + de * p.p[1]];
        let mut ut = [0.0; 2];
        let mut ux = [0.0; 2];
        let mut uxx = [0.0; 2];
        for i in 0..2 {
            ut[i] = (k.c + ds) * (u.uz[i] + de * p.pxi[i]) - de * k.beta0 * p.p[i];
            ux[i] = u.ux[i] + u.uz[i] + de * (p.px[i] + p.pxi[i]);
            uxx[i] = u.uxx[i] + 2.0 * u.uxz[i] + u.uzz[i] + de * (p.pxx[i] + 2.0 * p.pxxi[i] + p.pxixi[i]);
        }
        let out = self.parabolic(x, vals, ut, ux, uxx);
        let r = self.interp.residual_at(x, xi, None);
        (out, r)
    }

    /// `u_t - d u_xx + a* u_x - F(x, u)` from pointwise values, with the
    /// extended reaction `F`.
    pub fn parabolic(&self, x: f64, u: [f64; 2], ut: [f64; 2], ux: [f64; 2], uxx: [f64; 2]) -> [f64; 2] {
        let coef = &self.interp.coef;
        let f = coef.reaction(x, u[0], u[1]);
        let neg = |w: f64| (-w).max(0.0);
        let big = [
            f.0 + self.big_d[0] * neg(u[0]) * u[1],
            f.1 + self.big_d[1] * neg(1.0 - u[1]) * (u[0] - 1.0),
        ];
        [0, 1].map(|i| ut[i] - coef.d[i].eval(x) * uxx[i] + coef.a_star[i].eval(x) * ux[i] - big[i])
    }
}

/// The displayed formula for `u+` or `u-` at `(t, x)`.
pub fn eval_subsuper(pack: &SubSuperPack, side: Side, t: f64, x: f64) -> Envelope {
    let k = &pack.constants;
    let xi = pack.phase(side, t, x);
    let (lo, hi) = pack.interp.z_range();
    let u = pack.interp.eval(x, xi).u;
    let p = pack.blend.value(x, xi);
    let de = side.sign() * k.delta * (-k.beta0 * t).exp();
    Envelope { u: [u[0] + de * p[0], u[1] + de * p[1]], xi, clamped: xi <= lo || xi >= hi }
}

/// Regimes of the proof by the phase `xi`.
pub const BUCKETS: [&str; 3] = ["zero", "core", "one"];

fn bucket(xi: f64, xi_hat: f64) -> usize {
    if xi <= -xi_hat {
        0
    } else if xi >= xi_hat {
        2
    } else {
        1
    }
}

/// Extremes of the operator over one regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub name: String,
    pub count: usize,
    /// `min N[u+]` and where it occurs.
    pub min_super: f64,
    pub at_super: (f64, f64),
    /// `max N[u-]` and where it occurs.
    pub max_sub: f64,
    pub at_sub: (f64, f64),
    /// Same extremes divided by `delta E`.
    pub min_super_scaled: f64,
    pub max_sub_scaled: f64,
    /// Lower bound for `N[u+] / (delta E)` from the chain of estimates.
    pub predicted_scaled: f64,
}

impl BucketStats {
    fn new(name: &str, predicted_scaled: f64) -> Self {
        Self {
            name: name.into(),
            count: 0,
            min_super: f64::INFINITY,
            at_super: (f64::NAN, f64::NAN),
            max_sub: f64::NEG_INFINITY,
            at_sub: (f64::NAN, f64::NAN),
            min_super_scaled: f64::INFINITY,
            max_sub_scaled: f64::NEG_INFINITY,
            predicted_scaled,
        }
    }

    fn merge(&mut self, o: &Self) {
        self.count += o.count;
        if o.min_super < self.min_super {
            self.min_super = o.min_super;
            self.at_super = o.at_super;
        }
        if o.max_sub > self.max_sub {
            self.max_sub = o.max_sub;
            self.at_sub = o.at_sub;
        }
        self.min_super_scaled = self.min_super_scaled.min(o.min_super_scaled);
        self.max_sub_scaled = self.max_sub_scaled.max(o.max_sub_scaled);
    }
}

/// Lattice for [`verify_inequalities`]. At each time the `x` samples are
/// laid out so the phase spans `[-xi_span, xi_span]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub nt: usize,
    pub nx: usize,
    pub t_max: f64,
    pub xi_span: f64,
}

impl Lattice {
    /// `nt x nx` over `t in [0, 2 / beta0]` and phases out to `3 xi_hat`.
    pub fn default_for(pack: &SubSuperPack) -> Self {
        let k = &pack.constants;
        Self { nt: LATTICE_T, nx: LATTICE_X, t_max: 2.0 / k.beta0, xi_span: 3.0 * k.gamma.xi_hat }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub lattice: Lattice,
    /// Largest front residual met on the lattice.
    pub front_residual: f64,
    /// `10 * front_residual + 1e-13`
    pub eps_num: f64,
    pub buckets: Vec<BucketStats>,
    pub passed: bool,
}

/// Evaluates `N[u+]` and `N[u-]` on a `(t, x)` lattice. A point passes
/// when `N[u+] >= -eps_num` and `N[u-] <= eps_num`, with `eps_num` ten
/// times the largest front residual seen.
pub fn verify_inequalities(pack: &SubSuperPack, lattice: Lattice) -> InequalityReport {
    let k = &pack.constants;
    let predicted = [k.far_margin(0), k.core_margin(), k.far_margin(1)];
    let rows: Vec<([BucketStats; 3], f64)> = (0..lattice.nt)
        .into_par_iter()
        .map(|it| {
            let t = lattice.t_max * it as f64 / (lattice.nt - 1).max(1) as f64;
            let scale = k.delta * (-k.beta0 * t).exp();
            let mut stats = [0, 1, 2].map(|b| BucketStats::new(BUCKETS[b], predicted[b]));
            let mut res: f64 = 0.0;
            for ix in 0..lattice.nx {
                let xi = -lattice.xi_span + 2.0 * lattice.xi_span * ix as f64 / (lattice.nx - 1).max(1) as f64;
                for side in [Side::Plus, Side::Minus] {
                    // place x so that this side's phase equals xi
                    let x = xi - (pack.phase(side, t, 0.0));
                    let (n, r) = pack.operator_at(side, t, x);
                    res = res.max(r[0].abs()).max(r[1].abs());
                    let st = &mut stats[bucket(xi, k.gamma.xi_hat)];
                    st.count += 1;
                    match side {
                        Side::Plus => {
                            let v = n[0].min(n[1]);
                            if v < st.min_super {
                                st.min_super = v;
                                st.at_super = (t, x);
                            }
                            st.min_super_scaled = st.min_super_scaled.min(v / scale);
                        }
                        Side::Minus => {
                            let v = n[0].max(n[1]);
                            if v > st.max_sub {
                                st.max_sub = v;
                                st.at_sub = (t, x);
                            }
                            st.max_sub_scaled = st.max_sub_scaled.max(v / scale);
                        }
                    }
                }
            }
            (stats, res)
        })
        .collect();
    let mut buckets = [0, 1, 2].map(|b| BucketStats::new(BUCKETS[b], predicted[b]));
    let mut front_residual: f64 = 0.0;
    for (st, r) in &rows {
        for b in 0..3 {
            buckets[b].merge(&st[b]);
        }
        front_residual = front_residual.max(*r);
    }
    let eps_num = 10.0 * front_residual + 1e-13;
    let passed = buckets.iter().all(|b| b.count > 0 && b.min_super >= -eps_num && b.max_sub <= eps_num);
    InequalityReport { lattice, front_residual, eps_num, buckets: buckets.to_vec(), passed }
}

/// Lab coordinate of node `k` after the state has been recentred by
/// whole periods.
#[derive(Clone, Copy, Debug)]
struct Frame {
    grid: LineGrid,
    offset: f64,
}

impl Frame {
    fn x(&self, k: usize) -> f64 {
        self.grid.x(k) + self.offset
    }

    /// Moves the interface back near the middle by whole periods; returns
    /// the node shift applied to the state.
    fn recenter(&mut self, state: &mut CauchyState) -> Result<i64> {
        let x = state.interface(INTERFACE_LEVEL).ok_or_else(|| Error::Invalid("no interface crossing".into()))?;
        let g = &self.grid;
        let center = 0.5 * (g.x_min() + g.x_max());
        let periods = ((center - x) / g.period).round() as i64;
        if periods.abs() < 2 {
            return Ok(0);
        }
        let nodes = periods * g.per_period as i64;
        state.shift_nodes(nodes);
        self.offset -= periods as f64 * g.period;
        Ok(nodes)
    }

    fn check_margin(&self, state: &CauchyState) -> Result<()> {
        let g = &self.grid;
        let x = state.interface(INTERFACE_LEVEL).ok_or_else(|| Error::Invalid("no interface crossing".into()))?;
        let margin = BOUNDARY_MARGIN_PERIODS * g.period;
        if x - g.x_min() < margin || g.x_max() - x < margin {
            return Err(Error::DomainTooSmall { position: x, margin });
        }
        Ok(())
    }
}

fn envelope_gap(pack: &SubSuperPack, state: &CauchyState, frame: &Frame, side: Side) -> (f64, usize) {
    (0..state.grid.len())
        .into_par_iter()
        .map(|k| {
            let e = eval_subsuper(pack, side, state.t, frame.x(k));
            let d = match side {
                Side::Plus => (state.u1[k] - e.u[0]).max(state.u2[k] - e.u[1]),
                Side::Minus => (e.u[0] - state.u1[k]).max(e.u[1] - state.u2[k]),
            };
            (d, k)
        })
        // ties go to the lower node so the result is deterministic
        .reduce(|| (f64::NEG_INFINITY, usize::MAX), |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a })
}

/// Tightest shifts with `u-(0) <= u0 <= u+(0)` at every node, found by
/// bisection; `pad` is added on both sides for slack.
pub fn bracket_shifts(pack: &SubSuperPack, initial: &CauchyState, pad: f64) -> Result<(f64, f64)> {
    let frame = Frame { grid: initial.grid, offset: 0.0 };
    let mut s0 = initial.clone();
    s0.t = 0.0;
    let width = initial.grid.x_max() - initial.grid.x_min() + pack.interp.z_range().1 - pack.interp.z_range().0;
    let search = |side: Side| -> Result<f64> {
        let ok = |z: f64| {
            let p = match side {
                Side::Plus => pack.clone().with_shifts(0.0, z),
                Side::Minus => pack.clone().with_shifts(z, 0.0),
            };
            envelope_gap(&p, &s0, &frame, side).0 <= 0.0
        };
        let dir = side.sign();
        // `ok` holds far out in the direction `dir`
        let (mut good, mut bad) = (dir * width, -dir * width);
        if !ok(good) {
            return Err(Error::Precondition("initial data cannot be bracketed by the envelopes".into()));
        }
        for _ in 0..80 {
            let mid = 0.5 * (good + bad);
            if ok(mid) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        Ok(good)
    };
    Ok((search(Side::Minus)? - pad, search(Side::Plus)? + pad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub t_total: f64,
    pub dt: f64,
    pub checks: usize,
    /// `max (u - u+)` and `max (u- - u)` over nodes and checked times.
    pub worst_upper: f64,
    pub worst_lower: f64,
    /// Time and lab position of the worst violation.
    pub worst_at: (f64, f64),
    pub ordered_at_start: bool,
    pub violations: usize,
    pub passed: bool,
}

/// Evolves `initial` with the comparison-preserving Euler scheme and the
/// extended reaction, checking `u- <= u <= u+` at every node after every
/// step. The state is recentred by whole periods, which is exact for
/// periodic coefficients.
pub fn sandwich_experiment(
    pack: &SubSuperPack,
    sys: &CooperativeSystem,
    initial: &CauchyState,
    t_total: f64,
    dt: f64,
) -> Result<SandwichReport> {
    let grid = initial.grid;
    let stepper = Stepper::new(sys, grid, dt, true)?;
    let mut state = initial.clone();
    state.t = 0.0;
    let mut frame = Frame { grid, offset: 0.0 };
    frame.check_margin(&state)?;
    let steps = (t_total / dt).ceil() as usize;
    let mut rep = SandwichReport {
        t_total: steps as f64 * dt,
        dt,
        checks: 0,
        worst_upper: f64::NEG_INFINITY,
        worst_lower: f64::NEG_INFINITY,
        worst_at: (0.0, 0.0),
        ordered_at_start: true,
        violations: 0,
        passed: true,
    };
    let mut worst = f64::NEG_INFINITY;
    for n in 0..=steps {
        if n > 0 {
            stepper.step(&mut state)?;
            frame.recenter(&mut state)?;
            frame.check_margin(&state)?;
        }
        let (up, ku) = envelope_gap(pack, &state, &frame, Side::Plus);
        let (lo, kl) = envelope_gap(pack, &state, &frame, Side::Minus);
        rep.checks += 1;
        rep.worst_upper = rep.worst_upper.max(up);
        rep.worst_lower = rep.worst_lower.max(lo);
        if up.max(lo) > SANDWICH_TOL {
            rep.violations += 1;
            if n == 0 {
                rep.ordered_at_start = false;
            }
        }
        if up.max(lo) > worst {
            worst = up.max(lo);
            rep.worst_at = (state.t, frame.x(if up >= lo { ku } else { kl }));
        }
    }
    rep.passed = rep.violations == 0;
    Ok(rep)
}

/// Sup distance over nodes between a lab state and `U(x, x + c t + tau)`.
fn shift_distance(interp: &ProfileInterp, state: &CauchyState, frame: &Frame, tau: f64) -> f64 {
    let ct = interp.c * state.t;
    (0..state.grid.len())
        .into_par_iter()
        .map(|k| {
            let x = frame.x(k);
            let u = interp.eval(x, x + ct + tau).u;
            (state.u1[k] - u[0]).abs().max((state.u2[k] - u[1]).abs())
        })
        .reduce(|| 0.0, f64::max)
}

/// `min over tau` of [`shift_distance`]: a coarse scan over two periods
/// either side of the interface guess, then golden section.
fn best_shift(interp: &ProfileInterp, state: &CauchyState, frame: &Frame, guess: f64) -> (f64, f64) {
    let l = interp.period;
    let f = |tau: f64| shift_distance(interp, state, frame, tau);
    let m = 33;
    let taus: Vec<f64> = (0..m).map(|i| guess - 2.0 * l + 4.0 * l * i as f64 / (m - 1) as f64).collect();
    let vals: Vec<f64> = taus.iter().map(|&t| f(t)).collect();
    let ib = (0..m).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    let (mut a, mut b) = (taus[ib.saturating_sub(1)], taus[(ib + 1).min(m - 1)]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (b - g * (b - a), a + g * (b - a));
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > 1e-10 * l {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    let tau = 0.5 * (a + b);
    let best = [(f(tau), tau), (vals[ib], taus[ib])].into_iter().min_by(|p, q| p.0.total_cmp(&q.0)).unwrap();
    (best.1, best.0)
}

/// One evolution toward the front.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRun {
    pub label: String,
    pub times: Vec<f64>,
    /// Best-shift distance `e(t)`.
    pub errors: Vec<f64>,
    /// Minimizing `tau` at each output time.
    pub shifts: Vec<f64>,
    /// Speed from the interface displacement over whole moving-frame
    /// periods in the second half of the run.
    pub c_measured: f64,
    pub final_error: f64,
    pub final_shift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub c_profile: f64,
    pub t_total: f64,
    pub dt: f64,
    pub tol: f64,
    pub runs: Vec<StabilityRun>,
    /// Largest `|c_measured - c_profile|` and largest pairwise gap.
    pub speed_gap: f64,
    pub pairwise_speed_gap: f64,
    pub passed: bool,
}

impl StabilityReport {
    /// `label, t, error, shift` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["label", "t", "error", "shift"])?;
        for r in &self.runs {
            for i in 0..r.times.len() {
                out.write_record([
                    r.label.clone(),
                    format!("{:.16e}", r.times[i]),
                    format!("{:.16e}", r.errors[i]),
                    format!("{:.16e}", r.shifts[i]),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn evolve_to_front(
    interp: &ProfileInterp,
    sys: &CooperativeSystem,
    label: &str,
    initial: &CauchyState,
    t_total: f64,
    dt: f64,
    outputs: usize,
) -> Result<StabilityRun> {
    let grid = initial.grid;
    let mut integ = Sbdf2::new(sys, grid, dt)?;
    let mut state = initial.clone();
    state.t = 0.0;
    let mut frame = Frame { grid, offset: 0.0 };
    frame.check_margin(&state)?;
    let steps = (t_total / dt).ceil() as usize;
    let every = (steps / outputs.max(1)).max(1);
    let mut run = StabilityRun {
        label: label.into(),
        times: vec![],
        errors: vec![],
        shifts: vec![],
        c_measured: f64::NAN,
        final_error: f64::NAN,
        final_shift: f64::NAN,
    };
    let mut track: Vec<(f64, f64)> = Vec::with_capacity(steps + 1);
    let lab_interface = |s: &CauchyState, fr: &Frame| -> Result<f64> {
        Ok(s.interface(INTERFACE_LEVEL).ok_or_else(|| Error::Invalid("no interface crossing".into()))? + fr.offset)
    };
    for n in 0..=steps {
        if n > 0 {
            integ.step(&mut state)?;
            let shift = frame.recenter(&mut state)?;
            integ.shift_history(shift);
            frame.check_margin(&state)?;
        }
        let x = lab_interface(&state, &frame)?;
        track.push((state.t, x));
        if n % every == 0 || n == steps {
            let guess = -x - interp.c * state.t;
            let (tau, e) = best_shift(interp, &state, &frame, guess);
            run.times.push(state.t);
            run.errors.push(e);
            run.shifts.push(tau);
        }
    }
    run.final_error = *run.errors.last().unwrap_or(&f64::NAN);
    run.final_shift = *run.shifts.last().unwrap_or(&f64::NAN);
    // displacement over whole moving-frame periods cancels the pulsation
    let t_end = track.last().map_or(0.0, |p| p.0);
    let t1 = 0.5 * t_end;
    let per = interp.period / interp.c.abs();
    let k = ((t_end - t1) / per).floor();
    let at = |t: f64| {
        let i = track.partition_point(|p| p.0 < t).clamp(1, track.len() - 1);
        let (a, b) = (track[i - 1], track[i]);
        a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
    };
    if k >= 1.0 {
        let t2 = t1 + k * per;
        run.c_measured = -(at(t2) - at(t1)) / (t2 - t1);
    }
    Ok(run)
}

/// Evolves each initial datum with SBDF2 and tracks the best-shift distance
/// to the front family `U(x, x + c t + tau)`. Runs are independent and
/// evaluated in parallel.
pub fn global_stability_experiment(
    sys: &CooperativeSystem,
    interp: &ProfileInterp,
    initial: &[(String, CauchyState)],
    t_total: f64,
    dt: f64,
    tol: f64,
) -> Result<StabilityReport> {
    if interp.stationary || interp.c.abs() < STATIONARY_SPEED {
        return Err(Error::Precondition("the stability experiment needs a moving front".into()));
    }
    let runs: Vec<StabilityRun> = initial
        .par_iter()
        .map(|(label, s)| evolve_to_front(interp, sys, label, s, t_total, dt, 100))
        .collect::<Result<_>>()?;
    let c = interp.c;
    let speed_gap = runs.iter().map(|r| (r.c_measured - c).abs()).fold(0.0, f64::max);
    let mut pairwise: f64 = 0.0;
    for a in &runs {
        for b in &runs {
            pairwise = pairwise.max((a.c_measured - b.c_measured).abs());
        }
    }
    let passed = !runs.is_empty()
        && runs.iter().all(|r| r.final_error < tol && r.c_measured.is_finite())
        && speed_gap < tol
        && pairwise < tol;
    Ok(StabilityReport { c_profile: c, t_total, dt, tol, runs, speed_gap, pairwise_speed_gap: pairwise, passed })
}
