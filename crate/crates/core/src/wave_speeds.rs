//! Spreading speeds `inf_{mu > 0} lambda(+-mu) / mu` by golden-section
//! search in `log mu`, and the speed conditions built from them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cooperative_transform::CooperativeSystem;
use crate::discretization::SchemeChoice;
use crate::error::{Error, Result};
use crate::spectral::{lambda_of_mu_samples, mu_family_coexistence};

pub const MU_MIN: f64 = 1e-4;
/// Final bracket width in `mu`.
pub const BRACKET_TOL: f64 = 1e-8;
/// Log-spaced samples used for the unimodality check.
pub const UNIMODAL_SAMPLES: usize = 16;
/// A sum of speeds passes when it exceeds this.
pub const SPEED_MARGIN: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// `inf lambda(mu) / mu`
    Rightward,
    /// `inf lambda(-mu) / mu`
    Leftward,
}

impl Orientation {
    fn sign(self) -> f64 {
        match self {
            Orientation::Rightward => 1.0,
            Orientation::Leftward => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedResult {
    pub c_star: f64,
    pub mu_star: f64,
    /// `(mu, lambda(+-mu), lambda(+-mu) / mu)` for every evaluation.
    pub samples: Vec<(f64, f64, f64)>,
    pub bracket: (f64, f64),
    pub orientation: Orientation,
}

impl SpeedResult {
    /// `mu, lambda, ratio` rows.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["mu", "lambda", "ratio"])?;
        let mut rows = self.samples.clone();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (m, l, r) in rows {
            out.write_record([format!("{m:.16e}"), format!("{l:.16e}"), format!("{r:.16e}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A `mu`-parameterized principal eigenvalue.
pub trait DispersionFamily: Sync {
    /// `lambda(mu)` with its eigenvector, optionally warm-started.
    fn eval(&self, mu: f64, warm: Option<&[f64]>) -> Result<(f64, Vec<f64>)>;
}

/// Scalar tilted operator from node samples.
#[derive(Clone, Debug)]
pub struct ScalarFamily {
    pub d: Vec<f64>,
    pub a: Vec<f64>,
    pub q: Vec<f64>,
    pub h: f64,
    pub scheme: SchemeChoice,
}

impl ScalarFamily {
    pub fn new(d: &[f64], a: &[f64], q: &[f64], h: f64) -> Self {
        Self { d: d.to_vec(), a: a.to_vec(), q: q.to_vec(), h, scheme: SchemeChoice::Auto }
    }

    /// Constant coefficients on a 64-point unit cell.
    pub fn constant(d: f64, a: f64, q: f64) -> Self {
        let n = 64;
        Self::new(&vec![d; n], &vec![a; n], &vec![q; n], 1.0 / n as f64)
    }
}

impl DispersionFamily for ScalarFamily {
    fn eval(&self, mu: f64, warm: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
        let e = lambda_of_mu_samples(&self.d, &self.a, &self.q, mu, self.h, self.scheme, warm)?;
        Ok((e.value, e.eigenfunction))
    }
}

/// Coupled linearization at a coexistence state.
pub struct CoupledFamily<'a> {
    pub sys: &'a CooperativeSystem,
    pub u1: &'a [f64],
    pub u2: &'a [f64],
}

impl DispersionFamily for CoupledFamily<'_> {
    fn eval(&self, mu: f64, warm: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
        let e = mu_family_coexistence(self.sys, self.u1, self.u2, mu, warm)?;
        let v = e.phi1.iter().chain(&e.phi2).copied().collect();
        Ok((e.value, v))
    }
}

/// Minimal speed of `family` in the given direction.
pub fn minimal_speed<F: DispersionFamily + ?Sized>(family: &F, orientation: Orientation) -> Result<SpeedResult> {
    let s = orientation.sign();
    let (l0, mut warm) = family.eval(0.0, None)?;
    if l0 <= 0.0 {
        return Err(Error::Precondition(format!("lambda(0) = {l0:.6e} must be positive for a spreading speed")));
    }
    let mut samples = Vec::new();
    let eval = |mu: f64, warm: &mut Vec<f64>, samples: &mut Vec<(f64, f64, f64)>| -> Result<f64> {
        let (l, v) = family.eval(s * mu, Some(warm))?;
        *warm = v;
        let r = l / mu;
        samples.push((mu, l, r));
        Ok(r)
    };

    // right end: double until the ratio turns up
    let mut hi = 1.0;
    let mut g_hi = eval(hi, &mut warm, &mut samples)?;
    loop {
        let g2 = eval(2.0 * hi, &mut warm, &mut samples)?;
        if g2 >= g_hi {
            hi *= 2.0;
            break;
        }
        hi *= 2.0;
        g_hi = g2;
        if hi > 1e8 {
            return Err(Error::NoConvergence { what: "speed bracket expansion".into(), iterations: 27, residual: g2 });
        }
    }
    let (llo, lhi) = (MU_MIN.ln(), hi.ln());

    // unimodality on a log-spaced sample, evaluated in parallel without warm starts
    let grid: Vec<f64> = (0..UNIMODAL_SAMPLES)
        .map(|k| (llo + (lhi - llo) * k as f64 / (UNIMODAL_SAMPLES - 1) as f64).exp())
        .collect();
    let vals: Vec<f64> = grid
        .par_iter()
        .map(|&mu| family.eval(s * mu, None).map(|(l, _)| l))
        .collect::<Result<_>>()?;
    let ratios: Vec<f64> = grid.iter().zip(&vals).map(|(m, l)| l / m).collect();
    for k in 1..UNIMODAL_SAMPLES - 1 {
        let tol = 1e-9 * (1.0 + ratios[k].abs());
        if ratios[k] > ratios[k - 1].max(ratios[k + 1]) + tol {
            return Err(Error::NotUnimodal {
                mus: [grid[k - 1], grid[k], grid[k + 1]],
                ratios: [ratios[k - 1], ratios[k], ratios[k + 1]],
            });
        }
    }
    for (k, &mu) in grid.iter().enumerate() {
        samples.push((mu, vals[k], ratios[k]));
    }
    // narrow to the neighbours of the best sample before golden section
    let kbest = (0..UNIMODAL_SAMPLES).min_by(|&i, &j| ratios[i].total_cmp(&ratios[j])).unwrap_or(0);
    let mut a = grid[kbest.saturating_sub(1)].ln();
    let mut b = grid[(kbest + 1).min(UNIMODAL_SAMPLES - 1)].ln();
    warm = family.eval(s * grid[kbest], None)?.1;

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = eval(x1.exp(), &mut warm, &mut samples)?;
    let mut f2 = eval(x2.exp(), &mut warm, &mut samples)?;
    let mut iters = 0;
    while b.exp() - a.exp() > BRACKET_TOL {
        iters += 1;
        if iters > 200 {
            return Err(Error::NoConvergence { what: "golden-section speed search".into(), iterations: iters, residual: b.exp() - a.exp() });
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = eval(x1.exp(), &mut warm, &mut samples)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = eval(x2.exp(), &mut warm, &mut samples)?;
        }
    }
    let best = samples.iter().copied().min_by(|p, q| p.2.total_cmp(&q.2)).ok_or(Error::Invalid("no samples".into()))?;
    let bracket = (a.exp(), b.exp());
    let (mu_star, _, c_star) = best;
    if mu_star <= MU_MIN * (1.0 + 1e-9) || mu_star >= hi * (1.0 - 1e-9) {
        return Err(Error::Precondition(format!("minimizing mu = {mu_star:.6e} is clamped at the search boundary")));
    }
    Ok(SpeedResult { c_star, mu_star, samples, bracket, orientation })
}

/// The speed-sum condition and its mirror.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct B2Report {
    /// Leftward speed of the first species, potential `a11*`.
    pub c1_minus: SpeedResult,
    /// Rightward speed of the second species, potential `a22*`.
    pub c2_plus: SpeedResult,
    pub sum: f64,
    pub pass: bool,
    pub c1_plus: f64,
    pub c2_minus: f64,
    pub mirror_sum: f64,
    pub mirror_pass: bool,
}

pub fn check_b2(sys: &CooperativeSystem) -> Result<B2Report> {
    let h = sys.h();
    let f1 = ScalarFamily { scheme: sys.scheme, ..ScalarFamily::new(&sys.d1, &sys.a1_star, &sys.a11_star, h) };
    let f2 = ScalarFamily { scheme: sys.scheme, ..ScalarFamily::new(&sys.d2, &sys.a2_star, &sys.a22_star, h) };
    let c1_minus = minimal_speed(&f1, Orientation::Leftward)?;
    let c2_plus = minimal_speed(&f2, Orientation::Rightward)?;
    let c1_plus = minimal_speed(&f1, Orientation::Rightward)?.c_star;
    let c2_minus = minimal_speed(&f2, Orientation::Leftward)?.c_star;
    let sum = c1_minus.c_star + c2_plus.c_star;
    let mirror_sum = c1_plus + c2_minus;
    Ok(B2Report {
        c1_minus,
        c2_plus,
        sum,
        pass: sum > SPEED_MARGIN,
        c1_plus,
        c2_minus,
        mirror_sum,
        mirror_pass: mirror_sum > SPEED_MARGIN,
    })
}

/// Lower bounds on the two spreading speeds out of a coexistence state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterPropagation {
    pub c_plus_lb: f64,
    pub c_minus_lb: f64,
    pub mu_plus: f64,
    pub mu_minus: f64,
    pub sum: f64,
    pub lambda_hat: f64,
    /// `(mu1 + mu2) / (mu1 mu2) lambda_hat`
    pub convexity_bound: f64,
    pub pass: bool,
}

pub fn counter_propagation(sys: &CooperativeSystem, u1: &[f64], u2: &[f64]) -> Result<CounterPropagation> {
    let fam = CoupledFamily { sys, u1, u2 };
    let lambda_hat = fam.eval(0.0, None)?.0;
    if lambda_hat <= 0.0 {
        return Err(Error::Precondition(format!("coexistence state is not unstable (lambda_hat = {lambda_hat:.3e})")));
    }
    let plus = minimal_speed(&fam, Orientation::Rightward)?;
    let minus = minimal_speed(&fam, Orientation::Leftward)?;
    let sum = plus.c_star + minus.c_star;
    let (m1, m2) = (plus.mu_star, minus.mu_star);
    let bound = (m1 + m2) / (m1 * m2) * lambda_hat;
    Ok(CounterPropagation {
        c_plus_lb: plus.c_star,
        c_minus_lb: minus.c_star,
        mu_plus: m1,
        mu_minus: m2,
        sum,
        lambda_hat,
        convexity_bound: bound,
        pass: sum > 0.0 && sum >= bound - 1e-8,
    })
}
