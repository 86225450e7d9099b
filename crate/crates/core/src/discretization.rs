//! Finite-difference operators `d u'' - a u' + q u` on a periodic cell and
//! on a truncated line with Dirichlet clamps, and their shifted solves.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::periodic_coeffs::PeriodicFn;

/// Uniform periodic grid `x_j = j h`, `h = L / n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    pub period: f64,
    pub n: usize,
}

impl PeriodicGrid {
    pub fn new(period: f64, n: usize) -> Result<Self> {
        if n < 16 {
            return Err(Error::Invalid(format!("periodic grid needs at least 16 points, got {n}")));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::Invalid(format!("period must be positive, got {period}")));
        }
        Ok(Self { period, n })
    }

    pub fn h(&self) -> f64 {
        self.period / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.h();
        (0..self.n).map(|j| j as f64 * h).collect()
    }

    pub fn refined(&self) -> Self {
        Self { period: self.period, n: 2 * self.n }
    }
}

/// Truncated line `[x_min, x_min + periods L)` with `per_period` nodes per
/// period. Node 0 and node `len - 1` are Dirichlet nodes holding the clamps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineGrid {
    pub period: f64,
    /// Left end in units of the period, so phases stay aligned.
    pub start_period: i64,
    pub periods: usize,
    pub per_period: usize,
    /// Clamp values `(u1, u2)` at the left end.
    pub left: [f64; 2],
    /// Clamp values `(u1, u2)` at the right end.
    pub right: [f64; 2],
}

impl LineGrid {
    /// Grid over `[start_period L, (start_period + periods) L)` clamped to
    /// `0` on the left and `1` on the right.
    pub fn new(period: f64, start_period: i64, periods: usize, per_period: usize) -> Result<Self> {
        if per_period < 16 {
            return Err(Error::Invalid(format!("need at least 16 points per period, got {per_period}")));
        }
        if periods * per_period < 512 {
            return Err(Error::Invalid(format!(
                "line grid needs at least 512 points, got {}",
                periods * per_period
            )));
        }
        Ok(Self { period, start_period, periods, per_period, left: [0.0; 2], right: [1.0; 2] })
    }

    /// Grid of `periods` periods centered on `x = 0` (`periods` even).
    pub fn centered(period: f64, periods: usize, per_period: usize) -> Result<Self> {
        Self::new(period, -((periods / 2) as i64), periods, per_period)
    }

    pub fn len(&self) -> usize {
        self.periods * self.per_period
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h(&self) -> f64 {
        self.period / self.per_period as f64
    }

    pub fn x_min(&self) -> f64 {
        self.start_period as f64 * self.period
    }

    pub fn x_max(&self) -> f64 {
        self.x_min() + self.periods as f64 * self.period
    }

    pub fn x(&self, k: usize) -> f64 {
        self.x_min() + k as f64 * self.h()
    }

    /// Index into per-period samples for node `k`.
    pub fn phase(&self, k: usize) -> usize {
        k % self.per_period
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.x(k)).collect()
    }

    pub fn refined(&self) -> Self {
        Self { per_period: 2 * self.per_period, ..*self }
    }

    pub fn cell(&self) -> PeriodicGrid {
        PeriodicGrid { period: self.period, n: self.per_period }
    }
}

/// Advection stencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Centered,
    Upwind,
}

/// Requested stencil; `Auto` is centered with upwind fallback.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    Centered,
    Upwind,
    #[default]
    Auto,
}

/// Tridiagonal operator; in the periodic case `sub[0]` couples row 0 to
/// node `n - 1` and `sup[n - 1]` couples the last row to node 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteOperator {
    pub sub: Vec<f64>,
    pub main: Vec<f64>,
    pub sup: Vec<f64>,
    pub periodic: bool,
    pub scheme: Scheme,
}

fn stencil(d: f64, a: f64, q: f64, h: f64, scheme: Scheme) -> (f64, f64, f64) {
    let diff = d / (h * h);
    match scheme {
        Scheme::Centered => (diff + a / (2.0 * h), -2.0 * diff + q, diff - a / (2.0 * h)),
        Scheme::Upwind => {
            let (ap, am) = (a.max(0.0), (-a).max(0.0));
            (diff + ap / h, -2.0 * diff - (ap + am) / h + q, diff + am / h)
        }
    }
}

fn check_samples(d: &[f64], a: &[f64], q: &[f64]) -> Result<usize> {
    let n = d.len();
    if a.len() != n {
        return Err(Error::Dimension { expected: n, got: a.len() });
    }
    if q.len() != n {
        return Err(Error::Dimension { expected: n, got: q.len() });
    }
    Ok(n)
}

fn resolve_scheme(d: &[f64], a: &[f64], h: f64, choice: SchemeChoice) -> Result<Scheme> {
    let bad = d
        .iter()
        .zip(a)
        .enumerate()
        .map(|(j, (&d, &a))| (j, d / (h * h) - a.abs() / (2.0 * h)))
        .find(|&(_, v)| v < 0.0);
    match (choice, bad) {
        (SchemeChoice::Upwind, _) => Ok(Scheme::Upwind),
        (SchemeChoice::Centered, Some((row, value))) => Err(Error::NotMetzler { row, value }),
        (SchemeChoice::Auto, Some(_)) => Ok(Scheme::Upwind),
        (_, None) => Ok(Scheme::Centered),
    }
}

/// Periodic operator from coefficient samples at the nodes of a cell.
pub fn assemble_periodic_samples(
    d: &[f64],
    a: &[f64],
    q: &[f64],
    h: f64,
    choice: SchemeChoice,
) -> Result<DiscreteOperator> {
    let n = check_samples(d, a, q)?;
    let scheme = resolve_scheme(d, a, h, choice)?;
    let (mut sub, mut main, mut sup) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for j in 0..n {
        let (l, m, r) = stencil(d[j], a[j], q[j], h, scheme);
        sub[j] = l;
        main[j] = m;
        sup[j] = r;
    }
    Ok(DiscreteOperator { sub, main, sup, periodic: true, scheme })
}

pub fn assemble_periodic(
    d: &PeriodicFn,
    a: &PeriodicFn,
    q: &PeriodicFn,
    grid: &PeriodicGrid,
    choice: SchemeChoice,
) -> Result<DiscreteOperator> {
    assemble_periodic_samples(&d.sample(grid.n), &a.sample(grid.n), &q.sample(grid.n), grid.h(), choice)
}

/// Line operator from per-period coefficient samples; boundary rows are zero.
pub fn assemble_line_samples(
    d: &[f64],
    a: &[f64],
    q: &[f64],
    grid: &LineGrid,
    choice: SchemeChoice,
) -> Result<DiscreteOperator> {
    let n = check_samples(d, a, q)?;
    if n != grid.per_period {
        return Err(Error::Dimension { expected: grid.per_period, got: n });
    }
    let cell = assemble_periodic_samples(d, a, q, grid.h(), choice)?;
    let m = grid.len();
    let (mut sub, mut main, mut sup) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for k in 1..m - 1 {
        let p = grid.phase(k);
        sub[k] = cell.sub[p];
        main[k] = cell.main[p];
        sup[k] = cell.sup[p];
    }
    Ok(DiscreteOperator { sub, main, sup, periodic: false, scheme: cell.scheme })
}

pub fn assemble_line(
    d: &PeriodicFn,
    a: &PeriodicFn,
    q: &PeriodicFn,
    grid: &LineGrid,
    choice: SchemeChoice,
) -> Result<DiscreteOperator> {
    let n = grid.per_period;
    assemble_line_samples(&d.sample(n), &a.sample(n), &q.sample(n), grid, choice)
}

impl DiscreteOperator {
    pub fn dim(&self) -> usize {
        self.main.len()
    }

    /// `(row 0 -> node n-1, row n-1 -> node 0)`; zero for line operators.
    pub fn wrap_entries(&self) -> (f64, f64) {
        if self.periodic {
            (self.sub[0], self.sup[self.dim() - 1])
        } else {
            (0.0, 0.0)
        }
    }

    /// Smallest off-diagonal entry; nonnegative means Metzler.
    pub fn min_offdiag(&self) -> f64 {
        let n = self.dim();
        let range = if self.periodic { 0..n } else { 1..n - 1 };
        range.map(|j| self.sub[j].min(self.sup[j])).fold(f64::INFINITY, f64::min)
    }

    /// Largest row sum, an upper bound on the Perron root of a Metzler operator.
    pub fn max_row_sum(&self) -> f64 {
        (0..self.dim()).map(|j| self.sub[j] + self.main[j] + self.sup[j]).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.dim())
            .map(|j| self.sub[j].abs() + self.main[j].abs() + self.sup[j].abs())
            .fold(0.0, f64::max)
    }

    /// Adds `shift[j]` to the diagonal.
    pub fn with_potential(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: shift.len() });
        }
        let mut out = self.clone();
        let range = if self.periodic { 0..self.dim() } else { 1..self.dim() - 1 };
        for j in range {
            out.main[j] += shift[j];
        }
        Ok(out)
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(u, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        if u.len() != n {
            return Err(Error::Dimension { expected: n, got: u.len() });
        }
        if out.len() != n {
            return Err(Error::Dimension { expected: n, got: out.len() });
        }
        for j in 1..n - 1 {
            out[j] = self.sub[j] * u[j - 1] + self.main[j] * u[j] + self.sup[j] * u[j + 1];
        }
        if self.periodic {
            out[0] = self.sub[0] * u[n - 1] + self.main[0] * u[0] + self.sup[0] * u[1];
            out[n - 1] = self.sub[n - 1] * u[n - 2] + self.main[n - 1] * u[n - 1] + self.sup[n - 1] * u[0];
        } else {
            out[0] = self.main[0] * u[0] + self.sup[0] * u[1];
            out[n - 1] = self.sub[n - 1] * u[n - 2] + self.main[n - 1] * u[n - 1];
        }
        Ok(())
    }

    /// Dense copy, row-major.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut m = vec![vec![0.0; n]; n];
        for j in 0..n {
            m[j][j] += self.main[j];
            if j > 0 {
                m[j][j - 1] += self.sub[j];
            } else if self.periodic {
                m[j][n - 1] += self.sub[j];
            }
            if j + 1 < n {
                m[j][j + 1] += self.sup[j];
            } else if self.periodic {
                m[j][0] += self.sup[j];
            }
        }
        m
    }

    /// Coordinate-format dump, one `row col value` triple per line.
    pub fn to_coo(&self) -> String {
        let mut s = String::new();
        for (i, row) in self.to_dense().iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if *v != 0.0 {
                    let _ = writeln!(s, "{i} {j} {v:.17e}");
                }
            }
        }
        s
    }

    pub fn factor_shifted(&self, sigma: f64) -> Result<ShiftedFactor> {
        ShiftedFactor::new(self, sigma)
    }

    /// Solves `(sigma I - self) u = rhs`.
    pub fn solve_shifted(&self, sigma: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        let f = self.factor_shifted(sigma)?;
        let mut out = vec![0.0; self.dim()];
        f.solve_into(rhs, &mut out)?;
        Ok(out)
    }
}

/// LU factors of `sigma I - opr` for repeated solves. Periodic operators use
/// the Sherman-Morrison correction of the cyclic system.
#[derive(Clone, Debug)]
pub struct ShiftedFactor {
    // Thomas elimination of the tridiagonal part: a (sub), c' and 1/b'.
    a: Vec<f64>,
    cp: Vec<f64>,
    inv_b: Vec<f64>,
    // cyclic correction
    cyclic: Option<Cyclic>,
}

#[derive(Clone, Debug)]
struct Cyclic {
    gamma: f64,
    top_right: f64,
    z: Vec<f64>,
    denom: f64,
}

impl ShiftedFactor {
    fn new(op: &DiscreteOperator, sigma: f64) -> Result<Self> {
        let n = op.dim();
        let a: Vec<f64> = op.sub.iter().map(|v| -v).collect();
        let c: Vec<f64> = op.sup.iter().map(|v| -v).collect();
        let mut b: Vec<f64> = op.main.iter().map(|v| sigma - v).collect();
        let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max) + op.norm_inf();
        let mut cyclic = None;
        let (mut gamma, mut top_right, mut bottom_left) = (0.0, 0.0, 0.0);
        if op.periodic {
            top_right = a[0];
            bottom_left = c[n - 1];
            gamma = -b[0];
            if gamma == 0.0 {
                gamma = -1.0;
            }
            b[0] -= gamma;
            b[n - 1] -= bottom_left * top_right / gamma;
        }
        let mut cp = vec![0.0; n];
        let mut inv_b = vec![0.0; n];
        for j in 0..n {
            let lower = if j == 0 { 0.0 } else { a[j] };
            let denom = b[j] - lower * if j == 0 { 0.0 } else { cp[j - 1] };
            if !(denom.abs() > 1e-14 * scale) {
                return Err(Error::Singular { pivot: denom, condition: scale / denom.abs().max(f64::MIN_POSITIVE) });
            }
            inv_b[j] = 1.0 / denom;
            cp[j] = if j + 1 < n { c[j] * inv_b[j] } else { 0.0 };
        }
        let mut f = Self { a, cp, inv_b, cyclic: None };
        if op.periodic {
            let mut u = vec![0.0; n];
            u[0] = gamma;
            u[n - 1] = bottom_left;
            let mut z = vec![0.0; n];
            f.thomas(&u, &mut z);
            let denom = 1.0 + z[0] + top_right * z[n - 1] / gamma;
            if !(denom.abs() > 1e-13) {
                return Err(Error::Singular { pivot: denom, condition: 1.0 / denom.abs().max(f64::MIN_POSITIVE) });
            }
            cyclic = Some(Cyclic { gamma, top_right, z, denom });
        }
        f.cyclic = cyclic;
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.inv_b.len()
    }

    fn thomas(&self, rhs: &[f64], out: &mut [f64]) {
        let n = self.dim();
        out[0] = rhs[0] * self.inv_b[0];
        for j in 1..n {
            out[j] = (rhs[j] - self.a[j] * out[j - 1]) * self.inv_b[j];
        }
        for j in (0..n - 1).rev() {
            out[j] -= self.cp[j] * out[j + 1];
        }
    }

    pub fn solve_into(&self, rhs: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        if rhs.len() != n {
            return Err(Error::Dimension { expected: n, got: rhs.len() });
        }
        if out.len() != n {
            return Err(Error::Dimension { expected: n, got: out.len() });
        }
        self.thomas(rhs, out);
        if let Some(cy) = &self.cyclic {
            let fact = (out[0] + cy.top_right * out[n - 1] / cy.gamma) / cy.denom;
            for (o, z) in out.iter_mut().zip(&cy.z) {
                *o -= fact * z;
            }
        }
        Ok(())
    }
}
