//! Change of variables `u1 -> u1 / u1*`, `u2 -> (u2* - u2) / u2*` that turns
//! the competition system into a cooperative one connecting `0` to `1`,
//! plus its reaction terms and the extended reaction on `[-1, 2]^2`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::discretization::{
    assemble_line_samples, assemble_periodic_samples, DiscreteOperator, LineGrid, PeriodicGrid,
    SchemeChoice,
};
use crate::error::{Error, Result};
use crate::periodic_coeffs::{spectral_derivative, CompetitionSystem, PeriodicFn};

/// Lower and upper edge of the extended box.
pub const BOX_LO: f64 = -1.0;
pub const BOX_HI: f64 = 2.0;

/// Transformed coefficients sampled on the nodes of one period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooperativeSystem {
    pub period: f64,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub a1_star: Vec<f64>,
    pub a2_star: Vec<f64>,
    pub a11_star: Vec<f64>,
    pub a12_star: Vec<f64>,
    pub a21_star: Vec<f64>,
    pub a22_star: Vec<f64>,
    pub u1_star: Vec<f64>,
    pub u2_star: Vec<f64>,
    /// `max a12*`
    pub big_d1: f64,
    /// `max a21*`
    pub big_d2: f64,
    #[serde(default)]
    pub scheme: SchemeChoice,
}

/// Builds the cooperative system from sampled semitrivial states.
pub fn transform(
    s: &CompetitionSystem,
    u1_star: &[f64],
    u2_star: &[f64],
    grid: &PeriodicGrid,
) -> Result<CooperativeSystem> {
    let n = grid.n;
    for u in [u1_star, u2_star] {
        if u.len() != n {
            return Err(Error::Dimension { expected: n, got: u.len() });
        }
    }
    for (name, u) in [("u1*", u1_star), ("u2*", u2_star)] {
        if let Some((j, &v)) = u.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::Invalid(format!(
                "{name} is not positive at node {j} (value {v:.3e}); cannot divide by it"
            )));
        }
    }
    let drift = |a: &PeriodicFn, d: &PeriodicFn, u: &[f64]| -> Vec<f64> {
        let du = spectral_derivative(s.period, u);
        let (a, d) = (a.sample(n), d.sample(n));
        (0..n).map(|j| a[j] - 2.0 * d[j] * du[j] / u[j]).collect()
    };
    let times = |c: &PeriodicFn, u: &[f64]| -> Vec<f64> {
        c.sample(n).iter().zip(u).map(|(c, u)| c * u).collect()
    };
    CooperativeSystem::from_samples(
        s.period,
        s.d1.sample(n),
        s.d2.sample(n),
        drift(&s.a1, &s.d1, u1_star),
        drift(&s.a2, &s.d2, u2_star),
        times(&s.a11, u1_star),
        times(&s.a12, u2_star),
        times(&s.a21, u1_star),
        times(&s.a22, u2_star),
        u1_star.to_vec(),
        u2_star.to_vec(),
    )
}

/// Two ordered species values at one node.
pub type Pair = (f64, f64);

/// Jacobian `[[df1/du1, df1/du2], [df2/du1, df2/du2]]`.
pub type Jacobian = [[f64; 2]; 2];

impl CooperativeSystem {
    /// Direct construction from node samples, checking lengths and signs.
    #[allow(clippy::too_many_arguments)]
    pub fn from_samples(
        period: f64,
        d1: Vec<f64>,
        d2: Vec<f64>,
        a1_star: Vec<f64>,
        a2_star: Vec<f64>,
        a11_star: Vec<f64>,
        a12_star: Vec<f64>,
        a21_star: Vec<f64>,
        a22_star: Vec<f64>,
        u1_star: Vec<f64>,
        u2_star: Vec<f64>,
    ) -> Result<Self> {
        let n = d1.len();
        for v in [&d2, &a1_star, &a2_star, &a11_star, &a12_star, &a21_star, &a22_star, &u1_star, &u2_star] {
            if v.len() != n {
                return Err(Error::Dimension { expected: n, got: v.len() });
            }
        }
        for (name, v) in [
            ("d1", &d1),
            ("d2", &d2),
            ("a11*", &a11_star),
            ("a12*", &a12_star),
            ("a21*", &a21_star),
            ("a22*", &a22_star),
        ] {
            if let Some((j, &x)) = v.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
                return Err(Error::NotPositive {
                    coefficient: name.into(),
                    x: j as f64 * period / n as f64,
                    value: x,
                });
            }
        }
        let big_d1 = a12_star.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let big_d2 = a21_star.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            period,
            d1,
            d2,
            a1_star,
            a2_star,
            a11_star,
            a12_star,
            a21_star,
            a22_star,
            u1_star,
            u2_star,
            big_d1,
            big_d2,
            scheme: SchemeChoice::Auto,
        })
    }

    /// Constant coefficients with `u* = (b1 / a11, b2 / a22)`.
    pub fn from_constants(s: &CompetitionSystem, n: usize) -> Result<Self> {
        let grid = PeriodicGrid::new(s.period, n)?;
        let u1 = vec![s.b1.mean / s.a11.mean; n];
        let u2 = vec![s.b2.mean / s.a22.mean; n];
        transform(s, &u1, &u2, &grid)
    }

    pub fn n(&self) -> usize {
        self.d1.len()
    }

    pub fn grid(&self) -> PeriodicGrid {
        PeriodicGrid { period: self.period, n: self.n() }
    }

    pub fn h(&self) -> f64 {
        self.period / self.n() as f64
    }

    pub fn d(&self, i: usize) -> &[f64] {
        if i == 0 { &self.d1 } else { &self.d2 }
    }

    pub fn a_star(&self, i: usize) -> &[f64] {
        if i == 0 { &self.a1_star } else { &self.a2_star }
    }

    /// Periodic operator `d_i u'' - a_i* u' + q u` for species `i` (0 or 1).
    pub fn periodic_operator(&self, i: usize, q: &[f64]) -> Result<DiscreteOperator> {
        assemble_periodic_samples(self.d(i), self.a_star(i), q, self.h(), self.scheme)
    }

    /// Line operator without potential for species `i`.
    pub fn line_operator(&self, i: usize, grid: &LineGrid) -> Result<DiscreteOperator> {
        if grid.per_period != self.n() || grid.period != self.period {
            return Err(Error::Dimension { expected: self.n(), got: grid.per_period });
        }
        assemble_line_samples(self.d(i), self.a_star(i), &vec![0.0; self.n()], grid, self.scheme)
    }

    /// `(f1, f2)` at node `j` (taken modulo the period).
    pub fn reaction(&self, j: usize, u1: f64, u2: f64) -> Pair {
        let j = j % self.n();
        let f1 = u1 * (self.a11_star[j] * (1.0 - u1) - self.a12_star[j] * (1.0 - u2));
        let f2 = (1.0 - u2) * (self.a21_star[j] * u1 - self.a22_star[j] * u2);
        (f1, f2)
    }

    /// `(F1, F2)`; rejects states outside `[-1, 2]^2`.
    pub fn reaction_extended(&self, j: usize, u1: f64, u2: f64) -> Result<Pair> {
        if !in_box(u1, u2) {
            return Err(Error::OutOfBox { node: j, u1, u2 });
        }
        Ok(self.reaction_extended_unchecked(j, u1, u2))
    }

    pub(crate) fn reaction_extended_unchecked(&self, j: usize, u1: f64, u2: f64) -> Pair {
        let (f1, f2) = self.reaction(j, u1, u2);
        let neg = |w: f64| (-w).max(0.0);
        (f1 + self.big_d1 * neg(u1) * u2, f2 + self.big_d2 * neg(1.0 - u2) * (u1 - 1.0))
    }

    /// Analytic Jacobian of `(f1, f2)`.
    pub fn reaction_partials(&self, j: usize, u1: f64, u2: f64) -> Jacobian {
        let j = j % self.n();
        let (a11, a12, a21, a22) = (self.a11_star[j], self.a12_star[j], self.a21_star[j], self.a22_star[j]);
        [
            [a11 * (1.0 - 2.0 * u1) - a12 * (1.0 - u2), a12 * u1],
            [a21 * (1.0 - u2), -a21 * u1 + a22 * (2.0 * u2 - 1.0)],
        ]
    }

    /// Jacobian of `(F1, F2)` on the piece containing `(u1, u2)`.
    pub fn reaction_extended_partials(&self, j: usize, u1: f64, u2: f64) -> Jacobian {
        self.piece_partials(j, u1, u2, u1 < 0.0, u2 > 1.0)
    }

    // Affine extension of one piece of the extended Jacobian.
    fn piece_partials(&self, j: usize, u1: f64, u2: f64, neg1: bool, over2: bool) -> Jacobian {
        let mut m = self.reaction_partials(j, u1, u2);
        if neg1 {
            m[0][0] -= self.big_d1 * u2;
            m[0][1] -= self.big_d1 * u1;
        }
        if over2 {
            m[1][0] += self.big_d2 * (u2 - 1.0);
            m[1][1] += self.big_d2 * (u1 - 1.0);
        }
        m
    }

    /// Largest absolute row sum of the reaction Jacobian over all nodes and
    /// the box `[0,1]^2` (standard) or `[-1,2]^2` (extended). Partials are
    /// affine on each piece, so piece corners suffice.
    pub fn lipschitz_bound(&self, extended: bool) -> f64 {
        let pieces: Vec<([f64; 2], [f64; 2], bool, bool)> = if extended {
            vec![
                ([-1.0, 0.0], [-1.0, 1.0], true, false),
                ([-1.0, 0.0], [1.0, 2.0], true, true),
                ([0.0, 2.0], [-1.0, 1.0], false, false),
                ([0.0, 2.0], [1.0, 2.0], false, true),
            ]
        } else {
            vec![([0.0, 1.0], [0.0, 1.0], false, false)]
        };
        let mut big: f64 = 0.0;
        for j in 0..self.n() {
            for (r1, r2, neg1, over2) in &pieces {
                for &u1 in r1 {
                    for &u2 in r2 {
                        for row in self.piece_partials(j, u1, u2, *neg1, *over2) {
                            big = big.max(row[0].abs() + row[1].abs());
                        }
                    }
                }
            }
        }
        big
    }

    /// `sup sum_ij |df_i/du_j|` over nodes and the extended box. The sum of
    /// absolute affine functions is convex, so the box corners suffice.
    pub fn c2_constant(&self) -> f64 {
        let mut big: f64 = 0.0;
        for j in 0..self.n() {
            for u1 in [BOX_LO, BOX_HI] {
                for u2 in [BOX_LO, BOX_HI] {
                    let m = self.reaction_partials(j, u1, u2);
                    big = big.max(m.iter().flatten().map(|v| v.abs()).sum());
                }
            }
        }
        big
    }

    /// Inverse change of variables at the nodes of one period (indices wrap).
    pub fn to_original(&self, u1_tilde: &[f64], u2_tilde: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if u1_tilde.len() != u2_tilde.len() {
            return Err(Error::Dimension { expected: u1_tilde.len(), got: u2_tilde.len() });
        }
        let n = self.n();
        let u1 = u1_tilde.iter().enumerate().map(|(j, v)| v * self.u1_star[j % n]).collect();
        let u2 = u2_tilde.iter().enumerate().map(|(j, v)| (1.0 - v) * self.u2_star[j % n]).collect();
        Ok((u1, u2))
    }

    /// Forward change of variables for states in original coordinates.
    pub fn from_original(&self, u1: &[f64], u2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if u1.len() != u2.len() {
            return Err(Error::Dimension { expected: u1.len(), got: u2.len() });
        }
        let n = self.n();
        let t1 = u1.iter().enumerate().map(|(j, v)| v / self.u1_star[j % n]).collect();
        let t2 = u2.iter().enumerate().map(|(j, v)| (self.u2_star[j % n] - v) / self.u2_star[j % n]).collect();
        Ok((t1, t2))
    }

    /// Trigonometric interpolants of the node samples, for off-grid use.
    pub fn interpolants(&self) -> Result<CoefficientInterpolants> {
        let f = |v: &[f64]| PeriodicFn::interpolate(self.period, v);
        Ok(CoefficientInterpolants {
            d: [f(&self.d1)?, f(&self.d2)?],
            a_star: [f(&self.a1_star)?, f(&self.a2_star)?],
            a11: f(&self.a11_star)?,
            a12: f(&self.a12_star)?,
            a21: f(&self.a21_star)?,
            a22: f(&self.a22_star)?,
        })
    }

    /// One row per node: `x, d1, d2, a1*, a2*, a11*, a12*, a21*, a22*, u1*, u2*`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "d1", "d2", "a1_star", "a2_star", "a11_star", "a12_star", "a21_star", "a22_star", "u1_star", "u2_star"])?;
        for j in 0..self.n() {
            let row = [
                j as f64 * self.h(),
                self.d1[j],
                self.d2[j],
                self.a1_star[j],
                self.a2_star[j],
                self.a11_star[j],
                self.a12_star[j],
                self.a21_star[j],
                self.a22_star[j],
                self.u1_star[j],
                self.u2_star[j],
            ];
            out.write_record(row.iter().map(|v| format!("{v:.16e}")))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Continuous versions of the sampled coefficients.
#[derive(Clone, Debug)]
pub struct CoefficientInterpolants {
    pub d: [PeriodicFn; 2],
    pub a_star: [PeriodicFn; 2],
    pub a11: PeriodicFn,
    pub a12: PeriodicFn,
    pub a21: PeriodicFn,
    pub a22: PeriodicFn,
}

impl CoefficientInterpolants {
    pub fn reaction(&self, x: f64, u1: f64, u2: f64) -> Pair {
        let f1 = u1 * (self.a11.eval(x) * (1.0 - u1) - self.a12.eval(x) * (1.0 - u2));
        let f2 = (1.0 - u2) * (self.a21.eval(x) * u1 - self.a22.eval(x) * u2);
        (f1, f2)
    }
}

pub fn in_box(u1: f64, u2: f64) -> bool {
    (BOX_LO..=BOX_HI).contains(&u1) && (BOX_LO..=BOX_HI).contains(&u2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric() -> CooperativeSystem {
        CooperativeSystem::from_constants(&CompetitionSystem::unit_constants(1.0, 1.5, 1.5, 1.0), 32).unwrap()
    }

    #[test]
    fn constants_keep_drift() {
        let s = CompetitionSystem::constant(1.0, [1.0, 2.0], [0.7, -0.3], [1.0, 2.0], 1.0, 1.5, 1.5, 1.0);
        let c = CooperativeSystem::from_constants(&s, 32).unwrap();
        assert!(c.a1_star.iter().all(|&v| (v - 0.7).abs() < 1e-14));
        assert!(c.a2_star.iter().all(|&v| (v + 0.3).abs() < 1e-14));
        // u1* = 1, u2* = 2
        assert!(c.a11_star.iter().all(|&v| v == 1.0));
        assert!(c.a12_star.iter().all(|&v| v == 3.0));
        assert!(c.a21_star.iter().all(|&v| v == 1.5));
        assert_eq!(c.big_d1, 3.0);
    }

    #[test]
    fn equilibria_exact() {
        let s = CompetitionSystem::constant(1.0, [1.0; 2], [0.0; 2], [1.0, 1.3], 1.0, 1.7, 1.2, 0.9);
        let c = CooperativeSystem::from_constants(&s, 32).unwrap();
        for j in 0..32 {
            assert_eq!(c.reaction(j, 0.0, 0.0), (0.0, 0.0));
            assert_eq!(c.reaction(j, 1.0, 1.0), (0.0, 0.0));
        }
    }

    #[test]
    fn symmetric_coexistence_point() {
        let c = symmetric();
        let (f1, f2) = c.reaction(3, 0.4, 0.6);
        assert!(f1.abs() < 1e-15 && f2.abs() < 1e-15);
    }

    #[test]
    fn extended_matches_on_unit_box() {
        let c = symmetric();
        for i in 0..=10 {
            for k in 0..=10 {
                let (u1, u2) = (i as f64 / 10.0, k as f64 / 10.0);
                assert_eq!(c.reaction_extended(0, u1, u2).unwrap(), c.reaction(0, u1, u2));
            }
        }
    }

    #[test]
    fn extended_formula_independent() {
        let c = symmetric();
        // f1(-0.5, 1) = -0.5 (1 * 1.5 - 1.5 * 0) = -0.75; correction 1.5 * 0.5 * 1
        let (f1, _) = c.reaction_extended(0, -0.5, 1.0).unwrap();
        assert!((f1 - 0.0).abs() < 1e-15);
        let (_, f2) = c.reaction_extended(0, 1.0, 1.5).unwrap();
        let (_, plain) = c.reaction(0, 1.0, 1.5);
        assert_eq!(f2, plain);
        // a second evaluation written out by hand at an interior point of both pieces
        let (u1, u2) = (-0.3, 1.4);
        let hand1 = u1 * (1.0 * (1.0 - u1) - 1.5 * (1.0 - u2)) + 1.5 * 0.3 * u2;
        let hand2 = (1.0 - u2) * (1.5 * u1 - 1.0 * u2) + 1.5 * 0.4 * (u1 - 1.0);
        let (g1, g2) = c.reaction_extended(0, u1, u2).unwrap();
        assert!((g1 - hand1).abs() < 1e-15 && (g2 - hand2).abs() < 1e-15);
        assert!(matches!(c.reaction_extended(0, -1.1, 0.0), Err(Error::OutOfBox { .. })));
    }

    #[test]
    fn partials_match_finite_differences() {
        let c = symmetric();
        let m = c.reaction_partials(0, 0.5, 0.2);
        assert!((m[0][1] - 0.75).abs() < 1e-15);
        assert_eq!(c.reaction_partials(0, 0.3, 1.0)[1][0], 0.0);
        for (u1, u2) in [(0.1, 0.9), (0.7, 0.3), (1.5, -0.5)] {
            let m = c.reaction_partials(0, u1, u2);
            for eps in [1e-4, 1e-5] {
                let fd1 = |k: usize| {
                    let (p, q) = (c.reaction(0, u1 + eps, u2), c.reaction(0, u1 - eps, u2));
                    if k == 0 { (p.0 - q.0) / (2.0 * eps) } else { (p.1 - q.1) / (2.0 * eps) }
                };
                let fd2 = |k: usize| {
                    let (p, q) = (c.reaction(0, u1, u2 + eps), c.reaction(0, u1, u2 - eps));
                    if k == 0 { (p.0 - q.0) / (2.0 * eps) } else { (p.1 - q.1) / (2.0 * eps) }
                };
                // f is quadratic, so centered differences are exact up to rounding
                let tol = 1e-16 / eps * 10.0 + 1e-12;
                for k in 0..2 {
                    assert!((m[k][0] - fd1(k)).abs() < tol);
                    assert!((m[k][1] - fd2(k)).abs() < tol);
                }
            }
        }
    }

    #[test]
    fn cooperative_on_unit_box_and_extended_box() {
        let c = symmetric();
        for j in 0..c.n() {
            for i in 0..32 {
                for k in 0..32 {
                    let (u1, u2) = (i as f64 / 31.0, k as f64 / 31.0);
                    let m = c.reaction_partials(j, u1, u2);
                    assert!(m[0][1] >= 0.0 && m[1][0] >= 0.0);
                    let (e1, e2) = (-1.0 + 3.0 * u1, -1.0 + 3.0 * u2);
                    let e = c.reaction_extended_partials(j, e1, e2);
                    assert!(e[0][1] >= -1e-15 && e[1][0] >= -1e-15, "{e1} {e2} {e:?}");
                }
            }
        }
    }

    #[test]
    fn unit_box_faces_point_inward() {
        let c = symmetric();
        for k in 0..=20 {
            let s = k as f64 / 20.0;
            assert!(c.reaction_extended(0, 0.0, s).unwrap().0 >= 0.0);
            assert!(c.reaction_extended(0, 1.0, s).unwrap().0 <= 0.0);
            assert!(c.reaction_extended(0, s, 0.0).unwrap().1 >= 0.0);
            assert!(c.reaction_extended(0, s, 1.0).unwrap().1 <= 0.0);
        }
    }

    #[test]
    fn inverse_map_round_trip() {
        let s = CompetitionSystem::constant(1.0, [1.0; 2], [0.0; 2], [1.0, 2.0], 1.0, 1.5, 1.5, 1.0);
        let c = CooperativeSystem::from_constants(&s, 16).unwrap();
        let (u1, u2) = c.to_original(&[0.0; 16], &[0.0; 16]).unwrap();
        assert!(u1.iter().all(|&v| v == 0.0) && u2.iter().all(|&v| v == 2.0));
        let (u1, u2) = c.to_original(&[1.0; 16], &[1.0; 16]).unwrap();
        assert!(u1.iter().all(|&v| v == 1.0) && u2.iter().all(|&v| v == 0.0));
        let t: Vec<f64> = (0..16).map(|j| j as f64 / 15.0).collect();
        let (o1, o2) = c.to_original(&t, &t).unwrap();
        let (b1, b2) = c.from_original(&o1, &o2).unwrap();
        for j in 0..16 {
            assert!((b1[j] - t[j]).abs() < 1e-12 && (b2[j] - t[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn lipschitz_bound_covers_samples() {
        let c = symmetric();
        for extended in [false, true] {
            let lam = c.lipschitz_bound(extended);
            let (lo, hi) = if extended { (-1.0, 2.0) } else { (0.0, 1.0) };
            for i in 0..=30 {
                for k in 0..=30 {
                    let u1 = lo + (hi - lo) * i as f64 / 30.0;
                    let u2 = lo + (hi - lo) * k as f64 / 30.0;
                    let m = if extended {
                        c.reaction_extended_partials(0, u1, u2)
                    } else {
                        c.reaction_partials(0, u1, u2)
                    };
                    for row in m {
                        assert!(row[0].abs() + row[1].abs() <= lam + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_vanishing_state() {
        let s = CompetitionSystem::unit_constants(1.0, 1.5, 1.5, 1.0);
        let g = PeriodicGrid::new(1.0, 16).unwrap();
        let mut u = vec![1.0; 16];
        u[5] = 0.0;
        assert!(transform(&s, &u, &[1.0; 16], &g).is_err());
    }

    #[test]
    fn csv_dump_has_all_nodes() {
        let mut buf = Vec::new();
        symmetric().write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 33);
    }
}
