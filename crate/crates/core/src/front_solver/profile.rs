//! Pulsating-front tables `U(x_i, z_K)`, their smooth interpolant and the
//! continuous residual.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PoincareRecord, PoincareRun, ProfileOptions, INTERFACE_LEVEL};
use crate::cooperative_transform::{CoefficientInterpolants, CooperativeSystem};
use crate::discretization::LineGrid;
use crate::error::{Error, Result};

/// Saturation level used to crop the tails of a recorded table.
pub(super) const CROP_LEVEL: f64 = 1e-10;
/// Monotonicity: differences may dip this far below zero.
pub const MONOTONE_FLOOR: f64 = 1e-12;
/// Strict increase is required where `CORE_LEVEL < U < 1 - CORE_LEVEL`.
/// Closer to the limits the differences are of the size of the fixed-point
/// defect (about `1e-11`), so only the floor applies there.
pub const CORE_LEVEL: f64 = 1e-8;

/// Largest deviations from the limits at the ends of the `z` range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarField {
    /// `max |U(., z_min)|`
    pub low: f64,
    /// `max |1 - U(., z_max)|`
    pub high: f64,
}

/// Scalar description of a profile; the table itself goes to CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub c: f64,
    pub period: f64,
    /// Phases per period.
    pub n: usize,
    pub nz: usize,
    pub z0: f64,
    pub dz: f64,
    pub dt: f64,
    pub stationary: bool,
    pub residual: f64,
    pub monotone: bool,
    pub min_slope: f64,
    pub periodicity_defect: f64,
    pub far_field: FarField,
    pub periods: usize,
    pub history: Vec<PoincareRecord>,
}

/// `U(x_i, z_K)` for phases `x_i = i h` and `z_K = z0 + K dz`, stored row
/// by phase.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontProfile {
    pub meta: ProfileMeta,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

pub(super) struct RawTable {
    offset: i64,
    sign: i64,
    nk: usize,
    u: [Vec<f64>; 2],
}

/// Records one moving-frame period at every `s`-th step, where the sampled
/// points `(x_k, x_k + c t)` land on the lattice `z = x_min + K h`.
pub(super) fn record_period(run: &mut PoincareRun, state: &mut super::CauchyState, s: usize) -> Result<RawTable> {
    let n = run.n as i64;
    let m = run.grid.len();
    let offset = -n;
    let nk = m + 2 * run.n;
    let mut u = [vec![f64::NAN; run.n * nk], vec![f64::NAN; run.n * nk]];
    let (sign, np) = (run.sign, run.n);
    run.period(state, |step, st| {
        if step % s != 0 {
            return;
        }
        let mm = (step / s) as i64;
        for k in 0..m {
            let kk = k as i64 + sign * mm - offset;
            let i = k % np;
            let idx = i * nk + kk as usize;
            u[0][idx] = st.u1[k];
            u[1][idx] = st.u2[k];
        }
    })?;
    Ok(RawTable { offset, sign, nk, u })
}

fn interface_along(z0: f64, dz: f64, w: impl Fn(usize) -> f64, nz: usize) -> Option<f64> {
    (0..nz - 1).find(|&k| w(k) < INTERFACE_LEVEL && w(k + 1) >= INTERFACE_LEVEL).map(|k| {
        let (a, b) = (w(k), w(k + 1));
        z0 + dz * (k as f64 + (INTERFACE_LEVEL - a) / (b - a))
    })
}

#[allow(clippy::too_many_arguments)]
pub(super) fn assemble(
    sys: &CooperativeSystem,
    c: f64,
    grid: &LineGrid,
    dt: f64,
    tables: [RawTable; 3],
    periods: usize,
    history: Vec<PoincareRecord>,
    opts: &ProfileOptions,
) -> Result<FrontProfile> {
    let [first, second, third] = tables;
    let n = grid.per_period;
    let m = grid.len() as i64;
    let nk = first.nk;
    let at = |t: &RawTable, comp: usize, i: usize, kk: usize| t.u[comp][i * nk + kk];
    // nodes within the boundary margin (plus one period of travel) are dropped
    let margin = ((super::BOUNDARY_MARGIN_PERIODS + 1.0) * n as f64) as i64;
    let lo = (margin - first.offset) as usize;
    let hi = (m - 1 - margin - first.offset) as usize;
    let low_dev = |kk: usize| (0..n).map(|i| at(&first, 0, i, kk).abs().max(at(&first, 1, i, kk).abs())).fold(0.0, f64::max);
    let high_dev = |kk: usize| {
        (0..n).map(|i| (1.0 - at(&first, 0, i, kk)).abs().max((1.0 - at(&first, 1, i, kk)).abs())).fold(0.0, f64::max)
    };
    let mut start = lo;
    while start < hi && low_dev(start + 1) <= CROP_LEVEL {
        start += 1;
    }
    let mut end = hi;
    while end > start && high_dev(end - 1) <= CROP_LEVEL {
        end -= 1;
    }
    let start = start.saturating_sub(n).max(lo);
    let end = (end + n).min(hi);
    let nz = end - start + 1;
    if nz < 8 {
        return Err(Error::Invalid("recorded profile window is empty".into()));
    }
    let mut u1 = vec![0.0; n * nz];
    let mut u2 = vec![0.0; n * nz];
    let mut defect: f64 = 0.0;
    for i in 0..n {
        for k in 0..nz {
            let kk = start + k;
            let v = |comp: usize| [&first, &second, &third].map(|t| at(t, comp, i, kk));
            let (v1, v2) = (v(0), v(1));
            if !v1.iter().chain(&v2).all(|x| x.is_finite()) {
                return Err(Error::Invalid("recorded profile has gaps".into()));
            }
            defect = defect.max((v1[1] - v1[0]).abs()).max((v2[1] - v2[0]).abs());
            // Entries were sampled at step `j` of their period. The slow
            // period-to-period change is extrapolated away so all entries
            // refer to the start of the first period; otherwise the wrap
            // from `j = n - 1` to `j = 0` leaves a seam that second
            // differences amplify.
            let raw_k = kk as i64 + first.offset;
            let j = (first.sign * (raw_k - i as i64)).rem_euclid(n as i64) as f64 / n as f64;
            let w = [(j + 1.0) * (j + 2.0) / 2.0, -j * (j + 2.0), j * (j + 1.0) / 2.0];
            u1[i * nz + k] = w[0] * v1[0] + w[1] * v1[1] + w[2] * v1[2];
            u2[i * nz + k] = w[0] * v2[0] + w[1] * v2[1] + w[2] * v2[2];
        }
    }
    let dz = grid.h();
    let z_raw = grid.x_min() + (start as i64 + first.offset) as f64 * dz;
    let zi = interface_along(z_raw, dz, |k| 0.5 * (u1[k] + u2[k]), nz)
        .ok_or_else(|| Error::Invalid("profile has no interface".into()))?;
    let mut profile = FrontProfile {
        meta: ProfileMeta {
            c,
            period: grid.period,
            n,
            nz,
            z0: z_raw - zi,
            dz,
            dt,
            stationary: false,
            residual: f64::NAN,
            monotone: false,
            min_slope: f64::NAN,
            periodicity_defect: defect,
            far_field: FarField { low: 0.0, high: 0.0 },
            periods,
            history,
        },
        u1,
        u2,
    };
    profile.finish(sys, opts)?;
    Ok(profile)
}

impl FrontProfile {
    /// Fills in the monotonicity, far-field and residual diagnostics.
    pub(super) fn finish(&mut self, sys: &CooperativeSystem, opts: &ProfileOptions) -> Result<()> {
        let (ok, slope) = self.monotonicity();
        self.meta.monotone = ok;
        self.meta.min_slope = slope;
        let (n, nz) = (self.meta.n, self.meta.nz);
        let mut ff = FarField { low: 0.0, high: 0.0 };
        for i in 0..n {
            for u in [&self.u1, &self.u2] {
                ff.low = ff.low.max(u[i * nz].abs());
                ff.high = ff.high.max((1.0 - u[i * nz + nz - 1]).abs());
            }
        }
        self.meta.far_field = ff;
        self.meta.residual = self.interp(sys)?.residual(None, opts.residual_samples, opts.seed).max;
        Ok(())
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        (0..self.meta.n).map(|i| i as f64 * self.meta.period / self.meta.n as f64).collect()
    }

    pub fn z_nodes(&self) -> Vec<f64> {
        (0..self.meta.nz).map(|k| self.meta.z0 + k as f64 * self.meta.dz).collect()
    }

    pub fn value(&self, i: usize, k: usize) -> (f64, f64) {
        let idx = i * self.meta.nz + k;
        (self.u1[idx], self.u2[idx])
    }

    /// Whether every phase row is nondecreasing in `z` (down to
    /// `-MONOTONE_FLOOR`) and strictly increasing in the core; also the
    /// smallest core slope.
    pub fn monotonicity(&self) -> (bool, f64) {
        let (n, nz, dz) = (self.meta.n, self.meta.nz, self.meta.dz);
        let mut ok = true;
        let mut min_slope = f64::INFINITY;
        for u in [&self.u1, &self.u2] {
            for i in 0..n {
                let row = &u[i * nz..(i + 1) * nz];
                for w in row.windows(2) {
                    let d = w[1] - w[0];
                    if d < -MONOTONE_FLOOR {
                        ok = false;
                    }
                    let core = |v: f64| v > CORE_LEVEL && v < 1.0 - CORE_LEVEL;
                    if core(w[0]) && core(w[1]) {
                        if d <= 0.0 {
                            ok = false;
                        }
                        min_slope = min_slope.min(d / dz);
                    }
                }
            }
        }
        (ok, min_slope)
    }

    /// Smallest `U_z` over the region where both components lie in
    /// `[lo, hi]` at every phase.
    pub fn min_slope_between(&self, lo: f64, hi: f64) -> f64 {
        let (n, nz, dz) = (self.meta.n, self.meta.nz, self.meta.dz);
        let mut m = f64::INFINITY;
        for k in 0..nz - 1 {
            let inside = (0..n).all(|i| {
                let (a, b) = self.value(i, k);
                (lo..=hi).contains(&a) && (lo..=hi).contains(&b)
            });
            if inside {
                for i in 0..n {
                    let (a, b) = self.value(i, k);
                    let (c, d) = self.value(i, k + 1);
                    m = m.min((c - a) / dz).min((d - b) / dz);
                }
            }
        }
        m
    }

    pub fn interp(&self, sys: &CooperativeSystem) -> Result<ProfileInterp> {
        ProfileInterp::new(self, sys.interpolants()?)
    }

    /// Columns `x, z, U1, U2`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "z", "U1", "U2"])?;
        let (xs, zs) = (self.x_nodes(), self.z_nodes());
        for (i, x) in xs.iter().enumerate() {
            for (k, z) in zs.iter().enumerate() {
                let (a, b) = self.value(i, k);
                out.write_record(&[format!("{x:.16e}"), format!("{z:.16e}"), format!("{a:.16e}"), format!("{b:.16e}")])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a table written by [`FrontProfile::write_csv`]; the shape must
    /// agree with `meta`.
    pub fn read_csv<R: Read>(r: R, meta: ProfileMeta) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let (n, nz) = (meta.n, meta.nz);
        let mut u1 = Vec::with_capacity(n * nz);
        let mut u2 = Vec::with_capacity(n * nz);
        for rec in rdr.records() {
            let rec = rec?;
            let get = |j: usize| -> Result<f64> {
                rec.get(j)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Invalid(format!("bad profile CSV field {j}")))
            };
            u1.push(get(2)?);
            u2.push(get(3)?);
        }
        if u1.len() != n * nz {
            return Err(Error::Dimension { expected: n * nz, got: u1.len() });
        }
        Ok(Self { meta, u1, u2 })
    }
}

/// Values and derivatives of both components at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProfileSample {
    pub u: [f64; 2],
    pub ux: [f64; 2],
    pub uz: [f64; 2],
    pub uxx: [f64; 2],
    pub uxz: [f64; 2],
    pub uzz: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub max: f64,
    pub rms: f64,
    pub at: (f64, f64),
    pub samples: usize,
}

/// Bicubic Hermite interpolant of a profile table, periodic in `x`, with
/// nodal derivatives from fourth-order differences.
#[derive(Clone, Debug)]
pub struct ProfileInterp {
    pub c: f64,
    pub period: f64,
    pub stationary: bool,
    n: usize,
    nz: usize,
    hx: f64,
    z0: f64,
    dz: f64,
    // [component][field] with field 0..4 = U, Ux, Uz, Uxz
    data: [[Vec<f64>; 4]; 2],
    pub coef: CoefficientInterpolants,
}

fn d1_periodic(f: &[f64], n: usize, nz: usize, h: f64) -> Vec<f64> {
    let mut out = vec![0.0; n * nz];
    for i in 0..n {
        let ip = |d: isize| ((i as isize + d).rem_euclid(n as isize)) as usize;
        for k in 0..nz {
            let g = |ii: usize| f[ii * nz + k];
            out[i * nz + k] = (-g(ip(2)) + 8.0 * g(ip(1)) - 8.0 * g(ip(-1)) + g(ip(-2))) / (12.0 * h);
        }
    }
    out
}

fn d1_open(f: &[f64], n: usize, nz: usize, h: f64) -> Vec<f64> {
    let mut out = vec![0.0; n * nz];
    for i in 0..n {
        let r = &f[i * nz..(i + 1) * nz];
        let o = &mut out[i * nz..(i + 1) * nz];
        for k in 0..nz {
            o[k] = if k >= 2 && k + 2 < nz {
                (-r[k + 2] + 8.0 * r[k + 1] - 8.0 * r[k - 1] + r[k - 2]) / (12.0 * h)
            } else if k >= 1 && k + 1 < nz {
                (r[k + 1] - r[k - 1]) / (2.0 * h)
            } else if k == 0 {
                (-3.0 * r[0] + 4.0 * r[1] - r[2]) / (2.0 * h)
            } else {
                (3.0 * r[k] - 4.0 * r[k - 1] + r[k - 2]) / (2.0 * h)
            };
        }
    }
    out
}

// Cubic Hermite basis on [0, 1] with first and second derivatives:
// (value, d/ds, d2/ds2) for phi0, phi1, psi0, psi1.
fn hermite(s: f64) -> [[f64; 3]; 4] {
    let (s2, s3) = (s * s, s * s * s);
    [
        [2.0 * s3 - 3.0 * s2 + 1.0, 6.0 * s2 - 6.0 * s, 12.0 * s - 6.0],
        [-2.0 * s3 + 3.0 * s2, -6.0 * s2 + 6.0 * s, -12.0 * s + 6.0],
        [s3 - 2.0 * s2 + s, 3.0 * s2 - 4.0 * s + 1.0, 6.0 * s - 4.0],
        [s3 - s2, 3.0 * s2 - 2.0 * s, 6.0 * s - 2.0],
    ]
}

impl ProfileInterp {
    pub fn new(p: &FrontProfile, coef: CoefficientInterpolants) -> Result<Self> {
        let (n, nz) = (p.meta.n, p.meta.nz);
        if nz < 5 || n < 4 {
            return Err(Error::Invalid("profile table too small to interpolate".into()));
        }
        let hx = p.meta.period / n as f64;
        let build = |u: &Vec<f64>| {
            let ux = d1_periodic(u, n, nz, hx);
            let uz = d1_open(u, n, nz, p.meta.dz);
            let uxz = d1_periodic(&uz, n, nz, hx);
            [u.clone(), ux, uz, uxz]
        };
        Ok(Self {
            c: p.meta.c,
            period: p.meta.period,
            stationary: p.meta.stationary,
            n,
            nz,
            hx,
            z0: p.meta.z0,
            dz: p.meta.dz,
            data: [build(&p.u1), build(&p.u2)],
            coef,
        })
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.z0, self.z0 + (self.nz - 1) as f64 * self.dz)
    }

    /// Values and derivatives at `(x, z)`; outside the `z` range the limit
    /// states are returned with zero derivatives.
    pub fn eval(&self, x: f64, z: f64) -> ProfileSample {
        let (zlo, zhi) = self.z_range();
        if z <= zlo || z >= zhi {
            let v = if z <= zlo { 0.0 } else { 1.0 };
            return ProfileSample { u: [v, v], ..Default::default() };
        }
        let xr = x.rem_euclid(self.period) / self.hx;
        let i0 = (xr.floor() as usize).min(self.n - 1);
        let s = xr - i0 as f64;
        let i1 = (i0 + 1) % self.n;
        let zr = (z - self.z0) / self.dz;
        let k0 = (zr.floor() as usize).min(self.nz - 2);
        let t = zr - k0 as f64;
        let (bx, bz) = (hermite(s), hermite(t));
        let mut out = ProfileSample::default();
        for comp in 0..2 {
            let d = &self.data[comp];
            let mut acc = [0.0f64; 6]; // u, us, ut, uss, ust, utt in unit coordinates
            for (a, ia) in [(0usize, i0), (1, i1)] {
                for (b, kb) in [(0usize, k0), (1, k0 + 1)] {
                    let idx = ia * self.nz + kb;
                    let coeffs = [
                        (d[0][idx], a, b),
                        (d[1][idx] * self.hx, a + 2, b),
                        (d[2][idx] * self.dz, a, b + 2),
                        (d[3][idx] * self.hx * self.dz, a + 2, b + 2),
                    ];
                    for (w, ba, bb) in coeffs {
                        let (px, pz) = (bx[ba], bz[bb]);
                        acc[0] += w * px[0] * pz[0];
                        acc[1] += w * px[1] * pz[0];
                        acc[2] += w * px[0] * pz[1];
                        acc[3] += w * px[2] * pz[0];
                        acc[4] += w * px[1] * pz[1];
                        acc[5] += w * px[0] * pz[2];
                    }
                }
            }
            out.u[comp] = acc[0];
            out.ux[comp] = acc[1] / self.hx;
            out.uz[comp] = acc[2] / self.dz;
            out.uxx[comp] = acc[3] / (self.hx * self.hx);
            out.uxz[comp] = acc[4] / (self.hx * self.dz);
            out.uzz[comp] = acc[5] / (self.dz * self.dz);
        }
        out
    }

    /// Residual of `u(t, x) = U(x, x + c t)` in the cooperative system at
    /// `(x, z)`, with `c` overridable to probe sensitivity.
    pub fn residual_at(&self, x: f64, z: f64, c: Option<f64>) -> [f64; 2] {
        let c = c.unwrap_or(self.c);
        let p = self.eval(x, z);
        let f = self.coef.reaction(x, p.u[0], p.u[1]);
        let f = [f.0, f.1];
        let mut r = [0.0; 2];
        for i in 0..2 {
            let uxx = p.uxx[i] + 2.0 * p.uxz[i] + p.uzz[i];
            let ux = p.ux[i] + p.uz[i];
            let rhs = self.coef.d[i].eval(x) * uxx - self.coef.a_star[i].eval(x) * ux + f[i];
            r[i] = c * p.uz[i] - rhs;
        }
        r
    }

    /// Max and rms residual over random points in the interior of the
    /// table. Standing fronts are only meaningful on the diagonal `z = x`.
    pub fn residual(&self, c: Option<f64>, samples: usize, seed: u64) -> ResidualReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (zlo, zhi) = self.z_range();
        let (zlo, zhi) = (zlo + 2.0 * self.dz, zhi - 2.0 * self.dz);
        let mut max: f64 = 0.0;
        let mut sum = 0.0;
        let mut at = (0.0, 0.0);
        for _ in 0..samples {
            let z = rng.random_range(zlo..zhi);
            let x = if self.stationary { z } else { rng.random_range(0.0..self.period) };
            let r = self.residual_at(x, z, c);
            let m = r[0].abs().max(r[1].abs());
            sum += r[0] * r[0] + r[1] * r[1];
            if m > max {
                max = m;
                at = (x, z);
            }
        }
        ResidualReport { max, rms: (sum / (2 * samples.max(1)) as f64).sqrt(), at, samples }
    }
}
