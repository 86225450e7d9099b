//! Standing fronts (`c = 0`) by pseudo-transient Newton on the line.

use super::profile::{FarField, FrontProfile, ProfileMeta, CROP_LEVEL};
use super::{CauchyState, ProfileOptions, BOUNDARY_MARGIN_PERIODS, INTERFACE_LEVEL};
use crate::cooperative_transform::CooperativeSystem;
use crate::error::{Error, Result};

type M2 = [[f64; 2]; 2];

fn inv2(m: M2) -> Result<M2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if det.abs() <= 1e-14 * scale * scale {
        return Err(Error::Singular { pivot: det, condition: f64::INFINITY });
    }
    Ok([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

fn mul(a: M2, b: M2) -> M2 {
    let mut o = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            o[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    o
}

fn mulv(a: M2, v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

/// Solves `A_k w_{k-1} + B_k w_k + C_k w_{k+1} = r_k` with diagonal `A`, `C`.
fn block_thomas(a: &[[f64; 2]], b: &[M2], c: &[[f64; 2]], r: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    let n = b.len();
    let mut bp = vec![[[0.0; 2]; 2]; n];
    let mut rp = vec![[0.0; 2]; n];
    bp[0] = b[0];
    rp[0] = r[0];
    for k in 1..n {
        let inv = inv2(bp[k - 1])?;
        // m = A_k inv(B'_{k-1})
        let m = [[a[k][0] * inv[0][0], a[k][0] * inv[0][1]], [a[k][1] * inv[1][0], a[k][1] * inv[1][1]]];
        let cm = [[c[k - 1][0], 0.0], [0.0, c[k - 1][1]]];
        let mc = mul(m, cm);
        let mr = mulv(m, rp[k - 1]);
        for i in 0..2 {
            for j in 0..2 {
                bp[k][i][j] = b[k][i][j] - mc[i][j];
            }
            rp[k][i] = r[k][i] - mr[i];
        }
    }
    let mut w = vec![[0.0; 2]; n];
    w[n - 1] = mulv(inv2(bp[n - 1])?, rp[n - 1]);
    for k in (0..n - 1).rev() {
        let t = [rp[k][0] - c[k][0] * w[k + 1][0], rp[k][1] - c[k][1] * w[k + 1][1]];
        w[k] = mulv(inv2(bp[k])?, t);
    }
    Ok(w)
}

/// Standing front on the grid of `start`, which should already look like
/// a front. The table is `U(x, z) = u(z)` for every phase.
pub fn standing_front(sys: &CooperativeSystem, start: &CauchyState, opts: &ProfileOptions) -> Result<FrontProfile> {
    let grid = start.grid;
    let ops = [sys.line_operator(0, &grid)?, sys.line_operator(1, &grid)?];
    let m = grid.len();
    let mut u = [start.u1.clone(), start.u2.clone()];
    let residual = |u: &[Vec<f64>; 2]| -> Result<Vec<[f64; 2]>> {
        let l1 = ops[0].apply(&u[0])?;
        let l2 = ops[1].apply(&u[1])?;
        Ok((1..m - 1)
            .map(|k| {
                let f = sys.reaction(grid.phase(k), u[0][k], u[1][k]);
                [l1[k] + f.0, l2[k] + f.1]
            })
            .collect())
    };
    let norm = |g: &[[f64; 2]]| g.iter().fold(0.0f64, |a, v| a.max(v[0].abs()).max(v[1].abs()));
    let mut g = residual(&u)?;
    let mut gn = norm(&g);
    let mut tau = 1.0;
    let mut iters = 0;
    let target = opts.tol.min(1e-10);
    while gn > target {
        iters += 1;
        if iters > 400 {
            return Err(Error::NoConvergence { what: "standing front".into(), iterations: iters, residual: gn });
        }
        let n = m - 2;
        let mut a = vec![[0.0; 2]; n];
        let mut b = vec![[[0.0; 2]; 2]; n];
        let mut c = vec![[0.0; 2]; n];
        for j in 0..n {
            let k = j + 1;
            let jac = sys.reaction_partials(grid.phase(k), u[0][k], u[1][k]);
            for s in 0..2 {
                a[j][s] = if j > 0 { -ops[s].sub[k] } else { 0.0 };
                c[j][s] = if j + 1 < n { -ops[s].sup[k] } else { 0.0 };
            }
            b[j] = [
                [1.0 / tau - ops[0].main[k] - jac[0][0], -jac[0][1]],
                [-jac[1][0], 1.0 / tau - ops[1].main[k] - jac[1][1]],
            ];
        }
        let dw = block_thomas(&a, &b, &c, &g)?;
        let mut trial = u.clone();
        for j in 0..n {
            trial[0][j + 1] += dw[j][0];
            trial[1][j + 1] += dw[j][1];
        }
        let gt = residual(&trial)?;
        let gtn = norm(&gt);
        if gtn < gn {
            u = trial;
            g = gt;
            gn = gtn;
            tau = (tau * 4.0).min(1e14);
        } else {
            tau = (tau * 0.25).max(1e-6);
        }
    }
    // crop tails as for the moving case
    let n_ph = grid.per_period;
    let margin = (BOUNDARY_MARGIN_PERIODS * n_ph as f64) as usize;
    let (lo, hi) = (margin, m - 1 - margin);
    let low = |k: usize| u[0][k].abs().max(u[1][k].abs());
    let high = |k: usize| (1.0 - u[0][k]).abs().max((1.0 - u[1][k]).abs());
    let mut start_k = lo;
    while start_k < hi && low(start_k + 1) <= CROP_LEVEL {
        start_k += 1;
    }
    let mut end_k = hi;
    while end_k > start_k && high(end_k - 1) <= CROP_LEVEL {
        end_k -= 1;
    }
    let start_k = start_k.saturating_sub(n_ph).max(lo);
    let end_k = (end_k + n_ph).min(hi);
    let nz = end_k - start_k + 1;
    let w = |k: usize| 0.5 * (u[0][k] + u[1][k]);
    (start_k..end_k)
        .find(|&k| w(k) < INTERFACE_LEVEL && w(k + 1) >= INTERFACE_LEVEL)
        .ok_or_else(|| Error::Invalid("standing front has no interface".into()))?;
    let row1 = &u[0][start_k..=end_k];
    let row2 = &u[1][start_k..=end_k];
    let mut profile = FrontProfile {
        meta: ProfileMeta {
            c: 0.0,
            period: grid.period,
            n: n_ph,
            nz,
            // U(x, z) = u(z) keeps the lab coordinate: no shift of z
            z0: grid.x(start_k),
            dz: grid.h(),
            dt: 0.0,
            stationary: true,
            residual: f64::NAN,
            monotone: false,
            min_slope: f64::NAN,
            periodicity_defect: 0.0,
            far_field: FarField { low: 0.0, high: 0.0 },
            periods: iters,
            history: Vec::new(),
        },
        u1: row1.repeat(n_ph),
        u2: row2.repeat(n_ph),
    };
    profile.finish(sys, opts)?;
    Ok(profile)
}
