//! Time integration of the cooperative system on a truncated line, front
//! speed estimation and pulsating-front extraction.
//!
//! Two integrators share the implicit linear part. [`Stepper`] is IMEX
//! Euler with the step capped so the explicit reaction is order-preserving;
//! it carries the comparison principle. [`Sbdf2`] is the second-order IMEX
//! BDF scheme used where accuracy matters more than monotonicity.

mod profile;
mod standing;

pub use profile::{FarField, FrontProfile, ProfileInterp, ProfileMeta, ProfileSample};
pub use standing::standing_front;

use serde::{Deserialize, Serialize};

use crate::cooperative_transform::{in_box, CooperativeSystem};
use crate::discretization::{LineGrid, ShiftedFactor};
use crate::error::{Error, Result};

/// Default truncated domain, in periods.
pub const DEFAULT_PERIODS: usize = 80;
/// The interface must stay this many periods away from either boundary.
pub const BOUNDARY_MARGIN_PERIODS: f64 = 5.0;
/// Fraction of a run discarded as transient in the speed fit.
pub const TRANSIENT_FRACTION: f64 = 0.5;
/// Speeds below this are treated as standing fronts.
pub const STATIONARY_SPEED: f64 = 1e-5;
/// Largest moving-frame period accepted, in units of `L`.
pub const T_CAP_PERIODS: f64 = 1e4;
/// Interface level of `(u1 + u2) / 2`.
pub const INTERFACE_LEVEL: f64 = 0.5;

/// Largest comparison-preserving IMEX Euler step.
pub fn dt_max(sys: &CooperativeSystem, extended: bool) -> f64 {
    0.5 / sys.lipschitz_bound(extended)
}

/// Two species on a truncated line at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct CauchyState {
    pub grid: LineGrid,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub t: f64,
}

impl CauchyState {
    pub fn from_fn(grid: LineGrid, f: impl Fn(f64) -> (f64, f64)) -> Self {
        let (u1, u2) = grid.nodes().into_iter().map(f).unzip();
        let mut s = Self { grid, u1, u2, t: 0.0 };
        s.enforce_clamps();
        s
    }

    pub fn constant(grid: LineGrid, v1: f64, v2: f64) -> Self {
        let m = grid.len();
        Self { grid, u1: vec![v1; m], u2: vec![v2; m], t: 0.0 }
    }

    /// `(theta, theta)` with `theta = (1 + tanh((x - center) / width)) / 2`.
    pub fn smooth_step(grid: LineGrid, center: f64, width: f64) -> Self {
        Self::from_fn(grid, |x| {
            let th = 0.5 * (1.0 + ((x - center) / width).tanh());
            (th, th)
        })
    }

    /// `0` left of `center`, `1` from `center` on.
    pub fn sharp_step(grid: LineGrid, center: f64) -> Self {
        Self::from_fn(grid, |x| if x < center { (0.0, 0.0) } else { (1.0, 1.0) })
    }

    pub fn enforce_clamps(&mut self) {
        let m = self.grid.len();
        self.u1[0] = self.grid.left[0];
        self.u2[0] = self.grid.left[1];
        self.u1[m - 1] = self.grid.right[0];
        self.u2[m - 1] = self.grid.right[1];
    }

    /// Position where `(u1 + u2) / 2` first rises through `level`.
    pub fn interface(&self, level: f64) -> Option<f64> {
        interface_position(&self.grid, &self.u1, &self.u2, level)
    }

    /// Translates the state by `nodes` grid points (positive moves it to
    /// the right), padding with the clamp values.
    pub fn shift_nodes(&mut self, nodes: i64) {
        shift_nodes(&mut self.u1, nodes, self.grid.left[0], self.grid.right[0]);
        shift_nodes(&mut self.u2, nodes, self.grid.left[1], self.grid.right[1]);
    }

    /// Nodewise `self <= other` up to `tol`; returns the worst violation.
    pub fn order_violation(&self, other: &Self) -> f64 {
        self.u1
            .iter()
            .zip(&other.u1)
            .chain(self.u2.iter().zip(&other.u2))
            .map(|(a, b)| a - b)
            .fold(0.0, f64::max)
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.u1
            .iter()
            .zip(&other.u1)
            .chain(self.u2.iter().zip(&other.u2))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn shift_nodes(u: &mut [f64], nodes: i64, left: f64, right: f64) {
    let m = u.len() as i64;
    let old = u.to_vec();
    for k in 0..m {
        let src = k - nodes;
        u[k as usize] = if src < 0 {
            left
        } else if src >= m {
            right
        } else {
            old[src as usize]
        };
    }
}

/// Linear interpolation of the first upward crossing of `(u1 + u2) / 2`.
pub fn interface_position(grid: &LineGrid, u1: &[f64], u2: &[f64], level: f64) -> Option<f64> {
    let w = |k: usize| 0.5 * (u1[k] + u2[k]);
    (0..u1.len() - 1).find(|&k| w(k) < level && w(k + 1) >= level).map(|k| {
        let (a, b) = (w(k), w(k + 1));
        grid.x(k) + grid.h() * (level - a) / (b - a)
    })
}

fn factors(sys: &CooperativeSystem, grid: &LineGrid, sigma: f64) -> Result<[ShiftedFactor; 2]> {
    Ok([sys.line_operator(0, grid)?.factor_shifted(sigma)?, sys.line_operator(1, grid)?.factor_shifted(sigma)?])
}

fn reaction_into(
    sys: &CooperativeSystem,
    grid: &LineGrid,
    extended: bool,
    u1: &[f64],
    u2: &[f64],
    f1: &mut [f64],
    f2: &mut [f64],
) -> Result<()> {
    for k in 0..u1.len() {
        let p = grid.phase(k);
        let (a, b) = if extended {
            if !in_box(u1[k], u2[k]) {
                return Err(Error::OutOfBox { node: k, u1: u1[k], u2: u2[k] });
            }
            sys.reaction_extended_unchecked(p, u1[k], u2[k])
        } else {
            sys.reaction(p, u1[k], u2[k])
        };
        f1[k] = a;
        f2[k] = b;
    }
    Ok(())
}

/// IMEX Euler: `(I - dt L) u' = u + dt F(u)` per species.
pub struct Stepper<'a> {
    sys: &'a CooperativeSystem,
    grid: LineGrid,
    dt: f64,
    extended: bool,
    factors: [ShiftedFactor; 2],
}

impl<'a> Stepper<'a> {
    pub fn new(sys: &'a CooperativeSystem, grid: LineGrid, dt: f64, extended: bool) -> Result<Self> {
        let bound = dt_max(sys, extended);
        if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { dt, dt_max: bound });
        }
        Ok(Self { sys, grid, dt, extended, factors: factors(sys, &grid, 1.0 / dt)? })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, state: &mut CauchyState) -> Result<()> {
        let m = self.grid.len();
        if state.grid != self.grid {
            return Err(Error::Invalid("state grid differs from the stepper grid".into()));
        }
        let sigma = 1.0 / self.dt;
        let (mut f1, mut f2) = (vec![0.0; m], vec![0.0; m]);
        reaction_into(self.sys, &self.grid, self.extended, &state.u1, &state.u2, &mut f1, &mut f2)?;
        for k in 0..m {
            f1[k] += sigma * state.u1[k];
            f2[k] += sigma * state.u2[k];
        }
        self.factors[0].solve_into(&f1, &mut state.u1)?;
        self.factors[1].solve_into(&f2, &mut state.u2)?;
        state.enforce_clamps();
        state.t += self.dt;
        Ok(())
    }
}

/// One IMEX Euler step; see [`Stepper`] for repeated steps.
pub fn step(state: &CauchyState, sys: &CooperativeSystem, dt: f64, use_extended: bool) -> Result<CauchyState> {
    let mut next = state.clone();
    Stepper::new(sys, state.grid, dt, use_extended)?.step(&mut next)?;
    Ok(next)
}

/// Second-order IMEX BDF with an Euler start.
pub struct Sbdf2<'a> {
    sys: &'a CooperativeSystem,
    grid: LineGrid,
    dt: f64,
    euler: [ShiftedFactor; 2],
    bdf: [ShiftedFactor; 2],
    // previous state and reaction
    prev: Option<[Vec<f64>; 4]>,
}

impl<'a> Sbdf2<'a> {
    pub fn new(sys: &'a CooperativeSystem, grid: LineGrid, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Invalid(format!("time step must be positive, got {dt}")));
        }
        Ok(Self {
            sys,
            grid,
            dt,
            euler: factors(sys, &grid, 1.0 / dt)?,
            bdf: factors(sys, &grid, 1.5 / dt)?,
            prev: None,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Forgets the history; the next step is an Euler step.
    pub fn reset(&mut self) {
        self.prev = None;
    }

    /// Shifts the stored history along with the state.
    pub fn shift_history(&mut self, nodes: i64) {
        if let Some(p) = &mut self.prev {
            let (l, r) = (self.grid.left, self.grid.right);
            shift_nodes(&mut p[0], nodes, l[0], r[0]);
            shift_nodes(&mut p[1], nodes, l[1], r[1]);
            // reaction vanishes at both clamp states
            shift_nodes(&mut p[2], nodes, 0.0, 0.0);
            shift_nodes(&mut p[3], nodes, 0.0, 0.0);
        }
    }

    /// Changes the step and keeps the history. The next step then treats
    /// the history as if it were spaced by the new step, which is harmless
    /// for small relative changes.
    pub fn set_dt(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::Invalid(format!("time step must be positive, got {dt}")));
        }
        self.dt = dt;
        self.euler = factors(self.sys, &self.grid, 1.0 / dt)?;
        self.bdf = factors(self.sys, &self.grid, 1.5 / dt)?;
        Ok(())
    }

    pub fn step(&mut self, state: &mut CauchyState) -> Result<()> {
        let m = self.grid.len();
        let (mut f1, mut f2) = (vec![0.0; m], vec![0.0; m]);
        reaction_into(self.sys, &self.grid, false, &state.u1, &state.u2, &mut f1, &mut f2)?;
        let (mut r1, mut r2) = (vec![0.0; m], vec![0.0; m]);
        let (old1, old2) = (state.u1.clone(), state.u2.clone());
        match &self.prev {
            None => {
                let sigma = 1.0 / self.dt;
                for k in 0..m {
                    r1[k] = sigma * state.u1[k] + f1[k];
                    r2[k] = sigma * state.u2[k] + f2[k];
                }
                self.euler[0].solve_into(&r1, &mut state.u1)?;
                self.euler[1].solve_into(&r2, &mut state.u2)?;
            }
            Some([p1, p2, g1, g2]) => {
                let inv = 0.5 / self.dt;
                for k in 0..m {
                    r1[k] = inv * (4.0 * state.u1[k] - p1[k]) + 2.0 * f1[k] - g1[k];
                    r2[k] = inv * (4.0 * state.u2[k] - p2[k]) + 2.0 * f2[k] - g2[k];
                }
                self.bdf[0].solve_into(&r1, &mut state.u1)?;
                self.bdf[1].solve_into(&r2, &mut state.u2)?;
            }
        }
        self.prev = Some([old1, old2, f1, f2]);
        state.enforce_clamps();
        state.t += self.dt;
        Ok(())
    }
}

/// Which integrator a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    Sbdf2,
}

#[allow(clippy::large_enum_variant)]
enum AnyStepper<'a> {
    Euler(Stepper<'a>),
    Sbdf2(Sbdf2<'a>),
}

impl AnyStepper<'_> {
    fn step(&mut self, s: &mut CauchyState) -> Result<()> {
        match self {
            AnyStepper::Euler(e) => e.step(s),
            AnyStepper::Sbdf2(b) => b.step(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    pub c: f64,
    /// Root-mean-square deviation of `X(t)` from the fitted line.
    pub fit_rms: f64,
    pub fit_max: f64,
    /// `max |X(t + L/|c|) - X(t) + sign(c) L|` over the fitted window.
    pub period_defect: Option<f64>,
    /// `X(t)` never moved against the fitted direction by more than `1e-6 L`.
    pub monotone_track: bool,
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub dt: f64,
    #[serde(skip)]
    pub final_state: Option<CauchyState>,
}

/// Least-squares slope, intercept.
pub fn linear_fit(t: &[f64], x: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let xm = x.iter().sum::<f64>() / n;
    let stt: f64 = t.iter().map(|v| (v - tm).powi(2)).sum();
    let stx: f64 = t.iter().zip(x).map(|(a, b)| (a - tm) * (b - xm)).sum();
    let slope = if stt > 0.0 { stx / stt } else { 0.0 };
    (slope, xm - slope * tm)
}

fn check_margin(grid: &LineGrid, x: f64) -> Result<()> {
    let margin = BOUNDARY_MARGIN_PERIODS * grid.period;
    if x - grid.x_min() < margin || grid.x(grid.len() - 1) - x < margin {
        return Err(Error::DomainTooSmall { position: x, margin });
    }
    Ok(())
}

/// Evolves `initial` for `t_total` and fits the interface track.
pub fn estimate_speed(
    sys: &CooperativeSystem,
    initial: &CauchyState,
    t_total: f64,
    dt: f64,
    integrator: Integrator,
) -> Result<SpeedEstimate> {
    let grid = initial.grid;
    let mut state = initial.clone();
    let mut stepper = match integrator {
        Integrator::Euler => AnyStepper::Euler(Stepper::new(sys, grid, dt, false)?),
        Integrator::Sbdf2 => AnyStepper::Sbdf2(Sbdf2::new(sys, grid, dt)?),
    };
    let steps = (t_total / dt).ceil() as usize;
    let every = (steps / 2000).max(1);
    let (mut times, mut positions) = (Vec::new(), Vec::new());
    let record = |s: &CauchyState, times: &mut Vec<f64>, positions: &mut Vec<f64>| -> Result<()> {
        let x = s.interface(INTERFACE_LEVEL).ok_or_else(|| Error::Invalid("no interface crossing".into()))?;
        check_margin(&s.grid, x)?;
        times.push(s.t);
        positions.push(x);
        Ok(())
    };
    record(&state, &mut times, &mut positions)?;
    for k in 1..=steps {
        stepper.step(&mut state)?;
        if k % every == 0 || k == steps {
            record(&state, &mut times, &mut positions)?;
        }
    }
    let start = times.iter().position(|&t| t >= TRANSIENT_FRACTION * state.t).unwrap_or(0);
    let (tw, xw) = (&times[start..], &positions[start..]);
    let (slope, icpt) = linear_fit(tw, xw);
    let dev: Vec<f64> = tw.iter().zip(xw).map(|(t, x)| x - (slope * t + icpt)).collect();
    let fit_rms = (dev.iter().map(|d| d * d).sum::<f64>() / dev.len() as f64).sqrt();
    let fit_max = dev.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let c = -slope;
    let period_defect = (c.abs() > STATIONARY_SPEED).then(|| {
        let tp = grid.period / c.abs();
        let mut worst: f64 = 0.0;
        for (i, &t) in tw.iter().enumerate() {
            let target = t + tp;
            if target > *tw.last().unwrap() {
                break;
            }
            let j = tw.partition_point(|&s| s < target).max(1);
            let w = (target - tw[j - 1]) / (tw[j] - tw[j - 1]);
            let xt = xw[j - 1] + w * (xw[j] - xw[j - 1]);
            worst = worst.max((xt - xw[i] + c.signum() * grid.period).abs());
        }
        worst
    });
    let dir = -c.signum();
    let monotone_track = xw.windows(2).all(|w| dir * (w[1] - w[0]) >= -1e-6 * grid.period);
    Ok(SpeedEstimate { c, fit_rms, fit_max, period_defect, monotone_track, times, positions, dt, final_state: Some(state) })
}

/// Options for [`extract_profile`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    /// Poincare fixed-point tolerance `|P v - v|_inf`. Rounding puts a
    /// floor near `1e-12` on it.
    pub tol: f64,
    /// Target time step; the actual step divides the moving-frame period.
    pub dt_target: f64,
    /// Extra periods after `tol` is met, letting the remaining transient
    /// decay to the rounding floor before the table is recorded.
    pub polish_periods: usize,
    /// Total Poincare periods before giving up.
    pub max_periods: usize,
    /// Random points for the residual.
    pub residual_samples: usize,
    pub seed: u64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { tol: 1e-11, dt_target: 0.02, polish_periods: 40, max_periods: 3000, residual_samples: 4000, seed: 0 }
    }
}

/// Per-period bookkeeping of the Poincare iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareRecord {
    pub c: f64,
    pub drift: f64,
    pub defect: f64,
}

struct PoincareRun<'a> {
    grid: LineGrid,
    n: usize,
    steps: usize,
    sign: i64,
    integ: Sbdf2<'a>,
}

impl<'a> PoincareRun<'a> {
    fn new(sys: &'a CooperativeSystem, grid: LineGrid, c: f64, s: usize) -> Result<Self> {
        let n = grid.per_period;
        let steps = s * n;
        let dt = grid.period / (c.abs() * steps as f64);
        Ok(Self { grid, n, steps, sign: c.signum() as i64, integ: Sbdf2::new(sys, grid, dt)? })
    }

    fn set_speed(&mut self, c: f64) -> Result<()> {
        self.sign = c.signum() as i64;
        self.integ.set_dt(self.grid.period / (c.abs() * self.steps as f64))
    }

    /// Evolves one moving-frame period and shifts back by one spatial period.
    /// `record(m', state)` sees the state before each step.
    fn period(&mut self, state: &mut CauchyState, mut record: impl FnMut(usize, &CauchyState)) -> Result<()> {
        for k in 0..self.steps {
            record(k, state);
            self.integ.step(state)?;
        }
        let shift = self.sign * self.n as i64;
        state.shift_nodes(shift);
        self.integ.shift_history(shift);
        Ok(())
    }

    fn recenter(&mut self, state: &mut CauchyState) -> Result<()> {
        let x = state.interface(INTERFACE_LEVEL).ok_or_else(|| Error::Invalid("no interface crossing".into()))?;
        let center = 0.5 * (self.grid.x_min() + self.grid.x(self.grid.len() - 1));
        let periods = ((center - x) / self.grid.period).round() as i64;
        if periods.abs() >= 2 {
            let shift = periods * self.n as i64;
            state.shift_nodes(shift);
            self.integ.shift_history(shift);
        }
        Ok(())
    }
}

/// Pulsating front by Poincare iteration in a frame that moves one period
/// per step of the map. After every period the speed is corrected by the
/// drift of the interface over that period.
pub fn extract_profile(
    sys: &CooperativeSystem,
    c_estimate: f64,
    start: &CauchyState,
    opts: &ProfileOptions,
) -> Result<FrontProfile> {
    let grid = start.grid;
    if grid.per_period != sys.n() {
        return Err(Error::Dimension { expected: sys.n(), got: grid.per_period });
    }
    if c_estimate.abs() < STATIONARY_SPEED {
        return standing_front(sys, start, opts);
    }
    let l = grid.period;
    let period_time = l / c_estimate.abs();
    let cap = T_CAP_PERIODS * l;
    if period_time > cap {
        return Err(Error::SpeedTooSmall { c: c_estimate, period: period_time, cap });
    }
    let s = ((grid.h() / (c_estimate.abs() * opts.dt_target)).ceil() as usize).max(1);
    let mut state = start.clone();
    let mut c = c_estimate;
    let mut history = Vec::new();
    let mut run = PoincareRun::new(sys, grid, c, s)?;
    run.recenter(&mut state)?;
    let interface = |st: &CauchyState| st.interface(INTERFACE_LEVEL).ok_or_else(|| Error::Invalid("no interface".into()));
    let fail = |history: &[PoincareRecord], what: &str| Error::NoConvergence {
        what: what.into(),
        iterations: history.len(),
        residual: history.last().map_or(f64::NAN, |r| r.defect),
    };
    // periods still to run after the tolerance is met
    let mut polish: Option<usize> = None;
    let mut polish_speeds = Vec::new();
    loop {
        if history.len() >= opts.max_periods {
            return Err(fail(&history, "Poincare iteration"));
        }
        let before = state.clone();
        let x0 = interface(&state)?;
        run.period(&mut state, |_, _| {})?;
        let x1 = interface(&state)?;
        check_margin(&grid, x1)?;
        let drift = x1 - x0;
        let defect = state.sup_distance(&before);
        history.push(PoincareRecord { c, drift, defect });
        if let Some(k) = polish {
            polish_speeds.push(c);
            if k == 0 {
                break;
            }
            polish = Some(k - 1);
        } else if defect < opts.tol {
            polish = Some(opts.polish_periods);
        }
        // a speed error shows up at once as drift, exactly linearly
        c -= c.abs() * drift / l;
        if c.abs() < STATIONARY_SPEED {
            return standing_front(sys, &state, opts);
        }
        run.set_speed(c)?;
        run.recenter(&mut state)?;
    }
    // Per-period corrections jitter the front by the rounding noise in the
    // drift; the table is recorded at the averaged speed, held fixed.
    c = polish_speeds.iter().sum::<f64>() / polish_speeds.len() as f64;
    run.set_speed(c)?;
    run.period(&mut state, |_, _| {})?;
    // three consecutive periods; the first two give the periodicity defect
    let first = profile::record_period(&mut run, &mut state, s)?;
    let second = profile::record_period(&mut run, &mut state, s)?;
    let third = profile::record_period(&mut run, &mut state, s)?;
    let dt = run.integ.dt();
    let periods = history.len();
    profile::assemble(sys, c, &grid, dt, [first, second, third], periods, history, opts)
}
