//! Command-line front end: configuration, dispatch and artifacts.
//!
//! Every command reads one TOML file, writes a JSON report (and CSVs where
//! there is tabular data) under `--out`, and maps the outcome to an exit
//! code: 0 pass, 1 audit or verification failure, 2 configuration error,
//! 3 numerical error, 4 missing prerequisite.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cooperative_transform::CooperativeSystem;
use crate::discretization::{LineGrid, PeriodicGrid};
use crate::error::{Error, Result};
use crate::front_solver::{
    dt_max, estimate_speed, extract_profile, CauchyState, FrontProfile, Integrator, ProfileMeta, ProfileOptions,
    SpeedEstimate,
};
use crate::periodic_coeffs::{validate_system, CompetitionSystem, SystemFile};
use crate::spectral::{principal_eigen, principal_eigen_refined, triangular_pair, write_eigen_csv, Around, Refined};
use crate::steady_states::{
    audit_assumptions, cooperative_system, find_coexistence_states, semitrivial_pair, AuditOptions, Stability,
    DEFAULT_SEEDS,
};
use crate::subsuper_verifier::{
    bracket_shifts, build_pack, global_stability_experiment, sandwich_experiment, verify_inequalities,
    InequalityReport, Lattice, PackConstants, PackOptions, SandwichReport, StabilityReport,
};
use crate::wave_speeds::check_b2;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_MISSING: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "bistable-fronts", version, about = "Pulsating fronts of bistable competition systems in periodic habitats")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for reports and tables.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Skip the prerequisite check on earlier artifacts.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check every standing assumption and print a table of margins.
    Audit,
    /// Principal eigenvalues of the linearizations.
    Eigen,
    /// Spreading speeds and the speed-sum condition.
    Speeds,
    /// Semitrivial and coexistence steady states.
    Steady,
    /// The change of variables to a cooperative system.
    Transform,
    /// Evolve a front-like datum and track its interface.
    Simulate,
    /// Compute the pulsating front and its profile table.
    Front,
    /// Check the sub/supersolution pack and run the stability experiments.
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Audit => "audit",
            Command::Eigen => "eigen",
            Command::Speeds => "speeds",
            Command::Steady => "steady",
            Command::Transform => "transform",
            Command::Simulate => "simulate",
            Command::Front => "front",
            Command::Verify => "verify",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Nodes per period.
    pub n: usize,
    /// Length of the truncated line, in periods.
    pub periods: usize,
    /// Fraction of the order-preserving bound used by Euler steps.
    pub dt_safety: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: 64, periods: 80, dt_safety: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub seeds: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { seeds: DEFAULT_SEEDS }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub t_total: f64,
    pub dt: f64,
    pub integrator: Integrator,
    /// `"smooth"` or `"sharp"`.
    pub initial: String,
    pub center: f64,
    pub width: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { t_total: 20.0, dt: 0.02, integrator: Integrator::Sbdf2, initial: "smooth".into(), center: 0.0, width: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontConfig {
    /// Time spent estimating the speed before the fixed-point iteration.
    pub t_speed: f64,
    pub dt: f64,
    pub integrator: Integrator,
    pub initial_width: f64,
    pub tol: f64,
    pub dt_target: f64,
    pub polish_periods: usize,
    pub max_periods: usize,
    pub residual_samples: usize,
}

impl Default for FrontConfig {
    fn default() -> Self {
        let p = ProfileOptions::default();
        Self {
            t_speed: 60.0,
            dt: 0.02,
            integrator: Integrator::Sbdf2,
            initial_width: 2.0,
            tol: p.tol,
            dt_target: p.dt_target,
            polish_periods: p.polish_periods,
            max_periods: p.max_periods,
            residual_samples: p.residual_samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub lattice_t: usize,
    pub lattice_x: usize,
    pub delta_fraction: f64,
    /// Domain of the sandwich and stability runs, in periods.
    pub periods: usize,
    pub sandwich_t: f64,
    /// Extra room added to the bracketing shifts.
    pub bracket_pad: f64,
    pub stability_t: f64,
    pub stability_dt: f64,
    pub stability_tol: f64,
    pub smooth_center: f64,
    pub smooth_width: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            lattice_t: 64,
            lattice_x: 256,
            delta_fraction: 0.5,
            periods: 100,
            sandwich_t: 40.0,
            bracket_pad: 0.5,
            stability_t: 60.0,
            stability_dt: 0.02,
            stability_tol: 1e-3,
            smooth_center: 3.0,
            smooth_width: 4.0,
        }
    }
}

/// Everything a run reads. Unknown keys are rejected at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub system: SystemFile,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub front: FrontConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("`{name}` must be positive and finite, got {v}")))
    }
}

fn at_least(name: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(Error::Config(format!("`{name}` must be at least {min}, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        at_least("grid.n", g.n, 16)?;
        at_least("grid.periods", g.periods, 2)?;
        positive("grid.dt_safety", g.dt_safety)?;
        if g.dt_safety > 1.0 {
            return Err(Error::Config(format!("`grid.dt_safety` must not exceed 1, got {}", g.dt_safety)));
        }
        at_least("audit.seeds", self.audit.seeds, 1)?;
        let s = &self.simulate;
        positive("simulate.t_total", s.t_total)?;
        positive("simulate.dt", s.dt)?;
        positive("simulate.width", s.width)?;
        if s.initial != "smooth" && s.initial != "sharp" {
            return Err(Error::Config(format!("`simulate.initial` must be \"smooth\" or \"sharp\", got {:?}", s.initial)));
        }
        let f = &self.front;
        for (name, v) in [
            ("front.t_speed", f.t_speed),
            ("front.dt", f.dt),
            ("front.initial_width", f.initial_width),
            ("front.tol", f.tol),
            ("front.dt_target", f.dt_target),
        ] {
            positive(name, v)?;
        }
        at_least("front.max_periods", f.max_periods, 1)?;
        at_least("front.residual_samples", f.residual_samples, 1)?;
        let v = &self.verify;
        at_least("verify.lattice_t", v.lattice_t, 2)?;
        at_least("verify.lattice_x", v.lattice_x, 2)?;
        at_least("verify.periods", v.periods, 2)?;
        for (name, x) in [
            ("verify.delta_fraction", v.delta_fraction),
            ("verify.sandwich_t", v.sandwich_t),
            ("verify.bracket_pad", v.bracket_pad),
            ("verify.stability_t", v.stability_t),
            ("verify.stability_dt", v.stability_dt),
            ("verify.stability_tol", v.stability_tol),
            ("verify.smooth_width", v.smooth_width),
        ] {
            positive(name, x)?;
        }
        if v.delta_fraction > 1.0 {
            return Err(Error::Config(format!("`verify.delta_fraction` must not exceed 1, got {}", v.delta_fraction)));
        }
        Ok(())
    }

    pub fn competition(&self) -> Result<CompetitionSystem> {
        self.system.clone().into_system()
    }

    pub fn cell(&self) -> Result<PeriodicGrid> {
        PeriodicGrid::new(self.system.period, self.grid.n).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn line(&self, periods: usize) -> Result<LineGrid> {
        LineGrid::centered(self.system.period, periods, self.grid.n).map_err(|e| Error::Config(e.to_string()))
    }

    fn profile_options(&self) -> ProfileOptions {
        let f = &self.front;
        ProfileOptions {
            tol: f.tol,
            dt_target: f.dt_target,
            polish_periods: f.polish_periods,
            max_periods: f.max_periods,
            residual_samples: f.residual_samples,
            seed: self.seed,
        }
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        EXIT_CONFIG
    } else if matches!(e, Error::Missing(_)) {
        EXIT_MISSING
    } else {
        EXIT_NUMERICAL
    }
}

/// Wall-clock data kept apart so the rest of a report is reproducible.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunInfo {
    pub elapsed_seconds: f64,
    pub version: String,
}

/// Layout of every JSON artifact.
#[derive(Debug, Serialize, Deserialize)]
pub struct Artifact<R> {
    pub command: String,
    pub passed: bool,
    pub config: RunConfig,
    pub report: R,
    pub run: RunInfo,
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    force: bool,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    fn write_json<R: Serialize>(&self, cmd: Command, passed: bool, report: R, started: Instant) -> Result<()> {
        let art = Artifact {
            command: cmd.name().into(),
            passed,
            config: self.cfg.clone(),
            report,
            run: RunInfo { elapsed_seconds: started.elapsed().as_secs_f64(), version: env!("CARGO_PKG_VERSION").into() },
        };
        let mut text = serde_json::to_string_pretty(&art)?;
        text.push('\n');
        fs::write(self.path(&format!("{}.json", cmd.name())), text)?;
        Ok(())
    }

    fn read_artifact<R: DeserializeOwned>(&self, cmd: Command) -> Result<Artifact<R>> {
        let path = self.path(&format!("{}.json", cmd.name()));
        let text = fs::read_to_string(&path).map_err(|_| {
            Error::Missing(format!("{} not found; run `{}` first", path.display(), cmd.name()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Missing(format!("{} is unreadable ({e}); rerun `{}`", path.display(), cmd.name())))
    }

    fn cooperative(&self) -> Result<CooperativeSystem> {
        cooperative_system(&self.cfg.competition()?, &self.cfg.cell()?)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    match run(&cli) {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_FAIL,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs one command; `Ok(false)` is a completed run whose checks failed.
pub fn run(cli: &Cli) -> Result<bool> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    fs::create_dir_all(&cli.out)
        .map_err(|e| Error::Config(format!("output directory {} is not writable: {e}", cli.out.display())))?;
    let ctx = Ctx { cfg, out: cli.out.clone(), force: cli.force };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command, &ctx))
}

fn dispatch(cmd: Command, ctx: &Ctx) -> Result<bool> {
    let started = Instant::now();
    match cmd {
        Command::Audit => cmd_audit(ctx, started),
        Command::Eigen => cmd_eigen(ctx, started),
        Command::Speeds => cmd_speeds(ctx, started),
        Command::Steady => cmd_steady(ctx, started),
        Command::Transform => cmd_transform(ctx, started),
        Command::Simulate => cmd_simulate(ctx, started),
        Command::Front => cmd_front(ctx, started),
        Command::Verify => cmd_verify(ctx, started),
    }
}

fn cmd_audit(ctx: &Ctx, started: Instant) -> Result<bool> {
    let cfg = &ctx.cfg;
    let s = cfg.competition()?;
    validate_system(&s, 16 * cfg.grid.n)?;
    let opts = AuditOptions { n_seeds: cfg.audit.seeds, seed: cfg.seed };
    let report = audit_assumptions(&s, &cfg.cell()?, opts)?;
    print!("{}", report.table());
    let pass = report.verdict;
    ctx.write_json(Command::Audit, pass, &report, started)?;
    Ok(pass)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EigenReport {
    /// `lambda_0(d_i, a_i, b_i)` with Richardson extrapolation.
    pub lambda_00: [Refined; 2],
    pub mu0: f64,
    pub mu1: f64,
    pub residuals0: [f64; 2],
    pub residuals1: [f64; 2],
}

fn cmd_eigen(ctx: &Ctx, started: Instant) -> Result<bool> {
    let s = ctx.cfg.competition()?;
    let grid = ctx.cfg.cell()?;
    let lam = [
        principal_eigen_refined(&s.d1, &s.a1, &s.b1, &grid)?,
        principal_eigen_refined(&s.d2, &s.a2, &s.b2, &grid)?,
    ];
    for (i, (d, a, b)) in [(&s.d1, &s.a1, &s.b1), (&s.d2, &s.a2, &s.b2)].into_iter().enumerate() {
        let pair = principal_eigen(d, a, b, &grid)?;
        write_eigen_csv(ctx.create(&format!("eigen_species{}.csv", i + 1))?, &grid, &pair.eigenfunction)?;
    }
    let sys = ctx.cooperative()?;
    let e0 = triangular_pair(&sys, Around::Zero)?;
    let e1 = triangular_pair(&sys, Around::One)?;
    for (tag, e) in [("zero", &e0), ("one", &e1)] {
        write_eigen_csv(ctx.create(&format!("eigen_{tag}_phi1.csv"))?, &grid, &e.phi1)?;
        write_eigen_csv(ctx.create(&format!("eigen_{tag}_phi2.csv"))?, &grid, &e.phi2)?;
    }
    println!("lambda_0 species 1: {:.12} (extrapolated)", lam[0].extrapolated);
    println!("lambda_0 species 2: {:.12} (extrapolated)", lam[1].extrapolated);
    println!("mu0 = {:.12}, mu1 = {:.12}", e0.value, e1.value);
    let report = EigenReport { lambda_00: lam, mu0: e0.value, mu1: e1.value, residuals0: e0.residuals, residuals1: e1.residuals };
    ctx.write_json(Command::Eigen, true, &report, started)?;
    Ok(true)
}

fn cmd_speeds(ctx: &Ctx, started: Instant) -> Result<bool> {
    let sys = ctx.cooperative()?;
    let report = check_b2(&sys)?;
    report.c1_minus.write_csv(ctx.create("dispersion_c1_minus.csv")?)?;
    report.c2_plus.write_csv(ctx.create("dispersion_c2_plus.csv")?)?;
    println!(
        "c1- = {:.9}, c2+ = {:.9}, sum = {:.9} ({})",
        report.c1_minus.c_star,
        report.c2_plus.c_star,
        report.sum,
        if report.pass { "pass" } else { "FAIL" }
    );
    let pass = report.pass;
    ctx.write_json(Command::Speeds, pass, &report, started)?;
    Ok(pass)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SteadyReport {
    pub u1_star: StateSummary,
    pub u2_star: StateSummary,
    pub coexistence: Vec<StateSummary>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StateSummary {
    pub mean_u1: f64,
    pub mean_u2: Option<f64>,
    pub min: f64,
    pub max: f64,
    pub residual: f64,
    pub eigenvalue: f64,
    pub stability: Stability,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cmd_steady(ctx: &Ctx, started: Instant) -> Result<bool> {
    let s = ctx.cfg.competition()?;
    let grid = ctx.cfg.cell()?;
    let (u1, u2) = semitrivial_pair(&s, &grid)?;
    let sys = ctx.cooperative()?;
    let states = find_coexistence_states(&sys, ctx.cfg.audit.seeds, ctx.cfg.seed)?;
    let summary = |st: &crate::steady_states::PeriodicSteadyState| {
        let all: Vec<f64> = st.u1.iter().chain(st.u2.iter().flatten()).copied().collect();
        StateSummary {
            mean_u1: mean(&st.u1),
            mean_u2: st.u2.as_deref().map(mean),
            min: all.iter().copied().fold(f64::INFINITY, f64::min),
            max: all.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            residual: st.residual,
            eigenvalue: st.eigenvalue,
            stability: st.stability,
        }
    };
    let mut out = csv::Writer::from_writer(ctx.create("semitrivial.csv")?);
    out.write_record(["x", "u1_star", "u2_star"])?;
    for (j, x) in grid.nodes().iter().enumerate() {
        out.write_record([format!("{x:.16e}"), format!("{:.16e}", u1.u1[j]), format!("{:.16e}", u2.u1[j])])?;
    }
    out.flush()?;
    let mut out = csv::Writer::from_writer(ctx.create("coexistence.csv")?);
    out.write_record(["state", "x", "u1", "u2"])?;
    for (k, st) in states.iter().enumerate() {
        let v2 = st.u2.as_deref().unwrap_or(&[]);
        for (j, x) in grid.nodes().iter().enumerate() {
            out.write_record([
                k.to_string(),
                format!("{x:.16e}"),
                format!("{:.16e}", st.u1[j]),
                format!("{:.16e}", v2.get(j).copied().unwrap_or(f64::NAN)),
            ])?;
        }
    }
    out.flush()?;
    println!("semitrivial means: u1* {:.9}, u2* {:.9}", mean(&u1.u1), mean(&u2.u1));
    println!("interior states found: {}", states.len());
    let report = SteadyReport {
        u1_star: summary(&u1),
        u2_star: summary(&u2),
        coexistence: states.iter().map(summary).collect(),
    };
    ctx.write_json(Command::Steady, true, &report, started)?;
    Ok(true)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TransformReport {
    pub big_d: [f64; 2],
    pub lipschitz_standard: f64,
    pub lipschitz_extended: f64,
    pub dt_max_standard: f64,
    pub dt_max_extended: f64,
    pub c2: f64,
}

fn cmd_transform(ctx: &Ctx, started: Instant) -> Result<bool> {
    let sys = ctx.cooperative()?;
    sys.write_csv(ctx.create("cooperative.csv")?)?;
    let report = TransformReport {
        big_d: [sys.big_d1, sys.big_d2],
        lipschitz_standard: sys.lipschitz_bound(false),
        lipschitz_extended: sys.lipschitz_bound(true),
        dt_max_standard: dt_max(&sys, false),
        dt_max_extended: dt_max(&sys, true),
        c2: sys.c2_constant(),
    };
    println!("D1 = {:.9}, D2 = {:.9}, dt_max = {:.6e}", report.big_d[0], report.big_d[1], report.dt_max_standard);
    ctx.write_json(Command::Transform, true, &report, started)?;
    Ok(true)
}

/// The speed fit without the recorded track.
#[derive(Debug, Serialize, Deserialize)]
pub struct SpeedSummary {
    pub c: f64,
    pub fit_rms: f64,
    pub fit_max: f64,
    pub period_defect: Option<f64>,
    pub monotone_track: bool,
    pub dt: f64,
    pub samples: usize,
}

impl From<&SpeedEstimate> for SpeedSummary {
    fn from(e: &SpeedEstimate) -> Self {
        Self {
            c: e.c,
            fit_rms: e.fit_rms,
            fit_max: e.fit_max,
            period_defect: e.period_defect,
            monotone_track: e.monotone_track,
            dt: e.dt,
            samples: e.times.len(),
        }
    }
}

fn write_track(ctx: &Ctx, name: &str, est: &SpeedEstimate) -> Result<()> {
    let mut out = csv::Writer::from_writer(ctx.create(name)?);
    out.write_record(["t", "X"])?;
    for (t, x) in est.times.iter().zip(&est.positions) {
        out.write_record([format!("{t:.16e}"), format!("{x:.16e}")])?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_simulate(ctx: &Ctx, started: Instant) -> Result<bool> {
    let cfg = &ctx.cfg;
    let sc = &cfg.simulate;
    let sys = ctx.cooperative()?;
    let grid = cfg.line(cfg.grid.periods)?;
    let initial = match sc.initial.as_str() {
        "sharp" => CauchyState::sharp_step(grid, sc.center),
        _ => CauchyState::smooth_step(grid, sc.center, sc.width),
    };
    let dt = match sc.integrator {
        Integrator::Euler => sc.dt.min(cfg.grid.dt_safety * dt_max(&sys, false)),
        Integrator::Sbdf2 => sc.dt,
    };
    let est = estimate_speed(&sys, &initial, sc.t_total, dt, sc.integrator)?;
    write_track(ctx, "simulate_track.csv", &est)?;
    if let Some(fin) = &est.final_state {
        let mut out = csv::Writer::from_writer(ctx.create("final_state.csv")?);
        out.write_record(["x", "u1", "u2"])?;
        for (k, x) in fin.grid.nodes().iter().enumerate() {
            out.write_record([format!("{x:.16e}"), format!("{:.16e}", fin.u1[k]), format!("{:.16e}", fin.u2[k])])?;
        }
        out.flush()?;
    }
    println!("fitted speed c = {:.9} (rms {:.3e})", est.c, est.fit_rms);
    ctx.write_json(Command::Simulate, true, SpeedSummary::from(&est), started)?;
    Ok(true)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FrontReport {
    pub c: f64,
    pub residual: f64,
    pub speed: SpeedSummary,
    pub profile: ProfileMeta,
}

fn cmd_front(ctx: &Ctx, started: Instant) -> Result<bool> {
    let cfg = &ctx.cfg;
    if !ctx.force {
        let audit: Artifact<serde_json::Value> = ctx.read_artifact(Command::Audit)?;
        if audit.config.system != cfg.system {
            return Err(Error::Missing("audit.json belongs to a different system; rerun `audit`".into()));
        }
        if !audit.passed {
            return Err(Error::Missing("the assumption audit did not pass; fix the system or pass --force".into()));
        }
    }
    let fc = &cfg.front;
    let sys = ctx.cooperative()?;
    let grid = cfg.line(cfg.grid.periods)?;
    let initial = CauchyState::smooth_step(grid, 0.0, fc.initial_width);
    let est = estimate_speed(&sys, &initial, fc.t_speed, fc.dt, fc.integrator)?;
    let mut start = est.final_state.clone().ok_or_else(|| Error::Invalid("speed run kept no state".into()))?;
    start.t = 0.0;
    let profile = extract_profile(&sys, est.c, &start, &cfg.profile_options())?;
    profile.write_csv(ctx.create("profile.csv")?)?;
    write_track(ctx, "front_track.csv", &est)?;
    let meta = profile.meta.clone();
    println!("c = {:.9}", meta.c);
    println!("residual = {:.3e}", meta.residual);
    println!(
        "monotone: {}, periodicity defect {:.3e}, far field {:.3e} / {:.3e}",
        meta.monotone, meta.periodicity_defect, meta.far_field.low, meta.far_field.high
    );
    let pass = meta.monotone;
    let report = FrontReport { c: meta.c, residual: meta.residual, speed: SpeedSummary::from(&est), profile: meta };
    ctx.write_json(Command::Front, pass, &report, started)?;
    Ok(pass)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub constants: PackConstants,
    pub inequalities: InequalityReport,
    /// `(z_minus, z_plus)` used by the sandwich, padding included.
    pub shifts: (f64, f64),
    pub sandwich: SandwichReport,
    pub stability: StabilityReport,
}

fn load_front(ctx: &Ctx) -> Result<FrontProfile> {
    let front: Artifact<FrontReport> = ctx.read_artifact(Command::Front)?;
    let cfg = &ctx.cfg;
    if front.config.system != cfg.system || front.config.grid.n != cfg.grid.n {
        return Err(Error::Missing("front.json belongs to a different system or grid; rerun `front`".into()));
    }
    let path = ctx.path("profile.csv");
    let file = File::open(&path).map_err(|_| Error::Missing(format!("{} not found; run `front` first", path.display())))?;
    FrontProfile::read_csv(file, front.report.profile)
}

fn cmd_verify(ctx: &Ctx, started: Instant) -> Result<bool> {
    let cfg = &ctx.cfg;
    let vc = &cfg.verify;
    let profile = load_front(ctx)?;
    let sys = ctx.cooperative()?;
    let e0 = triangular_pair(&sys, Around::Zero)?;
    let e1 = triangular_pair(&sys, Around::One)?;
    let opts = PackOptions { delta_fraction: vc.delta_fraction, ..PackOptions::default() };
    let pack = build_pack(&profile, &sys, &e0, &e1, opts)?;
    let k = &pack.constants;
    println!("pack: beta0 {:.4e}, delta {:.4e}, sigma0 {:.4e}, C3 {:.4e}", k.beta0, k.delta, k.sigma0, k.c3);

    let lattice = Lattice { nt: vc.lattice_t, nx: vc.lattice_x, ..Lattice::default_for(&pack) };
    let inequalities = verify_inequalities(&pack, lattice);
    println!("inequalities on {}x{} lattice: {}", lattice.nt, lattice.nx, verdict(inequalities.passed));

    let grid = cfg.line(vc.periods)?;
    let sharp = CauchyState::sharp_step(grid, 0.0);
    let (zm, zp) = bracket_shifts(&pack, &sharp, vc.bracket_pad)?;
    let bracketed = pack.clone().with_shifts(zm, zp);
    let dt = cfg.grid.dt_safety * dt_max(&sys, true);
    let sandwich = sandwich_experiment(&bracketed, &sys, &sharp, vc.sandwich_t, dt)?;
    println!("sandwich: {} violations, {}", sandwich.violations, verdict(sandwich.passed));

    let data = vec![
        ("sharp".to_string(), sharp),
        ("smooth".to_string(), CauchyState::smooth_step(grid, vc.smooth_center, vc.smooth_width)),
    ];
    let stability = global_stability_experiment(&sys, &pack.interp, &data, vc.stability_t, vc.stability_dt, vc.stability_tol)?;
    stability.write_csv(ctx.create("stability.csv")?)?;
    for r in &stability.runs {
        println!("stability {}: final distance {:.3e}, c {:.9}", r.label, r.final_error, r.c_measured);
    }
    println!("stability: {}", verdict(stability.passed));

    let pass = inequalities.passed && sandwich.passed && stability.passed;
    let report = VerifyReport { constants: pack.constants.clone(), inequalities, shifts: (zm, zp), sandwich, stability };
    ctx.write_json(Command::Verify, pass, &report, started)?;
    Ok(pass)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "FAIL"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SYMMETRIC: &str = r#"
[system]
period = 1.0
d1 = { mean = 1.0 }
d2 = { mean = 1.0 }
b1 = { mean = 1.0 }
b2 = { mean = 1.0 }
a11 = { mean = 1.0 }
a12 = { mean = 1.5 }
a21 = { mean = 1.5 }
a22 = { mean = 1.0 }
"#;

    #[test]
    fn defaults_fill_missing_blocks() {
        let cfg = RunConfig::from_toml_str(SYMMETRIC).unwrap();
        assert_eq!(cfg.grid, GridConfig::default());
        assert_eq!(cfg.verify, VerifyConfig::default());
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        for extra in ["bogus = 1\n", "[grid]\nn = 32\nwidth = 3\n", "[verify]\nlattice = 3\n"] {
            let text = format!("{extra}{SYMMETRIC}");
            let text = if extra.starts_with('[') { format!("{SYMMETRIC}{extra}") } else { text };
            let err = RunConfig::from_toml_str(&text).unwrap_err();
            assert_eq!(exit_code(&err), EXIT_CONFIG, "{extra}");
        }
    }

    #[test]
    fn nonpositive_tolerances_are_rejected() {
        for block in ["[front]\ntol = 0.0\n", "[verify]\nstability_tol = -1e-3\n", "[grid]\nn = 64\nperiods = 80\ndt_safety = 1.5\n"] {
            let err = RunConfig::from_toml_str(&format!("{SYMMETRIC}{block}")).unwrap_err();
            assert!(err.is_config(), "{block}: {err}");
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = RunConfig::from_toml_str(SYMMETRIC).unwrap();
        let again = RunConfig::from_toml_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn exit_codes_follow_the_taxonomy() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Missing("x".into())), EXIT_MISSING);
        assert_eq!(exit_code(&Error::NotMonotone { min_slope: -1.0 }), EXIT_NUMERICAL);
    }
}
