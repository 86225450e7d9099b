use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("coefficient `{coefficient}` is not positive: value {value:.6e} at x = {x:.6}")]
    NotPositive {
        coefficient: String,
        x: f64,
        value: f64,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("centered stencil is not Metzler at row {row} (off-diagonal {value:.3e}); refine the grid or use upwind advection")]
    NotMetzler { row: usize, value: f64 },

    #[error("singular shifted system (pivot {pivot:.3e}, condition estimate {condition:.3e})")]
    Singular { pivot: f64, condition: f64 },

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("eigenfunction lost positivity (min entry {min:.3e})")]
    NotPositiveEigenfunction { min: f64 },

    #[error("no positive steady state: principal eigenvalue {lambda:.6e} <= 0, so the trivial state is globally stable")]
    NoPositiveState { lambda: f64 },

    #[error("(B1) gap failure: {inequality} does not hold (margin {margin:.3e})")]
    GapFailure { inequality: String, margin: f64 },

    #[error("coexistence state touches the boundary of the order interval (min distance {distance:.3e}); the coupled linearization is not irreducible")]
    NotIrreducible { distance: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("dispersion samples are not unimodal near mu = ({:.6}, {:.6}, {:.6}), ratios ({:.9}, {:.9}, {:.9})", .mus[0], .mus[1], .mus[2], .ratios[0], .ratios[1], .ratios[2])]
    NotUnimodal { mus: [f64; 3], ratios: [f64; 3] },

    #[error("time step {dt:.3e} exceeds the comparison-preserving bound {dt_max:.3e}")]
    StepTooLarge { dt: f64, dt_max: f64 },

    #[error("state ({u1:.6}, {u2:.6}) at node {node} is outside the extended box [-1, 2]^2")]
    OutOfBox { node: usize, u1: f64, u2: f64 },

    #[error("domain too small: interface at {position:.4} is within {margin:.3} of the boundary")]
    DomainTooSmall { position: f64, margin: f64 },

    #[error("speed {c:.3e} too small for the moving-frame period (T = {period:.3e} > cap {cap:.3e}); stationary fronts need the standing-wave solver")]
    SpeedTooSmall { c: f64, period: f64, cap: f64 },

    #[error("profile is not strictly increasing on the core (min dU/dz = {min_slope:.3e})")]
    NotMonotone { min_slope: f64 },

    #[error("could not place the far-field cutoff: {0}")]
    CutoffSearch(String),

    #[error("missing prerequisite: {0}")]
    Missing(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Whether the failure came from bad input rather than from the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::NotPositive { .. })
    }
}
