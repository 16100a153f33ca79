use thiserror::Error;

/// Everything that can go wrong between building a basis and extracting a
/// heading-error curve.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid species: {0}")]
    InvalidSpecies(String),

    #[error("invalid configuration: {key} = {value} violates {bound}")]
    InvalidConfig {
        key: String,
        value: String,
        bound: String,
    },

    #[error("perturbative Zeeman expansion out of range: |mu_eff B0| / Delta_S = {ratio:.3e} > 0.05")]
    PerturbativeValidity { ratio: f64 },

    #[error("invalid mean field: |<S_z>| = {0} exceeds 1/2")]
    InvalidMeanField(f64),

    #[error("basis mismatch: expected operator dimension {expected}, found {found}")]
    BasisMismatch { expected: usize, found: usize },

    #[error("excited-sector block of the unperturbed generator is singular")]
    DegenerateElimination,

    #[error("steady state did not converge after {iterations} iterations (last change {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("population {value:.3e} of level {index} is negative beyond round-off")]
    NegativePopulation { index: usize, value: f64 },

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("no sign change of the {geometry} signal between {lo_hz:.3} Hz and {hi_hz:.3} Hz")]
    NoZeroCrossing {
        geometry: String,
        lo_hz: f64,
        hi_hz: f64,
        /// Scanned `(omega [rad/s], signal)` pairs.
        trace: Vec<(f64, f64)>,
    },

    #[error("ambiguous zero crossing: {0:.6} Hz and {1:.6} Hz are equidistant from the Larmor frequency")]
    AmbiguousCrossing(f64, f64),

    #[error("at theta = {theta_deg:.3} deg: {source}")]
    AtAngle {
        theta_deg: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("pairing mismatch: {0}")]
    PairingMismatch(String),

    #[error("angle {theta_deg:.4} deg is not on the curve grid")]
    GridMiss { theta_deg: f64 },

    #[error("<S_z> = {0} sits on the +-1/2 boundary; spin temperature is infinite")]
    InfiniteSpinTemperature(f64),

    #[error("integrator step size collapsed ({0}); lower the Rabi frequency or raise the damping rates")]
    Stiffness(String),

    #[error("demodulation needs at least 20 full drive periods, trace covers {0:.2}")]
    InsufficientPeriods(f64),

    #[error("Zeeman level labeling is ambiguous: x = {0:.3} is outside the perturbative regime")]
    LabelingAmbiguity(f64),
}

impl Error {
    pub(crate) fn config(key: &str, value: impl ToString, bound: &str) -> Self {
        Error::InvalidConfig {
            key: key.to_string(),
            value: value.to_string(),
            bound: bound.to_string(),
        }
    }

    pub(crate) fn at_angle(theta: f64, source: Error) -> Self {
        Error::AtAngle {
            theta_deg: theta.to_degrees(),
            source: Box::new(source),
        }
    }
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
