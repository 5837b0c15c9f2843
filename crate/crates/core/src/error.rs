use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("periodic pairing failed: unmatched boundary node {node} at ({x:.6}, {y:.6})")]
    UnmatchedNode { node: usize, x: f64, y: f64 },

    #[error("invalid material parameters: {0}")]
    MaterialParams(String),

    #[error("inverted configuration: det F = {det:e}")]
    InvertedConfiguration { det: f64 },

    #[error("non-finite input to constitutive update")]
    NonFinite,

    #[error("material failure at element {element}, point {point}: {source}")]
    MaterialAt {
        element: usize,
        point: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("element inversion under morphing: det F_mu = {det:e} at quadrature point {point} for mu = {mu:?}")]
    MorphInversion { point: usize, det: f64, mu: Vec<f64> },

    #[error("invalid geometry parameters: {0}")]
    Geometry(String),

    #[error("Newton did not converge at step {step} after {iterations} iterations (residual history {history:?})")]
    NonConvergence {
        step: usize,
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("POD rank {achievable} is smaller than the requested {requested} modes")]
    RankDeficient { requested: usize, achievable: usize },

    #[error("empirical cubature could not reach tolerance {eps:e} (residual {residual:e})")]
    EcmUnreachable { eps: f64, residual: f64 },

    #[error("container format error: {0}")]
    Format(String),

    #[error("container payload error in array '{name}': {message}")]
    Payload { name: String, message: String },

    #[error("model error: {0}")]
    Model(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sample {sample} failed: {source}")]
    Sample {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("macro step {step} failed at Gauss point {point}: {source}")]
    MicroFailure {
        step: usize,
        point: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for errors that originate in the numerical solvers rather than
    /// in the user's inputs.
    pub fn is_solver_failure(&self) -> bool {
        if let Error::Sample { source, .. } = self {
            return source.is_solver_failure();
        }
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Singular(_)
                | Error::MorphInversion { .. }
                | Error::InvertedConfiguration { .. }
                | Error::MaterialAt { .. }
                | Error::MicroFailure { .. }
                | Error::EcmUnreachable { .. }
                | Error::RankDeficient { .. }
                | Error::NonFinite
        )
    }
}
