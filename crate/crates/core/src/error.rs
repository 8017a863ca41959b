use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },

    #[error("instrument cell `{label}` is empty")]
    EmptyCell { label: String },

    #[error("instrument takes the single value `{label}`; at least two are needed")]
    SingleInstrumentValue { label: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular design: columns {columns:?} are linearly dependent")]
    SingularDesign { columns: Vec<String> },

    #[error("interior point solver did not converge after {iterations} iterations (gap {gap:.3e})")]
    Convergence { iterations: usize, gap: f64 },

    #[error("at quantile level {v}: {source}")]
    AtQuantile { v: f64, source: Box<Error> },

    #[error("pair ({}, {}): {source}", pair.0, pair.1)]
    InPair { pair: (String, String), source: Box<Error> },

    #[error("{0} is not a grid point of the fitted quantile grid")]
    OffGrid(f64),

    #[error("treatment {t} lies outside the basis support [{lo}, {hi}]")]
    Extrapolation { t: f64, lo: f64, hi: f64 },

    #[error("weak first stage: denominator {denominator:.4e} (se {se:.4e})")]
    WeakFirstStage { denominator: f64, se: f64 },

    #[error("all weight trimmed away: every |dq| is below the threshold {threshold:.4e}")]
    AllTrimmed { threshold: f64 },

    #[error("no cells with {sign} quantile change survive trimming")]
    EmptySignSet { sign: String },

    #[error("weak multi-valued first stage: {0}")]
    WeakMultiFirstStage(String),

    #[error("sample too small: {have} rows for {need} parameters")]
    SampleSize { have: usize, need: usize },

    #[error("bootstrap unstable: {failed} of {total} replicates failed")]
    BootstrapUnstable { failed: usize, total: usize },

    #[error("ill-conditioned matrix: {0}")]
    IllConditioned(String),

    #[error("expression error: {0}")]
    Expression(String),

    #[error("DGP specification inconsistent: {0}")]
    SpecConsistency(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Short stable name of the variant, looking through pair and quantile
    /// wrappers.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Parse { .. } => "parse",
            Error::NonFinite { .. } => "non_finite",
            Error::EmptyCell { .. } => "empty_cell",
            Error::SingleInstrumentValue { .. } => "single_instrument_value",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::SingularDesign { .. } => "singular_design",
            Error::Convergence { .. } => "convergence",
            Error::AtQuantile { source, .. } | Error::InPair { source, .. } => source.kind(),
            Error::OffGrid(_) => "off_grid",
            Error::Extrapolation { .. } => "extrapolation",
            Error::WeakFirstStage { .. } => "weak_first_stage",
            Error::AllTrimmed { .. } => "all_trimmed",
            Error::EmptySignSet { .. } => "empty_sign_set",
            Error::WeakMultiFirstStage(_) => "weak_multi_first_stage",
            Error::SampleSize { .. } => "sample_size",
            Error::BootstrapUnstable { .. } => "bootstrap_unstable",
            Error::IllConditioned(_) => "ill_conditioned",
            Error::Expression(_) => "expression",
            Error::SpecConsistency(_) => "spec_consistency",
            Error::Oracle(_) => "oracle",
            Error::Io(_) => "io",
        }
    }
}
