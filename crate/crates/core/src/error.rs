use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("profile is empty: L >= 1 required")]
    EmptyProfile,

    #[error("profile column `{column}` is non-monotone at layer {layer}")]
    NonMonotone { column: &'static str, layer: usize },

    #[error("profile column `{column}` has a negative or non-finite entry at layer {layer}")]
    NegativeEntry { column: &'static str, layer: usize },

    #[error("layer {layer}: g_sq must be >= sigma_sq")]
    MomentBelowVariance { layer: usize },

    #[error("profile rows out of order: expected layer {expected}, found {found}")]
    LayerOrder { expected: usize, found: usize },

    #[error("cut {cut} for device {device} is outside 1..={layers}")]
    CutOutOfRange {
        device: usize,
        cut: usize,
        layers: usize,
    },

    #[error("split has {split} devices but the network snapshot has {snapshot}")]
    DeviceCountMismatch { split: usize, snapshot: usize },

    #[error("invalid resource distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid hyper-parameters: {0}")]
    InvalidHyperParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "target accuracy {epsilon} is unreachable at interval {interval} with client depth {l_c}"
    )]
    InfeasibleAccuracy {
        epsilon: f64,
        interval: u64,
        l_c: usize,
    },

    #[error("target accuracy leaves no slack above the noise floor (slack {slack})")]
    InfeasibleSlack { slack: f64 },

    #[error("no interval candidate has a positive accuracy margin")]
    DenominatorNonpositive,

    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("training diverged at round {round}: loss {loss}")]
    Divergence { round: u64, loss: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::InfeasibleAccuracy { .. }
                | Error::InfeasibleSlack { .. }
                | Error::DenominatorNonpositive
        )
    }
}
