use mcq_harness::bias_probe::ProbeError;
use mcq_harness::dataset::DatasetError;
use mcq_harness::gateway::GatewayError;
use mcq_harness::metrics::MetricsError;
use mcq_harness::protocol::ProtocolError;
use mcq_harness::semantic_spread::EmbeddingError;
use thiserror::Error;

/// Command failure, classified by the process exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("provider failure: {0}")]
    Provider(String),
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Provider(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Provider(e.to_string()),
        }
    }
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        match e {
            ProbeError::Gateway(g) => g.into(),
            ProbeError::AllUnparseable { .. } => CliError::Provider(e.to_string()),
            ProbeError::Arity { .. } | ProbeError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::Remote(_) => CliError::Provider(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Gateway { .. } => CliError::Provider(e.to_string()),
            ProtocolError::Embedding(inner) => inner.into(),
            ProtocolError::Invalid(_) | ProtocolError::MissingBiasProfile(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}
