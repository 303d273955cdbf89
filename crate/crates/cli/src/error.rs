use covreg::CovRegError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or inconsistent input. Exit code 2.
    #[error("{0}")]
    Input(String),
    /// The data were read but the computation failed. Exit code 3.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::Numerical(_) => "numerical",
        }
    }

    /// Single-line JSON record for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "status": "error",
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

fn is_numerical(e: &CovRegError) -> bool {
    match e {
        CovRegError::NonFinite(_)
        | CovRegError::Singular(_)
        | CovRegError::InfeasibleDirection { .. }
        | CovRegError::Eigen(_)
        | CovRegError::NotPsd(_) => true,
        CovRegError::Replicate { source, .. } => is_numerical(source),
        _ => false,
    }
}

impl From<CovRegError> for CliError {
    fn from(e: CovRegError) -> Self {
        if is_numerical(&e) {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
