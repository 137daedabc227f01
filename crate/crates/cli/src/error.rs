use serde::Serialize;

/// Failure reported as JSON on stderr.
#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub error: &'static str,
    /// Library error variant, when there is one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            error: "ConfigInvalid",
            variant: None,
            message: message.into(),
            exit_code: 2,
        }
    }

    pub fn numerics(message: impl Into<String>) -> Self {
        Self {
            error: "NumericsFailed",
            variant: None,
            message: message.into(),
            exit_code: 3,
        }
    }
}

impl From<renege_ldp::Error> for CliError {
    fn from(e: renege_ldp::Error) -> Self {
        use renege_ldp::Error as E;
        let numerics = matches!(
            e,
            E::BracketingFailed(_) | E::OptimalityViolated(_) | E::NotConverged { .. } | E::Csv(_)
        );
        let debug = format!("{e:?}");
        let variant = debug.split(['(', ' ', '{']).next().unwrap_or_default().to_string();
        let mut out = if numerics {
            CliError::numerics(e.to_string())
        } else {
            CliError::config(e.to_string())
        };
        out.variant = Some(variant);
        out
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::config(format!("io: {e}"))
    }
}
