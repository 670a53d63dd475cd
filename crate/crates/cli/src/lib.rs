//! Owner and requester tooling: publishing encrypted data, registering
//! requesters, editing policy, and talking to a DCS.

pub mod commands;
pub mod workspace;

use std::path::PathBuf;

use cagecoach_server::AccessStatus;

pub use commands::{
    cmd_inspect, cmd_policy_add, cmd_publish, cmd_register_requester, cmd_request, cmd_request_via_metafile,
    format_summary, CredentialBundle, PolicyAddArgs, PublishArgs, PublishOutcome, DEFAULT_KEY_ID,
};
pub use workspace::OwnerWorkspace;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("workspace is locked by another command ({})", .0.display())]
    Busy(PathBuf),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Http(String),
    #[error("{}: {reason}", status_name(*.status))]
    Refused { status: AccessStatus, reason: String },
}

impl From<reqwest::Error> for CliError {
    fn from(e: reqwest::Error) -> Self {
        CliError::Http(e.to_string())
    }
}

fn status_name(s: AccessStatus) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_else(|| format!("{s:?}"))
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;

/// Process exit code for an access status.
pub fn exit_code_for(status: AccessStatus) -> i32 {
    match status {
        AccessStatus::Ok => EXIT_OK,
        AccessStatus::Rejected => 3,
        AccessStatus::NotFound => 4,
        AccessStatus::FetchFailed => 5,
        AccessStatus::RedactionFailed => 6,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Refused { status, .. } => exit_code_for(*status),
            _ => EXIT_FAILURE,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let all = [
            AccessStatus::Ok,
            AccessStatus::Rejected,
            AccessStatus::NotFound,
            AccessStatus::FetchFailed,
            AccessStatus::RedactionFailed,
        ];
        let mut codes: Vec<i32> = all.iter().map(|s| exit_code_for(*s)).collect();
        codes.push(EXIT_FAILURE);
        codes.push(2); // clap usage errors
        let n = codes.len();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), n);
    }

    #[test]
    fn refused_message_uses_wire_name() {
        let e = CliError::Refused {
            status: AccessStatus::FetchFailed,
            reason: "boom".into(),
        };
        assert_eq!(e.to_string(), "fetch_failed: boom");
        assert_eq!(e.exit_code(), 5);
    }
}
