//! Per-datatype redactors and the pipeline that dispatches to them.
//!
//! Every redactor takes decrypted bytes plus an ordered op list and returns
//! the redacted bytes. Ops run strictly in list order. Any error aborts the
//! whole pipeline; callers must not release partial output.

mod csv;
mod detector;
mod image;
mod json;
mod patterns;
mod text;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::policy::{Action, Datatype, RedactionOp};

pub use self::csv::redact_csv;
pub use self::detector::{run_external_detector, DetectorMode, Region, RegionDetector};
pub use self::image::{pixelate, redact_image};
pub use self::json::redact_json;
pub use self::patterns::PatternLibrary;
pub use self::text::redact_text;

/// Replacement written wherever a value or match is masked.
pub const MASK: &str = "[REDACTED]";

#[derive(Debug, Error)]
pub enum RedactError {
    #[error("content does not parse as {datatype}: {reason}")]
    Datatype { datatype: Datatype, reason: String },
    #[error("invalid redaction: {0}")]
    Validation(String),
    #[error("redaction configuration error: {0}")]
    Configuration(String),
    #[error("region detector failed: {0}")]
    Detector(String),
}

impl RedactError {
    fn datatype(datatype: Datatype, reason: impl ToString) -> Self {
        Self::Datatype {
            datatype,
            reason: reason.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, RedactError>;

/// Redacted bytes plus notes about ops that had nothing to act on.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Redacted {
    pub content: Vec<u8>,
    pub warnings: Vec<String>,
}

impl Redacted {
    fn unchanged(content: &[u8]) -> Self {
        Self {
            content: content.to_vec(),
            warnings: Vec::new(),
        }
    }
}

/// Named patterns and region detectors available to redactors.
#[derive(Debug, Clone, Default)]
pub struct RedactionTools {
    pub patterns: PatternLibrary,
    pub detectors: BTreeMap<String, RegionDetector>,
}

fn check_applicable(datatype: Datatype, op: &RedactionOp) -> Result<()> {
    op.validate().map_err(|e| RedactError::Validation(e.to_string()))?;
    if !op.action.applies_to(datatype) {
        return Err(RedactError::Validation(format!(
            "{} cannot be applied to {datatype} content",
            op.action
        )));
    }
    Ok(())
}

pub fn apply_pipeline(
    content: &[u8],
    datatype: Datatype,
    ops: &[RedactionOp],
    tools: &RedactionTools,
) -> Result<Redacted> {
    if ops.iter().any(|op| op.action == Action::DropAll) {
        return Ok(Redacted::default());
    }
    if ops.is_empty() {
        return Ok(Redacted::unchanged(content));
    }
    match datatype {
        Datatype::Json => redact_json(content, ops, &tools.patterns),
        Datatype::Csv => redact_csv(content, ops, &tools.patterns),
        Datatype::Txt => redact_text(content, ops, &tools.patterns),
        Datatype::Image => redact_image(content, ops, &tools.detectors),
        Datatype::Unknown => Err(RedactError::Validation(
            "refusing to redact content of unknown datatype".into(),
        )),
    }
}

/// Seam for swapping in instrumented redactors.
pub trait Redactor: Send + Sync {
    fn redact(
        &self,
        content: &[u8],
        datatype: Datatype,
        ops: &[RedactionOp],
        tools: &RedactionTools,
    ) -> Result<Redacted>;
}

/// The standard redactor: [`apply_pipeline`].
#[derive(Debug, Clone, Copy, Default)]
pub struct PipelineRedactor;

impl Redactor for PipelineRedactor {
    fn redact(
        &self,
        content: &[u8],
        datatype: Datatype,
        ops: &[RedactionOp],
        tools: &RedactionTools,
    ) -> Result<Redacted> {
        apply_pipeline(content, datatype, ops, tools)
    }
}

/// Keeps the first whitespace-delimited token of `s`.
pub(crate) fn first_token(s: &str) -> &str {
    s.split_whitespace().next().unwrap_or("")
}
