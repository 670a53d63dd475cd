use super::patterns::PatternLibrary;
use super::{check_applicable, RedactError, Redacted, Result, MASK};
use crate::policy::{Datatype, RedactionOp};

pub fn redact_text(content: &[u8], ops: &[RedactionOp], patterns: &PatternLibrary) -> Result<Redacted> {
    for op in ops {
        check_applicable(Datatype::Txt, op)?;
    }
    let mut text = std::str::from_utf8(content)
        .map_err(|e| RedactError::datatype(Datatype::Txt, e))?
        .to_owned();
    for op in ops {
        let re = patterns.get(&op.target)?;
        if re.is_match(&text) {
            text = re.replace_all(&text, MASK).into_owned();
        }
    }
    Ok(Redacted {
        content: text.into_bytes(),
        warnings: Vec::new(),
    })
}
