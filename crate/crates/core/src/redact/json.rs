use serde_json::Value;

use super::patterns::PatternLibrary;
use super::{check_applicable, first_token, RedactError, Redacted, Result, MASK};
use crate::policy::{Action, Datatype, RedactionOp};

/// Visits every value reachable by the dot-separated `path`. Arrays are
/// transparent: `people.ssn` reaches `ssn` in every element of `people`.
/// Returns how many values were visited.
fn visit_path(
    v: &mut Value,
    path: &[&str],
    f: &mut dyn FnMut(&mut serde_json::Map<String, Value>, &str) -> bool,
) -> usize {
    match v {
        Value::Array(items) => items.iter_mut().map(|item| visit_path(item, path, f)).sum(),
        Value::Object(map) => match path {
            [] => 0,
            [last] => usize::from(f(map, last)),
            [head, rest @ ..] => map.get_mut(*head).map_or(0, |child| visit_path(child, rest, f)),
        },
        _ => 0,
    }
}

fn mask_strings(v: &mut Value, re: &regex::Regex) {
    match v {
        Value::String(s) => {
            if re.is_match(s) {
                *s = re.replace_all(s, MASK).into_owned();
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|i| mask_strings(i, re)),
        Value::Object(map) => map.values_mut().for_each(|i| mask_strings(i, re)),
        _ => {}
    }
}

fn apply_op(doc: &mut Value, op: &RedactionOp, patterns: &PatternLibrary) -> Result<Option<String>> {
    let path: Vec<&str> = op.target.split('.').collect();
    let hits = match op.action {
        Action::DropField => visit_path(doc, &path, &mut |map, key| map.shift_remove(key).is_some()),
        Action::MaskField => visit_path(doc, &path, &mut |map, key| match map.get_mut(key) {
            Some(v) => {
                *v = Value::String(MASK.into());
                true
            }
            None => false,
        }),
        Action::KeepPartial => visit_path(doc, &path, &mut |map, key| match map.get_mut(key) {
            Some(v) => {
                // Only strings have tokens; anything else is masked outright.
                *v = match v {
                    Value::String(s) => Value::String(first_token(s).to_owned()),
                    _ => Value::String(MASK.into()),
                };
                true
            }
            None => false,
        }),
        Action::MaskPattern => {
            mask_strings(doc, patterns.get(&op.target)?);
            return Ok(None);
        }
        _ => unreachable!("checked by check_applicable"),
    };
    Ok((hits == 0).then(|| format!("{op}: field not present")))
}

pub fn redact_json(content: &[u8], ops: &[RedactionOp], patterns: &PatternLibrary) -> Result<Redacted> {
    for op in ops {
        check_applicable(Datatype::Json, op)?;
    }
    let mut doc: Value = serde_json::from_slice(content).map_err(|e| RedactError::datatype(Datatype::Json, e))?;
    let mut warnings = Vec::new();
    for op in ops {
        warnings.extend(apply_op(&mut doc, op, patterns)?);
    }
    let content = serde_json::to_vec(&doc).expect("JSON value serializes");
    Ok(Redacted { content, warnings })
}
