use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use super::patterns::PatternLibrary;
use super::{check_applicable, first_token, RedactError, Redacted, Result, MASK};
use crate::policy::{Action, Datatype, RedactionOp};

const DELIMITERS: [u8; 4] = *b",\t;|";

/// Picks the candidate delimiter that occurs most often in the header line.
fn sniff_delimiter(content: &[u8]) -> u8 {
    let header = content.split(|&b| b == b'\n').next().unwrap_or_default();
    DELIMITERS
        .iter()
        .copied()
        .max_by_key(|d| (header.iter().filter(|&&b| b == *d).count(), *d == b','))
        .unwrap_or(b',')
}

fn columns(header: &[String], name: &str) -> Vec<usize> {
    header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.as_str() == name)
        .map(|(i, _)| i)
        .collect()
}

pub fn redact_csv(content: &[u8], ops: &[RedactionOp], patterns: &PatternLibrary) -> Result<Redacted> {
    for op in ops {
        check_applicable(Datatype::Csv, op)?;
    }
    let delimiter = sniff_delimiter(content);
    let bad = |e: &dyn std::fmt::Display| RedactError::datatype(Datatype::Csv, e);
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .delimiter(delimiter)
        .from_reader(content);
    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(&e))?;
        rows.push(record.iter().map(str::to_owned).collect());
    }
    if rows.is_empty() {
        return Err(bad(&"missing header row"));
    }
    let mut header = rows.remove(0);

    let mut warnings = Vec::new();
    for op in ops {
        if op.action == Action::MaskPattern {
            let re = patterns.get(&op.target)?;
            for cell in rows.iter_mut().flatten() {
                if re.is_match(cell) {
                    *cell = re.replace_all(cell, MASK).into_owned();
                }
            }
            continue;
        }
        let cols = columns(&header, &op.target);
        if cols.is_empty() {
            warnings.push(format!("{op}: column not present"));
            continue;
        }
        match op.action {
            Action::DropColumn => {
                let keep = |row: &mut Vec<String>| {
                    let mut i = 0;
                    row.retain(|_| {
                        i += 1;
                        !cols.contains(&(i - 1))
                    });
                };
                keep(&mut header);
                rows.iter_mut().for_each(keep);
            }
            Action::MaskField => {
                for row in &mut rows {
                    cols.iter().for_each(|&c| row[c] = MASK.to_owned());
                }
            }
            Action::KeepPartial => {
                for row in &mut rows {
                    for &c in &cols {
                        row[c] = first_token(&row[c]).to_owned();
                    }
                }
            }
            _ => unreachable!("checked by check_applicable"),
        }
    }

    let mut writer = WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(Vec::with_capacity(content.len()));
    // A header with every column dropped still yields one (empty) line per row.
    for row in std::iter::once(&header).chain(rows.iter()) {
        writer
            .write_record(&StringRecord::from(row.clone()))
            .map_err(|e| bad(&e))?;
    }
    let content = writer.into_inner().map_err(|e| bad(&e.error()))?;
    Ok(Redacted { content, warnings })
}
