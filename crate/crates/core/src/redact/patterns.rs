use std::collections::BTreeMap;

use regex::Regex;

use super::{RedactError, Result};

/// US SSN in `AAA-GG-SSSS`, `AAA GG SSSS` or `AAAGGSSSS` form. Area 000,
/// 666 and 900-999, group 00 and serial 0000 are never issued and do not
/// match. Separators must agree.
fn ssn_pattern() -> String {
    let area = r"(?:00[1-9]|0[1-9]\d|[1-578]\d{2}|6[0-57-9]\d|66[0-57-9])";
    let group = r"(?:0[1-9]|[1-9]\d)";
    let serial = r"(?:000[1-9]|00[1-9]\d|0[1-9]\d{2}|[1-9]\d{3})";
    let forms: Vec<String> = ["-", " ", ""]
        .iter()
        .map(|sep| format!("{area}{sep}{group}{sep}{serial}"))
        .collect();
    format!(r"\b(?:{})\b", forms.join("|"))
}

const STREET_SUFFIXES: &str = "street|st|avenue|ave|road|rd|boulevard|blvd|lane|ln|drive|dr|\
court|ct|way|place|pl|terrace|ter|circle|cir|parkway|pkwy|highway|hwy|square|sq|trail|trl";

/// House number, one to four name words, then a street suffix.
fn street_address_pattern() -> String {
    format!(r"(?i)\b\d{{1,6}}(?:\s+[A-Za-z0-9'-]+){{1,4}}?\s+(?:{STREET_SUFFIXES})\b\.?")
}

#[derive(Debug, Clone)]
pub struct PatternLibrary {
    patterns: BTreeMap<String, Regex>,
}

impl PatternLibrary {
    /// The shipped library: `ssn` and `street_address`.
    pub fn builtin() -> Self {
        let patterns = BTreeMap::from([
            (
                "ssn".to_owned(),
                Regex::new(&ssn_pattern()).expect("ssn pattern compiles"),
            ),
            (
                "street_address".to_owned(),
                Regex::new(&street_address_pattern()).expect("address pattern compiles"),
            ),
        ]);
        Self { patterns }
    }

    pub fn add(&mut self, name: &str, pattern: &str) -> Result<()> {
        if name.is_empty() {
            return Err(RedactError::Configuration("pattern name is empty".into()));
        }
        if self.patterns.contains_key(name) {
            return Err(RedactError::Configuration(format!("pattern {name:?} already defined")));
        }
        let re = Regex::new(pattern).map_err(|e| RedactError::Configuration(format!("pattern {name:?}: {e}")))?;
        self.patterns.insert(name.to_owned(), re);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Regex> {
        self.patterns
            .get(name)
            .ok_or_else(|| RedactError::Validation(format!("no pattern named {name:?}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.patterns.keys().map(String::as_str)
    }
}

impl Default for PatternLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}
