//! The plaintext metafile published next to every hosted envelope.
//!
//! A metafile is what a requester fetches first: it names the owner's DCS
//! and the envelope it describes. On disk it is a JSON object with the keys
//! `owner-url`, `meta-data`, `description`, `data-url` and `data-hash-sha1`,
//! always emitted in that order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::envelope::sha1_hex;

/// Suffix appended to a blob name to form its metafile name.
pub const METAFILE_SUFFIX: &str = ".meta.json";
/// Suffix appended to a plaintext file name to form its envelope name.
pub const ENVELOPE_SUFFIX: &str = ".enc";

#[derive(Debug, Error)]
pub enum MetafileError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("metafile is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("metafile schema error: {0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, MetafileError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metafile {
    pub owner_url: String,
    pub meta_data: BTreeMap<String, String>,
    pub description: Option<String>,
    pub data_url: String,
    pub data_hash_sha1: String,
}

#[derive(Serialize)]
struct WireOut<'a> {
    #[serde(rename = "owner-url")]
    owner_url: &'a str,
    #[serde(rename = "meta-data")]
    meta_data: &'a BTreeMap<String, String>,
    description: &'a Option<String>,
    #[serde(rename = "data-url")]
    data_url: &'a str,
    #[serde(rename = "data-hash-sha1")]
    data_hash_sha1: &'a str,
}

#[derive(Deserialize)]
struct WireIn {
    #[serde(rename = "owner-url")]
    owner_url: Option<String>,
    #[serde(rename = "meta-data", default)]
    meta_data: Option<BTreeMap<String, String>>,
    #[serde(default)]
    description: Option<String>,
    #[serde(rename = "data-url")]
    data_url: Option<String>,
    #[serde(rename = "data-hash-sha1")]
    data_hash_sha1: Option<String>,
}

/// Parses `raw` as an absolute http(s) URL.
pub fn parse_http_url(raw: &str) -> std::result::Result<Url, String> {
    let url = Url::parse(raw).map_err(|e| format!("{raw:?} is not an absolute URL: {e}"))?;
    match url.scheme() {
        "http" | "https" if url.has_host() => Ok(url),
        "http" | "https" => Err(format!("{raw:?} has no host")),
        other => Err(format!("{raw:?} uses unsupported scheme {other:?}")),
    }
}

fn is_sha1_hex(s: &str) -> bool {
    s.len() == 40 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

impl Metafile {
    fn validate(&self) -> std::result::Result<(), String> {
        parse_http_url(&self.owner_url).map_err(|e| format!("owner-url: {e}"))?;
        parse_http_url(&self.data_url).map_err(|e| format!("data-url: {e}"))?;
        if !is_sha1_hex(&self.data_hash_sha1) {
            return Err(format!(
                "data-hash-sha1 {:?} is not 40 lowercase hex characters",
                self.data_hash_sha1
            ));
        }
        Ok(())
    }
}

pub fn build_metafile(
    owner_url: &str,
    data_url: &str,
    envelope: &[u8],
    tags: BTreeMap<String, String>,
    description: Option<String>,
) -> Result<Metafile> {
    let m = Metafile {
        owner_url: owner_url.to_owned(),
        meta_data: tags,
        description,
        data_url: data_url.to_owned(),
        data_hash_sha1: sha1_hex(envelope),
    };
    m.validate().map_err(MetafileError::InvalidArgument)?;
    Ok(m)
}

pub fn serialize_metafile(m: &Metafile) -> Vec<u8> {
    let wire = WireOut {
        owner_url: &m.owner_url,
        meta_data: &m.meta_data,
        description: &m.description,
        data_url: &m.data_url,
        data_hash_sha1: &m.data_hash_sha1,
    };
    let mut out = serde_json::to_vec_pretty(&wire).expect("metafile serializes");
    out.push(b'\n');
    out
}

pub fn parse_metafile(data: &[u8]) -> Result<Metafile> {
    let wire: WireIn = serde_json::from_slice(data).map_err(|e| {
        if e.is_data() {
            MetafileError::Schema(e.to_string())
        } else {
            MetafileError::Parse(e)
        }
    })?;
    let missing = |k: &str| MetafileError::Schema(format!("missing required key {k:?}"));
    let m = Metafile {
        owner_url: wire.owner_url.ok_or_else(|| missing("owner-url"))?,
        meta_data: wire.meta_data.unwrap_or_default(),
        description: wire.description,
        data_url: wire.data_url.ok_or_else(|| missing("data-url"))?,
        data_hash_sha1: wire.data_hash_sha1.ok_or_else(|| missing("data-hash-sha1"))?,
    };
    m.validate().map_err(MetafileError::Schema)?;
    Ok(m)
}

pub fn verify_metafile_hash(m: &Metafile, envelope: &[u8]) -> bool {
    sha1_hex(envelope) == m.data_hash_sha1
}
