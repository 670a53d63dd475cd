//! DCS configuration: requester registry, data profiles, policies and keys.
//!
//! Layout of a config directory:
//!
//! ```text
//! keys/<key-id>.key        64 lowercase hex characters
//! requesters/<id>.json     {"id", "private-key" (PKCS#8 PEM), "passphrase"}
//! profiles.json            [{"data-url", "item-name"?, "datatype", "key-id", "data-hash-sha1"?}]
//! policies.json            redaction policy set
//! detectors.json           optional, [{"name", "mode", "config"}]
//! patterns.json            optional, {"name": "regex"}
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use cagecoach_core::envelope::{decrypt_phrase, phrases_match, PhrasePrivateKey, SymmetricKey};
use cagecoach_core::metafile::parse_http_url;
use cagecoach_core::policy::{load_policy_set, Datatype, PolicySet};
use cagecoach_core::redact::{PatternLibrary, RedactionTools, RegionDetector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KEYS_DIR: &str = "keys";
pub const REQUESTERS_DIR: &str = "requesters";
pub const PROFILES_FILE: &str = "profiles.json";
pub const POLICIES_FILE: &str = "policies.json";
pub const DETECTORS_FILE: &str = "detectors.json";
pub const PATTERNS_FILE: &str = "patterns.json";
pub const KEY_EXT: &str = "key";

/// Every problem found while loading a config directory.
#[derive(Debug, Error)]
pub struct StateError {
    pub problems: Vec<(PathBuf, String)>,
}

impl fmt::Display for StateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid DCS configuration:")?;
        for (path, msg) in &self.problems {
            write!(f, "\n  {}: {msg}", path.display())?;
        }
        Ok(())
    }
}

/// On-disk form of a registry entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequesterFile {
    pub id: String,
    #[serde(rename = "private-key")]
    pub private_key: String,
    pub passphrase: String,
}

/// On-disk form of a data profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileEntry {
    #[serde(rename = "data-url")]
    pub data_url: String,
    #[serde(rename = "item-name", default, skip_serializing_if = "Option::is_none")]
    pub item_name: Option<String>,
    pub datatype: Datatype,
    #[serde(rename = "key-id")]
    pub key_id: String,
    #[serde(rename = "data-hash-sha1", default, skip_serializing_if = "Option::is_none")]
    pub data_hash_sha1: Option<String>,
}

pub struct RequesterRecord {
    pub id: String,
    pub private_key: PhrasePrivateKey,
    pub passphrase: String,
}

impl fmt::Debug for RequesterRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RequesterRecord")
            .field("id", &self.id)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataProfile {
    /// Normalized, see [`normalize_url`].
    pub data_url: String,
    pub item_name: String,
    pub datatype: Datatype,
    pub key_id: String,
    pub data_hash_sha1: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verification {
    Verified,
    Rejected,
}

#[derive(Debug, Default)]
pub struct Registry(BTreeMap<String, RequesterRecord>);

impl Registry {
    pub fn insert(&mut self, record: RequesterRecord) -> Result<(), String> {
        if record.id.is_empty() {
            return Err("requester id is empty".into());
        }
        if self.0.contains_key(&record.id) {
            return Err(format!("duplicate requester id {:?}", record.id));
        }
        self.0.insert(record.id.clone(), record);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&RequesterRecord> {
        self.0.get(id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Checks that `encrypted_phrase` decrypts, under the registered private
/// key for `id`, to the registered passphrase. Every failure is a rejection.
pub fn verify_requester(registry: &Registry, id: &str, encrypted_phrase: &[u8]) -> Verification {
    let Some(record) = registry.get(id) else {
        return Verification::Rejected;
    };
    match decrypt_phrase(&record.private_key, encrypted_phrase) {
        Ok(phrase) if phrases_match(&record.passphrase, &phrase) => Verification::Verified,
        _ => Verification::Rejected,
    }
}

/// Canonical form used for profile lookup: lowercase scheme and host,
/// default port removed. Paths are compared as-is.
pub fn normalize_url(raw: &str) -> Result<String, String> {
    parse_http_url(raw).map(|u| u.to_string())
}

/// Last non-empty path segment of `url`.
pub fn basename(url: &str) -> Option<String> {
    let parsed = url::Url::parse(url).ok()?;
    let seg = parsed.path_segments()?.rfind(|s| !s.is_empty())?;
    percent_encoding::percent_decode_str(seg)
        .decode_utf8()
        .ok()
        .map(|s| s.into_owned())
}

#[derive(Debug, Default)]
pub struct Profiles(BTreeMap<String, DataProfile>);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no data profile for {0}")]
pub struct NotFound(pub String);

impl Profiles {
    pub fn insert(&mut self, entry: ProfileEntry) -> Result<(), String> {
        let data_url = normalize_url(&entry.data_url)?;
        let item_name = match entry.item_name {
            Some(name) if !name.is_empty() => name,
            Some(_) => return Err("item-name is empty".into()),
            None => basename(&data_url).ok_or_else(|| format!("cannot derive item name from {data_url}"))?,
        };
        if let Some(h) = &entry.data_hash_sha1 {
            if h.len() != 40 || !h.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
                return Err(format!("bad data-hash-sha1 {h:?}"));
            }
        }
        if self.0.contains_key(&data_url) {
            return Err(format!("duplicate profile for {data_url}"));
        }
        self.0.insert(
            data_url.clone(),
            DataProfile {
                data_url,
                item_name,
                datatype: entry.datatype,
                key_id: entry.key_id,
                data_hash_sha1: entry.data_hash_sha1,
            },
        );
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &DataProfile> {
        self.0.values()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn lookup_data_profile<'a>(profiles: &'a Profiles, data_url: &str) -> Result<&'a DataProfile, NotFound> {
    normalize_url(data_url)
        .ok()
        .and_then(|u| profiles.0.get(&u))
        .ok_or_else(|| NotFound(data_url.to_owned()))
}

/// Everything a DCS needs to answer requests. Immutable once built.
#[derive(Debug, Default)]
pub struct ServerState {
    pub registry: Registry,
    pub profiles: Profiles,
    pub policy: PolicySet,
    pub keys: BTreeMap<String, SymmetricKey>,
    pub tools: RedactionTools,
}

struct Loader {
    problems: Vec<(PathBuf, String)>,
}

impl Loader {
    fn problem(&mut self, path: &Path, msg: impl ToString) {
        self.problems.push((path.to_path_buf(), msg.to_string()));
    }

    fn read(&mut self, path: &Path) -> Option<Vec<u8>> {
        fs::read(path).map_err(|e| self.problem(path, e)).ok()
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self, path: &Path) -> Option<T> {
        let bytes = self.read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| self.problem(path, e)).ok()
    }

    fn list(&mut self, dir: &Path, ext: &str) -> Vec<PathBuf> {
        let entries = match fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) => {
                self.problem(dir, e);
                return Vec::new();
            }
        };
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
            .collect();
        paths.sort();
        paths
    }
}

pub fn load_server_state(config_dir: &Path) -> Result<ServerState, StateError> {
    let mut l = Loader { problems: Vec::new() };
    if !config_dir.is_dir() {
        l.problem(config_dir, "not a directory");
        return Err(StateError { problems: l.problems });
    }
    let mut state = ServerState::default();

    for path in l.list(&config_dir.join(KEYS_DIR), KEY_EXT) {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
        let Some(bytes) = l.read(&path) else { continue };
        let text = String::from_utf8_lossy(&bytes);
        match SymmetricKey::from_hex(&stem, &text) {
            Ok(key) => {
                state.keys.insert(stem, key);
            }
            Err(e) => l.problem(&path, e),
        }
    }

    for path in l.list(&config_dir.join(REQUESTERS_DIR), "json") {
        let Some(file) = l.json::<RequesterFile>(&path) else {
            continue;
        };
        let private_key = match PhrasePrivateKey::from_pem(&file.private_key) {
            Ok(k) => k,
            Err(e) => {
                l.problem(&path, e);
                continue;
            }
        };
        if file.passphrase.is_empty() {
            l.problem(&path, "passphrase is empty");
            continue;
        }
        let record = RequesterRecord {
            id: file.id,
            private_key,
            passphrase: file.passphrase,
        };
        if let Err(e) = state.registry.insert(record) {
            l.problem(&path, e);
        }
    }

    let profiles_path = config_dir.join(PROFILES_FILE);
    if let Some(entries) = l.json::<Vec<ProfileEntry>>(&profiles_path) {
        for entry in entries {
            if !state.keys.contains_key(&entry.key_id) {
                l.problem(
                    &profiles_path,
                    format!("profile {} references unknown key {:?}", entry.data_url, entry.key_id),
                );
                continue;
            }
            let url = entry.data_url.clone();
            if let Err(e) = state.profiles.insert(entry) {
                l.problem(&profiles_path, format!("{url}: {e}"));
            }
        }
    }

    let policies_path = config_dir.join(POLICIES_FILE);
    if let Some(bytes) = l.read(&policies_path) {
        match load_policy_set(&bytes) {
            Ok(ps) => state.policy = ps,
            Err(e) => l.problem(&policies_path, e),
        }
    }

    let detectors_path = config_dir.join(DETECTORS_FILE);
    if detectors_path.exists() {
        if let Some(detectors) = l.json::<Vec<RegionDetector>>(&detectors_path) {
            for d in detectors {
                if let Err(e) = d.validate() {
                    l.problem(&detectors_path, e);
                } else if state.tools.detectors.insert(d.name.clone(), d).is_some() {
                    l.problem(&detectors_path, "duplicate detector name");
                }
            }
        }
    }

    let patterns_path = config_dir.join(PATTERNS_FILE);
    if patterns_path.exists() {
        if let Some(patterns) = l.json::<BTreeMap<String, String>>(&patterns_path) {
            let mut lib = PatternLibrary::builtin();
            for (name, re) in patterns {
                if let Err(e) = lib.add(&name, &re) {
                    l.problem(&patterns_path, e);
                }
            }
            state.tools.patterns = lib;
        }
    }

    if l.problems.is_empty() {
        Ok(state)
    } else {
        Err(StateError { problems: l.problems })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cagecoach_core::envelope::{encrypt_phrase, generate_phrase_keypair, PhraseKeyPair};
    use std::sync::OnceLock;

    fn pair() -> &'static PhraseKeyPair {
        static P: OnceLock<PhraseKeyPair> = OnceLock::new();
        P.get_or_init(generate_phrase_keypair)
    }

    fn registry() -> Registry {
        let mut r = Registry::default();
        r.insert(RequesterRecord {
            id: "jane".into(),
            private_key: pair().private_key.clone(),
            passphrase: "s3cret".into(),
        })
        .unwrap();
        r
    }

    #[test]
    fn verification() {
        let reg = registry();
        let good = encrypt_phrase(&pair().public_key, "s3cret").unwrap();
        let bad = encrypt_phrase(&pair().public_key, "wrong").unwrap();
        assert_eq!(verify_requester(&reg, "jane", &good), Verification::Verified);
        assert_eq!(verify_requester(&reg, "jane", &bad), Verification::Rejected);
        assert_eq!(verify_requester(&reg, "john", &good), Verification::Rejected);
        assert_eq!(verify_requester(&reg, "jane", b"garbage"), Verification::Rejected);
    }

    #[test]
    fn duplicate_requester() {
        let mut reg = registry();
        assert!(reg
            .insert(RequesterRecord {
                id: "jane".into(),
                private_key: pair().private_key.clone(),
                passphrase: "x".into(),
            })
            .is_err());
    }

    fn profiles() -> Profiles {
        let mut p = Profiles::default();
        p.insert(ProfileEntry {
            data_url: "http://h.example/a.enc".into(),
            item_name: None,
            datatype: Datatype::Json,
            key_id: "k".into(),
            data_hash_sha1: None,
        })
        .unwrap();
        p
    }

    #[test]
    fn lookup_normalizes() {
        let p = profiles();
        let found = lookup_data_profile(&p, "http://h.example/a.enc").unwrap();
        assert_eq!(found.item_name, "a.enc");
        assert_eq!(lookup_data_profile(&p, "HTTP://h.example:80/a.enc").unwrap(), found);
        assert_eq!(lookup_data_profile(&p, "http://H.EXAMPLE/a.enc").unwrap(), found);
        assert!(lookup_data_profile(&p, "http://h.example/a.enc/").is_err());
        assert!(lookup_data_profile(&p, "http://h.example/b.enc").is_err());
        assert!(lookup_data_profile(&p, "not a url").is_err());
    }

    #[test]
    fn basenames() {
        assert_eq!(basename("http://h/x/r.json.enc").as_deref(), Some("r.json.enc"));
        assert_eq!(basename("http://h/x/a%20b.json").as_deref(), Some("a b.json"));
        assert_eq!(basename("http://h/"), None);
    }
}
