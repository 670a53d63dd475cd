use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use cagecoach_core::envelope::{encrypt_blob, encrypt_phrase, generate_phrase_keypair, sha1_hex, PhrasePublicKey};
use cagecoach_core::metafile::{
    build_metafile, parse_http_url, parse_metafile, serialize_metafile, Metafile, ENVELOPE_SUFFIX, METAFILE_SUFFIX,
};
use cagecoach_core::policy::{infer_datatype, Action, RedactionOp, Scope, ScopeKind};
use cagecoach_server::dcs::{ErrorBody, STATUS_HEADER};
use cagecoach_server::state::{normalize_url, ProfileEntry, RequesterFile};
use cagecoach_server::{AccessRequest, AccessStatus};
use rand::distributions::{Alphanumeric, DistString};
use serde::{Deserialize, Serialize};

use crate::workspace::{write_atomic, OwnerWorkspace};
use crate::CliError;

pub const DEFAULT_KEY_ID: &str = "default";
pub const PASSPHRASE_LEN: usize = 32;

/// What the owner hands a requester out of band.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialBundle {
    pub id: String,
    #[serde(rename = "public-key")]
    pub public_key: String,
    pub passphrase: String,
}

impl CredentialBundle {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// Encrypts the passphrase for one request.
    pub fn encrypted_phrase(&self) -> Result<Vec<u8>, CliError> {
        let key = PhrasePublicKey::from_pem(&self.public_key).map_err(|e| CliError::Validation(e.to_string()))?;
        encrypt_phrase(&key, &self.passphrase).map_err(|e| CliError::Validation(e.to_string()))
    }
}

#[derive(Debug)]
pub struct PublishOutcome {
    pub envelope_path: PathBuf,
    pub metafile_path: PathBuf,
    pub metafile: Metafile,
    pub profile: ProfileEntry,
}

pub struct PublishArgs<'a> {
    pub input: &'a Path,
    pub owner_url: &'a str,
    pub data_url: &'a str,
    pub tags: BTreeMap<String, String>,
    pub description: Option<String>,
    pub key_id: Option<&'a str>,
}

pub fn cmd_publish(ws: &OwnerWorkspace, args: PublishArgs<'_>) -> Result<PublishOutcome, CliError> {
    let _lock = ws.lock()?;
    let name = args
        .input
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::Validation(format!("{} has no usable file name", args.input.display())))?
        .to_owned();
    let plaintext = fs::read(args.input)?;

    let normalized = normalize_url(args.data_url).map_err(CliError::Validation)?;
    parse_http_url(args.owner_url).map_err(CliError::Validation)?;
    let mut profiles = ws.profiles()?;
    if profiles
        .iter()
        .any(|p| normalize_url(&p.data_url).as_deref() == Ok(normalized.as_str()))
    {
        return Err(CliError::Conflict(format!("{} is already published", args.data_url)));
    }
    let envelope_path = ws.outbox().join(format!("{name}{ENVELOPE_SUFFIX}"));
    let metafile_path = ws.outbox().join(format!("{name}{METAFILE_SUFFIX}"));
    if envelope_path.exists() || metafile_path.exists() {
        return Err(CliError::Conflict(format!(
            "{} already exists in the outbox",
            envelope_path.display()
        )));
    }

    let key = ws.key_or_generate(args.key_id.unwrap_or(DEFAULT_KEY_ID))?;
    let envelope = encrypt_blob(&key, &plaintext);
    let metafile = build_metafile(args.owner_url, args.data_url, &envelope, args.tags, args.description)
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let profile = ProfileEntry {
        data_url: args.data_url.to_owned(),
        item_name: Some(name.clone()),
        datatype: infer_datatype(&name, &plaintext),
        key_id: key.key_id().to_owned(),
        data_hash_sha1: Some(sha1_hex(&envelope)),
    };
    write_atomic(&envelope_path, &envelope)?;
    write_atomic(&metafile_path, &serialize_metafile(&metafile))?;
    profiles.push(profile.clone());
    ws.save_profiles(&profiles)?;

    Ok(PublishOutcome {
        envelope_path,
        metafile_path,
        metafile,
        profile,
    })
}

fn valid_requester_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '@'))
}

pub fn generate_passphrase() -> String {
    Alphanumeric.sample_string(&mut rand::rngs::OsRng, PASSPHRASE_LEN)
}

/// Registers `id` and writes its credential bundle to `bundle_out`.
pub fn cmd_register_requester(ws: &OwnerWorkspace, id: &str, bundle_out: &Path) -> Result<CredentialBundle, CliError> {
    if !valid_requester_id(id) {
        return Err(CliError::Validation(format!(
            "requester id {id:?} must be non-empty and use only letters, digits, '-', '_', '.', '@'"
        )));
    }
    let _lock = ws.lock()?;
    let record_path = ws.requester_path(id);
    if record_path.exists() {
        return Err(CliError::Conflict(format!("requester {id:?} is already registered")));
    }
    let pair = generate_phrase_keypair();
    let passphrase = generate_passphrase();
    let record = RequesterFile {
        id: id.to_owned(),
        private_key: pair.private_key.to_pem(),
        passphrase: passphrase.clone(),
    };
    let bundle = CredentialBundle {
        id: id.to_owned(),
        public_key: pair.public_key.to_pem(),
        passphrase,
    };

    let mut out = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(bundle_out)
        .map_err(|e| CliError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", bundle_out.display()))))?;
    out.write_all(&serde_json::to_vec_pretty(&bundle).expect("bundle serializes"))?;
    write_atomic(
        &record_path,
        &serde_json::to_vec_pretty(&record).expect("record serializes"),
    )?;
    Ok(bundle)
}

pub struct PolicyAddArgs<'a> {
    pub scope_kind: &'a str,
    pub scope_key: &'a str,
    pub action: &'a str,
    pub target: &'a str,
    pub params: BTreeMap<String, String>,
}

pub fn cmd_policy_add(ws: &OwnerWorkspace, args: PolicyAddArgs<'_>) -> Result<(), CliError> {
    let _lock = ws.lock()?;
    let invalid = |e: cagecoach_core::PolicyError| CliError::Validation(e.to_string());
    let kind: ScopeKind = args.scope_kind.parse().map_err(invalid)?;
    let action: Action = args.action.parse().map_err(invalid)?;
    let mut op = RedactionOp::new(action, args.target);
    op.params = args.params;
    let mut ps = ws.policy()?;
    ps.add_op(Scope::new(kind, args.scope_key), op).map_err(invalid)?;
    ps.validate().map_err(invalid)?;
    ws.save_policy(&ps)
}

pub async fn cmd_inspect(client: &reqwest::Client, metafile_url: &str) -> Result<Metafile, CliError> {
    let resp = client.get(metafile_url).send().await?;
    if !resp.status().is_success() {
        return Err(CliError::Http(format!("GET {metafile_url} answered {}", resp.status())));
    }
    let body = resp.bytes().await?;
    parse_metafile(&body).map_err(|e| CliError::Validation(e.to_string()))
}

pub fn format_summary(m: &Metafile) -> String {
    let mut s = format!(
        "owner-url:      {}\ndata-url:       {}\ndata-hash-sha1: {}\n",
        m.owner_url, m.data_url, m.data_hash_sha1
    );
    s.push_str(&format!(
        "description:    {}\n",
        m.description.as_deref().unwrap_or("(none)")
    ));
    if m.meta_data.is_empty() {
        s.push_str("meta-data:      (none)\n");
    } else {
        s.push_str("meta-data:\n");
        for (k, v) in &m.meta_data {
            s.push_str(&format!("  {k} = {v}\n"));
        }
    }
    s
}

/// Where a DCS accepts access requests, given its owner-url.
pub fn request_endpoint(dcs_url: &str) -> String {
    format!("{}/request", dcs_url.trim_end_matches('/'))
}

/// POSTs an access request and writes the payload to `output` on success.
pub async fn cmd_request(
    client: &reqwest::Client,
    dcs_url: &str,
    data_url: &str,
    credentials: Option<&CredentialBundle>,
    output: &Path,
) -> Result<AccessStatus, CliError> {
    let req = match credentials {
        Some(c) => AccessRequest::credentialed(data_url, &c.id, &c.encrypted_phrase()?),
        None => AccessRequest::anonymous(data_url),
    };
    let resp = client.post(request_endpoint(dcs_url)).json(&req).send().await?;
    let header_status = resp
        .headers()
        .get(STATUS_HEADER)
        .and_then(|v| v.to_str().ok())
        .and_then(|s| serde_json::from_value::<AccessStatus>(serde_json::Value::String(s.to_owned())).ok());
    let http_status = resp.status();
    let body = resp.bytes().await?;
    if http_status.is_success() && header_status == Some(AccessStatus::Ok) {
        fs::write(output, &body)?;
        return Ok(AccessStatus::Ok);
    }
    match serde_json::from_slice::<ErrorBody>(&body) {
        Ok(err) => Err(CliError::Refused {
            status: err.status,
            reason: err.error,
        }),
        Err(_) => Err(CliError::Http(format!("DCS answered {http_status}"))),
    }
}

/// Reads the metafile, then requests its data from the DCS it names.
/// The metafile's data-url is used as the requested URL.
pub async fn cmd_request_via_metafile(
    client: &reqwest::Client,
    metafile_url: &str,
    credentials: Option<&CredentialBundle>,
    output: &Path,
) -> Result<AccessStatus, CliError> {
    let m = cmd_inspect(client, metafile_url).await?;
    cmd_request(client, &m.owner_url, &m.data_url, credentials, output).await
}
