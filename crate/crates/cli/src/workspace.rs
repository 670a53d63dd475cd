//! Owner workspace: a DCS config tree plus an `outbox/` of files ready to
//! upload to a data host.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use cagecoach_core::envelope::{generate_symmetric_key, SymmetricKey};
use cagecoach_core::policy::{load_policy_set, PolicySet};
use cagecoach_server::state::{ProfileEntry, KEYS_DIR, KEY_EXT, POLICIES_FILE, PROFILES_FILE, REQUESTERS_DIR};

use crate::CliError;

pub const OUTBOX_DIR: &str = "outbox";
const LOCK_FILE: &str = ".cagecoach.lock";

#[derive(Debug, Clone)]
pub struct OwnerWorkspace {
    root: PathBuf,
}

/// Held while a command mutates the workspace.
#[derive(Debug)]
pub struct WorkspaceLock {
    path: PathBuf,
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Writes `bytes` to a sibling temp file, then renames over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

impl OwnerWorkspace {
    /// Opens `root`, creating any missing directories and default files.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let ws = Self { root: root.into() };
        for dir in [KEYS_DIR, REQUESTERS_DIR, OUTBOX_DIR] {
            fs::create_dir_all(ws.root.join(dir))?;
        }
        if !ws.profiles_path().exists() {
            write_atomic(&ws.profiles_path(), b"[]\n")?;
        }
        if !ws.policies_path().exists() {
            write_atomic(&ws.policies_path(), &PolicySet::default().to_json())?;
        }
        Ok(ws)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn outbox(&self) -> PathBuf {
        self.root.join(OUTBOX_DIR)
    }

    pub fn profiles_path(&self) -> PathBuf {
        self.root.join(PROFILES_FILE)
    }

    pub fn policies_path(&self) -> PathBuf {
        self.root.join(POLICIES_FILE)
    }

    pub fn requester_path(&self, id: &str) -> PathBuf {
        self.root.join(REQUESTERS_DIR).join(format!("{id}.json"))
    }

    fn key_path(&self, key_id: &str) -> PathBuf {
        self.root.join(KEYS_DIR).join(format!("{key_id}.{KEY_EXT}"))
    }

    pub fn lock(&self) -> Result<WorkspaceLock, CliError> {
        let path = self.root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(WorkspaceLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(CliError::Busy(path)),
            Err(e) => Err(e.into()),
        }
    }

    pub fn profiles(&self) -> Result<Vec<ProfileEntry>, CliError> {
        let bytes = fs::read(self.profiles_path())?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Validation(format!("{}: {e}", self.profiles_path().display())))
    }

    pub fn save_profiles(&self, profiles: &[ProfileEntry]) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(profiles).expect("profiles serialize");
        bytes.push(b'\n');
        write_atomic(&self.profiles_path(), &bytes)?;
        Ok(())
    }

    pub fn policy(&self) -> Result<PolicySet, CliError> {
        let bytes = fs::read(self.policies_path())?;
        load_policy_set(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", self.policies_path().display())))
    }

    pub fn save_policy(&self, ps: &PolicySet) -> Result<(), CliError> {
        write_atomic(&self.policies_path(), &ps.to_json())?;
        Ok(())
    }

    /// Loads `key_id`, generating and storing it on first use.
    pub fn key_or_generate(&self, key_id: &str) -> Result<SymmetricKey, CliError> {
        let path = self.key_path(key_id);
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            return SymmetricKey::from_hex(key_id, &text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())));
        }
        let key = generate_symmetric_key(key_id).map_err(|e| CliError::Validation(e.to_string()))?;
        write_atomic(&path, format!("{}\n", key.to_hex()).as_bytes())?;
        Ok(key)
    }
}
