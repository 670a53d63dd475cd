#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use cagecoach_core::envelope::{
    encrypt_blob, generate_phrase_keypair, generate_symmetric_key, PhraseKeyPair, SymmetricKey,
};
use cagecoach_core::policy::{Datatype, PolicySet};
use cagecoach_server::state::{ProfileEntry, RequesterFile, KEYS_DIR, POLICIES_FILE, PROFILES_FILE, REQUESTERS_DIR};
use tempfile::TempDir;

pub fn keypair() -> &'static PhraseKeyPair {
    static P: OnceLock<PhraseKeyPair> = OnceLock::new();
    P.get_or_init(generate_phrase_keypair)
}

/// A DCS config directory plus a host root, written file by file.
pub struct Fixture {
    pub config: TempDir,
    pub host_root: TempDir,
    pub profiles: Vec<ProfileEntry>,
    pub key: SymmetricKey,
}

impl Fixture {
    pub fn new() -> Self {
        let config = tempfile::tempdir().unwrap();
        std::fs::create_dir(config.path().join(KEYS_DIR)).unwrap();
        std::fs::create_dir(config.path().join(REQUESTERS_DIR)).unwrap();
        let key = generate_symmetric_key("main").unwrap();
        std::fs::write(config.path().join(KEYS_DIR).join("main.key"), key.to_hex()).unwrap();
        let f = Self {
            config,
            host_root: tempfile::tempdir().unwrap(),
            profiles: Vec::new(),
            key,
        };
        f.write_policy(&PolicySet::default());
        f.flush_profiles();
        f
    }

    pub fn dir(&self) -> &Path {
        self.config.path()
    }

    pub fn add_requester(&self, id: &str, passphrase: &str) {
        let file = RequesterFile {
            id: id.into(),
            private_key: keypair().private_key.to_pem(),
            passphrase: passphrase.into(),
        };
        std::fs::write(
            self.dir().join(REQUESTERS_DIR).join(format!("{id}.json")),
            serde_json::to_vec_pretty(&file).unwrap(),
        )
        .unwrap();
    }

    /// Encrypts `plaintext` into the host root as `<name>.enc` and profiles
    /// it under `base_url`.
    pub fn publish(&mut self, base_url: &str, name: &str, plaintext: &[u8], datatype: Datatype) -> (String, Vec<u8>) {
        let env = encrypt_blob(&self.key, plaintext);
        let file = format!("{name}.enc");
        std::fs::write(self.host_root.path().join(&file), &env).unwrap();
        let data_url = format!("{base_url}/{file}");
        self.profiles.push(ProfileEntry {
            data_url: data_url.clone(),
            item_name: Some(name.into()),
            datatype,
            key_id: "main".into(),
            data_hash_sha1: None,
        });
        self.flush_profiles();
        (data_url, env)
    }

    pub fn flush_profiles(&self) {
        std::fs::write(
            self.dir().join(PROFILES_FILE),
            serde_json::to_vec_pretty(&self.profiles).unwrap(),
        )
        .unwrap();
    }

    pub fn write_policy(&self, ps: &PolicySet) {
        std::fs::write(self.dir().join(POLICIES_FILE), ps.to_json()).unwrap();
    }
}

/// Every regular file under `dir`, recursively.
pub fn all_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}
