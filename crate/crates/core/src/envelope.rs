//! Authenticated blob envelopes, content hashing and passphrase encryption.
//!
//! Blobs at rest on a data host are sealed with ChaCha20-Poly1305 into a
//! fixed binary layout:
//!
//! ```text
//! "CGC1" | 0x01 | nonce (12) | ciphertext (n) | tag (16)
//! ```
//!
//! The magic and version bytes are bound as associated data, so an envelope
//! is always exactly `33 + n` bytes long.
//!
//! Requester identity uses RSA-2048 with OAEP/SHA-256 padding. Keys are
//! stored as PEM (PKCS#8 private, SPKI public).

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::rngs::OsRng;
use rand::RngCore;
use rsa::pkcs8::{DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey, LineEnding};
use rsa::{Oaep, RsaPrivateKey, RsaPublicKey};
use sha1::{Digest, Sha1};
use subtle::ConstantTimeEq;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"CGC1";
pub const VERSION: u8 = 1;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
const HEADER_LEN: usize = MAGIC.len() + 1;
/// Size of an envelope carrying an empty payload.
pub const ENVELOPE_OVERHEAD: usize = HEADER_LEN + NONCE_LEN + TAG_LEN;

pub const SYMMETRIC_KEY_LEN: usize = 32;
pub const PHRASE_KEY_BITS: usize = 2048;
/// Largest phrase OAEP/SHA-256 can carry under a 2048-bit modulus:
/// `k - 2*hLen - 2 = 256 - 64 - 2`.
pub const MAX_PHRASE_LEN: usize = PHRASE_KEY_BITS / 8 - 2 * 32 - 2;

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("envelope format error: {0}")]
    Format(String),
    #[error("envelope failed authentication")]
    Integrity,
    #[error("phrase is {len} bytes, limit is {MAX_PHRASE_LEN}")]
    PhraseTooLong { len: usize },
    #[error("phrase decryption failed")]
    Decryption,
    #[error("key encoding error: {0}")]
    KeyEncoding(String),
}

pub type Result<T> = std::result::Result<T, EnvelopeError>;

/// A 256-bit blob key plus the owner-chosen identifier it is stored under.
#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey {
    key_id: String,
    key_bytes: [u8; SYMMETRIC_KEY_LEN],
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymmetricKey")
            .field("key_id", &self.key_id)
            .finish_non_exhaustive()
    }
}

fn validate_key_id(key_id: &str) -> Result<()> {
    if key_id.is_empty() {
        return Err(EnvelopeError::InvalidArgument("key id is empty".into()));
    }
    if key_id.contains(['/', '\\']) || key_id == "." || key_id == ".." {
        return Err(EnvelopeError::InvalidArgument(format!(
            "key id {key_id:?} must not contain path separators"
        )));
    }
    if key_id.chars().any(|c| c.is_control() || c.is_whitespace()) {
        return Err(EnvelopeError::InvalidArgument(format!(
            "key id {key_id:?} must be printable"
        )));
    }
    Ok(())
}

impl SymmetricKey {
    pub fn from_bytes(key_id: &str, key_bytes: [u8; SYMMETRIC_KEY_LEN]) -> Result<Self> {
        validate_key_id(key_id)?;
        Ok(Self {
            key_id: key_id.to_owned(),
            key_bytes,
        })
    }

    /// Parses the at-rest form: 64 lowercase hex characters, surrounding
    /// whitespace ignored.
    pub fn from_hex(key_id: &str, text: &str) -> Result<Self> {
        let text = text.trim();
        if text.len() != SYMMETRIC_KEY_LEN * 2
            || !text.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
        {
            return Err(EnvelopeError::KeyEncoding(
                "symmetric key must be 64 lowercase hex characters".into(),
            ));
        }
        let mut bytes = [0u8; SYMMETRIC_KEY_LEN];
        hex::decode_to_slice(text, &mut bytes).map_err(|e| EnvelopeError::KeyEncoding(e.to_string()))?;
        Self::from_bytes(key_id, bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.key_bytes)
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    pub fn key_bytes(&self) -> &[u8; SYMMETRIC_KEY_LEN] {
        &self.key_bytes
    }
}

pub fn generate_symmetric_key(key_id: &str) -> Result<SymmetricKey> {
    let mut bytes = [0u8; SYMMETRIC_KEY_LEN];
    OsRng.fill_bytes(&mut bytes);
    SymmetricKey::from_bytes(key_id, bytes)
}

/// A parsed view over envelope bytes.
#[derive(Debug, Clone, Copy)]
pub struct Envelope<'a> {
    pub nonce: &'a [u8; NONCE_LEN],
    /// Ciphertext followed by the 16-byte tag.
    pub sealed: &'a [u8],
}

impl<'a> Envelope<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < ENVELOPE_OVERHEAD {
            return Err(EnvelopeError::Format(format!(
                "envelope is {} bytes, minimum is {ENVELOPE_OVERHEAD}",
                bytes.len()
            )));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(EnvelopeError::Format("bad magic".into()));
        }
        if bytes[MAGIC.len()] != VERSION {
            return Err(EnvelopeError::Format(format!(
                "unsupported version {}",
                bytes[MAGIC.len()]
            )));
        }
        let nonce = bytes[HEADER_LEN..HEADER_LEN + NONCE_LEN]
            .try_into()
            .expect("length checked above");
        Ok(Self {
            nonce,
            sealed: &bytes[HEADER_LEN + NONCE_LEN..],
        })
    }

    pub fn ciphertext_len(&self) -> usize {
        self.sealed.len() - TAG_LEN
    }
}

fn header() -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..MAGIC.len()].copy_from_slice(MAGIC);
    h[MAGIC.len()] = VERSION;
    h
}

pub fn encrypt_blob(key: &SymmetricKey, plaintext: &[u8]) -> Vec<u8> {
    let mut nonce = [0u8; NONCE_LEN];
    OsRng.fill_bytes(&mut nonce);
    encrypt_blob_with_nonce(key, &nonce, plaintext)
}

/// Deterministic variant of [`encrypt_blob`]. Reusing a nonce under one key
/// breaks confidentiality; only fixed test vectors should call this.
pub fn encrypt_blob_with_nonce(key: &SymmetricKey, nonce: &[u8; NONCE_LEN], plaintext: &[u8]) -> Vec<u8> {
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.key_bytes));
    let aad = header();
    let sealed = cipher
        .encrypt(
            Nonce::from_slice(nonce),
            Payload {
                msg: plaintext,
                aad: &aad,
            },
        )
        .expect("chacha20poly1305 encryption is infallible for in-range lengths");
    let mut out = Vec::with_capacity(ENVELOPE_OVERHEAD + plaintext.len());
    out.extend_from_slice(&aad);
    out.extend_from_slice(nonce);
    out.extend_from_slice(&sealed);
    out
}

pub fn decrypt_blob(key: &SymmetricKey, envelope: &[u8]) -> Result<Vec<u8>> {
    let env = Envelope::parse(envelope)?;
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.key_bytes));
    cipher
        .decrypt(
            Nonce::from_slice(env.nonce),
            Payload {
                msg: env.sealed,
                aad: &header(),
            },
        )
        .map_err(|_| EnvelopeError::Integrity)
}

pub fn sha1_hex(data: &[u8]) -> String {
    hex::encode(Sha1::digest(data))
}

/// RSA keypair used to encrypt and check requester passphrases.
#[derive(Clone)]
pub struct PhraseKeyPair {
    pub public_key: PhrasePublicKey,
    pub private_key: PhrasePrivateKey,
}

#[derive(Clone, PartialEq, Eq)]
pub struct PhrasePublicKey(RsaPublicKey);

#[derive(Clone)]
pub struct PhrasePrivateKey(RsaPrivateKey);

impl fmt::Debug for PhrasePublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PhrasePublicKey(..)")
    }
}

impl fmt::Debug for PhrasePrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PhrasePrivateKey(..)")
    }
}

impl PhrasePublicKey {
    pub fn from_pem(pem: &str) -> Result<Self> {
        RsaPublicKey::from_public_key_pem(pem.trim())
            .map(Self)
            .map_err(|e| EnvelopeError::KeyEncoding(e.to_string()))
    }

    pub fn to_pem(&self) -> String {
        self.0
            .to_public_key_pem(LineEnding::LF)
            .expect("RSA public key always encodes")
    }
}

impl PhrasePrivateKey {
    pub fn from_pem(pem: &str) -> Result<Self> {
        RsaPrivateKey::from_pkcs8_pem(pem.trim())
            .map(Self)
            .map_err(|e| EnvelopeError::KeyEncoding(e.to_string()))
    }

    pub fn to_pem(&self) -> String {
        self.0
            .to_pkcs8_pem(LineEnding::LF)
            .expect("RSA private key always encodes")
            .to_string()
    }

    pub fn public_key(&self) -> PhrasePublicKey {
        PhrasePublicKey(self.0.to_public_key())
    }
}

pub fn generate_phrase_keypair() -> PhraseKeyPair {
    let private = RsaPrivateKey::new(&mut OsRng, PHRASE_KEY_BITS).expect("RSA-2048 key generation");
    let public = private.to_public_key();
    PhraseKeyPair {
        public_key: PhrasePublicKey(public),
        private_key: PhrasePrivateKey(private),
    }
}

pub fn encrypt_phrase(public_key: &PhrasePublicKey, phrase: &str) -> Result<Vec<u8>> {
    if phrase.len() > MAX_PHRASE_LEN {
        return Err(EnvelopeError::PhraseTooLong { len: phrase.len() });
    }
    public_key
        .0
        .encrypt(&mut OsRng, Oaep::new::<sha2::Sha256>(), phrase.as_bytes())
        .map_err(|_| EnvelopeError::PhraseTooLong { len: phrase.len() })
}

pub fn decrypt_phrase(private_key: &PhrasePrivateKey, ciphertext: &[u8]) -> Result<String> {
    let bytes = private_key
        .0
        .decrypt(Oaep::new::<sha2::Sha256>(), ciphertext)
        .map_err(|_| EnvelopeError::Decryption)?;
    String::from_utf8(bytes).map_err(|_| EnvelopeError::Decryption)
}

/// Constant-time phrase equality. Lengths are not hidden.
pub fn phrases_match(expected: &str, presented: &str) -> bool {
    expected.as_bytes().ct_eq(presented.as_bytes()).into()
}
