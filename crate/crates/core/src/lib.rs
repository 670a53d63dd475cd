//! Core building blocks for CageCoach: sealed blob envelopes, the public
//! metafile, redaction policies, and the redactors that enforce them.

pub mod envelope;
pub mod metafile;
pub mod policy;
pub mod redact;

pub use envelope::{EnvelopeError, PhraseKeyPair, PhrasePrivateKey, PhrasePublicKey, SymmetricKey};
pub use metafile::{Metafile, MetafileError};
pub use policy::{Action, Datatype, PolicyError, PolicySet, RedactionOp, RedactionRule, Scope, ScopeKind};
pub use redact::{RedactError, Redacted, RedactionTools, Redactor};
