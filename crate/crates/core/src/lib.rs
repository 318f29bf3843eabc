//! Pure building blocks for credmask.
//!
//! Nothing in this crate touches the filesystem: it holds the login-row codec
//! used for canonical store dumps, the sealed vault format, authentication
//! records and the fingerprint minutiae matcher with its error-rate harness.
//! The `credmask` crate wires these to SQLite, files and the command line.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod auth;
pub mod codec;
pub mod minutiae;
pub mod vault;

pub use auth::{AuthError, AuthKind, AuthPolicy, AuthProof, AuthRecord};
pub use codec::{canonical_dump, CodecError, LoginRow, Value};
pub use minutiae::{Minutia, MinutiaKind, MinutiaeError, Template};
pub use vault::{KdfParams, VaultEntry, VaultError, VaultId, VaultState};
