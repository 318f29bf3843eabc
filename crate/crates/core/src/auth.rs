//! Authentication records kept inside the vault and the policy that decides
//! whether masked mode may be lifted.
//!
//! Proofs can only be minted by this module, and each is bound to the
//! [`VaultId`] it was issued for.

use alloc::vec::Vec;
use core::fmt;

use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::minutiae::{match_templates, MatchParams, Template, DEFAULT_MIN_MINUTIAE};
use crate::vault::{derive_key, KdfParams, VaultError, VaultId, VaultState};

pub const DEFAULT_FINGERPRINT_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AuthKind {
    Passphrase,
    Fingerprint,
}

impl fmt::Display for AuthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuthKind::Passphrase => "passphrase",
            AuthKind::Fingerprint => "fingerprint",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthPolicy {
    PassphraseOnly,
    FingerprintOnly,
    Both,
}

impl AuthPolicy {
    pub fn required(self) -> &'static [AuthKind] {
        match self {
            AuthPolicy::PassphraseOnly => &[AuthKind::Passphrase],
            AuthPolicy::FingerprintOnly => &[AuthKind::Fingerprint],
            AuthPolicy::Both => &[AuthKind::Passphrase, AuthKind::Fingerprint],
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            AuthPolicy::PassphraseOnly => 1,
            AuthPolicy::FingerprintOnly => 2,
            AuthPolicy::Both => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(AuthPolicy::PassphraseOnly),
            2 => Some(AuthPolicy::FingerprintOnly),
            3 => Some(AuthPolicy::Both),
            _ => None,
        }
    }
}

impl core::str::FromStr for AuthPolicy {
    type Err = AuthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "passphrase-only" => Ok(AuthPolicy::PassphraseOnly),
            "fingerprint-only" => Ok(AuthPolicy::FingerprintOnly),
            "both" => Ok(AuthPolicy::Both),
            _ => Err(AuthError::UnknownPolicy),
        }
    }
}

impl fmt::Display for AuthPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuthPolicy::PassphraseOnly => "passphrase-only",
            AuthPolicy::FingerprintOnly => "fingerprint-only",
            AuthPolicy::Both => "both",
        })
    }
}

#[derive(Clone, PartialEq)]
pub enum AuthRecord {
    /// `verifier = Argon2id(passphrase, kdf.salt)`; the passphrase itself is never kept.
    Passphrase { kdf: KdfParams, verifier: [u8; 32] },
    Fingerprint { template: Template, threshold: f64 },
}

impl AuthRecord {
    pub fn kind(&self) -> AuthKind {
        match self {
            AuthRecord::Passphrase { .. } => AuthKind::Passphrase,
            AuthRecord::Fingerprint { .. } => AuthKind::Fingerprint,
        }
    }
}

// Hand-written so enrolled templates and verifiers never reach logs.
impl fmt::Debug for AuthRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuthRecord::Passphrase { .. } => f.write_str("AuthRecord::Passphrase"),
            AuthRecord::Fingerprint { template, threshold } => f
                .debug_struct("AuthRecord::Fingerprint")
                .field("minutiae", &template.len())
                .field("threshold", threshold)
                .finish(),
        }
    }
}

/// Evidence that one authentication kind succeeded for one vault.
#[derive(Debug, Clone, PartialEq)]
pub struct AuthProof {
    vault_id: VaultId,
    kind: AuthKind,
    score: Option<f64>,
}

impl AuthProof {
    pub fn kind(&self) -> AuthKind {
        self.kind
    }

    pub fn vault_id(&self) -> &VaultId {
        &self.vault_id
    }

    /// Match score, for fingerprint proofs.
    pub fn score(&self) -> Option<f64> {
        self.score
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuthError {
    #[error("authentication failed")]
    AuthFailed { score: Option<f64> },
    #[error("{0} is already enrolled; re-enrolling needs a valid {0} proof")]
    AlreadyEnrolled(AuthKind),
    #[error("no {0} record is enrolled")]
    NotEnrolled(AuthKind),
    #[error("template has {found} minutiae, at least {required} are needed")]
    TooFewMinutiae { found: usize, required: usize },
    #[error("threshold must lie strictly between 0 and 1")]
    BadThreshold,
    #[error("policy not satisfied; missing: {0:?}")]
    PolicyUnsatisfied(Vec<AuthKind>),
    #[error("policy requires {0}, which is not enrolled")]
    PolicyNotEnrollable(AuthKind),
    #[error("unknown policy (expected passphrase-only, fingerprint-only or both)")]
    UnknownPolicy,
    #[error("passphrase must not be empty")]
    EmptyPassphrase,
    #[error(transparent)]
    Vault(#[from] VaultError),
}

impl VaultState {
    pub fn record(&self, kind: AuthKind) -> Option<&AuthRecord> {
        self.auth_records.iter().find(|r| r.kind() == kind)
    }

    /// Proof granted by unlocking the vault itself. It only stands in for the
    /// passphrase factor while no separate passphrase record is enrolled.
    pub fn unlock_proof(&self) -> Option<AuthProof> {
        self.record(AuthKind::Passphrase).is_none().then(|| AuthProof {
            vault_id: self.vault_id,
            kind: AuthKind::Passphrase,
            score: None,
        })
    }

    fn replace_record(&mut self, record: AuthRecord, existing_proof: Option<&AuthProof>) -> Result<(), AuthError> {
        let kind = record.kind();
        if self.record(kind).is_some() {
            let authorised = existing_proof.is_some_and(|p| p.kind == kind && p.vault_id == self.vault_id);
            if !authorised {
                return Err(AuthError::AlreadyEnrolled(kind));
            }
            self.auth_records.retain(|r| r.kind() != kind);
        }
        self.auth_records.push(record);
        Ok(())
    }

    /// Stores a verifier derived with `kdf` (fresh salt expected).
    pub fn enroll_passphrase(
        &mut self,
        passphrase: &[u8],
        kdf: KdfParams,
        existing_proof: Option<&AuthProof>,
    ) -> Result<&AuthRecord, AuthError> {
        if passphrase.is_empty() {
            return Err(AuthError::EmptyPassphrase);
        }
        let verifier = *derive_key(passphrase, &kdf)?;
        self.replace_record(AuthRecord::Passphrase { kdf, verifier }, existing_proof)?;
        Ok(self.record(AuthKind::Passphrase).expect("just inserted"))
    }

    pub fn enroll_fingerprint(
        &mut self,
        template: Template,
        threshold: f64,
        existing_proof: Option<&AuthProof>,
    ) -> Result<&AuthRecord, AuthError> {
        if template.len() < DEFAULT_MIN_MINUTIAE {
            return Err(AuthError::TooFewMinutiae { found: template.len(), required: DEFAULT_MIN_MINUTIAE });
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(AuthError::BadThreshold);
        }
        self.replace_record(AuthRecord::Fingerprint { template, threshold }, existing_proof)?;
        Ok(self.record(AuthKind::Fingerprint).expect("just inserted"))
    }

    /// Policies may only name kinds that can be proven. The passphrase kind
    /// is always provable through the vault secret.
    pub fn set_policy(&mut self, policy: AuthPolicy) -> Result<(), AuthError> {
        if policy.required().contains(&AuthKind::Fingerprint) && self.record(AuthKind::Fingerprint).is_none() {
            return Err(AuthError::PolicyNotEnrollable(AuthKind::Fingerprint));
        }
        self.policy = policy;
        Ok(())
    }

    /// Checks a candidate against the enrolled passphrase record.
    pub fn verify_passphrase(&self, passphrase: &[u8]) -> Result<AuthProof, AuthError> {
        let record = self.record(AuthKind::Passphrase).ok_or(AuthError::NotEnrolled(AuthKind::Passphrase))?;
        verify_passphrase(record, passphrase, self.vault_id)
    }

    pub fn verify_fingerprint(&self, probe: &Template) -> Result<AuthProof, AuthError> {
        let record = self.record(AuthKind::Fingerprint).ok_or(AuthError::NotEnrolled(AuthKind::Fingerprint))?;
        verify_fingerprint(record, probe, self.vault_id)
    }

    /// Applies this vault's policy to `proofs`, ignoring proofs minted for other vaults.
    pub fn check_policy(&self, proofs: &[AuthProof]) -> Result<(), AuthError> {
        let mine: Vec<AuthProof> = proofs.iter().filter(|p| p.vault_id == self.vault_id).cloned().collect();
        check_policy(self.policy, &mine)
    }
}

pub fn verify_passphrase(record: &AuthRecord, passphrase: &[u8], vault_id: VaultId) -> Result<AuthProof, AuthError> {
    let AuthRecord::Passphrase { kdf, verifier } = record else {
        return Err(AuthError::NotEnrolled(AuthKind::Passphrase));
    };
    let failed = AuthError::AuthFailed { score: None };
    if passphrase.is_empty() {
        return Err(failed);
    }
    let candidate = derive_key(passphrase, kdf)?;
    if bool::from(candidate.as_slice().ct_eq(verifier.as_slice())) {
        Ok(AuthProof { vault_id, kind: AuthKind::Passphrase, score: None })
    } else {
        Err(failed)
    }
}

pub fn verify_fingerprint(record: &AuthRecord, probe: &Template, vault_id: VaultId) -> Result<AuthProof, AuthError> {
    let AuthRecord::Fingerprint { template, threshold } = record else {
        return Err(AuthError::NotEnrolled(AuthKind::Fingerprint));
    };
    let score = match_templates(template, probe, &MatchParams::default()).score;
    if score >= *threshold {
        Ok(AuthProof { vault_id, kind: AuthKind::Fingerprint, score: Some(score) })
    } else {
        Err(AuthError::AuthFailed { score: Some(score) })
    }
}

/// Succeeds iff every kind the policy requires has a proof.
pub fn check_policy(policy: AuthPolicy, proofs: &[AuthProof]) -> Result<(), AuthError> {
    let missing: Vec<AuthKind> =
        policy.required().iter().copied().filter(|k| !proofs.iter().any(|p| p.kind == *k)).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(AuthError::PolicyUnsatisfied(missing))
    }
}
