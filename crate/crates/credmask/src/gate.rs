//! Collecting authentication proofs for an unmask and enrolling factors.

use credmask_core::auth::DEFAULT_FINGERPRINT_THRESHOLD;
use credmask_core::{AuthError, AuthKind, AuthProof, AuthRecord, Template, VaultState};

use crate::vault::VaultFile;

pub const DEFAULT_THRESHOLD: f64 = DEFAULT_FINGERPRINT_THRESHOLD;

/// Whether unmasking this vault needs a secret beyond the vault passphrase.
pub fn needs_unmask_passphrase(state: &VaultState) -> bool {
    state.policy.required().contains(&AuthKind::Passphrase) && state.record(AuthKind::Passphrase).is_some()
}

pub fn needs_fingerprint(state: &VaultState) -> bool {
    state.policy.required().contains(&AuthKind::Fingerprint)
}

/// Proofs from whatever evidence was supplied. A supplied factor that fails
/// verification is an error even if the policy would not need it.
pub fn gather_proofs(
    state: &VaultState,
    unmask_passphrase: Option<&[u8]>,
    probe: Option<&Template>,
) -> Result<Vec<AuthProof>, AuthError> {
    let mut proofs: Vec<AuthProof> = state.unlock_proof().into_iter().collect();
    if let Some(secret) = unmask_passphrase {
        if state.record(AuthKind::Passphrase).is_some() {
            proofs.push(state.verify_passphrase(secret)?);
        }
    }
    if let Some(probe) = probe {
        proofs.push(state.verify_fingerprint(probe)?);
    }
    Ok(proofs)
}

/// Enrols (or, given a proof of the old one, replaces) the unmask passphrase
/// under a fresh salt and the vault's own KDF cost.
pub fn enroll_passphrase(
    vault: &mut VaultFile,
    passphrase: &[u8],
    existing_proof: Option<&AuthProof>,
) -> Result<(), AuthError> {
    let kdf = vault.kdf_cost().with_fresh_salt();
    vault.state_mut().enroll_passphrase(passphrase, kdf, existing_proof).map(|_| ())
}

/// Short description of a record that reveals no secret material.
pub fn describe(record: &AuthRecord) -> String {
    match record {
        AuthRecord::Passphrase { .. } => "passphrase".to_owned(),
        AuthRecord::Fingerprint { template, threshold } => {
            format!("fingerprint ({} minutiae, threshold {threshold})", template.len())
        }
    }
}
