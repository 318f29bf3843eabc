//! Sealed vault container.
//!
//! ```text
//! "CMV1" | version u16 | kdf memory bytes u32 | kdf iterations u32 |
//! kdf parallelism u8 | salt [16] | nonce [24] | ciphertext | tag [16]
//! ```
//!
//! All integers are big-endian. The key is Argon2id over the passphrase; the
//! payload is XChaCha20-Poly1305 with the 55-byte header as associated data,
//! so any header edit also fails authentication.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use argon2::{Algorithm, Argon2, Params, Version};
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use thiserror::Error;
use zeroize::Zeroizing;

use crate::auth::{AuthPolicy, AuthRecord};
use crate::codec::{write_row_cells, CodecError, LoginRow, Reader, Writer};
use crate::minutiae::{Minutia, MinutiaKind, Template};

pub const MAGIC: [u8; 4] = *b"CMV1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 1 + 16 + 24;
pub const TAG_LEN: usize = 16;
pub const KEY_LEN: usize = 32;

pub const DEFAULT_MEMORY_BYTES: u32 = 64 * 1024 * 1024;
pub const DEFAULT_ITERATIONS: u32 = 3;
pub const DEFAULT_PARALLELISM: u8 = 1;

/// Largest KDF cost accepted from a file header. A corrupted header must not
/// be able to make `open` allocate gigabytes or spin for minutes.
pub const MAX_MEMORY_BYTES: u32 = 1024 * 1024 * 1024;
pub const MAX_ITERATIONS: u32 = 64;
pub const MAX_PARALLELISM: u8 = 16;

pub type VaultId = [u8; 16];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VaultError {
    #[error("vault file is corrupt: {0}")]
    Tampered(&'static str),
    #[error("unsupported vault format version {0}")]
    BadVersion(u16),
    #[error("wrong passphrase or modified vault contents")]
    WrongSecret,
    #[error("passphrase must not be empty")]
    EmptyPassphrase,
    #[error("host {0} is already in the vault")]
    DuplicateHost(String),
    #[error("host {0} is not in the vault")]
    UnknownHost(String),
    #[error("invalid vault entry: {0}")]
    BadEntry(&'static str),
    #[error("invalid key-derivation parameters: {0}")]
    BadKdfParams(&'static str),
    #[error("payload encoding failed: {0}")]
    Codec(#[from] CodecError),
}

/// Argon2id cost and salt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KdfParams {
    pub memory_bytes: u32,
    pub iterations: u32,
    pub parallelism: u8,
    pub salt: [u8; 16],
}

impl KdfParams {
    pub fn with_salt(salt: [u8; 16]) -> Self {
        Self {
            memory_bytes: DEFAULT_MEMORY_BYTES,
            iterations: DEFAULT_ITERATIONS,
            parallelism: DEFAULT_PARALLELISM,
            salt,
        }
    }

    pub fn validate(&self) -> Result<(), VaultError> {
        let p = self.parallelism;
        if p == 0 || p > MAX_PARALLELISM {
            return Err(VaultError::BadKdfParams("parallelism out of range"));
        }
        if self.iterations == 0 || self.iterations > MAX_ITERATIONS {
            return Err(VaultError::BadKdfParams("iteration count out of range"));
        }
        if self.memory_bytes % 1024 != 0
            || self.memory_bytes > MAX_MEMORY_BYTES
            || self.memory_bytes / 1024 < 8 * u32::from(p)
        {
            return Err(VaultError::BadKdfParams("memory cost out of range"));
        }
        Ok(())
    }

    fn write(&self, w: &mut Writer) {
        w.u32(self.memory_bytes);
        w.u32(self.iterations);
        w.u8(self.parallelism);
        w.raw(&self.salt);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            memory_bytes: r.u32()?,
            iterations: r.u32()?,
            parallelism: r.u8()?,
            salt: r.array()?,
        })
    }
}

/// Argon2id(passphrase, salt) → 32 bytes.
pub fn derive_key(passphrase: &[u8], kdf: &KdfParams) -> Result<Zeroizing<[u8; KEY_LEN]>, VaultError> {
    kdf.validate()?;
    let params = Params::new(
        kdf.memory_bytes / 1024,
        kdf.iterations,
        u32::from(kdf.parallelism),
        Some(KEY_LEN),
    )
    .map_err(|_| VaultError::BadKdfParams("rejected by argon2"))?;
    let mut key = Zeroizing::new([0u8; KEY_LEN]);
    Argon2::new(Algorithm::Argon2id, Version::V0x13, params)
        .hash_password_into(passphrase, &kdf.salt, key.as_mut())
        .map_err(|_| VaultError::BadKdfParams("rejected by argon2"))?;
    Ok(key)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub format_version: u16,
    pub kdf: KdfParams,
    pub nonce: [u8; 24],
}

impl Header {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut w = Writer::new();
        w.raw(&MAGIC);
        w.u16(self.format_version);
        self.kdf.write(&mut w);
        w.raw(&self.nonce);
        let bytes = w.into_bytes();
        let mut out = [0u8; HEADER_LEN];
        out.copy_from_slice(&bytes);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, VaultError> {
        if bytes.len() < HEADER_LEN + TAG_LEN {
            return Err(VaultError::Tampered("file shorter than header and tag"));
        }
        let mut r = Reader::new(&bytes[..HEADER_LEN]);
        if r.array::<4>()? != MAGIC {
            return Err(VaultError::Tampered("bad magic"));
        }
        let format_version = r.u16()?;
        if format_version != FORMAT_VERSION {
            return Err(VaultError::BadVersion(format_version));
        }
        let kdf = KdfParams::read(&mut r)?;
        kdf.validate().map_err(|_| VaultError::Tampered("kdf parameters out of range"))?;
        let nonce = r.array()?;
        Ok(Self { format_version, kdf, nonce })
    }
}

/// Encrypts `plaintext` under `key`; returns the complete file image.
pub fn seal(header: &Header, key: &[u8; KEY_LEN], plaintext: &[u8]) -> Vec<u8> {
    let aad = header.encode();
    let cipher = XChaCha20Poly1305::new(key.into());
    let body = cipher
        .encrypt(XNonce::from_slice(&header.nonce), Payload { msg: plaintext, aad: &aad })
        .expect("XChaCha20-Poly1305 encryption cannot fail for in-memory buffers");
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&aad);
    out.extend_from_slice(&body);
    out
}

/// A decrypted file: its header, the derived key (for re-sealing) and plaintext.
pub struct Unsealed {
    pub header: Header,
    pub key: Zeroizing<[u8; KEY_LEN]>,
    pub plaintext: Zeroizing<Vec<u8>>,
}

pub fn unseal(bytes: &[u8], passphrase: &[u8]) -> Result<Unsealed, VaultError> {
    let header = Header::decode(bytes)?;
    let key = derive_key(passphrase, &header.kdf)?;
    let cipher = XChaCha20Poly1305::new(key.as_ref().into());
    let plaintext = cipher
        .decrypt(
            XNonce::from_slice(&header.nonce),
            Payload { msg: &bytes[HEADER_LEN..], aad: &bytes[..HEADER_LEN] },
        )
        .map_err(|_| VaultError::WrongSecret)?;
    Ok(Unsealed { header, key, plaintext: Zeroizing::new(plaintext) })
}

/// Rows of one masked host, captured at mask time.
#[derive(Debug, Clone, PartialEq)]
pub struct VaultEntry {
    pub hostname: String,
    pub rows: Vec<LoginRow>,
    /// Seconds since the Unix epoch, UTC.
    pub masked_at: u64,
    pub store_path: String,
    pub schema_columns: Vec<String>,
}

impl VaultEntry {
    pub fn new(
        hostname: String,
        rows: Vec<LoginRow>,
        masked_at: u64,
        store_path: String,
        schema_columns: Vec<String>,
    ) -> Result<Self, VaultError> {
        let entry = Self { hostname, rows, masked_at, store_path, schema_columns };
        entry.validate()?;
        Ok(entry)
    }

    fn validate(&self) -> Result<(), VaultError> {
        if self.rows.is_empty() {
            return Err(VaultError::BadEntry("entry has no rows"));
        }
        if self.rows.iter().any(|r| r.hostname != self.hostname) {
            return Err(VaultError::BadEntry("row hostname differs from entry hostname"));
        }
        if self.rows.iter().any(|r| !r.column_names().eq(self.schema_columns.iter().map(String::as_str))) {
            return Err(VaultError::BadEntry("row columns differ from recorded schema"));
        }
        Ok(())
    }
}

/// Everything inside the encrypted payload.
#[derive(Debug, Clone, PartialEq)]
pub struct VaultState {
    pub vault_id: VaultId,
    pub entries: Vec<VaultEntry>,
    pub auth_records: Vec<AuthRecord>,
    pub policy: AuthPolicy,
    /// Key-store hash taken when the vault went from empty to masked.
    pub keystore_digest: Option<[u8; 32]>,
}

impl VaultState {
    pub fn new(vault_id: VaultId) -> Self {
        Self {
            vault_id,
            entries: Vec::new(),
            auth_records: Vec::new(),
            policy: AuthPolicy::PassphraseOnly,
            keystore_digest: None,
        }
    }

    pub fn hostnames(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.hostname.as_str())
    }

    pub fn entry(&self, hostname: &str) -> Option<&VaultEntry> {
        self.entries.iter().find(|e| e.hostname == hostname)
    }

    /// Appends all of `new` or nothing.
    pub fn put_entries(&mut self, new: Vec<VaultEntry>) -> Result<(), VaultError> {
        let mut seen: BTreeSet<&str> = self.hostnames().collect();
        for e in &new {
            e.validate()?;
            if !seen.insert(e.hostname.as_str()) {
                return Err(VaultError::DuplicateHost(e.hostname.clone()));
            }
        }
        self.entries.extend(new);
        Ok(())
    }

    /// Removes and returns the entries for `hosts`, all or nothing. The
    /// result keeps vault order.
    pub fn take_entries(&mut self, hosts: &BTreeSet<String>) -> Result<Vec<VaultEntry>, VaultError> {
        if let Some(missing) = hosts.iter().find(|h| self.entry(h).is_none()) {
            return Err(VaultError::UnknownHost(missing.clone()));
        }
        let (taken, kept) = core::mem::take(&mut self.entries)
            .into_iter()
            .partition(|e| hosts.contains(&e.hostname));
        self.entries = kept;
        Ok(taken)
    }

    pub fn encode(&self) -> Result<Zeroizing<Vec<u8>>, VaultError> {
        let mut w = Writer::new();
        w.raw(&self.vault_id);
        match &self.keystore_digest {
            Some(d) => {
                w.u8(1);
                w.raw(d);
            }
            None => w.u8(0),
        }
        w.u8(self.policy.code());
        w.u32(len32(self.entries.len())?);
        for e in &self.entries {
            w.str(&e.hostname)?;
            w.u64(e.masked_at);
            w.str(&e.store_path)?;
            w.u16(u16::try_from(e.schema_columns.len()).map_err(|_| CodecError::Range("too many columns"))?);
            for c in &e.schema_columns {
                w.str(c)?;
            }
            w.u32(len32(e.rows.len())?);
            for row in &e.rows {
                write_row_cells(&mut w, row)?;
            }
        }
        w.u16(u16::try_from(self.auth_records.len()).map_err(|_| CodecError::Range("too many auth records"))?);
        for rec in &self.auth_records {
            match rec {
                AuthRecord::Passphrase { kdf, verifier } => {
                    w.u8(1);
                    kdf.write(&mut w);
                    w.raw(verifier);
                }
                AuthRecord::Fingerprint { template, threshold } => {
                    w.u8(2);
                    w.f64(*threshold);
                    w.str(&template.source_id)?;
                    w.u32(len32(template.len())?);
                    for m in &template.minutiae {
                        w.f64(m.x);
                        w.f64(m.y);
                        w.f64(m.theta);
                        w.u8(match m.kind {
                            MinutiaKind::Termination => 1,
                            MinutiaKind::Bifurcation => 2,
                        });
                    }
                }
            }
        }
        Ok(Zeroizing::new(w.into_bytes()))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, VaultError> {
        Self::decode_fields(bytes).map_err(|e| match e {
            VaultError::Codec(_) => VaultError::Tampered("payload decoding failed"),
            e => e,
        })
    }

    fn decode_fields(bytes: &[u8]) -> Result<Self, VaultError> {
        let bad = VaultError::Tampered;
        let mut r = Reader::new(bytes);
        let vault_id = r.array()?;
        let keystore_digest = match r.u8()? {
            0 => None,
            1 => Some(r.array()?),
            _ => return Err(bad("bad key-store digest flag")),
        };
        let policy = AuthPolicy::from_code(r.u8()?).ok_or(bad("unknown auth policy"))?;
        let n_entries = r.u32()?;
        let mut entries = Vec::new();
        for _ in 0..n_entries {
            let hostname = r.string()?;
            let masked_at = r.u64()?;
            let store_path = r.string()?;
            let n_cols = r.u16()?;
            let schema_columns = (0..n_cols).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
            let n_rows = r.u32()?;
            let mut rows = Vec::new();
            for _ in 0..n_rows {
                let row_id = r.i64()?;
                if usize::from(r.u16()?) != schema_columns.len() {
                    return Err(bad("row width differs from entry schema"));
                }
                let cells = schema_columns
                    .iter()
                    .map(|c| Ok((c.clone(), r.cell()?)))
                    .collect::<Result<Vec<_>, CodecError>>()?;
                rows.push(LoginRow { row_id, hostname: hostname.clone(), cells });
            }
            entries.push(VaultEntry { hostname, rows, masked_at, store_path, schema_columns });
        }
        let n_auth = r.u16()?;
        let mut auth_records = Vec::new();
        for _ in 0..n_auth {
            let rec = match r.u8()? {
                1 => AuthRecord::Passphrase { kdf: KdfParams::read(&mut r)?, verifier: r.array()? },
                2 => {
                    let threshold = r.f64()?;
                    let source_id = r.string()?;
                    let n = r.u32()?;
                    let mut minutiae = Vec::new();
                    for _ in 0..n {
                        let (x, y, theta) = (r.f64()?, r.f64()?, r.f64()?);
                        let kind = match r.u8()? {
                            1 => MinutiaKind::Termination,
                            2 => MinutiaKind::Bifurcation,
                            _ => return Err(bad("unknown minutia kind")),
                        };
                        minutiae.push(Minutia { x, y, theta, kind });
                    }
                    AuthRecord::Fingerprint { template: Template { minutiae, source_id }, threshold }
                }
                _ => return Err(bad("unknown auth record kind")),
            };
            auth_records.push(rec);
        }
        r.finish()?;
        let state = Self { vault_id, entries, auth_records, policy, keystore_digest };
        let mut hosts = BTreeSet::new();
        for e in &state.entries {
            e.validate().map_err(|_| bad("invalid entry"))?;
            if !hosts.insert(e.hostname.as_str()) {
                return Err(bad("duplicate host"));
            }
        }
        Ok(state)
    }
}

fn len32(n: usize) -> Result<u32, CodecError> {
    u32::try_from(n).map_err(|_| CodecError::Range("more than 2^32 items"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Value;
    use alloc::vec;

    fn cheap_kdf() -> KdfParams {
        KdfParams { memory_bytes: 64 * 1024, iterations: 1, parallelism: 1, salt: [7; 16] }
    }

    fn entry(host: &str, ids: &[i64]) -> VaultEntry {
        let rows = ids
            .iter()
            .map(|&id| LoginRow {
                row_id: id,
                hostname: host.into(),
                cells: vec![
                    ("id".into(), Value::Integer(id)),
                    ("hostname".into(), Value::text(host)),
                    ("encryptedPassword".into(), Value::text("MDIEEPgAAAAAAAAAAAAAAAAAAAEwFAYIKoZIhvcNAwcECA")),
                ],
            })
            .collect();
        VaultEntry::new(host.into(), rows, 1_700_000_000, "/p/signons.sqlite".into(), vec![
            "id".into(),
            "hostname".into(),
            "encryptedPassword".into(),
        ])
        .unwrap()
    }

    fn state() -> VaultState {
        let mut s = VaultState::new([1; 16]);
        s.put_entries(vec![entry("https://a.example", &[1, 2]), entry("https://b.example", &[3])]).unwrap();
        s.keystore_digest = Some([9; 32]);
        s.policy = AuthPolicy::Both;
        s.auth_records.push(AuthRecord::Fingerprint {
            template: Template::new("probe", vec![Minutia::new(1.0, 2.0, 3.0, MinutiaKind::Bifurcation)]),
            threshold: 0.4,
        });
        s.auth_records.push(AuthRecord::Passphrase { kdf: cheap_kdf(), verifier: [5; 32] });
        s
    }

    #[test]
    fn payload_round_trips() {
        let s = state();
        assert_eq!(VaultState::decode(&s.encode().unwrap()).unwrap(), s);
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let h = Header { format_version: 1, kdf: cheap_kdf(), nonce: [0xAB; 24] };
        let b = h.encode();
        assert_eq!(&b[..4], b"CMV1");
        assert_eq!(&b[4..6], &[0, 1]);
        assert_eq!(&b[6..10], &(64u32 * 1024).to_be_bytes());
        assert_eq!(&b[10..14], &1u32.to_be_bytes());
        assert_eq!(b[14], 1);
        assert_eq!(&b[15..31], &[7; 16]);
        assert_eq!(&b[31..55], &[0xAB; 24]);
    }

    #[test]
    fn seal_unseal_round_trip_and_wrong_secret() {
        let h = Header { format_version: FORMAT_VERSION, kdf: cheap_kdf(), nonce: [3; 24] };
        let key = derive_key(b"correct horse", &h.kdf).unwrap();
        let file = seal(&h, &key, b"payload");
        assert_eq!(file.len(), HEADER_LEN + 7 + TAG_LEN);
        let opened = unseal(&file, b"correct horse").unwrap();
        assert_eq!(&opened.plaintext[..], b"payload");
        assert_eq!(opened.header, h);
        assert!(matches!(unseal(&file, b"wrong"), Err(VaultError::WrongSecret)));
    }

    #[test]
    fn header_damage_is_classified() {
        let h = Header { format_version: FORMAT_VERSION, kdf: cheap_kdf(), nonce: [3; 24] };
        let key = derive_key(b"pw", &h.kdf).unwrap();
        let file = seal(&h, &key, b"x");
        let mut bad_magic = file.clone();
        bad_magic[0] ^= 0xFF;
        assert!(matches!(unseal(&bad_magic, b"pw"), Err(VaultError::Tampered(_))));
        let mut bad_version = file.clone();
        bad_version[5] = 9;
        assert!(matches!(unseal(&bad_version, b"pw"), Err(VaultError::BadVersion(9))));
        let mut huge_memory = file.clone();
        huge_memory[6] = 0xFF;
        assert!(matches!(unseal(&huge_memory, b"pw"), Err(VaultError::Tampered(_))));
        assert!(matches!(unseal(&file[..HEADER_LEN + 3], b"pw"), Err(VaultError::Tampered(_))));
    }

    #[test]
    fn put_rejects_duplicates_atomically() {
        let mut s = state();
        let before = s.clone();
        let err = s.put_entries(vec![entry("https://c.example", &[9]), entry("https://a.example", &[10])]);
        assert_eq!(err, Err(VaultError::DuplicateHost("https://a.example".into())));
        assert_eq!(s, before);
        let err = s.put_entries(vec![entry("https://d.example", &[9]), entry("https://d.example", &[10])]);
        assert!(matches!(err, Err(VaultError::DuplicateHost(_))));
        s.put_entries(vec![]).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn take_is_all_or_nothing() {
        let mut s = state();
        let before = s.clone();
        let want: BTreeSet<String> = ["https://a.example".into(), "https://zzz".into()].into();
        assert_eq!(s.take_entries(&want), Err(VaultError::UnknownHost("https://zzz".into())));
        assert_eq!(s, before);
        let got = s.take_entries(&["https://a.example".into()].into()).unwrap();
        assert_eq!(got, vec![before.entries[0].clone()]);
        assert_eq!(s.hostnames().collect::<Vec<_>>(), vec!["https://b.example"]);
        assert!(s.take_entries(&BTreeSet::new()).unwrap().is_empty());
    }

    #[test]
    fn entry_invariants() {
        let mut e = entry("h", &[1]);
        e.rows[0].hostname = "other".into();
        assert!(e.validate().is_err());
        assert!(VaultEntry::new("h".into(), vec![], 0, String::new(), vec![]).is_err());
    }

    #[test]
    fn kdf_bounds() {
        assert!(KdfParams::with_salt([0; 16]).validate().is_ok());
        let mut k = cheap_kdf();
        k.memory_bytes = 4096;
        assert!(k.validate().is_err());
        k = cheap_kdf();
        k.parallelism = 0;
        assert!(k.validate().is_err());
        k = cheap_kdf();
        k.iterations = MAX_ITERATIONS + 1;
        assert!(k.validate().is_err());
    }
}
