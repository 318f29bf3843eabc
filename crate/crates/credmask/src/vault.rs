//! The vault file on disk: create, open, edit in memory, commit atomically.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use credmask_core::vault::{seal, unseal, Header, KEY_LEN, FORMAT_VERSION};
use credmask_core::{KdfParams, VaultEntry, VaultError, VaultId, VaultState};
use fs4::fs_std::FileExt;
use rand::rngs::OsRng;
use rand::RngCore;
use thiserror::Error;
use zeroize::Zeroizing;

use crate::fault::{self, CrashPoint, InjectedCrash};

#[derive(Debug, Error)]
pub enum VaultFileError {
    #[error("{0} already exists")]
    AlreadyExists(PathBuf),
    #[error("vault {0} does not exist")]
    Missing(PathBuf),
    #[error("vault {0} is open in another process")]
    Busy(PathBuf),
    #[error(transparent)]
    Format(#[from] VaultError),
    #[error(transparent)]
    Crash(#[from] InjectedCrash),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = VaultFileError> = std::result::Result<T, E>;

/// Argon2id cost for a new vault; the salt is drawn fresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KdfCost {
    pub memory_bytes: u32,
    pub iterations: u32,
    pub parallelism: u8,
}

impl Default for KdfCost {
    fn default() -> Self {
        let d = KdfParams::with_salt([0; 16]);
        Self { memory_bytes: d.memory_bytes, iterations: d.iterations, parallelism: d.parallelism }
    }
}

impl KdfCost {
    pub fn with_fresh_salt(self) -> KdfParams {
        let mut salt = [0u8; 16];
        OsRng.fill_bytes(&mut salt);
        KdfParams { memory_bytes: self.memory_bytes, iterations: self.iterations, parallelism: self.parallelism, salt }
    }
}

impl From<&KdfParams> for KdfCost {
    fn from(k: &KdfParams) -> Self {
        Self { memory_bytes: k.memory_bytes, iterations: k.iterations, parallelism: k.parallelism }
    }
}

/// A decrypted vault, exclusively locked for this process until dropped.
pub struct VaultFile {
    path: PathBuf,
    kdf: KdfParams,
    key: Zeroizing<[u8; KEY_LEN]>,
    state: VaultState,
    _lock: File,
}

impl fmt::Debug for VaultFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VaultFile")
            .field("path", &self.path)
            .field("entries", &self.state.entries.len())
            .field("auth_records", &self.state.auth_records.len())
            .finish_non_exhaustive()
    }
}

fn lock_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".lock");
    path.with_file_name(name)
}

fn lock(path: &Path) -> Result<File> {
    let lp = lock_path(path);
    let file = OpenOptions::new().create(true).truncate(false).write(true).open(&lp)?;
    if !file.try_lock_exclusive().unwrap_or(false) {
        return Err(VaultFileError::Busy(path.to_path_buf()));
    }
    Ok(file)
}

/// Write to a synced temp file in the same directory, then rename over `path`.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::Builder::new().prefix(".credmask-vault.").tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    // the temp file is unlinked on this early return, as after a real crash
    fault::hit(CrashPoint::BeforeVaultRename)?;
    tmp.persist(path).map_err(|e| e.error)?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

/// Creates an empty vault. Fails if anything exists at `path`.
pub fn create_vault(path: &Path, passphrase: &[u8], cost: KdfCost) -> Result<VaultFile> {
    if passphrase.is_empty() {
        return Err(VaultError::EmptyPassphrase.into());
    }
    let lock = lock(path)?;
    if fs::symlink_metadata(path).is_ok() {
        return Err(VaultFileError::AlreadyExists(path.to_path_buf()));
    }
    let kdf = cost.with_fresh_salt();
    let key = credmask_core::vault::derive_key(passphrase, &kdf)?;
    let mut vault_id: VaultId = [0; 16];
    OsRng.fill_bytes(&mut vault_id);
    let vault = VaultFile { path: path.to_path_buf(), kdf, key, state: VaultState::new(vault_id), _lock: lock };
    vault.commit()?;
    Ok(vault)
}

/// Decrypts and authenticates the vault at `path`.
pub fn open_vault(path: &Path, passphrase: &[u8]) -> Result<VaultFile> {
    let lock = lock(path)?;
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => VaultFileError::Missing(path.to_path_buf()),
        _ => e.into(),
    })?;
    let opened = unseal(&bytes, passphrase)?;
    let state = VaultState::decode(&opened.plaintext)?;
    Ok(VaultFile { path: path.to_path_buf(), kdf: opened.header.kdf, key: opened.key, state, _lock: lock })
}

impl VaultFile {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn id(&self) -> &VaultId {
        &self.state.vault_id
    }

    pub fn kdf_cost(&self) -> KdfCost {
        KdfCost::from(&self.kdf)
    }

    pub fn state(&self) -> &VaultState {
        &self.state
    }

    /// In-memory edits; nothing is durable until [`VaultFile::commit`].
    pub fn state_mut(&mut self) -> &mut VaultState {
        &mut self.state
    }

    pub(crate) fn replace_state(&mut self, state: VaultState) -> VaultState {
        std::mem::replace(&mut self.state, state)
    }

    pub fn entries(&self) -> &[VaultEntry] {
        &self.state.entries
    }

    pub fn put_entries(&mut self, new: Vec<VaultEntry>) -> Result<()> {
        Ok(self.state.put_entries(new)?)
    }

    pub fn take_entries(&mut self, hosts: &BTreeSet<String>) -> Result<Vec<VaultEntry>> {
        Ok(self.state.take_entries(hosts)?)
    }

    /// Re-encrypts the full state under a fresh nonce and atomically
    /// replaces the file. On failure the previous file is left intact.
    pub fn commit(&self) -> Result<()> {
        let mut nonce = [0u8; 24];
        OsRng.fill_bytes(&mut nonce);
        let header = Header { format_version: FORMAT_VERSION, kdf: self.kdf, nonce };
        let payload = self.state.encode()?;
        atomic_write(&self.path, &seal(&header, &self.key, &payload))
    }
}
