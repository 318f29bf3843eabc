//! Masking and unmasking as plan/apply pairs over a store and a vault.
//!
//! Mask writes the vault before it deletes store rows; unmask writes the
//! store before it drops vault entries. A failure between the two steps
//! therefore leaves rows in both places, never in neither.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use credmask_core::{AuthError, AuthProof, LoginRow, Value, VaultEntry, VaultState};
use thiserror::Error;

use crate::fault::{self, CrashPoint, InjectedCrash};
use crate::store::{check_not_busy, keystore_digest, KeyStoreDigest, StoreError, StoreHandle};
use crate::vault::{VaultFile, VaultFileError};

/// Cell used to decide whether a vaulted row duplicates a live one.
pub const USERNAME_COLUMN: &str = "encryptedUsername";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("no hosts selected")]
    EmptySelection,
    #[error("host {0} has no saved logins")]
    UnknownHost(String),
    #[error("host {0} is already masked")]
    AlreadyMasked(String),
    #[error("host {0} is not masked")]
    NotMasked(String),
    #[error("nothing is masked")]
    NothingMasked,
    #[error("plan is stale: {0}")]
    StalePlan(String),
    #[error("{} host(s) have live rows that conflict with masked rows", .0.len())]
    Conflict(Vec<ConflictReport>),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Vault(#[from] VaultFileError),
    #[error(transparent)]
    Crash(#[from] InjectedCrash),
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConflictPolicy {
    #[default]
    KeepLive,
    OverwriteLive,
    Fail,
}

impl ConflictPolicy {
    pub fn name(self) -> &'static str {
        match self {
            ConflictPolicy::KeepLive => "keep-live",
            ConflictPolicy::OverwriteLive => "overwrite-live",
            ConflictPolicy::Fail => "fail",
        }
    }
}

impl fmt::Display for ConflictPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConflictPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [ConflictPolicy::KeepLive, ConflictPolicy::OverwriteLive, ConflictPolicy::Fail]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown conflict policy {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostSelection {
    pub hostname: String,
    /// Ascending.
    pub row_ids: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub store_path: PathBuf,
    pub vault_path: PathBuf,
    pub selections: Vec<HostSelection>,
    /// Absent when no key-store file is configured.
    pub keystore_digest_before: Option<KeyStoreDigest>,
}

impl MaskPlan {
    pub fn row_count(&self) -> usize {
        self.selections.iter().map(|s| s.row_ids.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnmaskPlan {
    pub vault_path: PathBuf,
    pub store_path: PathBuf,
    pub hosts: BTreeSet<String>,
    pub conflict_policy: ConflictPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Normal,
    Masked,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Normal => "normal",
            Mode::Masked => "masked",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusReport {
    pub mode: Mode,
    pub masked_hosts: Vec<String>,
    pub live_hosts: Vec<String>,
    pub keystore_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConflictAction {
    /// Live rows kept; vaulted rows restored unless they duplicate a live one.
    KeptLive { restored: usize, skipped: usize },
    /// Live rows deleted; vaulted rows restored verbatim.
    OverwroteLive,
    Aborted,
}

impl fmt::Display for ConflictAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConflictAction::KeptLive { restored, skipped } => {
                write!(f, "kept live rows; restored {restored}, skipped {skipped} duplicate(s)")
            }
            ConflictAction::OverwroteLive => f.write_str("replaced live rows with masked rows"),
            ConflictAction::Aborted => f.write_str("aborted"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictReport {
    pub hostname: String,
    pub live_rows: usize,
    pub vaulted_rows: usize,
    pub action: ConflictAction,
}

/// Options shared by the apply steps.
#[derive(Debug, Clone)]
pub struct ApplyOptions {
    /// Sibling file names whose presence means the browser is running.
    pub lock_files: Vec<String>,
    /// Skip the busy check.
    pub force: bool,
    pub keystore: Option<PathBuf>,
}

impl Default for ApplyOptions {
    fn default() -> Self {
        Self {
            lock_files: crate::store::DEFAULT_LOCK_FILES.iter().map(|s| s.to_string()).collect(),
            force: false,
            keystore: None,
        }
    }
}

fn rows_by_host(rows: Vec<LoginRow>) -> BTreeMap<String, Vec<LoginRow>> {
    let mut map: BTreeMap<String, Vec<LoginRow>> = BTreeMap::new();
    for r in rows {
        map.entry(r.hostname.clone()).or_default().push(r);
    }
    map
}

pub fn plan_mask(
    store: &StoreHandle,
    vault: &VaultFile,
    hosts: &BTreeSet<String>,
    keystore: Option<&Path>,
) -> Result<MaskPlan> {
    plan_mask_against(store, vault.path(), vault.state(), hosts, keystore)
}

/// [`plan_mask`] against a vault view that need not exist on disk yet.
pub fn plan_mask_against(
    store: &StoreHandle,
    vault_path: &Path,
    vault: &VaultState,
    hosts: &BTreeSet<String>,
    keystore: Option<&Path>,
) -> Result<MaskPlan> {
    if hosts.is_empty() {
        return Err(EngineError::EmptySelection);
    }
    if let Some(h) = hosts.iter().find(|h| vault.entry(h).is_some()) {
        return Err(EngineError::AlreadyMasked(h.clone()));
    }
    let by_host = rows_by_host(store.list_logins()?);
    let selections = hosts
        .iter()
        .map(|h| {
            let rows = by_host.get(h).ok_or_else(|| EngineError::UnknownHost(h.clone()))?;
            Ok(HostSelection { hostname: h.clone(), row_ids: rows.iter().map(|r| r.row_id).collect() })
        })
        .collect::<Result<_>>()?;
    let keystore_digest_before = keystore.map(keystore_digest).transpose()?;
    Ok(MaskPlan {
        store_path: store.path().to_path_buf(),
        vault_path: vault_path.to_path_buf(),
        selections,
        keystore_digest_before,
    })
}

fn check_paths(store: &StoreHandle, vault: &VaultFile, store_path: &Path, vault_path: &Path) -> Result<()> {
    if store.path() != store_path || vault.path() != vault_path {
        return Err(EngineError::StalePlan("plan was made for a different store or vault".into()));
    }
    Ok(())
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn apply_mask(
    plan: &MaskPlan,
    store: &mut StoreHandle,
    vault: &mut VaultFile,
    opts: &ApplyOptions,
) -> Result<StatusReport> {
    check_paths(store, vault, &plan.store_path, &plan.vault_path)?;
    if !opts.force {
        check_not_busy(store.path(), &opts.lock_files)?;
    }
    let mut by_host = rows_by_host(store.list_logins()?);
    let masked_at = now();
    let store_path = store.path().to_string_lossy().into_owned();
    let mut entries = Vec::with_capacity(plan.selections.len());
    let mut doomed = BTreeSet::new();
    for sel in &plan.selections {
        if vault.state().entry(&sel.hostname).is_some() {
            return Err(EngineError::StalePlan(format!("{} is already masked", sel.hostname)));
        }
        let rows = by_host.remove(&sel.hostname).unwrap_or_default();
        if !rows.iter().map(|r| r.row_id).eq(sel.row_ids.iter().copied()) {
            return Err(EngineError::StalePlan(format!("rows for {} changed since planning", sel.hostname)));
        }
        doomed.extend(sel.row_ids.iter().copied());
        let entry = VaultEntry::new(sel.hostname.clone(), rows, masked_at, store_path.clone(), store.schema().to_vec())
            .map_err(VaultFileError::from)?;
        entries.push(entry);
    }

    let before = vault.state().clone();
    let was_empty = before.entries.is_empty();
    let staged = (|| {
        vault.put_entries(entries)?;
        if was_empty {
            vault.state_mut().keystore_digest = plan.keystore_digest_before.as_ref().map(|d| d.digest);
        }
        vault.commit()
    })();
    if let Err(e) = staged {
        vault.replace_state(before);
        return Err(e.into());
    }
    fault::hit(CrashPoint::AfterVaultCommit)?;

    if let Err(e) = store.delete_rows(&doomed) {
        // the rows are still in the store, so dropping them from the vault loses nothing
        vault.replace_state(before);
        let _ = vault.commit();
        return Err(e.into());
    }
    fault::hit(CrashPoint::AfterStoreDelete)?;
    status(store, Some(vault.state()), opts.keystore.as_deref())
}

/// `hosts = None` selects every masked host.
pub fn plan_unmask(
    store: &StoreHandle,
    vault: &VaultFile,
    hosts: Option<&BTreeSet<String>>,
    conflict_policy: ConflictPolicy,
) -> Result<UnmaskPlan> {
    let state = vault.state();
    if state.entries.is_empty() {
        return Err(EngineError::NothingMasked);
    }
    let hosts = match hosts {
        None => state.hostnames().map(str::to_owned).collect(),
        Some(h) if h.is_empty() => return Err(EngineError::EmptySelection),
        Some(h) => {
            if let Some(unknown) = h.iter().find(|h| state.entry(h).is_none()) {
                return Err(EngineError::NotMasked(unknown.clone()));
            }
            h.clone()
        }
    };
    Ok(UnmaskPlan {
        vault_path: vault.path().to_path_buf(),
        store_path: store.path().to_path_buf(),
        hosts,
        conflict_policy,
    })
}

/// What makes two rows of one host the same login.
fn login_identity<'a>(row: &'a LoginRow, key_column: Option<&str>) -> Vec<&'a Value> {
    match row.cell(USERNAME_COLUMN) {
        Some(v) => vec![v],
        None => row.cells.iter().filter(|(c, _)| Some(c.as_str()) != key_column).map(|(_, v)| v).collect(),
    }
}

/// The store edit that restores `hosts`, with any conflicts resolved.
struct Restoration {
    delete: BTreeSet<i64>,
    insert: Vec<LoginRow>,
    conflicts: Vec<ConflictReport>,
}

fn plan_restoration(
    store: &StoreHandle,
    state: &VaultState,
    hosts: &BTreeSet<String>,
    policy: ConflictPolicy,
) -> Result<Restoration> {
    let live = store.list_logins()?;
    let key_column = store.key_column();
    let live_by_host = rows_by_host(live.clone());
    let mut taken: HashSet<i64> = live.iter().map(|r| r.row_id).collect();
    let mut next_id = live.iter().map(|r| r.row_id).max().unwrap_or(0);
    for entry in hosts.iter().filter_map(|h| state.entry(h)) {
        next_id = next_id.max(entry.rows.iter().map(|r| r.row_id).max().unwrap_or(0));
    }

    let mut out = Restoration { delete: BTreeSet::new(), insert: Vec::new(), conflicts: Vec::new() };
    let mut deferred: Vec<LoginRow> = Vec::new();
    for host in hosts {
        let entry = state.entry(host).ok_or_else(|| EngineError::NotMasked(host.clone()))?;
        let Some(live_rows) = live_by_host.get(host) else {
            deferred.extend(entry.rows.iter().cloned());
            continue;
        };
        let action = match policy {
            ConflictPolicy::Fail => ConflictAction::Aborted,
            ConflictPolicy::OverwriteLive => {
                for r in live_rows {
                    out.delete.insert(r.row_id);
                    taken.remove(&r.row_id);
                }
                deferred.extend(entry.rows.iter().cloned());
                ConflictAction::OverwroteLive
            }
            ConflictPolicy::KeepLive => {
                let live_ids: Vec<Vec<&Value>> = live_rows.iter().map(|r| login_identity(r, key_column)).collect();
                let (dup, fresh): (Vec<&LoginRow>, Vec<&LoginRow>) =
                    entry.rows.iter().partition(|r| live_ids.contains(&login_identity(r, key_column)));
                deferred.extend(fresh.iter().map(|r| (*r).clone()));
                ConflictAction::KeptLive { restored: fresh.len(), skipped: dup.len() }
            }
        };
        out.conflicts.push(ConflictReport {
            hostname: host.clone(),
            live_rows: live_rows.len(),
            vaulted_rows: entry.rows.len(),
            action,
        });
    }
    if policy == ConflictPolicy::Fail && !out.conflicts.is_empty() {
        return Err(EngineError::Conflict(out.conflicts));
    }

    // rows keep their ids unless a surviving live row now holds it
    for mut row in deferred {
        if !taken.insert(row.row_id) {
            if policy == ConflictPolicy::Fail {
                return Err(EngineError::Store(StoreError::RowIdConflict(row.row_id)));
            }
            next_id += 1;
            store.renumber(&mut row, next_id);
            taken.insert(next_id);
        }
        out.insert.push(row);
    }
    out.insert.sort_by_key(|r| r.row_id);
    Ok(out)
}

/// Proofs are checked before either file is read or written.
pub fn apply_unmask(
    plan: &UnmaskPlan,
    proofs: &[AuthProof],
    store: &mut StoreHandle,
    vault: &mut VaultFile,
    opts: &ApplyOptions,
) -> Result<(StatusReport, Vec<ConflictReport>)> {
    vault.state().check_policy(proofs)?;
    check_paths(store, vault, &plan.store_path, &plan.vault_path)?;
    if !opts.force {
        check_not_busy(store.path(), &opts.lock_files)?;
    }
    let restoration = plan_restoration(store, vault.state(), &plan.hosts, plan.conflict_policy)?;
    store.apply_changes(&restoration.delete, &restoration.insert)?;

    let before = vault.state().clone();
    let dropped = (|| {
        vault.take_entries(&plan.hosts)?;
        if vault.state().entries.is_empty() {
            vault.state_mut().keystore_digest = None;
        }
        vault.commit()
    })();
    if let Err(e) = dropped {
        // store already holds the rows; keeping them in the vault too loses nothing
        vault.replace_state(before);
        return Err(e.into());
    }
    let report = status(store, Some(vault.state()), opts.keystore.as_deref())?;
    Ok((report, restoration.conflicts))
}

/// Conflicts `apply_unmask` would meet, without touching anything.
pub fn preview_unmask(plan: &UnmaskPlan, store: &StoreHandle, vault: &VaultFile) -> Result<Vec<ConflictReport>> {
    let policy = match plan.conflict_policy {
        ConflictPolicy::Fail => ConflictPolicy::KeepLive,
        p => p,
    };
    let mut conflicts = plan_restoration(store, vault.state(), &plan.hosts, policy)?.conflicts;
    if plan.conflict_policy == ConflictPolicy::Fail {
        for c in &mut conflicts {
            c.action = ConflictAction::Aborted;
        }
    }
    Ok(conflicts)
}

/// `vault = None` reports a store with no vault yet.
pub fn status(store: &StoreHandle, vault: Option<&VaultState>, keystore: Option<&Path>) -> Result<StatusReport> {
    let live_hosts: Vec<String> = rows_by_host(store.list_logins()?).into_keys().collect();
    let masked_hosts: Vec<String> = vault.map(|v| v.hostnames().map(str::to_owned).collect()).unwrap_or_default();
    let mut masked_hosts = masked_hosts;
    masked_hosts.sort();
    let keystore_ok = match vault.and_then(|v| v.keystore_digest) {
        None => true,
        Some(recorded) => match keystore.map(keystore_digest) {
            Some(Ok(now)) => now.digest == recorded,
            Some(Err(StoreError::MissingKeyStore(_))) | None => false,
            Some(Err(e)) => return Err(e.into()),
        },
    };
    let mode = if masked_hosts.is_empty() { Mode::Normal } else { Mode::Masked };
    Ok(StatusReport { mode, masked_hosts, live_hosts, keystore_ok })
}
