//! Access to the browser's login database (`signons.sqlite` role) and the
//! key-store file next to it (`key3.db` role).
//!
//! Rows are copied column-agnostically: the schema of `moz_logins` is read at
//! open time and every column is carried verbatim. Only the integer primary
//! key and `hostname` are interpreted.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use credmask_core::codec::canonical_dump;
use credmask_core::{CodecError, LoginRow, Value};
use fs4::fs_std::FileExt;
use rusqlite::types::{ToSqlOutput, ValueRef};
use rusqlite::{Connection, ErrorCode, OpenFlags, ToSql, TransactionBehavior};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const LOGINS_TABLE: &str = "moz_logins";
pub const DISABLED_HOSTS_TABLE: &str = "moz_disabledHosts";
pub const HOSTNAME_COLUMN: &str = "hostname";

/// Firefox keeps these next to the profile's databases while it runs.
pub const DEFAULT_LOCK_FILES: &[&str] = &[".parentlock", "lock"];

const SQLITE_MAGIC: &[u8; 16] = b"SQLite format 3\0";

/// Column set of the Firefox 3 era `moz_logins`, used for fixtures.
pub const FIXTURE_COLUMNS: &[&str] = &[
    "id",
    "hostname",
    "httpRealm",
    "formSubmitURL",
    "usernameField",
    "passwordField",
    "encryptedUsername",
    "encryptedPassword",
    "guid",
    "encType",
];

const FIXTURE_SCHEMA: &str = "
CREATE TABLE moz_disabledHosts (id INTEGER PRIMARY KEY, hostname TEXT UNIQUE ON CONFLICT REPLACE);
CREATE TABLE moz_logins (id INTEGER PRIMARY KEY, hostname TEXT NOT NULL, httpRealm TEXT,
    formSubmitURL TEXT, usernameField TEXT NOT NULL, passwordField TEXT NOT NULL,
    encryptedUsername TEXT NOT NULL, encryptedPassword TEXT NOT NULL, guid TEXT, encType INTEGER);
CREATE INDEX moz_logins_hostname_index ON moz_logins (hostname);
CREATE INDEX moz_logins_hostname_formSubmitURL_index ON moz_logins (hostname, formSubmitURL);
CREATE INDEX moz_logins_hostname_httpRealm_index ON moz_logins (hostname, httpRealm);
";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{0} is not an SQLite database")]
    NotADatabase(PathBuf),
    #[error("unexpected store schema: {0}")]
    SchemaError(String),
    #[error("login store is busy: {0}")]
    StoreBusy(String),
    #[error("row {0} does not exist")]
    RowNotFound(i64),
    #[error("row id {0} is already in use")]
    RowIdConflict(i64),
    #[error("row columns do not match the store schema: {0}")]
    SchemaMismatch(String),
    #[error("store was opened read-only")]
    ReadOnly,
    #[error("{0} already exists")]
    AlreadyExists(PathBuf),
    #[error("key store {0} is missing")]
    MissingKeyStore(PathBuf),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("sqlite: {0}")]
    Sql(#[from] rusqlite::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpenMode {
    ReadOnly,
    ReadWrite,
}

/// Where a row's id lives.
#[derive(Debug, Clone, PartialEq, Eq)]
enum RowKey {
    /// An `INTEGER PRIMARY KEY` column, which aliases the rowid.
    Column(usize),
    /// No such column; the implicit rowid is addressed directly.
    Rowid,
}

pub struct StoreHandle {
    path: PathBuf,
    mode: OpenMode,
    conn: Connection,
    schema: Vec<String>,
    key: RowKey,
    hostname_idx: usize,
    _lock: Option<File>,
}

impl fmt::Debug for StoreHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StoreHandle")
            .field("path", &self.path)
            .field("mode", &self.mode)
            .field("schema", &self.schema)
            .finish()
    }
}

fn quote(ident: &str) -> String {
    format!("\"{}\"", ident.replace('"', "\"\""))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn is_busy(e: &rusqlite::Error) -> bool {
    matches!(e.sqlite_error_code(), Some(ErrorCode::DatabaseBusy | ErrorCode::DatabaseLocked))
}

fn map_open_error(path: &Path, e: rusqlite::Error) -> StoreError {
    match e.sqlite_error_code() {
        Some(ErrorCode::NotADatabase) => StoreError::NotADatabase(path.to_path_buf()),
        _ if is_busy(&e) => StoreError::StoreBusy(format!("{} is locked", path.display())),
        _ => StoreError::Sql(e),
    }
}

fn to_value(v: ValueRef<'_>) -> Value {
    match v {
        ValueRef::Null => Value::Null,
        ValueRef::Integer(i) => Value::Integer(i),
        ValueRef::Real(r) => Value::Real(r),
        ValueRef::Text(t) => Value::Text(t.to_vec()),
        ValueRef::Blob(b) => Value::Blob(b.to_vec()),
    }
}

struct SqlValue<'a>(&'a Value);

impl ToSql for SqlValue<'_> {
    fn to_sql(&self) -> rusqlite::Result<ToSqlOutput<'_>> {
        Ok(ToSqlOutput::Borrowed(match self.0 {
            Value::Null => ValueRef::Null,
            Value::Integer(i) => ValueRef::Integer(*i),
            Value::Real(r) => ValueRef::Real(*r),
            Value::Text(t) => ValueRef::Text(t),
            Value::Blob(b) => ValueRef::Blob(b),
        }))
    }
}

fn check_magic(path: &Path) -> Result<()> {
    let mut header = [0u8; 16];
    let mut file = File::open(path)?;
    let n = file.read(&mut header)?;
    if n < header.len() || &header != SQLITE_MAGIC {
        return Err(StoreError::NotADatabase(path.to_path_buf()));
    }
    Ok(())
}

fn connect(path: &Path, mode: OpenMode) -> Result<Connection> {
    let flags = match mode {
        OpenMode::ReadOnly => OpenFlags::SQLITE_OPEN_READ_ONLY,
        OpenMode::ReadWrite => OpenFlags::SQLITE_OPEN_READ_WRITE,
    } | OpenFlags::SQLITE_OPEN_NO_MUTEX;
    let conn = Connection::open_with_flags(path, flags).map_err(|e| map_open_error(path, e))?;
    conn.busy_timeout(std::time::Duration::ZERO)?;
    Ok(conn)
}

/// Opens an existing store. Read-write handles also take an advisory lock
/// on a `.credmask-lock` sidecar, so one process holds at most one writer.
pub fn open_store(path: &Path, mode: OpenMode) -> Result<StoreHandle> {
    check_magic(path)?;
    let lock = match mode {
        OpenMode::ReadOnly => None,
        OpenMode::ReadWrite => {
            let lock_path = sidecar(path, ".credmask-lock");
            let file = OpenOptions::new().create(true).truncate(false).write(true).open(&lock_path)?;
            if !file.try_lock_exclusive().unwrap_or(false) {
                return Err(StoreError::StoreBusy(format!("{} is held by another writer", lock_path.display())));
            }
            Some(file)
        }
    };
    let conn = connect(path, mode)?;

    let mut columns: Vec<(String, String, i64)> = Vec::new();
    {
        let mut stmt = conn
            .prepare(&format!("PRAGMA table_info({})", quote(LOGINS_TABLE)))
            .map_err(|e| map_open_error(path, e))?;
        let rows = stmt
            .query_map([], |r| Ok((r.get::<_, String>(1)?, r.get::<_, String>(2)?, r.get::<_, i64>(5)?)))
            .map_err(|e| map_open_error(path, e))?;
        for row in rows {
            columns.push(row.map_err(|e| map_open_error(path, e))?);
        }
    }
    if columns.is_empty() {
        return Err(StoreError::SchemaError(format!("table {LOGINS_TABLE} is missing")));
    }
    let pk: Vec<usize> = columns.iter().enumerate().filter(|(_, c)| c.2 > 0).map(|(i, _)| i).collect();
    let key = match pk[..] {
        [i] if columns[i].1.eq_ignore_ascii_case("INTEGER") => RowKey::Column(i),
        _ => RowKey::Rowid,
    };
    let schema: Vec<String> = columns.into_iter().map(|c| c.0).collect();
    let hostname_idx = schema
        .iter()
        .position(|c| c == HOSTNAME_COLUMN)
        .ok_or_else(|| StoreError::SchemaError(format!("{LOGINS_TABLE} has no {HOSTNAME_COLUMN} column")))?;

    Ok(StoreHandle { path: path.to_path_buf(), mode, conn, schema, key, hostname_idx, _lock: lock })
}

impl StoreHandle {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn mode(&self) -> OpenMode {
        self.mode
    }

    /// `moz_logins` column names in table order.
    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    /// Name of the `INTEGER PRIMARY KEY` column, if the table has one.
    pub fn key_column(&self) -> Option<&str> {
        match self.key {
            RowKey::Column(i) => Some(&self.schema[i]),
            RowKey::Rowid => None,
        }
    }

    fn key_expr(&self) -> String {
        match self.key {
            RowKey::Column(i) => quote(&self.schema[i]),
            RowKey::Rowid => "rowid".to_owned(),
        }
    }

    /// Every row, every column, ascending by row id.
    pub fn list_logins(&self) -> Result<Vec<LoginRow>> {
        let cols: Vec<String> = self.schema.iter().map(|c| quote(c)).collect();
        let sql = format!(
            "SELECT rowid, {} FROM {} ORDER BY {}",
            cols.join(", "),
            quote(LOGINS_TABLE),
            self.key_expr()
        );
        let mut stmt = self.conn.prepare(&sql)?;
        let mut rows = stmt.query([])?;
        let mut out = Vec::new();
        while let Some(r) = rows.next()? {
            let row_id: i64 = r.get(0)?;
            let cells: Vec<(String, Value)> = self
                .schema
                .iter()
                .enumerate()
                .map(|(i, c)| Ok((c.clone(), to_value(r.get_ref(i + 1)?))))
                .collect::<rusqlite::Result<_>>()?;
            let hostname = match &cells[self.hostname_idx].1 {
                Value::Text(t) => String::from_utf8_lossy(t).into_owned(),
                Value::Null => String::new(),
                other => format!("{other:?}"),
            };
            out.push(LoginRow { row_id, hostname, cells });
        }
        Ok(out)
    }

    fn existing_ids(&self) -> Result<HashSet<i64>> {
        let mut stmt = self.conn.prepare(&format!("SELECT rowid FROM {}", quote(LOGINS_TABLE)))?;
        let ids = stmt.query_map([], |r| r.get::<_, i64>(0))?.collect::<rusqlite::Result<_>>()?;
        Ok(ids)
    }

    /// Rewrites a row's id, including the primary-key cell when there is one.
    pub fn renumber(&self, row: &mut LoginRow, new_id: i64) {
        row.row_id = new_id;
        if let Some(col) = self.key_column() {
            if let Some((_, v)) = row.cells.iter_mut().find(|(c, _)| c == col) {
                *v = Value::Integer(new_id);
            }
        }
    }

    fn check_row_shape(&self, row: &LoginRow) -> Result<()> {
        let mut have: Vec<&str> = row.column_names().collect();
        let mut want: Vec<&str> = self.schema.iter().map(String::as_str).collect();
        have.sort_unstable();
        want.sort_unstable();
        if have != want {
            return Err(StoreError::SchemaMismatch(format!("row {} has columns {:?}", row.row_id, row.column_names().collect::<Vec<_>>())));
        }
        if let Some(col) = self.key_column() {
            if row.cell(col) != Some(&Value::Integer(row.row_id)) {
                return Err(StoreError::SchemaMismatch(format!("row {} disagrees with its {col} cell", row.row_id)));
            }
        }
        Ok(())
    }

    /// Deletes `delete` and then inserts `insert` in one transaction. Every
    /// precondition is checked before anything is written, so on error the
    /// store is untouched.
    pub fn apply_changes(&mut self, delete: &BTreeSet<i64>, insert: &[LoginRow]) -> Result<(usize, usize)> {
        if self.mode == OpenMode::ReadOnly {
            return Err(StoreError::ReadOnly);
        }
        if delete.is_empty() && insert.is_empty() {
            return Ok((0, 0));
        }
        let mut ids = self.existing_ids()?;
        if let Some(&missing) = delete.iter().find(|id| !ids.contains(id)) {
            return Err(StoreError::RowNotFound(missing));
        }
        for id in delete {
            ids.remove(id);
        }
        for row in insert {
            self.check_row_shape(row)?;
            if !ids.insert(row.row_id) {
                return Err(StoreError::RowIdConflict(row.row_id));
            }
        }

        let table = quote(LOGINS_TABLE);
        let key_expr = self.key_expr();
        let tx = self.conn.transaction_with_behavior(TransactionBehavior::Immediate).map_err(|e| {
            if is_busy(&e) {
                StoreError::StoreBusy("database is locked by another process".into())
            } else {
                StoreError::Sql(e)
            }
        })?;
        {
            let mut del = tx.prepare(&format!("DELETE FROM {table} WHERE {key_expr} = ?1"))?;
            for id in delete {
                del.execute([id])?;
            }
        }
        for row in insert {
            let mut cols: Vec<String> = Vec::new();
            let mut params: Vec<SqlValue<'_>> = Vec::new();
            let rowid_value = Value::Integer(row.row_id);
            if self.key == RowKey::Rowid {
                cols.push("rowid".into());
                params.push(SqlValue(&rowid_value));
            }
            for (c, v) in &row.cells {
                cols.push(quote(c));
                params.push(SqlValue(v));
            }
            let placeholders: Vec<String> = (1..=cols.len()).map(|i| format!("?{i}")).collect();
            let sql = format!("INSERT INTO {table} ({}) VALUES ({})", cols.join(", "), placeholders.join(", "));
            tx.execute(&sql, rusqlite::params_from_iter(params.iter()))?;
        }
        tx.commit()?;
        Ok((delete.len(), insert.len()))
    }

    /// Removes exactly these rows, or nothing if any is missing.
    pub fn delete_rows(&mut self, row_ids: &BTreeSet<i64>) -> Result<usize> {
        self.apply_changes(row_ids, &[]).map(|(d, _)| d)
    }

    /// Inserts rows under their original ids, or nothing on any conflict.
    pub fn insert_rows(&mut self, rows: &[LoginRow]) -> Result<usize> {
        self.apply_changes(&BTreeSet::new(), rows).map(|(_, i)| i)
    }

    /// Hostnames on the never-save list; empty when the table is absent.
    pub fn list_disabled_hosts(&self) -> Result<Vec<String>> {
        let exists: bool = self.conn.query_row(
            "SELECT EXISTS (SELECT 1 FROM sqlite_master WHERE type = 'table' AND name = ?1)",
            [DISABLED_HOSTS_TABLE],
            |r| r.get(0),
        )?;
        if !exists {
            return Ok(Vec::new());
        }
        let mut stmt = self.conn.prepare(&format!(
            "SELECT hostname FROM {} WHERE hostname IS NOT NULL ORDER BY rowid",
            quote(DISABLED_HOSTS_TABLE)
        ))?;
        let hosts = stmt.query_map([], |r| r.get::<_, String>(0))?.collect::<rusqlite::Result<_>>()?;
        Ok(hosts)
    }

    /// Deterministic bytes of the whole `moz_logins` table.
    pub fn dump_canonical(&self) -> Result<Vec<u8>> {
        Ok(canonical_dump(&self.list_logins()?)?)
    }
}

/// SHA-256 of the key-store file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyStoreDigest {
    pub path: PathBuf,
    pub digest: [u8; 32],
}

impl fmt::Display for KeyStoreDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.digest {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Only ever reads the file.
pub fn keystore_digest(path: &Path) -> Result<KeyStoreDigest> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => StoreError::MissingKeyStore(path.to_path_buf()),
        _ => StoreError::Io(e),
    })?;
    Ok(KeyStoreDigest { path: path.to_path_buf(), digest: Sha256::digest(&bytes).into() })
}

/// Fails if the browser looks like it is using the store: a sibling lock
/// file from `lock_files` exists, or another connection holds a write lock.
pub fn check_not_busy<S: AsRef<str>>(path: &Path, lock_files: &[S]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    for name in lock_files {
        let candidate = dir.join(name.as_ref());
        // symlink_metadata: Firefox's `lock` is a dangling symlink
        if fs::symlink_metadata(&candidate).is_ok() {
            return Err(StoreError::StoreBusy(format!("browser lock file {} is present", candidate.display())));
        }
    }
    check_magic(path)?;
    let conn = connect(path, OpenMode::ReadWrite)?;
    match conn.execute_batch("BEGIN IMMEDIATE; ROLLBACK;") {
        Ok(()) => Ok(()),
        Err(e) if is_busy(&e) => {
            Err(StoreError::StoreBusy(format!("{} is write-locked by another connection", path.display())))
        }
        Err(e) => Err(map_open_error(path, e)),
    }
}

/// Creates a new store with the fixture schema and fills it.
pub fn init_fixture(path: &Path, rows: &[LoginRow], disabled: &[String]) -> Result<StoreHandle> {
    if fs::symlink_metadata(path).is_ok() {
        return Err(StoreError::AlreadyExists(path.to_path_buf()));
    }
    {
        let conn = Connection::open_with_flags(
            path,
            OpenFlags::SQLITE_OPEN_READ_WRITE | OpenFlags::SQLITE_OPEN_CREATE,
        )?;
        conn.execute_batch(FIXTURE_SCHEMA)?;
        let mut stmt = conn.prepare(&format!("INSERT INTO {} (hostname) VALUES (?1)", quote(DISABLED_HOSTS_TABLE)))?;
        for host in disabled {
            stmt.execute([host])?;
        }
    }
    let mut handle = open_store(path, OpenMode::ReadWrite)?;
    handle.insert_rows(rows)?;
    Ok(handle)
}

/// A fixture row over [`FIXTURE_COLUMNS`].
pub fn fixture_row(row_id: i64, hostname: &str, username: &str, password: &str) -> LoginRow {
    let cells = vec![
        ("id", Value::Integer(row_id)),
        ("hostname", Value::text(hostname)),
        ("httpRealm", Value::Null),
        ("formSubmitURL", Value::text(hostname)),
        ("usernameField", Value::text("username")),
        ("passwordField", Value::text("password")),
        ("encryptedUsername", Value::text(username)),
        ("encryptedPassword", Value::text(password)),
        ("guid", Value::text(&format!("{{{row_id:08x}-0000-4000-8000-000000000000}}"))),
        ("encType", Value::Integer(1)),
    ];
    LoginRow {
        row_id,
        hostname: hostname.to_owned(),
        cells: cells.into_iter().map(|(c, v)| (c.to_owned(), v)).collect(),
    }
}
