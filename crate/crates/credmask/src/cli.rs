//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or internal error, 2 authentication
//! failure, 3 store busy, 4 vault tampered or wrong vault secret, 5 conflict
//! left unresolved under `--conflicts fail`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use credmask_core::minutiae::{evaluate, format_min, generate_synthetic, match_templates, MatchParams, SyntheticParams};
use credmask_core::{AuthError, AuthKind, AuthPolicy, Template, VaultError, VaultState};
use rayon::prelude::*;
use serde_json::json;
use zeroize::Zeroizing;

use crate::engine::{
    self, apply_mask, apply_unmask, plan_mask_against, plan_unmask, preview_unmask, ApplyOptions, ConflictPolicy,
    ConflictReport, EngineError, MaskPlan, StatusReport,
};
use crate::gate;
use crate::store::{check_not_busy, open_store, OpenMode, StoreError, StoreHandle, DEFAULT_LOCK_FILES};
use crate::templates::{extract_from_image, load_dataset, load_template};
use crate::vault::{create_vault, open_vault, KdfCost, VaultFile, VaultFileError};

pub const CONFIG_ENV: &str = "CREDMASK_CONFIG";
pub const DEFAULT_MARGIN: usize = 10;
/// Key-store file names looked for next to the store, in order.
pub const KEYSTORE_NAMES: &[&str] = &["key4.db", "key3.db"];

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_AUTH: u8 = 2;
pub const EXIT_BUSY: u8 = 3;
pub const EXIT_VAULT: u8 = 4;
pub const EXIT_CONFLICT: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "credmask", version, about = "Move saved browser logins into an encrypted vault and back")]
pub struct Cli {
    /// key=value file with defaults for store, vault, keystore and lock_files
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Read secrets one per line from this file descriptor instead of the terminal
    #[arg(long, global = true, value_name = "N")]
    passphrase_fd: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    JsonLines,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Show every host with saved logins, live or masked
    List(ListArgs),
    /// Move the logins of selected hosts into the vault
    Mask(MaskArgs),
    /// Restore masked logins to the store
    Unmask(UnmaskArgs),
    /// Report whether masked mode is on
    Status(StatusArgs),
    /// Create an empty vault
    Init(InitArgs),
    /// Manage unmask authentication
    Auth(AuthArgs),
    /// FAR/FRR table and EER of the fingerprint matcher
    BioEval(BioEvalArgs),
    /// Extract minutiae from a skeleton image into a .min file
    Extract(ExtractArgs),
}

#[derive(Debug, Args)]
struct StorePaths {
    #[arg(long, value_name = "PATH")]
    store: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    vault: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KdfArgs {
    #[arg(long, default_value_t = KdfCost::default().memory_bytes / 1024, value_name = "KIB")]
    kdf_memory_kib: u32,
    #[arg(long, default_value_t = KdfCost::default().iterations, value_name = "N")]
    kdf_iterations: u32,
    #[arg(long, default_value_t = KdfCost::default().parallelism, value_name = "N")]
    kdf_parallelism: u8,
}

impl KdfArgs {
    fn cost(&self) -> anyhow::Result<KdfCost> {
        let memory_bytes = self.kdf_memory_kib.checked_mul(1024).ok_or_else(|| anyhow!("--kdf-memory-kib is too large"))?;
        Ok(KdfCost { memory_bytes, iterations: self.kdf_iterations, parallelism: self.kdf_parallelism })
    }
}

#[derive(Debug, Args)]
struct ListArgs {
    #[command(flatten)]
    paths: StorePaths,
}

#[derive(Debug, Args)]
struct MaskArgs {
    #[command(flatten)]
    paths: StorePaths,
    /// Comma-separated hostnames; without it a numbered menu is shown
    #[arg(long, value_delimiter = ',')]
    hosts: Option<Vec<String>>,
    #[arg(long)]
    dry_run: bool,
    /// Skip the check that the browser is not using the store
    #[arg(long)]
    force: bool,
    /// Create the vault if it does not exist
    #[arg(long)]
    init: bool,
    #[arg(long, value_name = "PATH")]
    keystore: Option<PathBuf>,
    #[command(flatten)]
    kdf: KdfArgs,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("which").required(true).args(["hosts", "all"]))]
struct UnmaskArgs {
    #[command(flatten)]
    paths: StorePaths,
    #[arg(long, value_delimiter = ',')]
    hosts: Option<Vec<String>>,
    #[arg(long)]
    all: bool,
    #[arg(long, default_value = "keep-live", value_parser = parse_conflicts)]
    conflicts: ConflictPolicy,
    /// Probe template (.min or skeleton image)
    #[arg(long, value_name = "PATH")]
    fingerprint: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    force: bool,
    #[arg(long, value_name = "PATH")]
    keystore: Option<PathBuf>,
}

fn parse_conflicts(s: &str) -> Result<ConflictPolicy, String> {
    s.parse()
}

#[derive(Debug, Args)]
struct StatusArgs {
    #[command(flatten)]
    paths: StorePaths,
    #[arg(long, value_name = "PATH")]
    keystore: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InitArgs {
    #[arg(long, value_name = "PATH")]
    vault: Option<PathBuf>,
    #[command(flatten)]
    kdf: KdfArgs,
}

#[derive(Debug, Args)]
struct AuthArgs {
    #[arg(long, value_name = "PATH")]
    vault: Option<PathBuf>,
    #[command(subcommand)]
    action: AuthAction,
}

#[derive(Debug, Subcommand)]
enum AuthAction {
    /// Require a separate passphrase to unmask
    EnrollPassphrase,
    /// Enrol a fingerprint template
    EnrollFingerprint {
        #[arg(long, value_name = "PATH")]
        template: PathBuf,
        #[arg(long, default_value_t = gate::DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Probe matching the currently enrolled fingerprint, when replacing it
        #[arg(long, value_name = "PATH")]
        fingerprint: Option<PathBuf>,
    },
    /// passphrase-only, fingerprint-only or both
    SetPolicy {
        policy: String,
        /// Probe for the current policy, when it requires a fingerprint
        #[arg(long, value_name = "PATH")]
        fingerprint: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["dataset", "synthetic"]))]
struct BioEvalArgs {
    /// Directory with enrolled.min, genuine/ and impostor/
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = SyntheticParams::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = SyntheticParams::default().n_templates)]
    templates: usize,
    #[arg(long, default_value_t = SyntheticParams::default().minutiae_per_template)]
    minutiae: usize,
    #[arg(long, default_value_t = SyntheticParams::default().noise.position_sigma)]
    position_sigma: f64,
    #[arg(long, default_value_t = SyntheticParams::default().noise.angle_sigma)]
    angle_sigma: f64,
    #[arg(long, default_value_t = SyntheticParams::default().noise.deletion_rate)]
    deletion_rate: f64,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long, value_name = "PATH")]
    image: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    margin: usize,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

/// Optional defaults read from a `key=value` file.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Config {
    pub store: Option<PathBuf>,
    pub vault: Option<PathBuf>,
    pub keystore: Option<PathBuf>,
    pub lock_files: Option<Vec<String>>,
}

impl Config {
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut cfg = Config::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| anyhow!("config line {}: expected key=value", n + 1))?;
            let value = value.trim();
            match key.trim() {
                "store" => cfg.store = Some(value.into()),
                "vault" => cfg.vault = Some(value.into()),
                "keystore" => cfg.keystore = Some(value.into()),
                "lock_files" => {
                    cfg.lock_files = Some(value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
                }
                other => bail!("config line {}: unknown key {other:?}", n + 1),
            }
        }
        Ok(cfg)
    }

    fn load(explicit: Option<&Path>) -> anyhow::Result<Self> {
        let path = explicit.map(Path::to_path_buf).or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = fs::read_to_string(&p).with_context(|| format!("reading config {}", p.display()))?;
                Config::parse(&text).with_context(|| format!("config {}", p.display()))
            }
        }
    }
}

/// Where secrets come from.
enum Secrets {
    Terminal,
    Stdin,
    Fd(BufReader<File>),
}

impl Secrets {
    fn new(fd: Option<u32>) -> anyhow::Result<Self> {
        Ok(match fd {
            None => Secrets::Terminal,
            Some(0) => Secrets::Stdin,
            Some(n) => {
                let path = format!("/dev/fd/{n}");
                Secrets::Fd(BufReader::new(File::open(&path).with_context(|| format!("opening passphrase fd {n}"))?))
            }
        })
    }
}

struct Session<'a> {
    cfg: Config,
    format: Format,
    secrets: Secrets,
    stdin: &'a mut dyn BufRead,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

fn read_line_from(r: &mut dyn BufRead) -> io::Result<Option<Zeroizing<String>>> {
    let mut line = Zeroizing::new(String::new());
    if r.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    let trimmed = line.trim_end_matches(['\n', '\r']).len();
    line.truncate(trimmed);
    Ok(Some(line))
}

impl Session<'_> {
    fn secret(&mut self, prompt: &str) -> anyhow::Result<Zeroizing<String>> {
        let line = match &mut self.secrets {
            Secrets::Terminal => Some(Zeroizing::new(rpassword::prompt_password(prompt).context("reading passphrase")?)),
            Secrets::Stdin => read_line_from(self.stdin)?,
            Secrets::Fd(r) => read_line_from(r)?,
        };
        line.ok_or_else(|| anyhow!("no passphrase supplied for {:?}", prompt.trim_end_matches([':', ' '])))
    }

    fn new_secret(&mut self, what: &str) -> anyhow::Result<Zeroizing<String>> {
        let first = self.secret(&format!("New {what}: "))?;
        let second = self.secret(&format!("Repeat {what}: "))?;
        if *first != *second {
            bail!("{what}s do not match");
        }
        if first.is_empty() {
            bail!("{what} must not be empty");
        }
        Ok(first)
    }

    fn store_path(&self, p: &StorePaths) -> anyhow::Result<PathBuf> {
        p.store.clone().or_else(|| self.cfg.store.clone()).ok_or_else(|| anyhow!("no store given (--store)"))
    }

    fn vault_path(&self, explicit: Option<&PathBuf>) -> anyhow::Result<PathBuf> {
        explicit.cloned().or_else(|| self.cfg.vault.clone()).ok_or_else(|| anyhow!("no vault given (--vault)"))
    }

    fn lock_files(&self) -> Vec<String> {
        self.cfg
            .lock_files
            .clone()
            .unwrap_or_else(|| DEFAULT_LOCK_FILES.iter().map(|s| s.to_string()).collect())
    }

    fn keystore(&self, explicit: Option<&PathBuf>, store: &Path) -> Option<PathBuf> {
        explicit.cloned().or_else(|| self.cfg.keystore.clone()).or_else(|| {
            let dir = store.parent().unwrap_or(Path::new("."));
            KEYSTORE_NAMES.iter().map(|n| dir.join(n)).find(|p| p.is_file())
        })
    }

    fn open_vault(&mut self, path: &Path) -> anyhow::Result<VaultFile> {
        if !path.exists() {
            return Err(VaultFileError::Missing(path.to_path_buf()).into());
        }
        let pass = self.secret("Vault passphrase: ")?;
        Ok(open_vault(path, pass.as_bytes())?)
    }

    fn apply_options(&self, force: bool, keystore: Option<PathBuf>) -> ApplyOptions {
        ApplyOptions { lock_files: self.lock_files(), force, keystore }
    }
}

/// Parses and runs one invocation; returns the process exit code.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let to_stdout = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let rendered = e.render().to_string();
            let _ = if to_stdout { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return if to_stdout { EXIT_OK } else { EXIT_USAGE };
        }
    };
    let wrong_secret_code = match cli.command {
        Command::Unmask(_) | Command::Auth(_) => EXIT_AUTH,
        _ => EXIT_VAULT,
    };
    let result = (|| {
        let cfg = Config::load(cli.config.as_deref())?;
        let secrets = Secrets::new(cli.passphrase_fd)?;
        let mut s = Session { cfg, format: cli.format, secrets, stdin, out: &mut *out, err: &mut *err };
        dispatch(&mut s, cli.command)
    })();
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "credmask: {e:#}");
            exit_code(&e, wrong_secret_code)
        }
    }
}

fn dispatch(s: &mut Session<'_>, command: Command) -> anyhow::Result<()> {
    match command {
        Command::List(a) => cmd_list(s, a),
        Command::Mask(a) => cmd_mask(s, a),
        Command::Unmask(a) => cmd_unmask(s, a),
        Command::Status(a) => cmd_status(s, a),
        Command::Init(a) => cmd_init(s, a),
        Command::Auth(a) => cmd_auth(s, a),
        Command::BioEval(a) => cmd_bio_eval(s, a),
        Command::Extract(a) => cmd_extract(s, a),
    }
}

/// Maps an error to its exit code. `wrong_secret` is the code for a vault
/// passphrase that fails to decrypt.
pub fn exit_code(e: &anyhow::Error, wrong_secret: u8) -> u8 {
    for cause in e.chain() {
        if let Some(x) = cause.downcast_ref::<EngineError>() {
            return engine_code(x, wrong_secret);
        }
        if let Some(x) = cause.downcast_ref::<VaultFileError>() {
            return vault_file_code(x, wrong_secret);
        }
        if let Some(x) = cause.downcast_ref::<VaultError>() {
            return vault_code(x, wrong_secret);
        }
        if let Some(x) = cause.downcast_ref::<StoreError>() {
            return store_code(x);
        }
        if let Some(x) = cause.downcast_ref::<AuthError>() {
            return auth_code(x, wrong_secret);
        }
    }
    EXIT_USAGE
}

fn engine_code(e: &EngineError, ws: u8) -> u8 {
    match e {
        EngineError::Conflict(_) => EXIT_CONFLICT,
        EngineError::Auth(a) => auth_code(a, ws),
        EngineError::Store(s) => store_code(s),
        EngineError::Vault(v) => vault_file_code(v, ws),
        _ => EXIT_USAGE,
    }
}

fn vault_file_code(e: &VaultFileError, ws: u8) -> u8 {
    match e {
        VaultFileError::Format(v) => vault_code(v, ws),
        VaultFileError::Busy(_) => EXIT_BUSY,
        _ => EXIT_USAGE,
    }
}

fn vault_code(e: &VaultError, ws: u8) -> u8 {
    match e {
        VaultError::Tampered(_) | VaultError::BadVersion(_) | VaultError::Codec(_) => EXIT_VAULT,
        VaultError::WrongSecret => ws,
        _ => EXIT_USAGE,
    }
}

fn store_code(e: &StoreError) -> u8 {
    match e {
        StoreError::StoreBusy(_) => EXIT_BUSY,
        StoreError::RowIdConflict(_) => EXIT_CONFLICT,
        _ => EXIT_USAGE,
    }
}

fn auth_code(e: &AuthError, ws: u8) -> u8 {
    match e {
        AuthError::AuthFailed { .. } | AuthError::PolicyUnsatisfied(_) | AuthError::AlreadyEnrolled(_) => EXIT_AUTH,
        AuthError::Vault(v) => vault_code(v, ws),
        _ => EXIT_USAGE,
    }
}

fn csv_writer(out: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::Writer::from_writer(out)
}

fn cmd_list(s: &mut Session<'_>, a: ListArgs) -> anyhow::Result<()> {
    let store_path = s.store_path(&a.paths)?;
    let store = open_store(&store_path, OpenMode::ReadOnly)?;
    let mut lines: BTreeMap<(String, &str), usize> = BTreeMap::new();
    for row in store.list_logins()? {
        *lines.entry((row.hostname, "live")).or_default() += 1;
    }
    let vault_path = a.paths.vault.clone().or_else(|| s.cfg.vault.clone());
    if let Some(vp) = vault_path.filter(|p| p.exists()) {
        let vault = s.open_vault(&vp)?;
        for e in &vault.state().entries {
            lines.insert((e.hostname.clone(), "masked"), e.rows.len());
        }
    }
    match s.format {
        Format::Table => {
            let width = lines.keys().map(|(h, _)| h.len()).max().unwrap_or(0).max(4);
            writeln!(s.out, "{:<width$}  {:>5}  STATE", "HOST", "ROWS")?;
            for ((host, state), n) in &lines {
                writeln!(s.out, "{host:<width$}  {n:>5}  {state}")?;
            }
        }
        Format::JsonLines => {
            for ((host, state), n) in &lines {
                writeln!(s.out, "{}", json!({"host": host, "rows": n, "state": state}))?;
            }
        }
        Format::Csv => {
            let mut w = csv_writer(s.out);
            w.write_record(["host", "rows", "state"])?;
            for ((host, state), n) in &lines {
                w.write_record([host.as_str(), &n.to_string(), state])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Parses menu input such as `1 3-4, 6` or `all` into 0-based indices.
pub fn parse_menu_selection(input: &str, n: usize) -> anyhow::Result<BTreeSet<usize>> {
    let input = input.trim();
    if input.eq_ignore_ascii_case("all") || input.eq_ignore_ascii_case("a") {
        return Ok((0..n).collect());
    }
    let mut picked = BTreeSet::new();
    for tok in input.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
        let (lo, hi) = match tok.split_once('-') {
            Some((l, h)) => (l.parse::<usize>(), h.parse::<usize>()),
            None => (tok.parse::<usize>(), tok.parse::<usize>()),
        };
        let (Ok(lo), Ok(hi)) = (lo, hi) else { bail!("not a menu number: {tok:?}") };
        if lo == 0 || hi > n || lo > hi {
            bail!("selection {tok:?} is outside 1..={n}");
        }
        picked.extend(lo - 1..hi);
    }
    Ok(picked)
}

fn menu_select(s: &mut Session<'_>, store: &StoreHandle, vault: &VaultState) -> anyhow::Result<BTreeSet<String>> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for row in store.list_logins()? {
        if vault.entry(&row.hostname).is_none() {
            *counts.entry(row.hostname).or_default() += 1;
        }
    }
    let hosts: Vec<(String, usize)> = counts.into_iter().collect();
    if hosts.is_empty() {
        return Err(EngineError::EmptySelection.into());
    }
    writeln!(s.err, "Sites with saved logins:")?;
    for (i, (h, n)) in hosts.iter().enumerate() {
        writeln!(s.err, "  {:>2}) {h} ({n} login{})", i + 1, if *n == 1 { "" } else { "s" })?;
    }
    write!(s.err, "Select sites to mask (e.g. 1 3-4, or all): ")?;
    s.err.flush()?;
    let line = read_line_from(s.stdin)?.ok_or_else(|| anyhow!("no selection given"))?;
    let picked = parse_menu_selection(&line, hosts.len())?;
    Ok(picked.into_iter().map(|i| hosts[i].0.clone()).collect())
}

fn print_plan(s: &mut Session<'_>, plan: &MaskPlan) -> anyhow::Result<()> {
    match s.format {
        Format::JsonLines => {
            for sel in &plan.selections {
                writeln!(s.out, "{}", json!({"action": "mask", "host": sel.hostname, "row_ids": sel.row_ids}))?;
            }
        }
        Format::Csv => {
            let mut w = csv_writer(s.out);
            w.write_record(["action", "host", "rows"])?;
            for sel in &plan.selections {
                w.write_record(["mask", sel.hostname.as_str(), &sel.row_ids.len().to_string()])?;
            }
            w.flush()?;
        }
        Format::Table => {
            for sel in &plan.selections {
                writeln!(s.out, "mask {} ({} rows)", sel.hostname, sel.row_ids.len())?;
            }
        }
    }
    Ok(())
}

fn print_status(s: &mut Session<'_>, r: &StatusReport, no_vault: bool) -> anyhow::Result<()> {
    match s.format {
        Format::JsonLines => writeln!(
            s.out,
            "{}",
            json!({
                "mode": r.mode.to_string(),
                "vault": !no_vault,
                "masked_hosts": r.masked_hosts,
                "live_hosts": r.live_hosts,
                "keystore_ok": r.keystore_ok,
            })
        )?,
        Format::Csv => {
            let mut w = csv_writer(s.out);
            w.write_record(["mode", "masked_hosts", "live_hosts", "keystore_ok"])?;
            w.write_record([
                r.mode.to_string(),
                r.masked_hosts.join(" "),
                r.live_hosts.join(" "),
                r.keystore_ok.to_string(),
            ])?;
            w.flush()?;
        }
        Format::Table => {
            writeln!(s.out, "mode: {}{}", r.mode, if no_vault { " (no vault)" } else { "" })?;
            let list = |v: &[String]| if v.is_empty() { "none".to_owned() } else { v.join(", ") };
            writeln!(s.out, "masked hosts: {}", list(&r.masked_hosts))?;
            writeln!(s.out, "live hosts: {}", list(&r.live_hosts))?;
            writeln!(s.out, "keystore ok: {}", if r.keystore_ok { "yes" } else { "no" })?;
        }
    }
    Ok(())
}

fn print_conflicts(s: &mut Session<'_>, conflicts: &[ConflictReport]) -> anyhow::Result<()> {
    for c in conflicts {
        match s.format {
            Format::JsonLines => writeln!(
                s.out,
                "{}",
                json!({"conflict": c.hostname, "live_rows": c.live_rows, "vaulted_rows": c.vaulted_rows, "action": c.action.to_string()})
            )?,
            _ => writeln!(
                s.err,
                "conflict: {} has {} live and {} masked row(s): {}",
                c.hostname, c.live_rows, c.vaulted_rows, c.action
            )?,
        }
    }
    Ok(())
}

fn cmd_mask(s: &mut Session<'_>, a: MaskArgs) -> anyhow::Result<()> {
    let store_path = s.store_path(&a.paths)?;
    let vault_path = s.vault_path(a.paths.vault.as_ref())?;
    let lock_files = s.lock_files();
    if !a.force && !a.dry_run {
        check_not_busy(&store_path, &lock_files)?;
    }
    let mode = if a.dry_run { OpenMode::ReadOnly } else { OpenMode::ReadWrite };
    let mut store = open_store(&store_path, mode)?;

    // secrets are read before the menu so a single input stream can carry both
    let (mut vault, new_pass) = if vault_path.exists() {
        (Some(s.open_vault(&vault_path)?), None)
    } else if a.init {
        let cost = a.kdf.cost()?;
        (None, Some((s.new_secret("vault passphrase")?, cost)))
    } else {
        return Err(anyhow!(VaultFileError::Missing(vault_path)).context("pass --init to create it"));
    };

    let empty = VaultState::new([0; 16]);
    let view = vault.as_ref().map_or(&empty, |v| v.state());
    let hosts = match &a.hosts {
        Some(h) => h.iter().map(|h| h.trim().to_owned()).filter(|h| !h.is_empty()).collect(),
        None => menu_select(s, &store, view)?,
    };
    let keystore = s.keystore(a.keystore.as_ref(), &store_path);
    let plan = plan_mask_against(&store, &vault_path, view, &hosts, keystore.as_deref())?;
    print_plan(s, &plan)?;
    if a.dry_run {
        writeln!(s.err, "dry run: nothing changed")?;
        return Ok(());
    }

    if let Some((pass, cost)) = new_pass {
        vault = Some(create_vault(&vault_path, pass.as_bytes(), cost)?);
    }
    let vault = vault.as_mut().expect("opened or created above");
    let opts = s.apply_options(a.force, keystore);
    let report = apply_mask(&plan, &mut store, vault, &opts)?;
    writeln!(s.err, "Masked {} site(s), {} login(s).", plan.selections.len(), plan.row_count())?;
    writeln!(s.err, "Log off and log in again before using the browser.")?;
    print_status(s, &report, false)
}

fn cmd_unmask(s: &mut Session<'_>, a: UnmaskArgs) -> anyhow::Result<()> {
    let store_path = s.store_path(&a.paths)?;
    let vault_path = s.vault_path(a.paths.vault.as_ref())?;
    let mut vault = s.open_vault(&vault_path)?;

    let mut proofs = Vec::new();
    if !a.dry_run {
        let unmask_pass =
            if gate::needs_unmask_passphrase(vault.state()) { Some(s.secret("Unmask passphrase: ")?) } else { None };
        let probe = a.fingerprint.as_deref().map(|p| load_template(p, DEFAULT_MARGIN)).transpose()?;
        proofs = gate::gather_proofs(vault.state(), unmask_pass.as_ref().map(|p| p.as_bytes()), probe.as_ref())?;
        vault.state().check_policy(&proofs)?;
    }

    let mode = if a.dry_run { OpenMode::ReadOnly } else { OpenMode::ReadWrite };
    let mut store = open_store(&store_path, mode)?;
    let hosts: Option<BTreeSet<String>> = a.hosts.as_ref().map(|h| h.iter().map(|h| h.trim().to_owned()).collect());
    let plan = plan_unmask(&store, &vault, if a.all { None } else { hosts.as_ref() }, a.conflicts)?;
    if a.dry_run {
        for h in &plan.hosts {
            writeln!(s.out, "unmask {h} ({} rows)", vault.state().entry(h).map_or(0, |e| e.rows.len()))?;
        }
        let conflicts = preview_unmask(&plan, &store, &vault)?;
        print_conflicts(s, &conflicts)?;
        writeln!(s.err, "dry run: nothing changed")?;
        return Ok(());
    }
    let keystore = s.keystore(a.keystore.as_ref(), &store_path);
    let opts = s.apply_options(a.force, keystore);
    match apply_unmask(&plan, &proofs, &mut store, &mut vault, &opts) {
        Ok((report, conflicts)) => {
            print_conflicts(s, &conflicts)?;
            writeln!(s.err, "Restored {} site(s).", plan.hosts.len())?;
            print_status(s, &report, false)
        }
        Err(EngineError::Conflict(conflicts)) => {
            print_conflicts(s, &conflicts)?;
            Err(EngineError::Conflict(conflicts).into())
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_status(s: &mut Session<'_>, a: StatusArgs) -> anyhow::Result<()> {
    let store_path = s.store_path(&a.paths)?;
    let vault_path = s.vault_path(a.paths.vault.as_ref())?;
    let store = open_store(&store_path, OpenMode::ReadOnly)?;
    let keystore = s.keystore(a.keystore.as_ref(), &store_path);
    if !vault_path.exists() {
        let report = engine::status(&store, None, keystore.as_deref())?;
        return print_status(s, &report, true);
    }
    let vault = s.open_vault(&vault_path)?;
    let report = engine::status(&store, Some(vault.state()), keystore.as_deref())?;
    print_status(s, &report, false)
}

fn cmd_init(s: &mut Session<'_>, a: InitArgs) -> anyhow::Result<()> {
    let path = s.vault_path(a.vault.as_ref())?;
    if fs::symlink_metadata(&path).is_ok() {
        return Err(VaultFileError::AlreadyExists(path).into());
    }
    let cost = a.kdf.cost()?;
    let pass = s.new_secret("vault passphrase")?;
    create_vault(&path, pass.as_bytes(), cost)?;
    writeln!(s.err, "Created vault {}", path.display())?;
    Ok(())
}

/// Proofs for the vault's current policy, asking for whatever it needs.
fn current_policy_proofs(
    s: &mut Session<'_>,
    vault: &VaultFile,
    fingerprint: Option<&Path>,
) -> anyhow::Result<Vec<credmask_core::AuthProof>> {
    let pass = if gate::needs_unmask_passphrase(vault.state()) { Some(s.secret("Unmask passphrase: ")?) } else { None };
    let probe = fingerprint.map(|p| load_template(p, DEFAULT_MARGIN)).transpose()?;
    let proofs = gate::gather_proofs(vault.state(), pass.as_ref().map(|p| p.as_bytes()), probe.as_ref())?;
    vault.state().check_policy(&proofs)?;
    Ok(proofs)
}

fn cmd_auth(s: &mut Session<'_>, a: AuthArgs) -> anyhow::Result<()> {
    let path = s.vault_path(a.vault.as_ref())?;
    let mut vault = s.open_vault(&path)?;
    match a.action {
        AuthAction::EnrollPassphrase => {
            let proof = match vault.state().record(AuthKind::Passphrase) {
                Some(_) => {
                    let current = s.secret("Current unmask passphrase: ")?;
                    Some(vault.state().verify_passphrase(current.as_bytes())?)
                }
                None => None,
            };
            let pass = s.new_secret("unmask passphrase")?;
            gate::enroll_passphrase(&mut vault, pass.as_bytes(), proof.as_ref())?;
        }
        AuthAction::EnrollFingerprint { template, threshold, fingerprint } => {
            let t = load_template(&template, DEFAULT_MARGIN)?;
            let proof = match (vault.state().record(AuthKind::Fingerprint), fingerprint) {
                (Some(_), Some(probe)) => Some(vault.state().verify_fingerprint(&load_template(&probe, DEFAULT_MARGIN)?)?),
                _ => None,
            };
            vault.state_mut().enroll_fingerprint(t, threshold, proof.as_ref())?;
        }
        AuthAction::SetPolicy { policy, fingerprint } => {
            let policy: AuthPolicy = policy.parse()?;
            current_policy_proofs(s, &vault, fingerprint.as_deref())?;
            vault.state_mut().set_policy(policy)?;
        }
    }
    vault.commit()?;
    for r in &vault.state().auth_records {
        writeln!(s.err, "enrolled: {}", gate::describe(r))?;
    }
    writeln!(s.err, "policy: {}", vault.state().policy)?;
    Ok(())
}

fn score_all(pairs: &[(&Template, &Template)]) -> Vec<f64> {
    let params = MatchParams::default();
    pairs.par_iter().map(|(a, b)| match_templates(a, b, &params).score).collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn cmd_bio_eval(s: &mut Session<'_>, a: BioEvalArgs) -> anyhow::Result<()> {
    let (genuine, impostor) = if let Some(dir) = &a.dataset {
        let d = load_dataset(dir)?;
        let g: Vec<_> = d.genuine.iter().map(|p| (&d.enrolled, p)).collect();
        let i: Vec<_> = d.impostor.iter().map(|p| (&d.enrolled, p)).collect();
        (score_all(&g), score_all(&i))
    } else {
        let mut p = SyntheticParams { seed: a.seed, n_templates: a.templates, minutiae_per_template: a.minutiae, ..Default::default() };
        p.noise.position_sigma = a.position_sigma;
        p.noise.angle_sigma = a.angle_sigma;
        p.noise.deletion_rate = a.deletion_rate;
        let data = generate_synthetic(&p)?;
        let (g, i): (Vec<_>, Vec<_>) = data.comparisons().partition(|c| c.2);
        let g: Vec<_> = g.into_iter().map(|(a, b, _)| (a, b)).collect();
        let i: Vec<_> = i.into_iter().map(|(a, b, _)| (a, b)).collect();
        (score_all(&g), score_all(&i))
    };
    let report = evaluate(&genuine, &impostor)?;
    let rows = report.thresholds.iter().zip(&report.far).zip(&report.frr);
    match s.format {
        Format::Csv => {
            let mut w = csv_writer(s.out);
            w.write_record(["threshold", "far", "frr"])?;
            for ((t, far), frr) in rows {
                w.write_record([t.to_string(), far.to_string(), frr.to_string()])?;
            }
            w.flush()?;
            writeln!(s.err, "EER {:.4}", report.eer)?;
        }
        Format::JsonLines => {
            for ((t, far), frr) in rows {
                writeln!(s.out, "{}", json!({"threshold": t, "far": far, "frr": frr}))?;
            }
            writeln!(s.out, "{}", json!({"eer": report.eer}))?;
        }
        Format::Table => {
            writeln!(s.out, "genuine comparisons: {} (mean score {:.4})", genuine.len(), mean(&genuine))?;
            writeln!(s.out, "impostor comparisons: {} (mean score {:.4})", impostor.len(), mean(&impostor))?;
            writeln!(s.out, "{:>9}  {:>7}  {:>7}", "threshold", "FAR", "FRR")?;
            for ((t, far), frr) in rows {
                writeln!(s.out, "{t:>9.4}  {far:>7.4}  {frr:>7.4}")?;
            }
            writeln!(s.out, "EER {:.4}", report.eer)?;
        }
    }
    Ok(())
}

fn cmd_extract(s: &mut Session<'_>, a: ExtractArgs) -> anyhow::Result<()> {
    let t = extract_from_image(&a.image, a.margin)?;
    fs::write(&a.out, format_min(&t)).with_context(|| format!("writing {}", a.out.display()))?;
    writeln!(s.err, "wrote {} minutiae to {}", t.len(), a.out.display())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn menu_parsing() {
        assert_eq!(parse_menu_selection("1 3-4,6", 6).unwrap(), BTreeSet::from([0, 2, 3, 5]));
        assert_eq!(parse_menu_selection("all", 3).unwrap(), BTreeSet::from([0, 1, 2]));
        assert!(parse_menu_selection("", 3).unwrap().is_empty());
        assert!(parse_menu_selection("0", 3).is_err());
        assert!(parse_menu_selection("4", 3).is_err());
        assert!(parse_menu_selection("3-2", 3).is_err());
        assert!(parse_menu_selection("x", 3).is_err());
    }

    #[test]
    fn config_parsing() {
        let cfg = Config::parse("# defaults\nvault = /tmp/v.cmv\n\nlock_files=.parentlock, lock ,\n").unwrap();
        assert_eq!(cfg.vault, Some(PathBuf::from("/tmp/v.cmv")));
        assert_eq!(cfg.lock_files, Some(vec![".parentlock".to_owned(), "lock".to_owned()]));
        assert!(Config::parse("colour=blue").is_err());
        assert!(Config::parse("vault").is_err());
    }

    #[test]
    fn usage_errors_exit_1_and_help_exits_0() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run(["credmask", "frobnicate"], &mut io::empty(), &mut out, &mut err), EXIT_USAGE);
        assert_eq!(run(["credmask", "unmask", "--store", "s"], &mut io::empty(), &mut out, &mut err), EXIT_USAGE);
        assert_eq!(run(["credmask", "--help"], &mut io::empty(), &mut out, &mut err), EXIT_OK);
        assert!(String::from_utf8_lossy(&out).contains("bio-eval"));
    }

    #[test]
    fn exit_code_table() {
        let ws = EXIT_VAULT;
        let code = |e: anyhow::Error| exit_code(&e, ws);
        assert_eq!(code(StoreError::StoreBusy("x".into()).into()), EXIT_BUSY);
        assert_eq!(code(EngineError::Store(StoreError::StoreBusy("x".into())).into()), EXIT_BUSY);
        assert_eq!(code(EngineError::Conflict(vec![]).into()), EXIT_CONFLICT);
        assert_eq!(code(EngineError::Store(StoreError::RowIdConflict(1)).into()), EXIT_CONFLICT);
        assert_eq!(code(AuthError::AuthFailed { score: None }.into()), EXIT_AUTH);
        assert_eq!(code(EngineError::Auth(AuthError::PolicyUnsatisfied(vec![])).into()), EXIT_AUTH);
        assert_eq!(code(VaultFileError::Format(VaultError::Tampered("x")).into()), EXIT_VAULT);
        assert_eq!(code(VaultFileError::Format(VaultError::BadVersion(9)).into()), EXIT_VAULT);
        assert_eq!(exit_code(&VaultFileError::Format(VaultError::WrongSecret).into(), EXIT_AUTH), EXIT_AUTH);
        assert_eq!(code(anyhow!(VaultFileError::Format(VaultError::WrongSecret)).context("opening")), EXIT_VAULT);
        assert_eq!(code(EngineError::EmptySelection.into()), EXIT_USAGE);
        assert_eq!(code(anyhow!("plain")), EXIT_USAGE);
    }
}
