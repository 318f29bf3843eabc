#![allow(dead_code)]

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use credmask::store::{fixture_row, init_fixture};
use credmask::vault::KdfCost;
use credmask_core::minutiae::{format_min, generate_synthetic, SyntheticParams};
use credmask_core::{LoginRow, Template, Value};
use rand::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

pub const PASS: &str = "correct horse battery staple";
pub const CHEAP: KdfCost = KdfCost { memory_bytes: 64 * 1024, iterations: 1, parallelism: 1 };
pub const CHEAP_FLAGS: [&str; 4] = ["--kdf-memory-kib", "64", "--kdf-iterations", "1"];

pub fn host(i: usize) -> String {
    format!("https://site{i}.example")
}

/// 25 rows over 10 hosts; row k belongs to host (k - 1) % 10. A few rows
/// carry unusual storage classes so byte-exactness is meaningful.
pub fn fixture_rows() -> Vec<LoginRow> {
    (1..=25i64)
        .map(|k| {
            let h = host(((k - 1) % 10) as usize);
            let mut row = fixture_row(k, &h, &format!("MDIEEPgAAAAAAAAAAAAAAAAAAAEwFAYIKoZIhvcNAwcECD{k:02}"), &format!("MDoEEPgAAAAAAAAAAAAAAAAAAAEwFAYIKoZIhvcNAwcECP{k:02}pw"));
            let set = |row: &mut LoginRow, col: &str, v: Value| {
                row.cells.iter_mut().find(|(c, _)| c == col).unwrap().1 = v;
            };
            match k {
                7 => set(&mut row, "httpRealm", Value::text("Realm \u{2713} intranet")),
                11 => set(&mut row, "encryptedPassword", Value::Blob(vec![0, 159, 146, 150, 255, 0])),
                19 => set(&mut row, "encType", Value::Real(1.5)),
                23 => set(&mut row, "guid", Value::Null),
                _ => {}
            }
            row
        })
        .collect()
}

pub fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub struct Fixture {
    pub dir: TempDir,
    pub store: PathBuf,
    pub vault: PathBuf,
    pub keystore: PathBuf,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let store = dir.path().join("signons.sqlite");
        let vault = dir.path().join("masked.cmv");
        let keystore = dir.path().join("key3.db");
        init_fixture(&store, &fixture_rows(), &["https://never.example".to_owned()]).unwrap();
        let mut key = vec![0u8; 1024];
        rand::rngs::StdRng::seed_from_u64(3).fill_bytes(&mut key);
        fs::write(&keystore, key).unwrap();
        Fixture { dir, store, vault, keystore }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn s(p: &Path) -> String {
        p.to_string_lossy().into_owned()
    }

    /// `--store` and `--vault` are appended for the commands that take them.
    pub fn run(&self, args: &[&str], stdin: &str) -> Output {
        self.run_env(args, stdin, &[])
    }

    pub fn run_env(&self, args: &[&str], stdin: &str, env: &[(&str, &str)]) -> Output {
        let mut full: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        let takes_store = matches!(args.first(), Some(&("list" | "mask" | "unmask" | "status")));
        let takes_vault = takes_store || matches!(args.first(), Some(&("init" | "auth")));
        if takes_store && !args.contains(&"--store") {
            full.extend(["--store".into(), Self::s(&self.store)]);
        }
        if takes_vault && !args.contains(&"--vault") {
            // auth's --vault belongs before its action
            let at = if args.first() == Some(&"auth") { 1 } else { full.len() };
            full.splice(at..at, ["--vault".to_owned(), Self::s(&self.vault)]);
        }
        full.extend(["--passphrase-fd".into(), "0".into()]);
        run_bin(&full, stdin, env)
    }

    pub fn init(&self) {
        let mut args = vec!["init"];
        args.extend(CHEAP_FLAGS);
        let out = self.run(&args, &format!("{PASS}\n{PASS}\n"));
        assert_eq!(out.code, 0, "{}", out.stderr);
    }

    pub fn mask(&self, hosts: &[usize]) -> Output {
        let list: Vec<String> = hosts.iter().map(|&i| host(i)).collect();
        let joined = list.join(",");
        self.run(&["mask", "--hosts", &joined], &format!("{PASS}\n"))
    }

    pub fn hashes(&self) -> (Vec<u8>, Vec<u8>) {
        (sha(&self.store), sha(&self.vault))
    }

    /// Writes a `.min` file and returns its path.
    pub fn write_template(&self, name: &str, t: &Template) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, format_min(t)).unwrap();
        p
    }
}

pub fn run_bin(args: &[String], stdin: &str, env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_credmask"));
    cmd.args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
    cmd.env_remove("CREDMASK_CRASH_POINT").env_remove("CREDMASK_CONFIG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let mut child = cmd.spawn().unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Two synthetic subjects' enrolled templates: (enrolled, someone else).
pub fn two_templates() -> (Template, Template) {
    let p = SyntheticParams { n_templates: 2, seed: 11, ..SyntheticParams::default() };
    let mut s = generate_synthetic(&p).unwrap().subjects;
    let b = s.pop().unwrap().enrolled;
    let a = s.pop().unwrap().enrolled;
    (a, b)
}

/// Flips one byte of a file in place.
pub fn flip_byte(path: &Path, at: usize) {
    let mut bytes = fs::read(path).unwrap();
    bytes[at] ^= 0x01;
    fs::write(path, bytes).unwrap();
}

/// One documented error path: its name, the promised exit code and what the
/// binary actually returned.
pub struct MatrixCase {
    pub name: &'static str,
    pub expected: i32,
    pub actual: i32,
    pub unchanged: bool,
}

fn case(name: &'static str, expected: i32, out: Output, unchanged: bool) -> MatrixCase {
    MatrixCase { name, expected, actual: out.code, unchanged }
}

/// Runs every error path of the command-line contract on fresh fixtures.
/// `unchanged` records whether the store and vault files kept their hashes
/// where the path promises no mutation.
pub fn exit_code_matrix() -> Vec<MatrixCase> {
    let mut cases = Vec::new();
    let pass_in = format!("{PASS}\n");

    // list
    {
        let fx = Fixture::new();
        let missing = Fixture::s(&fx.path("nope.sqlite"));
        cases.push(case("list: missing store", 1, fx.run(&["list", "--store", &missing], ""), true));
        fs::write(fx.path("junk.sqlite"), b"definitely not sqlite").unwrap();
        let junk = Fixture::s(&fx.path("junk.sqlite"));
        cases.push(case("list: not a database", 1, fx.run(&["list", "--store", &junk], ""), true));
    }

    // mask
    {
        let fx = Fixture::new();
        cases.push(case("mask: vault missing without --init", 1, fx.mask(&[0]), true));
        fx.init();
        let before = fx.hashes();
        fs::write(fx.path(".parentlock"), b"").unwrap();
        let out = fx.mask(&[0]);
        cases.push(case("mask: browser lock file present", 3, out, fx.hashes() == before));
        fs::remove_file(fx.path(".parentlock")).unwrap();

        let conn = rusqlite::Connection::open(&fx.store).unwrap();
        conn.execute_batch("BEGIN IMMEDIATE").unwrap();
        let out = fx.mask(&[0]);
        cases.push(case("mask: store write-locked", 3, out, fx.hashes() == before));
        conn.execute_batch("ROLLBACK").unwrap();
        drop(conn);

        let out = fx.run(&["mask", "--hosts", "https://unknown.example"], &pass_in);
        cases.push(case("mask: unknown host", 1, out, fx.hashes() == before));
        let out = fx.run(&["mask"], &format!("{PASS}\n\n"));
        cases.push(case("mask: empty menu selection", 1, out, fx.hashes() == before));
        let out = fx.run(&["mask"], &format!("{PASS}\n99\n"));
        cases.push(case("mask: menu number out of range", 1, out, fx.hashes() == before));
        let out = fx.run(&["mask", "--hosts", &host(0)], "wrong\n");
        cases.push(case("mask: wrong vault passphrase", 4, out, fx.hashes() == before));
        let out = fx.run(&["mask", "--hosts", &host(0)], "");
        cases.push(case("mask: no passphrase on input", 1, out, fx.hashes() == before));

        let out = fx.run_env(&["mask", "--hosts", &host(0)], &pass_in, &[("CREDMASK_CRASH_POINT", "after-vault-commit")]);
        cases.push(case("mask: injected crash", 1, out, true));
    }
    {
        let fx = Fixture::new();
        fx.init();
        assert_eq!(fx.mask(&[1]).code, 0);
        cases.push(case("mask: host already masked", 1, fx.mask(&[1]), true));
        let at = fs::read(&fx.vault).unwrap().len() - 20;
        flip_byte(&fx.vault, at);
        let before = fx.hashes();
        let out = fx.mask(&[2]);
        cases.push(case("mask: tampered vault", 4, out, fx.hashes() == before));
    }

    // unmask
    {
        let fx = Fixture::new();
        fx.init();
        cases.push(case("unmask: nothing masked", 1, fx.run(&["unmask", "--all"], &pass_in), true));
        assert_eq!(fx.mask(&[0, 1]).code, 0);
        let before = fx.hashes();
        let out = fx.run(&["unmask", "--all"], "wrong passphrase\n");
        cases.push(case("unmask: wrong passphrase", 2, out, fx.hashes() == before));
        let out = fx.run(&["unmask", "--hosts", &host(5)], &pass_in);
        cases.push(case("unmask: host not masked", 1, out, fx.hashes() == before));
        cases.push(case("unmask: neither --hosts nor --all", 1, fx.run(&["unmask"], &pass_in), fx.hashes() == before));

        fs::write(fx.path("lock"), b"").unwrap();
        let out = fx.run(&["unmask", "--all"], &pass_in);
        cases.push(case("unmask: browser lock file present", 3, out, fx.hashes() == before));
        fs::remove_file(fx.path("lock")).unwrap();

        let mut handle = credmask::store::open_store(&fx.store, credmask::store::OpenMode::ReadWrite).unwrap();
        handle.insert_rows(&[fixture_row(40, &host(0), "resaved", "resaved")]).unwrap();
        drop(handle);
        let before = fx.hashes();
        let out = fx.run(&["unmask", "--all", "--conflicts", "fail"], &pass_in);
        cases.push(case("unmask: conflict under --conflicts fail", 5, out, fx.hashes() == before));

        // header damage is detected before decryption; ciphertext damage fails
        // the tag exactly like a wrong passphrase does
        let pristine = fs::read(&fx.vault).unwrap();
        flip_byte(&fx.vault, 5);
        let before = fx.hashes();
        let out = fx.run(&["unmask", "--all"], &pass_in);
        cases.push(case("unmask: tampered vault header", 4, out, fx.hashes() == before));
        fs::write(&fx.vault, &pristine).unwrap();
        flip_byte(&fx.vault, pristine.len() / 2);
        let before = fx.hashes();
        let out = fx.run(&["unmask", "--all"], &pass_in);
        cases.push(case("unmask: tampered vault ciphertext", 2, out, fx.hashes() == before));
    }
    {
        let fx = Fixture::new();
        fx.init();
        let (enrolled, other) = two_templates();
        let t = fx.write_template("enrolled.min", &enrolled);
        let probe = fx.write_template("other.min", &other);
        let t_s = Fixture::s(&t);
        assert_eq!(fx.run(&["auth", "enroll-fingerprint", "--template", &t_s], &pass_in).code, 0);
        assert_eq!(fx.run(&["auth", "set-policy", "both"], &pass_in).code, 0);
        assert_eq!(fx.mask(&[3]).code, 0);
        let before = fx.hashes();
        let out = fx.run(&["unmask", "--all"], &pass_in);
        cases.push(case("unmask: policy both, no fingerprint", 2, out, fx.hashes() == before));
        let out = fx.run(&["unmask", "--all", "--fingerprint", &Fixture::s(&probe)], &pass_in);
        cases.push(case("unmask: policy both, non-matching fingerprint", 2, out, fx.hashes() == before));
        let missing = Fixture::s(&fx.path("missing.min"));
        let out = fx.run(&["unmask", "--all", "--fingerprint", &missing], &pass_in);
        cases.push(case("unmask: unreadable probe", 1, out, fx.hashes() == before));
    }
    {
        let fx = Fixture::new();
        fx.init();
        let ep = fx.run(&["auth", "enroll-passphrase"], &format!("{PASS}\nsecond secret\nsecond secret\n"));
        assert_eq!(ep.code, 0, "{}", ep.stderr);
        assert_eq!(fx.mask(&[4]).code, 0);
        let before = fx.hashes();
        let out = fx.run(&["unmask", "--all"], &format!("{PASS}\nnot the second secret\n"));
        cases.push(case("unmask: wrong unmask passphrase", 2, out, fx.hashes() == before));
    }

    // status
    {
        let fx = Fixture::new();
        fx.init();
        let missing = Fixture::s(&fx.path("nope.sqlite"));
        cases.push(case("status: missing store", 1, fx.run(&["status", "--store", &missing], &pass_in), true));
        flip_byte(&fx.vault, 0);
        cases.push(case("status: tampered vault", 4, fx.run(&["status"], &pass_in), true));
    }

    // init and auth
    {
        let fx = Fixture::new();
        fx.init();
        let mut args = vec!["init"];
        args.extend(CHEAP_FLAGS);
        cases.push(case("init: vault exists", 1, fx.run(&args, &format!("{PASS}\n{PASS}\n")), true));
        let mut args = vec!["init", "--vault"];
        let other = Fixture::s(&fx.path("other.cmv"));
        args.push(&other);
        args.extend(CHEAP_FLAGS);
        cases.push(case("init: passphrases differ", 1, fx.run(&args, "one\ntwo\n"), !fx.path("other.cmv").exists()));

        let before = fx.hashes();
        let out = fx.run(&["auth", "set-policy", "both"], &pass_in);
        cases.push(case("auth: set-policy both without fingerprint", 1, out, fx.hashes() == before));
        let out = fx.run(&["auth", "set-policy", "sometimes"], &pass_in);
        cases.push(case("auth: unknown policy", 1, out, fx.hashes() == before));
        let (enrolled, _) = two_templates();
        let small = Template::new("small", enrolled.minutiae[..3].to_vec());
        let small_p = Fixture::s(&fx.write_template("small.min", &small));
        let out = fx.run(&["auth", "enroll-fingerprint", "--template", &small_p], &pass_in);
        cases.push(case("auth: too few minutiae", 1, out, fx.hashes() == before));
        let full_p = Fixture::s(&fx.write_template("full.min", &enrolled));
        let out = fx.run(&["auth", "enroll-fingerprint", "--template", &full_p, "--threshold", "1.5"], &pass_in);
        cases.push(case("auth: threshold out of range", 1, out, fx.hashes() == before));
        let out = fx.run(&["auth", "enroll-passphrase"], "wrong\nx\nx\n");
        cases.push(case("auth: wrong vault passphrase", 2, out, fx.hashes() == before));
        assert_eq!(fx.run(&["auth", "enroll-passphrase"], &format!("{PASS}\nu1\nu1\n")).code, 0);
        let before = fx.hashes();
        let out = fx.run(&["auth", "enroll-passphrase"], &format!("{PASS}\nnot-u1\nu2\nu2\n"));
        cases.push(case("auth: re-enrol with wrong current passphrase", 2, out, fx.hashes() == before));
    }

    // bio-eval and extract
    {
        let fx = Fixture::new();
        let ds = fx.path("ds");
        fs::create_dir_all(ds.join("genuine")).unwrap();
        fs::create_dir_all(ds.join("impostor")).unwrap();
        let (enrolled, other) = two_templates();
        fs::write(ds.join("enrolled.min"), format_min(&enrolled)).unwrap();
        fs::write(ds.join("impostor/i.min"), format_min(&other)).unwrap();
        let out = fx.run(&["bio-eval", "--dataset", &Fixture::s(&ds)], "");
        cases.push(case("bio-eval: empty genuine directory", 1, out, true));
        let out = fx.run(&["bio-eval", "--dataset", &Fixture::s(&fx.path("absent"))], "");
        cases.push(case("bio-eval: missing dataset", 1, out, true));
        let out = fx.run(&["bio-eval", "--synthetic", "--templates", "1"], "");
        cases.push(case("bio-eval: synthetic needs two templates", 1, out, true));
        let out = fx.run(&["extract", "--image", &Fixture::s(&fx.path("absent.pgm")), "--out", "x.min"], "");
        cases.push(case("extract: missing image", 1, out, true));
    }

    cases.push(case("usage: unknown subcommand", 1, run_bin(&["frobnicate".into()], "", &[]), true));
    cases
}
