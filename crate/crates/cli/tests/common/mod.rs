// Licensed under the Apache-2.0 license

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::thread::{self, JoinHandle};

use tempfile::TempDir;

pub fn lirav() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lirav"));
    c.env_remove("RUST_LOG");
    c
}

pub fn run(args: &[&str], cwd: &Path) -> Output {
    lirav()
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn lirav")
}

pub fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

/// Deterministic image bytes, distinct per label.
pub fn image(label: u8, len: usize) -> Vec<u8> {
    (0..len as u32)
        .map(|i| (i.wrapping_mul(0x9E37_79B1) >> 11) as u8 ^ label)
        .collect()
}

/// Two provisioned devices, `alpha` and `beta`, each trusting the other.
pub struct Pair {
    pub dir: TempDir,
    /// Everything either `provision` printed, for secrecy checks.
    pub transcript: String,
}

impl Pair {
    pub fn new(image_len: usize, seeds: [&str; 2]) -> Pair {
        let dir = tempfile::tempdir().expect("tempdir");
        let mut transcript = String::new();
        let mut records = Vec::new();
        for (i, (id, seed)) in ["alpha", "beta"].into_iter().zip(seeds).enumerate() {
            let img = format!("{id}.bin");
            std::fs::write(dir.path().join(&img), image(i as u8 + 1, image_len)).unwrap();
            let out = run(
                &[
                    "-vv",
                    "provision",
                    "--id",
                    id,
                    "--image",
                    &img,
                    "--seed",
                    seed,
                ],
                dir.path(),
            );
            assert!(
                out.status.success(),
                "provision {id}: {}",
                text(&out.stderr)
            );
            transcript += &text(&out.stdout);
            transcript += &text(&out.stderr);
            records.push(text(&out.stdout));
        }
        let trust = |rec: &str| format!("# lirav trust store\n\n{rec}");
        std::fs::write(dir.path().join("alpha.trust"), trust(&records[1])).unwrap();
        std::fs::write(dir.path().join("beta.trust"), trust(&records[0])).unwrap();
        Pair { dir, transcript }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

pub struct Server {
    pub child: Child,
    pub addr: SocketAddr,
    stdout: Option<JoinHandle<String>>,
    stderr: Option<JoinHandle<String>>,
}

fn drain(r: impl Read + Send + 'static) -> JoinHandle<String> {
    thread::spawn(move || {
        let mut s = String::new();
        let mut r = r;
        let _ = r.read_to_string(&mut s);
        s
    })
}

impl Server {
    /// Starts `serve` for `id` on an ephemeral port and waits until it listens.
    pub fn start(pair: &Pair, id: &str, extra: &[&str]) -> Server {
        let profile = format!("{id}.toml");
        let trust = format!("{id}.trust");
        let mut child = lirav()
            .args(["-vv", "serve", "--profile", &profile, "--trust", &trust])
            .args(["--addr", "127.0.0.1:0"])
            .args(extra)
            .current_dir(pair.path())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .expect("spawn serve");
        let mut out = BufReader::new(child.stdout.take().unwrap());
        let mut first = String::new();
        out.read_line(&mut first).unwrap();
        let addr = first
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected first line {first:?}"))
            .parse()
            .unwrap();
        let stderr = drain(child.stderr.take().unwrap());
        Server {
            child,
            addr,
            stdout: Some(drain(out)),
            stderr: Some(stderr),
        }
    }

    /// Waits for exit; returns (exit code, stdout after the banner, stderr).
    pub fn finish(mut self) -> (Option<i32>, String, String) {
        let status = self.child.wait().unwrap();
        (
            status.code(),
            self.stdout.take().unwrap().join().unwrap(),
            self.stderr.take().unwrap().join().unwrap(),
        )
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn attest(pair: &Pair, addr: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "-vv",
        "attest",
        "--profile",
        "alpha.toml",
        "--trust",
        "alpha.trust",
        "--addr",
        addr,
    ];
    args.extend_from_slice(extra);
    run(&args, pair.path())
}

/// The fingerprint after `key-fingerprint=` on the first line containing it.
pub fn fingerprint(out: &str) -> Option<String> {
    out.lines()
        .find_map(|l| l.split("key-fingerprint=").nth(1))
        .map(|f| f.trim().to_string())
}
