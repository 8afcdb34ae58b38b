// Licensed under the Apache-2.0 license

mod common;

use common::{attest, run, text, Pair, Server};

const SEED_A: &str = "a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1a1";
const SEED_B: &str = "b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2b2";

#[test]
fn provisioning_with_a_seed_is_deterministic() {
    let p1 = Pair::new(4096, [SEED_A, SEED_B]);
    let p2 = Pair::new(4096, [SEED_A, SEED_B]);
    let t1 = std::fs::read_to_string(p1.file("alpha.trust")).unwrap();
    let t2 = std::fs::read_to_string(p2.file("alpha.trust")).unwrap();
    assert_eq!(t1, t2);
    assert!(t1.contains("peer beta\nkey "));
    assert!(t1.contains("expect 0x20000000 0x20001000 1024 "));
}

#[test]
fn measure_agrees_with_provisioned_record() {
    let p = Pair::new(3000, [SEED_A, SEED_B]);
    let out = run(&["measure", "--profile", "beta.toml"], p.path());
    assert!(out.status.success());
    let line = text(&out.stdout);
    assert!(
        line.starts_with("expect 0x20000000 0x20000bb8 1024 "),
        "{line}"
    );
    let trust = std::fs::read_to_string(p.file("alpha.trust")).unwrap();
    assert!(trust.contains(line.trim()));

    let from_image = run(&["measure", "--image", "beta.bin"], p.path());
    assert_eq!(text(&from_image.stdout), line);
}

#[test]
fn missing_image_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["provision", "--id", "x", "--image", "absent.bin"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("absent.bin"));
}

#[test]
fn short_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("fw.bin"), [1u8; 64]).unwrap();
    let out = run(
        &[
            "provision",
            "--id",
            "x",
            "--image",
            "fw.bin",
            "--seed",
            "abcd",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn attest_without_listener_is_a_transport_error() {
    let p = Pair::new(1024, [SEED_A, SEED_B]);
    // Bind and drop to get a port with nothing behind it.
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    let out = attest(&p, &port.to_string(), &["--timeout", "1"]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
}

#[test]
fn honest_loopback_session() {
    let p = Pair::new(8192, [SEED_A, SEED_B]);
    let server = Server::start(&p, "beta", &["--max-sessions", "1"]);
    let out = attest(&p, &server.addr.to_string(), &[]);
    let (code, served, _) = server.finish();
    let client = text(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{client}{}", text(&out.stderr));
    assert_eq!(code, Some(0), "{served}");
    assert!(client.starts_with("Established peer=beta "), "{client}");
    assert!(served.contains("Established peer=alpha "), "{served}");
    let fp = common::fingerprint(&client).unwrap();
    assert_eq!(fp.len(), 8);
    assert_eq!(common::fingerprint(&served), Some(fp));
}

#[test]
fn tampered_initiator_is_rejected_on_both_ends() {
    let p = Pair::new(4096, [SEED_A, SEED_B]);
    let mut fw = std::fs::read(p.file("alpha.bin")).unwrap();
    fw[100] ^= 0x01;
    std::fs::write(p.file("alpha.bin"), fw).unwrap();
    let server = Server::start(&p, "beta", &["--max-sessions", "1"]);
    let out = attest(&p, &server.addr.to_string(), &[]);
    let (code, served, _) = server.finish();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(text(&out.stdout).trim(), "PeerAborted MeasurementMismatch");
    assert_eq!(code, Some(1));
    assert!(served.contains("Aborted MeasurementMismatch"), "{served}");
}

#[test]
fn parallel_serve_handles_several_clients() {
    let p = Pair::new(4096, [SEED_A, SEED_B]);
    let server = Server::start(&p, "beta", &["--max-sessions", "3", "--parallel"]);
    let addr = server.addr.to_string();
    let clients: Vec<_> = (0..3)
        .map(|_| {
            let dir = p.path().to_path_buf();
            let addr = addr.clone();
            std::thread::spawn(move || {
                run(
                    &[
                        "attest",
                        "--profile",
                        "alpha.toml",
                        "--trust",
                        "alpha.trust",
                        "--addr",
                        &addr,
                    ],
                    &dir,
                )
            })
        })
        .collect();
    for c in clients {
        let out = c.join().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    }
    let (code, served, _) = server.finish();
    assert_eq!(code, Some(0));
    assert_eq!(served.matches("Established peer=alpha").count(), 3);
}

#[test]
fn attack_subset_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["attack", "--only", "m2-replay", "--format", "csv"],
        dir.path(),
    );
    assert!(out.status.success());
    let s = text(&out.stdout);
    let mut lines = s.lines();
    assert_eq!(lines.next(), Some("scenario,expected,observed,result"));
    let row = lines.next().unwrap();
    assert!(
        row.starts_with("m2-replay,") && row.ends_with(",PASS"),
        "{row}"
    );
    assert_eq!(lines.next(), None);

    let bad = run(&["attack", "--only", "no-such-attack"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn bench_csv_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "bench",
            "--only",
            "crtm",
            "--iters",
            "1",
            "--max-size",
            "4096",
            "--block",
            "1024",
            "--format",
            "csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let s = text(&out.stdout);
    let lines: Vec<_> = s.lines().collect();
    assert_eq!(
        lines[0],
        "kind,size_bytes,block_bytes,iters,mean_us,min_us,bytes_hashed,hash_calls,established"
    );
    // Header plus one row per size up to 4K.
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("crtm,4096,1024,1,"));
    assert!(lines[3].ends_with(",4096,4,"));
}

/// Digest computed independently with Python's hashlib over the same image
/// bytes, chaining 1 KiB blocks from the last one back.
const ALPHA_64K_DIGEST: &str = "1e50566f07c63357ce36a2724bd1de78d513fcc3784afaa7b4acae13a0c33276";

#[test]
fn provisioned_expectation_matches_frozen_digest() {
    let p = Pair::new(64 * 1024, [SEED_A, SEED_B]);
    let trust = std::fs::read_to_string(p.file("beta.trust")).unwrap();
    let expects: Vec<_> = trust.lines().filter(|l| l.starts_with("expect")).collect();
    assert_eq!(
        expects,
        [format!("expect 0x20000000 0x20010000 1024 {ALPHA_64K_DIGEST}")]
    );
}
