// Licensed under the Apache-2.0 license

use std::io::Write as _;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use lirav_core::attack::{self, ScenarioResult, DEFAULT_SEED};
use lirav_core::bench;
use lirav_core::crtm::AttestationConfig;
use lirav_core::device::Device;
use lirav_core::memory::MemoryLayout;
use lirav_core::provisioning::{
    compute_expected, flash_contents, format_record, gen_identity, gen_identity_random,
    load_trust_store, DeviceProfile, PeerRecord,
};
use lirav_core::runner::{run_initiator, run_responder_with, Outcome};
use lirav_core::transport::{FrameTransport, TcpTransport};
use rand_chacha::ChaCha20Rng;
use rand_core::{CryptoRngCore, OsRng, SeedableRng};

use crate::output;
use crate::{
    AttackArgs, AttestArgs, BenchArgs, BenchPart, CliError, CliResult, MeasureArgs, ProvisionArgs,
    RangeArgs, ServeArgs, SessionArgs,
};

const DEFAULT_BLOCK: u32 = 1024;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn read_image(path: &Path) -> Result<Vec<u8>, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "firmware image {} does not exist",
            path.display()
        )));
    }
    std::fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// The range to attest: explicit flags, else the whole image from the
/// start of flash.
fn attestation_range(
    range: &RangeArgs,
    layout: &MemoryLayout,
    image_len: usize,
) -> Result<AttestationConfig, CliError> {
    let start = range.start.unwrap_or(layout.flash_base);
    let end = match range.end {
        Some(e) => e,
        None => {
            if image_len == 0 {
                return Err(usage("image is empty; pass --end"));
            }
            layout.flash_base + image_len as u32
        }
    };
    AttestationConfig::new(start, end, range.block.unwrap_or(DEFAULT_BLOCK)).map_err(usage)
}

fn print_line(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

pub fn provision(a: ProvisionArgs) -> CliResult {
    let firmware = read_image(&a.image)?;
    let qsk = match &a.seed {
        Some(h) => {
            let bytes = hex::decode(h).map_err(|_| usage("--seed must be hex"))?;
            gen_identity(&bytes).map_err(usage)?
        }
        None => gen_identity_random(),
    };
    let layout = MemoryLayout::default();
    let cfg = attestation_range(&a.range, &layout, firmware.len())?;
    let image_path = std::fs::canonicalize(&a.image).map_err(usage)?;
    let profile = DeviceProfile::new(&a.id, &qsk, image_path, cfg, layout).map_err(usage)?;
    let path = a
        .profile
        .unwrap_or_else(|| PathBuf::from(format!("{}.toml", a.id)));
    profile.save(&path).map_err(usage)?;
    let record = profile.peer_record(&firmware).map_err(usage)?;
    log::info!("wrote profile for {} to {}", a.id, path.display());
    print!("{}", format_record(&a.id, &record));
    Ok(())
}

fn load_profile(path: &Path) -> Result<(DeviceProfile, Vec<u8>), CliError> {
    let profile = DeviceProfile::load(path).map_err(usage)?;
    let fw_path = profile.firmware_path(path.parent());
    let firmware = read_image(&fw_path)?;
    Ok((profile, firmware))
}

pub fn measure(a: MeasureArgs) -> CliResult {
    let (layout, firmware, base_cfg) = match (&a.profile, &a.image) {
        (Some(p), _) => {
            let (profile, fw) = load_profile(p)?;
            let cfg = profile.attestation_config().map_err(usage)?;
            (profile.memory, fw, Some(cfg))
        }
        (None, Some(img)) => (MemoryLayout::default(), read_image(img)?, None),
        (None, None) => return Err(usage("pass --profile or --image")),
    };
    let cfg = match base_cfg {
        Some(c) if a.range.start.is_none() && a.range.end.is_none() && a.range.block.is_none() => c,
        Some(c) => AttestationConfig::new(
            a.range.start.unwrap_or(c.start_addr),
            a.range.end.unwrap_or(c.end_addr),
            a.range.block.unwrap_or(c.block_size),
        )
        .map_err(usage)?,
        None => attestation_range(&a.range, &layout, firmware.len())?,
    };
    let flash = flash_contents(&firmware, &layout).map_err(usage)?;
    let m = compute_expected(&flash, layout.flash_base, &cfg).map_err(usage)?;
    let record = PeerRecord {
        verify_key: [0; 32],
        expected: vec![m],
    };
    // Reuse the trust-store line format so the output can be pasted.
    let text = format_record("-", &record);
    for line in text.lines().filter(|l| l.starts_with("expect")) {
        print_line(line);
    }
    Ok(())
}

fn load_device(s: &SessionArgs) -> Result<Device, CliError> {
    let (profile, firmware) = load_profile(&s.profile)?;
    let trust = load_trust_store(&s.trust).map_err(usage)?;
    profile.build_device(&firmware, &trust).map_err(usage)
}

fn timeout(s: &SessionArgs) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(s.timeout)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| usage("--timeout must be a positive number of seconds"))
}

fn session_rng(seed: Option<u64>, index: u64) -> Box<dyn CryptoRngCore + Send> {
    match seed {
        Some(s) => Box::new(ChaCha20Rng::seed_from_u64(s.wrapping_add(index))),
        None => Box::new(OsRng),
    }
}

fn outcome_result(outcome: &Outcome) -> CliResult {
    match outcome {
        Outcome::Established { .. } => Ok(()),
        Outcome::Timeout | Outcome::Transport(_) => {
            Err(CliError::Transport(format!("transport failure: {outcome}")))
        }
        _ => Err(CliError::Failed("session did not establish".into())),
    }
}

pub fn attest(a: AttestArgs) -> CliResult {
    let mut dev = load_device(&a.session)?;
    let timeout = timeout(&a.session)?;
    let peer = match a.peer {
        Some(p) => p,
        None => {
            let ids: Vec<_> = dev
                .trust_store()
                .peers()
                .map(|(id, _)| id.to_string())
                .collect();
            match &ids[..] {
                [one] => one.clone(),
                _ => return Err(usage("trust store has several peers; pass --peer")),
            }
        }
    };
    let mut t = TcpTransport::connect(a.session.addr.as_str(), timeout)
        .map_err(|e| CliError::Transport(format!("cannot reach {}: {e}", a.session.addr)))?;
    t.set_timeout(timeout);
    let mut rng = session_rng(a.session.rng_seed, 0);
    let report = run_initiator(&mut dev, &peer, &mut t, &mut *rng);
    print_line(&report.outcome.to_string());
    outcome_result(&report.outcome)
}

fn serve_one(
    dev: &Mutex<Device>,
    stream: TcpStream,
    index: u64,
    timeout: Duration,
    rng_seed: Option<u64>,
) -> Outcome {
    let from = stream
        .peer_addr()
        .map(|a| a.to_string())
        .unwrap_or_else(|_| "?".into());
    let mut t = TcpTransport::new(stream);
    t.set_timeout(timeout);
    let mut rng = session_rng(rng_seed, index);
    let report = run_responder_with(dev, &mut t, &mut *rng);
    print_line(&format!(
        "session {} from {from}: {}",
        index + 1,
        report.outcome
    ));
    report.outcome
}

pub fn serve(a: ServeArgs) -> CliResult {
    let dev = Mutex::new(load_device(&a.session)?);
    let timeout = timeout(&a.session)?;
    let listener = TcpListener::bind(a.session.addr.as_str())
        .map_err(|e| CliError::Transport(format!("cannot listen on {}: {e}", a.session.addr)))?;
    let local = listener
        .local_addr()
        .map_err(|e| CliError::Transport(e.to_string()))?;
    print_line(&format!("listening on {local}"));

    let limit = a.max_sessions.unwrap_or(usize::MAX);
    let outcomes: Mutex<Vec<Outcome>> = Mutex::new(Vec::new());
    thread::scope(|s| {
        for (index, conn) in listener.incoming().take(limit).enumerate() {
            let stream = match conn {
                Ok(stream) => stream,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let (dev, outcomes) = (&dev, &outcomes);
            let job = move || {
                let o = serve_one(dev, stream, index as u64, timeout, a.session.rng_seed);
                outcomes.lock().unwrap_or_else(|p| p.into_inner()).push(o);
            };
            if a.parallel {
                s.spawn(job);
            } else {
                job();
            }
        }
    });
    let outcomes = outcomes.into_inner().unwrap_or_else(|p| p.into_inner());
    match outcomes.iter().find(|o| !o.is_established()) {
        None => Ok(()),
        Some(o) => outcome_result(o),
    }
}

pub fn bench(a: BenchArgs) -> CliResult {
    if a.iters == 0 {
        return Err(usage("--iters must be at least 1"));
    }
    let mut report = output::BenchReport::default();
    if a.only != Some(BenchPart::Protocol) {
        let max = a.max_size.unwrap_or(u32::MAX);
        let sizes: Vec<u32> = bench::crtm_sizes()
            .into_iter()
            .filter(|&s| s <= max)
            .collect();
        let blocks = match a.block {
            Some(0) => return Err(usage("--block must be positive")),
            Some(b) => vec![b],
            None => bench::BLOCK_SIZES.to_vec(),
        };
        report.crtm = bench::bench_crtm(&sizes, &blocks, a.iters);
    }
    if a.only != Some(BenchPart::Crtm) {
        report.protocol = bench::bench_protocol(&bench::PROTOCOL_SIZES, a.iters);
    }
    print!("{}", output::render_bench(&report, a.format));
    Ok(())
}

pub fn attack(a: AttackArgs) -> CliResult {
    let seed = a.seed.unwrap_or(DEFAULT_SEED);
    let scenarios = match &a.only {
        Some(name) => vec![attack::find(name).ok_or_else(|| {
            let names: Vec<_> = attack::catalog().iter().map(|s| s.name).collect();
            usage(format!(
                "unknown scenario {name:?}; known: {}",
                names.join(", ")
            ))
        })?],
        None => attack::catalog(),
    };
    let results: Vec<ScenarioResult> = scenarios
        .iter()
        .map(|s| attack::run_scenario(s, seed))
        .collect();
    print!("{}", output::render_attack(&results, a.format));
    let failed = results.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} scenario(s) not detected"
        )));
    }
    Ok(())
}
