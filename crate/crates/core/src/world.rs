// Licensed under the Apache-2.0 license

//! A provisioned pair of devices that trust each other, with deterministic
//! entropy. Shared by the attack harness and the benchmarks.

use std::thread;
use std::time::Duration;

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use sha3::{Digest, Sha3_256};

use crate::crtm::AttestationConfig;
use crate::device::Device;
use crate::memory::MemoryLayout;
use crate::provisioning::{compute_expected, flash_contents, gen_identity, TrustStore};
use crate::runner::{run_initiator, run_responder, SessionReport};
use crate::transport::{channel_pair_with, ChannelEndpoint, FrameTransport, Tap};

pub const ALPHA: &str = "alpha";
pub const BETA: &str = "beta";

#[derive(Debug, Clone, Copy)]
pub struct WorldOptions {
    /// Bytes of flash covered by attestation on both devices.
    pub attested_len: u32,
    pub block_size: u32,
    pub recv_timeout: Duration,
}

impl Default for WorldOptions {
    fn default() -> Self {
        WorldOptions {
            attested_len: 64 * 1024,
            block_size: 1024,
            recv_timeout: Duration::from_secs(1),
        }
    }
}

pub struct World {
    pub alpha: Device,
    pub beta: Device,
    pub rng_alpha: ChaCha20Rng,
    pub rng_beta: ChaCha20Rng,
    seed: u64,
    options: WorldOptions,
}

impl std::fmt::Debug for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("World")
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

fn labelled(seed: u64, label: &str) -> [u8; 32] {
    let mut h = Sha3_256::new();
    h.update(seed.to_be_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

/// Deterministic pseudo-firmware of `len` bytes.
pub fn synthetic_firmware(seed: u64, label: &str, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len + 32);
    let mut block = labelled(seed, label);
    while out.len() < len {
        out.extend_from_slice(&block);
        block = Sha3_256::digest(block).into();
    }
    out.truncate(len);
    out
}

impl World {
    pub fn new(seed: u64) -> World {
        World::with_options(seed, WorldOptions::default())
    }

    pub fn with_options(seed: u64, options: WorldOptions) -> World {
        let flash = options.attested_len.next_power_of_two().max(64 * 1024);
        let layout = MemoryLayout::default().with_flash_size(flash);
        let cfg = AttestationConfig::new(
            layout.flash_base,
            layout.flash_base + options.attested_len,
            options.block_size,
        )
        .expect("world attestation range");

        let key_a = gen_identity(&labelled(seed, "qsk/alpha")).expect("32 bytes of entropy");
        let key_b = gen_identity(&labelled(seed, "qsk/beta")).expect("32 bytes of entropy");
        let fw_a = synthetic_firmware(seed, "fw/alpha", options.attested_len as usize);
        let fw_b = synthetic_firmware(seed, "fw/beta", options.attested_len as usize);

        let expected = |fw: &[u8]| {
            let flash = flash_contents(fw, &layout).expect("firmware fits");
            compute_expected(&flash, layout.flash_base, &cfg).expect("range inside flash")
        };
        let trust_a = TrustStore::builder()
            .peer(BETA, key_b.public(), vec![expected(&fw_b)])
            .expect("valid peer")
            .build();
        let trust_b = TrustStore::builder()
            .peer(ALPHA, key_a.public(), vec![expected(&fw_a)])
            .expect("valid peer")
            .build();

        let alpha = Device::new(ALPHA, layout, &key_a, cfg, &trust_a, &fw_a).expect("alpha");
        let beta = Device::new(BETA, layout, &key_b, cfg, &trust_b, &fw_b).expect("beta");
        World {
            alpha,
            beta,
            rng_alpha: ChaCha20Rng::from_seed(labelled(seed, "rng/alpha")),
            rng_beta: ChaCha20Rng::from_seed(labelled(seed, "rng/beta")),
            seed,
            options,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn options(&self) -> &WorldOptions {
        &self.options
    }

    /// A fresh deterministic RNG for a third party, keyed by `label`.
    pub fn side_rng(&self, label: &str) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(labelled(self.seed, &format!("rng/side/{label}")))
    }

    /// Rewinds alpha's entropy source to its initial state.
    pub fn rewind_alpha_rng(&mut self) {
        self.rng_alpha = ChaCha20Rng::from_seed(labelled(self.seed, "rng/alpha"));
    }

    /// Alpha initiates toward beta over an in-memory channel. Taps see
    /// every frame in their direction.
    pub fn run(
        &mut self,
        alpha_to_beta: Option<Tap>,
        beta_to_alpha: Option<Tap>,
    ) -> (SessionReport, SessionReport) {
        let (mut ea, mut eb) = channel_pair_with(alpha_to_beta, beta_to_alpha);
        ea.set_timeout(self.options.recv_timeout);
        eb.set_timeout(self.options.recv_timeout);
        let World {
            alpha,
            beta,
            rng_alpha,
            rng_beta,
            ..
        } = self;
        thread::scope(|s| {
            let b = s.spawn(move || run_responder(beta, &mut eb, rng_beta));
            let a = run_initiator(alpha, BETA, &mut ea, rng_alpha);
            // Stay connected until the responder settles, as a live peer would.
            let b = b.join().expect("responder thread");
            drop(ea);
            (a, b)
        })
    }

    /// Beta responds to whoever drives the other end of the channel.
    pub fn beta_responds_to(&mut self, driver: impl FnOnce(&mut ChannelEndpoint)) -> SessionReport {
        let (mut ea, mut eb) = channel_pair_with(None, None);
        ea.set_timeout(self.options.recv_timeout);
        eb.set_timeout(self.options.recv_timeout);
        let World { beta, rng_beta, .. } = self;
        thread::scope(|s| {
            let b = s.spawn(move || run_responder(beta, &mut eb, rng_beta));
            driver(&mut ea);
            drop(ea);
            b.join().expect("responder thread")
        })
    }
}
