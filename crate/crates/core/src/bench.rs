// Licensed under the Apache-2.0 license

//! Wall-clock and work-counter measurements of the CRTM and of whole
//! protocol runs.

use std::hint::black_box;
use std::time::{Duration, Instant};

use crate::crtm::{measure_with_stats, AttestationConfig, MeasureStats};
use crate::memory::{MemoryImage, MemoryRegion, RegionKind, DEFAULT_FLASH_SIZE};
use crate::world::{synthetic_firmware, World, WorldOptions};

pub const DEFAULT_ITERS: usize = 20;
pub const BLOCK_SIZES: [u32; 3] = [1024, 2048, 4096];
pub const PROTOCOL_SIZES: [u32; 3] = [64 * 1024, 128 * 1024, 256 * 1024];
const BENCH_BASE: u32 = 0x2000_0000;

/// 1 KiB to 4 MiB, doubling.
pub fn crtm_sizes() -> Vec<u32> {
    (0..=12).map(|i| 1024u32 << i).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct CrtmSample {
    pub size: u32,
    pub block: u32,
    pub iters: usize,
    pub mean: Duration,
    pub min: Duration,
    pub stats: MeasureStats,
}

#[derive(Debug, Clone, Copy)]
pub struct ProtocolSample {
    pub attested_len: u32,
    pub iters: usize,
    pub mean: Duration,
    pub established: usize,
}

/// Times the CRTM over every (size, block) cell. Iterations are
/// interleaved across cells so slow drift in machine load spreads evenly,
/// and one untimed pass warms caches first.
pub fn bench_crtm(sizes: &[u32], blocks: &[u32], iters: usize) -> Vec<CrtmSample> {
    let iters = iters.max(1);
    let max = sizes
        .iter()
        .copied()
        .max()
        .unwrap_or(0)
        .min(DEFAULT_FLASH_SIZE);
    let image = MemoryImage::new(vec![MemoryRegion::new(
        BENCH_BASE,
        RegionKind::Flash,
        synthetic_firmware(0xBE7C, "bench", max as usize),
    )])
    .expect("single region");

    let cells: Vec<(u32, u32, AttestationConfig)> = sizes
        .iter()
        .flat_map(|&size| blocks.iter().map(move |&block| (size, block)))
        .filter_map(|(size, block)| {
            AttestationConfig::new(BENCH_BASE, BENCH_BASE + size, block)
                .ok()
                .map(|c| (size, block, c))
        })
        .collect();

    let mut total = vec![Duration::ZERO; cells.len()];
    let mut min = vec![Duration::MAX; cells.len()];
    let mut stats = vec![MeasureStats::default(); cells.len()];
    for (i, (_, _, cfg)) in cells.iter().enumerate() {
        stats[i] = measure_with_stats(&image, cfg)
            .expect("bench range mapped")
            .1;
    }
    for _ in 0..iters {
        for (i, (_, _, cfg)) in cells.iter().enumerate() {
            let t = Instant::now();
            black_box(measure_with_stats(black_box(&image), cfg).expect("bench range mapped"));
            let dt = t.elapsed();
            total[i] += dt;
            min[i] = min[i].min(dt);
        }
    }
    cells
        .iter()
        .enumerate()
        .map(|(i, &(size, block, _))| CrtmSample {
            size,
            block,
            iters,
            mean: total[i] / iters as u32,
            min: min[i],
            stats: stats[i],
        })
        .collect()
}

/// Times complete honest sessions over the in-memory channel.
pub fn bench_protocol(sizes: &[u32], iters: usize) -> Vec<ProtocolSample> {
    let iters = iters.max(1);
    sizes
        .iter()
        .map(|&attested_len| {
            let mut w = World::with_options(
                0xBE7C,
                WorldOptions {
                    attested_len,
                    ..WorldOptions::default()
                },
            );
            let mut total = Duration::ZERO;
            let mut established = 0;
            for _ in 0..iters {
                let t = Instant::now();
                let (a, b) = w.run(None, None);
                total += t.elapsed();
                if a.outcome.is_established() && b.outcome.is_established() {
                    established += 1;
                }
            }
            ProtocolSample {
                attested_len,
                iters,
                mean: total / iters as u32,
                established,
            }
        })
        .collect()
}

pub fn find_cell(samples: &[CrtmSample], size: u32, block: u32) -> Option<&CrtmSample> {
    samples.iter().find(|s| s.size == size && s.block == block)
}
