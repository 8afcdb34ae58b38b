// Licensed under the Apache-2.0 license

use lirav_core::crtm::{measure, measure_bytes, AttestationConfig};
use lirav_core::memory::{MemoryImage, MemoryRegion, RegionKind};
use proptest::prelude::*;
use sha3::{Digest, Sha3_256};

const BASE: u32 = 0x2000_0000;

/// Direct reading of the chain: the digest of a block list is the hash of
/// its head followed by the digest of its tail.
fn oracle(blocks: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha3_256::new();
    h.update(blocks[0]);
    if blocks.len() > 1 {
        h.update(oracle(&blocks[1..]));
    }
    h.finalize().into()
}

fn data(len: usize) -> Vec<u8> {
    (0..len as u32)
        .map(|i| (i.wrapping_mul(2654435761) >> 13) as u8)
        .collect()
}

#[test]
fn iterative_equals_recursive_up_to_8k() {
    let all = data(8192);
    let image = MemoryImage::new(vec![MemoryRegion::new(
        BASE,
        RegionKind::Flash,
        all.clone(),
    )])
    .unwrap();
    let mut checked = 0;
    for block in [32u32, 1024, 4096] {
        for size in 1..=8192u32 {
            let cfg = AttestationConfig::new(BASE, BASE + size, block).unwrap();
            let bytes = &all[..size as usize];
            let blocks: Vec<&[u8]> = bytes.chunks(block as usize).collect();
            let got = measure(&image, &cfg).unwrap();
            assert_eq!(got.digest, oracle(&blocks), "size {size} block {block}");
            checked += 1;
        }
    }
    assert_eq!(checked, 3 * 8192);
}

#[test]
fn offset_ranges_match_oracle() {
    let all = data(4096);
    let image = MemoryImage::new(vec![MemoryRegion::new(
        BASE,
        RegionKind::Flash,
        all.clone(),
    )])
    .unwrap();
    for (start, end, block) in [
        (7u32, 3001u32, 100u32),
        (1024, 4096, 1024),
        (4095, 4096, 4096),
    ] {
        let cfg = AttestationConfig::new(BASE + start, BASE + end, block).unwrap();
        let bytes = &all[start as usize..end as usize];
        let blocks: Vec<&[u8]> = bytes.chunks(block as usize).collect();
        assert_eq!(measure(&image, &cfg).unwrap().digest, oracle(&blocks));
    }
}

proptest! {
    #[test]
    fn measure_bytes_matches_oracle(bytes in proptest::collection::vec(any::<u8>(), 1..3000), block in 1u32..700) {
        let cfg = AttestationConfig::new(BASE, BASE + bytes.len() as u32, block).unwrap();
        let blocks: Vec<&[u8]> = bytes.chunks(block as usize).collect();
        prop_assert_eq!(measure_bytes(&bytes, &cfg).unwrap().digest, oracle(&blocks));
    }

    #[test]
    fn any_flip_changes_digest(len in 1usize..2048, block in 1u32..512, pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let bytes = data(len);
        let cfg = AttestationConfig::new(BASE, BASE + len as u32, block).unwrap();
        let mut flipped = bytes.clone();
        flipped[pos.index(len)] ^= 1 << bit;
        prop_assert_ne!(
            measure_bytes(&bytes, &cfg).unwrap().digest,
            measure_bytes(&flipped, &cfg).unwrap().digest
        );
    }
}
