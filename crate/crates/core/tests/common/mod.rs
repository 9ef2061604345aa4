#![allow(dead_code)]

use std::collections::HashMap;

use hmmu::config::{KIB, MIB};
use hmmu::types::payload_byte;
use hmmu::{AccessKind, PolicyKind, RecencyMode, SimConfig, TraceRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PAGE: u64 = 4 * KIB;
pub const BLOCK: u64 = 128;

/// A scaled-down platform: 1 MiB fast (256 pages), 7 MiB slow, 128 KiB
/// cache zone for the combined policies, 64-page recency window.
pub fn scaled(policy: PolicyKind) -> SimConfig {
    let base = SimConfig {
        fast_capacity_bytes: MIB,
        slow_capacity_bytes: 7 * MIB,
        bloom_window: 64,
        ..SimConfig::default()
    };
    base.for_policy(policy, 128 * KIB)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random requests with some page locality: half the traffic goes to a
/// small hot set. Sizes vary but never cross a block.
pub fn mixed_trace(
    rng: &mut impl Rng,
    n: usize,
    base: u64,
    pages: u64,
    page: u64,
    block: u64,
) -> Vec<TraceRecord> {
    let hot = (pages / 8).max(1);
    (0..n)
        .map(|_| {
            let p = if rng.random_bool(0.5) {
                rng.random_range(0..hot)
            } else {
                rng.random_range(0..pages)
            };
            let b = rng.random_range(0..page / block);
            let size = 1u64 << rng.random_range(0..=block.trailing_zeros());
            let off = rng.random_range(0..block / size) * size;
            let addr = base + p * page + b * block + off;
            if rng.random_bool(0.4) {
                TraceRecord::write(addr, size as u32)
            } else {
                TraceRecord::read(addr, size as u32)
            }
        })
        .collect()
}

/// Flat byte-addressed memory: what every read must return.
#[derive(Default)]
pub struct Shadow {
    bytes: HashMap<u64, u8>,
}

impl Shadow {
    pub fn write(&mut self, seq: u64, addr: u64, len: u64) {
        for a in addr..addr + len {
            self.bytes.insert(a, payload_byte(seq, a));
        }
    }

    pub fn read(&self, addr: u64, len: u64) -> Vec<u8> {
        (addr..addr + len)
            .map(|a| self.bytes.get(&a).copied().unwrap_or(0))
            .collect()
    }

    /// Applies a trace and returns the data every read should see.
    pub fn expected_reads(trace: &[TraceRecord]) -> Vec<Vec<u8>> {
        let mut s = Shadow::default();
        let mut out = Vec::new();
        for (seq, r) in trace.iter().enumerate() {
            match r.kind {
                AccessKind::Write => s.write(seq as u64, r.host_addr, r.size_bytes as u64),
                AccessKind::Read => out.push(s.read(r.host_addr, r.size_bytes as u64)),
            }
        }
        out
    }
}

/// A small random configuration for differential runs.
pub fn random_config(rng: &mut impl Rng, policy: PolicyKind) -> SimConfig {
    let page = [1024u64, 2048, 4096][rng.random_range(0..3)];
    let block = [64u64, 128][rng.random_range(0..2)];
    let bpp = (page / block) as u32;
    let fast_pages = rng.random_range(24..64u64);
    let slow_pages = rng.random_range(16..96u64);
    let zone_pages = 1u64 << rng.random_range(0..3);
    let mut cfg = SimConfig {
        page_size_bytes: page,
        block_size_bytes: block,
        fast_capacity_bytes: (fast_pages + zone_pages) * page,
        slow_capacity_bytes: slow_pages * page,
        bloom_window: rng.random_range(2..16),
        dma_bandwidth_bytes_per_ns: [2.0, 4.0, 8.0, 16.0][rng.random_range(0..4)],
        promotion_threshold: rng.random_range(1..=bpp.min(8)),
        rng_seed: rng.random(),
        recency: RecencyMode::Exact,
        ..SimConfig::default()
    };
    cfg.adaptive.min_threshold = 1;
    cfg.adaptive.max_threshold = bpp.min(8);
    cfg.adaptive.window_pages = rng.random_range(0..6);
    let cfg = cfg.for_policy(policy, zone_pages * page);
    cfg.validate().expect("generated config is valid");
    cfg
}

/// A random trace that fits in `cfg`'s host space (and in the AllDRAM
/// space, which is larger).
pub fn random_trace_for(rng: &mut impl Rng, cfg: &SimConfig, n: usize) -> Vec<TraceRecord> {
    let pages = cfg.host_space_bytes() / cfg.page_size_bytes;
    mixed_trace(rng, n, 0, pages, cfg.page_size_bytes, cfg.block_size_bytes)
}
