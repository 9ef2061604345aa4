//! Recency tracking for the victim search.
//!
//! The hardware keeps a pair of bloom filters: inserts go to the active one,
//! and once it has absorbed `window` inserts it becomes the aging filter and
//! a cleared filter takes its place. A query checks both, so every page
//! touched in the last `window` accesses is always reported present.

use std::collections::{HashMap, VecDeque};

use crate::config::RecencyMode;
use crate::types::mix64;

const BITS_PER_ENTRY: usize = 10;
const HASHES: u32 = 7;

#[derive(Debug, Clone)]
struct Bloom {
    bits: Vec<u64>,
    nbits: u64,
}

impl Bloom {
    fn new(capacity: usize) -> Self {
        let words = (capacity * BITS_PER_ENTRY).div_ceil(64).max(1);
        Self {
            bits: vec![0; words],
            nbits: words as u64 * 64,
        }
    }

    fn insert(&mut self, key: u64) {
        for bit in probes(self.nbits, key) {
            self.bits[(bit / 64) as usize] |= 1 << (bit % 64);
        }
    }

    fn contains(&self, key: u64) -> bool {
        probes(self.nbits, key).all(|bit| self.bits[(bit / 64) as usize] & (1 << (bit % 64)) != 0)
    }

    fn clear(&mut self) {
        self.bits.fill(0);
    }
}

// Double hashing over two SplitMix64 outputs.
fn probes(nbits: u64, key: u64) -> impl Iterator<Item = u64> {
    let h1 = mix64(key);
    let h2 = mix64(key ^ 0x6a09_e667_f3bc_c909) | 1;
    (0..HASHES as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % nbits)
}

#[derive(Debug, Clone)]
enum Inner {
    Bloom {
        active: Bloom,
        aging: Bloom,
        inserted: u32,
    },
    Exact {
        order: VecDeque<u64>,
        counts: HashMap<u64, u32>,
    },
}

/// Remembers which pages were touched recently.
#[derive(Debug, Clone)]
pub struct RecencyFilter {
    window: u32,
    inner: Inner,
}

impl RecencyFilter {
    pub fn new(mode: RecencyMode, window: u32) -> Self {
        assert!(window > 0, "recency window must be positive");
        let inner = match mode {
            RecencyMode::Bloom => Inner::Bloom {
                active: Bloom::new(window as usize),
                aging: Bloom::new(window as usize),
                inserted: 0,
            },
            RecencyMode::Exact => Inner::Exact {
                order: VecDeque::with_capacity(window as usize + 1),
                counts: HashMap::new(),
            },
        };
        Self { window, inner }
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    pub fn mode(&self) -> RecencyMode {
        match self.inner {
            Inner::Bloom { .. } => RecencyMode::Bloom,
            Inner::Exact { .. } => RecencyMode::Exact,
        }
    }

    /// Bits per bloom filter (0 in exact mode).
    pub fn filter_bits(&self) -> u64 {
        match &self.inner {
            Inner::Bloom { active, .. } => active.nbits,
            Inner::Exact { .. } => 0,
        }
    }

    pub fn record(&mut self, page: u64) {
        match &mut self.inner {
            Inner::Bloom {
                active,
                aging,
                inserted,
            } => {
                if *inserted == self.window {
                    std::mem::swap(active, aging);
                    active.clear();
                    *inserted = 0;
                }
                active.insert(page);
                *inserted += 1;
            }
            Inner::Exact { order, counts } => {
                order.push_back(page);
                *counts.entry(page).or_default() += 1;
                if order.len() > self.window as usize {
                    let old = order.pop_front().expect("non-empty");
                    let c = counts.get_mut(&old).expect("tracked");
                    *c -= 1;
                    if *c == 0 {
                        counts.remove(&old);
                    }
                }
            }
        }
    }

    pub fn contains(&self, page: u64) -> bool {
        match &self.inner {
            Inner::Bloom { active, aging, .. } => active.contains(page) || aging.contains(page),
            Inner::Exact { counts, .. } => counts.contains_key(&page),
        }
    }
}
