//! HMMU-internal page table and the counter-based victim search.
//!
//! Internal pages `[0, fast_pages)` live in fast memory and
//! `[fast_pages, fast_pages + slow_pages)` in slow memory. Every host page
//! maps to exactly one internal page and vice versa.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{BITMAP_BITS, CACHED_COUNT_MAX};
use crate::migration::CompletedSwap;
use crate::recency::RecencyFilter;
use crate::types::mix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PageEntry {
    pub internal_page: u32,
    /// Blocks of this page resident in the cache zone. Stored exactly; the
    /// policy sees it through the 4-bit saturating view.
    cached_blocks: u16,
    /// Bit `i` set when sub-region `i` was touched since the last reset.
    pub access_bitmap: u8,
}

impl PageEntry {
    /// The 4-bit counter value the hardware would hold.
    pub fn cached_block_count(&self) -> u8 {
        self.cached_blocks.min(CACHED_COUNT_MAX as u16) as u8
    }
}

#[derive(Debug, Clone)]
pub struct PageTable {
    entries: Vec<PageEntry>,
    owner: Vec<u32>,
    fast_pages: u32,
    page_shift: u32,
    blocks_per_bit: u32,
}

impl PageTable {
    /// Host page `i` maps to internal page `i`.
    pub fn identity(fast_pages: u64, slow_pages: u64, page_bytes: u64, block_bytes: u64) -> Self {
        let total = (fast_pages + slow_pages) as u32;
        Self::from_layout((0..total).collect(), fast_pages, page_bytes, block_bytes)
    }

    /// A seeded random bijection between host and internal pages.
    pub fn shuffled(
        fast_pages: u64,
        slow_pages: u64,
        page_bytes: u64,
        block_bytes: u64,
        seed: u64,
    ) -> Self {
        let total = (fast_pages + slow_pages) as u32;
        let mut layout: Vec<u32> = (0..total).collect();
        layout.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self::from_layout(layout, fast_pages, page_bytes, block_bytes)
    }

    fn from_layout(layout: Vec<u32>, fast_pages: u64, page_bytes: u64, block_bytes: u64) -> Self {
        let mut owner = vec![0u32; layout.len()];
        for (host, &internal) in layout.iter().enumerate() {
            owner[internal as usize] = host as u32;
        }
        let blocks_per_page = (page_bytes / block_bytes) as u32;
        Self {
            entries: layout
                .into_iter()
                .map(|internal_page| PageEntry {
                    internal_page,
                    ..PageEntry::default()
                })
                .collect(),
            owner,
            fast_pages: fast_pages as u32,
            page_shift: page_bytes.trailing_zeros(),
            blocks_per_bit: (blocks_per_page / BITMAP_BITS).max(1),
        }
    }

    pub fn total_pages(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn fast_pages(&self) -> u64 {
        self.fast_pages as u64
    }

    /// Internal page backing `host_addr`, or `None` past the host space.
    pub fn lookup(&self, host_addr: u64) -> Option<u32> {
        self.entries
            .get((host_addr >> self.page_shift) as usize)
            .map(|e| e.internal_page)
    }

    pub fn entry(&self, host_page: u64) -> &PageEntry {
        &self.entries[host_page as usize]
    }

    pub fn internal_of(&self, host_page: u64) -> u32 {
        self.entries[host_page as usize].internal_page
    }

    pub fn host_of(&self, internal_page: u32) -> u64 {
        self.owner[internal_page as usize] as u64
    }

    pub fn is_fast_internal(&self, internal_page: u32) -> bool {
        internal_page < self.fast_pages
    }

    pub fn is_fast(&self, host_page: u64) -> bool {
        self.is_fast_internal(self.internal_of(host_page))
    }

    /// Marks the sub-region containing `block_in_page` as touched.
    pub fn mark_access(&mut self, host_page: u64, block_in_page: u64) {
        let bit = (block_in_page as u32 / self.blocks_per_bit).min(BITMAP_BITS - 1);
        self.entries[host_page as usize].access_bitmap |= 1 << bit;
    }

    /// Returns the access bitmap and clears it.
    pub fn take_bitmap(&mut self, host_page: u64) -> u8 {
        std::mem::take(&mut self.entries[host_page as usize].access_bitmap)
    }

    pub fn cached_blocks_exact(&self, host_page: u64) -> u16 {
        self.entries[host_page as usize].cached_blocks
    }

    pub fn inc_cached(&mut self, host_page: u64) {
        self.entries[host_page as usize].cached_blocks += 1;
    }

    pub fn dec_cached(&mut self, host_page: u64) {
        let e = &mut self.entries[host_page as usize];
        e.cached_blocks = e
            .cached_blocks
            .checked_sub(1)
            .expect("cached-block counter underflow");
    }

    /// Exchanges the owners of the two internal pages of a finished swap.
    pub fn swap_mappings(&mut self, done: &CompletedSwap) {
        let (a, b) = (done.src_internal(), done.dst_internal());
        let host_a = self.owner[a as usize];
        let host_b = self.owner[b as usize];
        self.entries[host_a as usize].internal_page = b;
        self.entries[host_b as usize].internal_page = a;
        self.owner.swap(a as usize, b as usize);
    }

    /// Whether host→internal is a bijection consistent with the reverse map.
    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.entries.len()];
        for (host, e) in self.entries.iter().enumerate() {
            let i = e.internal_page as usize;
            if i >= seen.len() || seen[i] || self.owner[i] as usize != host {
                return false;
            }
            seen[i] = true;
        }
        true
    }

    pub fn sum_cached(&self) -> u64 {
        self.entries.iter().map(|e| e.cached_blocks as u64).sum()
    }

    /// One line per host page: `host_page internal_page cached bitmap`.
    pub fn dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# host_page internal_page cached_blocks access_bitmap")?;
        for (host, e) in self.entries.iter().enumerate() {
            writeln!(
                out,
                "{host} {} {} {:08b}",
                e.internal_page,
                e.cached_block_count(),
                e.access_bitmap
            )?;
        }
        Ok(())
    }
}

/// Page-table index probed at counter value `counter`.
pub fn probe_index(counter: u64, total_pages: u64) -> u64 {
    mix64(counter) % total_pages
}

/// Counter-driven search for the next fast page to evict.
#[derive(Debug, Clone, Default)]
pub struct VictimSearch {
    counter: u64,
    candidate: Option<u32>,
}

impl VictimSearch {
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn candidate(&self) -> Option<u32> {
        self.candidate
    }

    pub fn is_ready(&self) -> bool {
        self.candidate.is_some()
    }

    /// Advances the counter until it points at a fast page whose host page
    /// is not recently used, and arms that page as the candidate.
    pub fn search(&mut self, table: &PageTable, recent: &RecencyFilter) -> u32 {
        let total = table.total_pages();
        let budget = 16 * total;
        for _ in 0..budget {
            self.counter += 1;
            let host = probe_index(self.counter, total);
            let internal = table.internal_of(host);
            if table.is_fast_internal(internal) && !recent.contains(host) {
                self.candidate = Some(internal);
                return internal;
            }
        }
        panic!(
            "victim search exhausted {budget} probes without finding a cold fast page; \
             probe hash is not covering the page table"
        );
    }

    pub fn take_candidate(&mut self) -> Option<u32> {
        self.candidate.take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RecencyMode;

    fn swap(pt: &mut PageTable, a: u32, b: u32) {
        pt.swap_mappings(&CompletedSwap::new(a, b));
    }

    #[test]
    fn identity_lookup() {
        let pt = PageTable::identity(4, 12, 4096, 128);
        assert_eq!(pt.lookup(0), Some(0));
        assert_eq!(pt.lookup(5 * 4096 + 17), Some(5));
        assert_eq!(pt.lookup(16 * 4096), None);
        assert!(pt.is_fast(3));
        assert!(!pt.is_fast(4));
    }

    #[test]
    fn figure_swap_example() {
        // Fast zone = internal pages [0, 0x40000); host page 0x4000a
        // initially at slow internal page 0x40027, swapped with 0x00038.
        let fast = 0x40000u64;
        let mut pt = PageTable::identity(fast, 0x100, 1, 1);
        swap(&mut pt, 0x4000a, 0x40027);
        let host = 0x4000a;
        assert_eq!(pt.lookup(host), Some(0x40027));
        assert!(!pt.is_fast_internal(0x40027));
        swap(&mut pt, 0x40027, 0x00038);
        assert_eq!(pt.lookup(host), Some(0x00038));
        assert!(pt.is_fast(host));
        assert!(pt.is_bijection());
    }

    #[test]
    fn double_swap_is_identity() {
        let mut pt = PageTable::identity(8, 8, 4096, 128);
        let before: Vec<u32> = (0..16).map(|h| pt.internal_of(h)).collect();
        swap(&mut pt, 3, 12);
        assert_eq!(pt.internal_of(3), 12);
        assert_eq!(pt.internal_of(12), 3);
        swap(&mut pt, 3, 12);
        let after: Vec<u32> = (0..16).map(|h| pt.internal_of(h)).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn random_swaps_keep_bijection() {
        let mut pt = PageTable::shuffled(64, 192, 4096, 128, 11);
        assert!(pt.is_bijection());
        let mut x = 1u64;
        for _ in 0..1000 {
            x = mix64(x);
            let a = (x % 256) as u32;
            let b = ((x >> 20) % 256) as u32;
            swap(&mut pt, a, b);
        }
        assert!(pt.is_bijection());
    }

    #[test]
    fn bitmap_granularity() {
        let mut pt = PageTable::identity(1, 1, 4096, 128);
        pt.mark_access(0, 0);
        assert_eq!(pt.entry(0).access_bitmap, 0b1);
        pt.mark_access(0, 3);
        assert_eq!(pt.entry(0).access_bitmap, 0b1, "blocks 0..4 share bit 0");
        pt.mark_access(0, 31);
        assert_eq!(pt.entry(0).access_bitmap, 0b1000_0001);
        assert_eq!(pt.take_bitmap(0), 0b1000_0001);
        assert_eq!(pt.entry(0).access_bitmap, 0);
    }

    #[test]
    fn counter_saturates_at_four_bits() {
        let mut pt = PageTable::identity(1, 1, 4096, 128);
        for _ in 0..20 {
            pt.inc_cached(1);
        }
        assert_eq!(pt.entry(1).cached_block_count(), 15);
        assert_eq!(pt.cached_blocks_exact(1), 20);
    }

    #[test]
    fn search_accepts_first_probe_when_all_fast() {
        let pt = PageTable::identity(32, 0, 4096, 128);
        let recent = RecencyFilter::new(RecencyMode::Exact, 4);
        let mut vs = VictimSearch::default();
        let got = vs.search(&pt, &recent);
        assert_eq!(vs.counter(), 1);
        assert_eq!(got as u64, probe_index(1, 32));
        assert!(vs.is_ready());
    }

    #[test]
    fn search_skips_slow_pages() {
        // Layout where probes 1..=3 hit slow-resident host pages and probe 4
        // hits a fast one: counter must end at 4.
        let total = 64u64;
        let idx: Vec<u64> = (1..=4).map(|c| probe_index(c, total)).collect();
        assert!(
            !idx[..3].contains(&idx[3]),
            "fixture needs a distinct final probe"
        );
        let fast = 8u32;
        let mut layout = vec![u32::MAX; total as usize];
        layout[idx[3] as usize] = 0;
        let mut next_slow = fast;
        for &h in &idx[..3] {
            if layout[h as usize] == u32::MAX {
                layout[h as usize] = next_slow;
                next_slow += 1;
            }
        }
        let mut free = (1..fast).chain(next_slow..total as u32);
        for slot in layout.iter_mut().filter(|s| **s == u32::MAX) {
            *slot = free.next().unwrap();
        }
        let pt = PageTable::from_layout(layout, fast as u64, 4096, 128);
        assert!(pt.is_bijection());

        let recent = RecencyFilter::new(RecencyMode::Exact, 4);
        let mut vs = VictimSearch::default();
        let got = vs.search(&pt, &recent);
        assert_eq!(vs.counter(), 4);
        assert_eq!(got, 0);
    }

    #[test]
    fn search_skips_recent_pages() {
        let total = 32u64;
        let pt = PageTable::identity(total, 0, 4096, 128);
        let mut recent = RecencyFilter::new(RecencyMode::Exact, 4);
        let first = probe_index(1, total);
        recent.record(first);
        let mut vs = VictimSearch::default();
        let got = vs.search(&pt, &recent);
        assert_ne!(got as u64, first);
        assert!(vs.counter() >= 2);
        assert!(!recent.contains(pt.host_of(got)));
    }

    #[test]
    fn dump_format() {
        let mut pt = PageTable::identity(1, 1, 4096, 128);
        pt.mark_access(1, 8);
        let mut buf = Vec::new();
        pt.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "# host_page internal_page cached_blocks access_bitmap\n0 0 0 00000000\n1 1 0 00000100\n"
        );
    }
}
