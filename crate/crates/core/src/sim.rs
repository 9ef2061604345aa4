//! The HMMU request loop.
//!
//! Each request is checked against the cache zone and the internal page
//! table, served by exactly one device, and may leave background work
//! behind: a block copy into the cache zone, a dirty writeback, or a page
//! swap on the DMA engine. Foreground time is the sum of device latencies
//! plus any write stall behind an in-flight chunk; background transfers
//! overlap for free.
//!
//! Memory contents are modelled byte-exactly. Traces carry no data, so a
//! write stores [`payload_byte`] values derived from its ordinal.

use std::collections::HashMap;
use std::io::{self, Write};

use sha2::{Digest, Sha256};

use crate::cache::{CacheGeometry, Evicted, SubpageCache};
use crate::config::{PolicyKind, SimConfig};
use crate::error::{Error, Result};
use crate::meter::{finalize, Access, FinalReport, Lane, Meter};
use crate::migration::{BlockCopyJob, BlockCopyKind, DmaEngine};
use crate::page_table::{PageTable, VictimSearch};
use crate::policy::{Policy, SlowAction};
use crate::recency::RecencyFilter;
use crate::trace::TraceRecord;
use crate::types::{payload_byte, AccessKind, MemoryRequest, SimClock, Tier};

/// Background work a request set in motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MigrationAction {
    BlockCopy(BlockCopyJob),
    SwapStarted {
        host_page: u64,
        victim_host_page: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceOutcome {
    pub device: Tier,
    /// Foreground time charged, including any stall.
    pub latency_ns: u64,
    pub stall_ns: u64,
    /// Served from the cache zone.
    pub cache_hit: bool,
    /// The page was one of the two being swapped.
    pub during_swap: bool,
    pub migrations: Vec<MigrationAction>,
    /// Bytes returned to the host for a read.
    pub data: Option<Vec<u8>>,
}

pub struct Simulator {
    cfg: SimConfig,
    block_bytes: u64,
    blocks_per_page: u64,
    page_shift: u32,
    block_shift: u32,
    host_space: u64,
    table: PageTable,
    recent: RecencyFilter,
    victim: VictimSearch,
    cache: Option<SubpageCache>,
    dma: DmaEngine,
    policy: Policy,
    meter: Meter,
    clock: SimClock,
    /// Device contents keyed by internal block number; absent means zero.
    store: HashMap<u64, Box<[u8]>>,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let page = cfg.page_size_bytes;
        let block = cfg.block_size_bytes;
        let table = if cfg.policy == PolicyKind::Static {
            PageTable::shuffled(
                cfg.fast_pages(),
                cfg.slow_pages(),
                page,
                block,
                cfg.rng_seed,
            )
        } else {
            PageTable::identity(cfg.fast_pages(), cfg.slow_pages(), page, block)
        };
        let recent = RecencyFilter::new(cfg.recency, cfg.bloom_window);
        let mut victim = VictimSearch::default();
        if cfg.policy.migrates_pages() {
            victim.search(&table, &recent);
        }
        let cache = cfg
            .policy
            .uses_cache_zone()
            .then(|| SubpageCache::new(CacheGeometry::new(cfg.cache_zone_bytes, block)));
        Ok(Self {
            block_bytes: block,
            blocks_per_page: cfg.blocks_per_page(),
            page_shift: page.trailing_zeros(),
            block_shift: block.trailing_zeros(),
            host_space: cfg.host_space_bytes(),
            table,
            recent,
            victim,
            cache,
            dma: DmaEngine::new(page, block, cfg.dma_chunk_ns()),
            policy: Policy::new(cfg.policy, cfg.promotion_threshold, cfg.adaptive),
            meter: Meter::new(&cfg),
            clock: SimClock::default(),
            store: HashMap::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn page_table(&self) -> &PageTable {
        &self.table
    }

    pub fn cache(&self) -> Option<&SubpageCache> {
        self.cache.as_ref()
    }

    pub fn dma(&self) -> &DmaEngine {
        &self.dma
    }

    pub fn victim_search(&self) -> &VictimSearch {
        &self.victim
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn meter(&self) -> &Meter {
        &self.meter
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    fn tier(&self, internal_page: u32) -> Tier {
        if self.table.is_fast_internal(internal_page) {
            Tier::Fast
        } else {
            Tier::Slow
        }
    }

    fn internal_block(&self, internal_page: u32, block_in_page: u64) -> u64 {
        internal_page as u64 * self.blocks_per_page + block_in_page
    }

    fn block_mut(&mut self, internal_block: u64) -> &mut [u8] {
        let len = self.block_bytes as usize;
        self.store
            .entry(internal_block)
            .or_insert_with(|| vec![0; len].into_boxed_slice())
    }

    fn block_copy(&self, internal_block: u64) -> Box<[u8]> {
        self.store
            .get(&internal_block)
            .cloned()
            .unwrap_or_else(|| vec![0; self.block_bytes as usize].into_boxed_slice())
    }

    /// Applies DMA progress up to `now`: exchanges finished chunks and, when
    /// a swap completes, remaps the pages and arms the next candidate.
    fn advance_background(&mut self, now: u64) {
        let adv = self.dma.advance_to(now);
        for chunk in adv.chunks.clone() {
            let a = self.internal_block(adv.src_internal, chunk);
            let b = self.internal_block(adv.dst_internal, chunk);
            let da = self.store.remove(&a);
            let db = self.store.remove(&b);
            if let Some(d) = da {
                self.store.insert(b, d);
            }
            if let Some(d) = db {
                self.store.insert(a, d);
            }
        }
        if let Some(done) = adv.completed {
            self.table.swap_mappings(&done);
            self.victim.search(&self.table, &self.recent);
        }
    }

    /// Where the bytes of `block_in_page` of `host_page` live right now, and
    /// which device an access there is charged to.
    fn locate(&self, host_page: u64, block_in_page: u64, kind: AccessKind, now: u64) -> Located {
        let internal = self.table.internal_of(host_page);
        match self.dma.active() {
            Some(job) if job.involves(internal) => {
                let r = job.route(internal, block_in_page * self.block_bytes, kind, now);
                Located {
                    content_block: self.internal_block(r.content_page, block_in_page),
                    device: self.tier(r.device_page),
                    stall_ns: r.stall_ns,
                    in_flight: true,
                }
            }
            _ => Located {
                content_block: self.internal_block(internal, block_in_page),
                device: self.tier(internal),
                stall_ns: 0,
                in_flight: false,
            },
        }
    }

    /// Serves one request.
    pub fn dispatch(&mut self, req: MemoryRequest) -> Result<ServiceOutcome> {
        let size = req.size_bytes as u64;
        if size == 0 {
            return Err(Error::ZeroSize { seq: req.seq });
        }
        if req
            .host_addr
            .checked_add(size)
            .is_none_or(|end| end > self.host_space)
        {
            return Err(Error::AddressOutOfRange {
                seq: req.seq,
                addr: req.host_addr,
                size: req.size_bytes,
                limit: self.host_space,
            });
        }
        if (req.host_addr >> self.block_shift) != ((req.host_addr + size - 1) >> self.block_shift) {
            return Err(Error::CrossesBlock {
                seq: req.seq,
                addr: req.host_addr,
                size: req.size_bytes,
                block: self.block_bytes,
            });
        }
        let host_page = req.host_addr >> self.page_shift;
        if self.cfg.policy == PolicyKind::AllDram && !self.table.is_fast(host_page) {
            return Err(Error::AllDramInfeasible {
                seq: req.seq,
                page: host_page,
            });
        }

        let now = self.clock.now();
        self.advance_background(now);

        let host_block = req.host_addr >> self.block_shift;
        let block_in_page = host_block & (self.blocks_per_page - 1);
        let offset = (req.host_addr & (self.block_bytes - 1)) as usize;
        let mut migrations = Vec::new();

        self.recent.record(host_page);
        self.table.mark_access(host_page, block_in_page);

        if let Some(cache) = self.cache.as_mut() {
            if cache.lookup(host_block).is_some() {
                if self.table.is_fast(host_page) {
                    // The page was promoted after this block was cached.
                    let ev = cache.invalidate(host_block).expect("just hit");
                    self.recycle(ev, now, &mut migrations);
                } else {
                    let latency = self.meter.charge(Access {
                        tier: Tier::Fast,
                        kind: req.kind,
                        lane: Lane::Foreground,
                        bytes: size,
                    });
                    let cache = self.cache.as_mut().expect("cache present");
                    let data = match req.kind {
                        AccessKind::Read => {
                            Some(cache.read(host_block, offset, size as usize).to_vec())
                        }
                        AccessKind::Write => {
                            let bytes = payload(req);
                            cache.write(host_block, offset, &bytes);
                            None
                        }
                    };
                    self.clock.advance(latency);
                    return Ok(ServiceOutcome {
                        device: Tier::Fast,
                        latency_ns: latency,
                        stall_ns: 0,
                        cache_hit: true,
                        during_swap: false,
                        migrations,
                        data,
                    });
                }
            }
        }

        let loc = self.locate(host_page, block_in_page, req.kind, now);
        self.meter.charge_stall(loc.stall_ns);
        let latency = self.meter.charge(Access {
            tier: loc.device,
            kind: req.kind,
            lane: Lane::Foreground,
            bytes: size,
        });
        let data = match req.kind {
            AccessKind::Read => {
                let b = self.block_copy(loc.content_block);
                Some(b[offset..offset + size as usize].to_vec())
            }
            AccessKind::Write => {
                let bytes = payload(req);
                self.block_mut(loc.content_block)[offset..offset + bytes.len()]
                    .copy_from_slice(&bytes);
                None
            }
        };
        self.clock.advance(latency + loc.stall_ns);

        if loc.device == Tier::Slow && !loc.in_flight {
            let count = self.table.entry(host_page).cached_block_count();
            match self.policy.on_slow_touch(count) {
                SlowAction::Forward => {}
                SlowAction::PageSwap => self.try_swap(host_page, &mut migrations),
                SlowAction::BlockCopy => {
                    self.fill(host_block, loc.content_block, now, &mut migrations)
                }
            }
        }

        Ok(ServiceOutcome {
            device: loc.device,
            latency_ns: latency + loc.stall_ns,
            stall_ns: loc.stall_ns,
            cache_hit: false,
            during_swap: loc.in_flight,
            migrations,
            data,
        })
    }

    /// Starts promoting `host_page` if the DMA engine is free and a
    /// candidate is armed; otherwise the request simply stayed on slow memory.
    fn try_swap(&mut self, host_page: u64, migrations: &mut Vec<MigrationAction>) {
        if !self.dma.is_idle() {
            return;
        }
        let Some(candidate) = self.victim.take_candidate() else {
            return;
        };
        let src = self.table.internal_of(host_page);
        let start = self.clock.now();
        self.dma
            .start_swap(src, candidate, start)
            .expect("engine checked idle");
        let page = self.cfg.page_size_bytes;
        for (tier, kind) in [
            (Tier::Slow, AccessKind::Read),
            (Tier::Fast, AccessKind::Write),
            (Tier::Fast, AccessKind::Read),
            (Tier::Slow, AccessKind::Write),
        ] {
            self.meter.charge(Access {
                tier,
                kind,
                lane: Lane::Background,
                bytes: page,
            });
        }
        self.meter.ledger_mut().page_swaps += 1;
        let bitmap = self.table.take_bitmap(host_page);
        self.policy.on_promotion(bitmap);
        migrations.push(MigrationAction::SwapStarted {
            host_page,
            victim_host_page: self.table.host_of(candidate),
        });
    }

    /// Copies a slow block into the cache zone.
    fn fill(
        &mut self,
        host_block: u64,
        content_block: u64,
        now: u64,
        migrations: &mut Vec<MigrationAction>,
    ) {
        let data = self.block_copy(content_block);
        let evicted = self
            .cache
            .as_mut()
            .expect("block copy needs a cache zone")
            .insert(host_block, data, false);
        self.table.inc_cached(host_block / self.blocks_per_page);
        self.charge_copy(Tier::Slow, Tier::Fast);
        self.meter.ledger_mut().block_fills += 1;
        migrations.push(MigrationAction::BlockCopy(self.dma.copy_block(
            BlockCopyJob {
                block: host_block,
                kind: BlockCopyKind::Fill,
                from: Tier::Slow,
                to: Tier::Fast,
            },
        )));
        if let Some(ev) = evicted {
            self.table.dec_cached(ev.block / self.blocks_per_page);
            if ev.dirty {
                let to = self.write_back(&ev, now);
                self.meter.ledger_mut().writebacks += 1;
                migrations.push(MigrationAction::BlockCopy(self.dma.copy_block(
                    BlockCopyJob {
                        block: ev.block,
                        kind: BlockCopyKind::Writeback,
                        from: Tier::Fast,
                        to,
                    },
                )));
            }
        }
    }

    /// Drops a cached block whose page now lives in fast memory, merging
    /// dirty data into the page first.
    fn recycle(&mut self, ev: Evicted, now: u64, migrations: &mut Vec<MigrationAction>) {
        self.table.dec_cached(ev.block / self.blocks_per_page);
        self.meter.ledger_mut().recycles += 1;
        if ev.dirty {
            let to = self.write_back(&ev, now);
            migrations.push(MigrationAction::BlockCopy(self.dma.copy_block(
                BlockCopyJob {
                    block: ev.block,
                    kind: BlockCopyKind::RecycleMerge,
                    from: Tier::Fast,
                    to,
                },
            )));
        }
    }

    /// Writes an evicted block to wherever its page currently lives.
    fn write_back(&mut self, ev: &Evicted, now: u64) -> Tier {
        let page = ev.block / self.blocks_per_page;
        let loc = self.locate(
            page,
            ev.block % self.blocks_per_page,
            AccessKind::Write,
            now,
        );
        self.block_mut(loc.content_block).copy_from_slice(&ev.data);
        self.charge_copy(Tier::Fast, loc.device);
        loc.device
    }

    fn charge_copy(&mut self, from: Tier, to: Tier) {
        let bytes = self.block_bytes;
        self.meter.charge(Access {
            tier: from,
            kind: AccessKind::Read,
            lane: Lane::Background,
            bytes,
        });
        self.meter.charge(Access {
            tier: to,
            kind: AccessKind::Write,
            lane: Lane::Background,
            bytes,
        });
    }

    /// Lets the DMA engine finish any in-flight swap. Foreground time does
    /// not move.
    pub fn drain(&mut self) {
        if let Some(end) = self.dma.busy_until() {
            self.advance_background(end);
        }
    }

    /// Drains background work and produces the report.
    pub fn finish(&mut self) -> FinalReport {
        self.drain();
        let mut ledger = self.meter.ledger().clone();
        ledger.migrated_bytes = self.dma.migrated_bytes();
        let elapsed = ledger.total_foreground_ns;
        finalize(&self.cfg, &ledger, elapsed, self.policy.threshold())
    }

    /// Runs a whole trace, numbering requests densely from 0.
    pub fn run<'a>(
        &mut self,
        trace: impl IntoIterator<Item = &'a TraceRecord>,
    ) -> Result<FinalReport> {
        for (seq, rec) in trace.into_iter().enumerate() {
            self.dispatch(MemoryRequest {
                kind: rec.kind,
                host_addr: rec.host_addr,
                size_bytes: rec.size_bytes,
                seq: seq as u64,
            })?;
        }
        Ok(self.finish())
    }

    /// Current contents of `len` bytes at `host_addr` (inside one block),
    /// without touching any replacement or timing state.
    pub fn peek(&self, host_addr: u64, len: usize) -> Vec<u8> {
        let host_block = host_addr >> self.block_shift;
        let offset = (host_addr & (self.block_bytes - 1)) as usize;
        if let Some(c) = &self.cache {
            if c.contains(host_block) {
                return c.read(host_block, offset, len).to_vec();
            }
        }
        let page = host_addr >> self.page_shift;
        let loc = self.locate(
            page,
            host_block & (self.blocks_per_page - 1),
            AccessKind::Read,
            self.clock.now(),
        );
        self.block_copy(loc.content_block)[offset..offset + len].to_vec()
    }

    /// SHA-256 over the host-visible contents of the given host blocks.
    pub fn content_digest(&self, host_blocks: impl IntoIterator<Item = u64>) -> String {
        let mut blocks: Vec<u64> = host_blocks.into_iter().collect();
        blocks.sort_unstable();
        blocks.dedup();
        let mut h = Sha256::new();
        for b in blocks {
            h.update(b.to_le_bytes());
            h.update(self.peek(b << self.block_shift, self.block_bytes as usize));
        }
        hex_string(&h.finalize())
    }

    pub fn dump_page_table<W: Write>(&self, out: W) -> io::Result<()> {
        self.table.dump(out)
    }

    pub fn dump_cache<W: Write>(&self, out: W) -> io::Result<()> {
        match &self.cache {
            Some(c) => c.dump(out),
            None => Ok(()),
        }
    }

    /// Cross-structure consistency: bijection, cache set invariants, and
    /// per-page cached counts matching cache residency.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if !self.table.is_bijection() {
            return Err("page table is not a bijection".into());
        }
        if let Some(c) = &self.cache {
            c.check_invariants()?;
            let mut per_page: HashMap<u64, u16> = HashMap::new();
            for b in c.resident_blocks() {
                *per_page.entry(b / self.blocks_per_page).or_default() += 1;
            }
            if self.table.sum_cached() != c.valid_blocks() {
                return Err(format!(
                    "cached counters sum to {}, cache holds {}",
                    self.table.sum_cached(),
                    c.valid_blocks()
                ));
            }
            for (page, n) in per_page {
                if self.table.cached_blocks_exact(page) != n {
                    return Err(format!(
                        "page {page}: counter disagrees with {n} resident blocks"
                    ));
                }
            }
        }
        if let Some(cand) = self.victim.candidate() {
            if !self.table.is_fast_internal(cand) {
                return Err(format!("candidate {cand} is not a fast page"));
            }
        }
        Ok(())
    }
}

struct Located {
    content_block: u64,
    device: Tier,
    stall_ns: u64,
    in_flight: bool,
}

fn payload(req: MemoryRequest) -> Vec<u8> {
    (0..req.size_bytes as u64)
        .map(|i| payload_byte(req.seq, req.host_addr + i))
        .collect()
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests;
