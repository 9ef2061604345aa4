//! Reference model for differential testing.
//!
//! Same observable behaviour as [`Simulator`](crate::Simulator), written for
//! obviousness rather than speed: plain maps, byte-granular memory, an exact
//! recency queue in place of the bloom filter, and a pseudo-LRU tree kept as
//! three named booleans. It shares no bookkeeping with the simulator; only
//! the final report assembly is common.

use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::{PolicyKind, SimConfig};
use crate::error::{Error, Result};
use crate::meter::{finalize, FinalReport, MeterLedger};
use crate::trace::TraceRecord;
use crate::types::{payload_byte, AccessKind};

/// Result of a reference run.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutput {
    pub report: FinalReport,
    /// SHA-256 over the final contents of every block the trace touched.
    pub digest: String,
    /// Data returned by each read, in trace order.
    pub reads: Vec<Vec<u8>>,
}

/// Runs `trace` through the reference model. Recency is always exact,
/// whatever `cfg.recency` says.
pub fn oracle_run(trace: &[TraceRecord], cfg: &SimConfig) -> Result<OracleOutput> {
    cfg.validate()?;
    let mut o = Oracle::new(cfg);
    let mut reads = Vec::new();
    for (seq, rec) in trace.iter().enumerate() {
        if let Some(data) = o.step(seq as u64, rec)? {
            reads.push(data);
        }
    }
    if let Some(swap) = o.swap.clone() {
        let end = swap.start + o.chunks() * o.chunk_ns;
        o.advance(end);
    }
    let mut blocks: Vec<u64> = trace.iter().map(|r| r.host_addr / o.block).collect();
    blocks.sort_unstable();
    blocks.dedup();
    let mut h = Sha256::new();
    for b in blocks {
        h.update(b.to_le_bytes());
        let bytes: Vec<u8> = (0..o.block)
            .map(|i| o.visible_byte(b * o.block + i))
            .collect();
        h.update(&bytes);
    }
    let digest = h.finalize().iter().map(|b| format!("{b:02x}")).collect();

    let c = &o.counts;
    let ledger = MeterLedger {
        fast_reads: c.fast_reads,
        fast_writes: c.fast_writes,
        slow_reads: c.slow_reads,
        slow_writes: c.slow_writes,
        mig_fast_reads: c.mig_fast_reads,
        mig_fast_writes: c.mig_fast_writes,
        mig_slow_reads: c.mig_slow_reads,
        mig_slow_writes: c.mig_slow_writes,
        total_foreground_ns: c.foreground_ns,
        write_stalls: c.stalls,
        stall_ns: c.stall_ns,
        page_swaps: c.swaps,
        block_fills: c.fills,
        writebacks: c.writebacks,
        recycles: c.recycles,
        migrated_bytes: 2 * o.page * c.swaps_done + o.block * c.block_moves,
    };
    let report = finalize(cfg, &ledger, c.foreground_ns, o.threshold);
    Ok(OracleOutput {
        report,
        digest,
        reads,
    })
}

#[derive(Default)]
struct Counts {
    fast_reads: u64,
    fast_writes: u64,
    slow_reads: u64,
    slow_writes: u64,
    mig_fast_reads: u64,
    mig_fast_writes: u64,
    mig_slow_reads: u64,
    mig_slow_writes: u64,
    foreground_ns: u64,
    stalls: u64,
    stall_ns: u64,
    swaps: u64,
    swaps_done: u64,
    fills: u64,
    writebacks: u64,
    recycles: u64,
    block_moves: u64,
}

#[derive(Clone)]
struct Line {
    block: u64,
    dirty: bool,
    data: Vec<u8>,
}

#[derive(Clone, Default)]
struct Set {
    ways: [Option<Line>; 4],
    /// Next victim is in ways 2-3.
    victim_right_half: bool,
    /// Within ways 0-1, next victim is way 1.
    victim_is_way1: bool,
    /// Within ways 2-3, next victim is way 3.
    victim_is_way3: bool,
}

impl Set {
    fn touch(&mut self, way: usize) {
        self.victim_right_half = way < 2;
        match way {
            0 => self.victim_is_way1 = true,
            1 => self.victim_is_way1 = false,
            2 => self.victim_is_way3 = true,
            _ => self.victim_is_way3 = false,
        }
    }

    fn victim(&self) -> usize {
        match (
            self.victim_right_half,
            self.victim_is_way1,
            self.victim_is_way3,
        ) {
            (false, false, _) => 0,
            (false, true, _) => 1,
            (true, _, false) => 2,
            (true, _, true) => 3,
        }
    }

    fn find(&self, block: u64) -> Option<usize> {
        self.ways
            .iter()
            .position(|l| l.as_ref().is_some_and(|l| l.block == block))
    }
}

#[derive(Clone)]
struct Swap {
    src: u64,
    dst: u64,
    start: u64,
    applied: u64,
}

struct Oracle {
    cfg: SimConfig,
    page: u64,
    block: u64,
    bpp: u64,
    fast_pages: u64,
    total_pages: u64,
    chunk_ns: u64,
    /// host page -> internal page
    map: HashMap<u64, u64>,
    /// internal byte address -> byte; absent means zero
    mem: HashMap<u64, u8>,
    sets: Vec<Set>,
    cached: HashMap<u64, u64>,
    bitmaps: HashMap<u64, u8>,
    recent: VecDeque<u64>,
    counter: u64,
    candidate: Option<u64>,
    swap: Option<Swap>,
    clock: u64,
    threshold: u32,
    ewma: f64,
    promotions_in_window: u32,
    counts: Counts,
}

/// Where one block of a host page lives at a given time.
struct Place {
    content_page: u64,
    device_page: u64,
    stall: u64,
    in_flight: bool,
}

impl Oracle {
    fn new(cfg: &SimConfig) -> Self {
        let page = cfg.page_size_bytes;
        let block = cfg.block_size_bytes;
        let fast_pages = (cfg.fast_capacity_bytes - cfg.cache_zone_bytes) / page;
        let total_pages = fast_pages + cfg.slow_capacity_bytes / page;
        let mut layout: Vec<u32> = (0..total_pages as u32).collect();
        if cfg.policy == PolicyKind::Static {
            layout.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.rng_seed));
        }
        let map = layout
            .iter()
            .enumerate()
            .map(|(h, &i)| (h as u64, i as u64))
            .collect();
        let nsets = if cfg.policy.uses_cache_zone() {
            cfg.cache_zone_bytes / (4 * block)
        } else {
            0
        };
        let adp = cfg.policy == PolicyKind::AdpComb;
        let mut o = Self {
            cfg: cfg.clone(),
            page,
            block,
            bpp: page / block,
            fast_pages,
            total_pages,
            chunk_ns: (((2 * block) as f64 / cfg.dma_bandwidth_bytes_per_ns).ceil() as u64).max(1),
            map,
            mem: HashMap::new(),
            sets: vec![Set::default(); nsets as usize],
            cached: HashMap::new(),
            bitmaps: HashMap::new(),
            recent: VecDeque::new(),
            counter: 0,
            candidate: None,
            swap: None,
            clock: 0,
            threshold: if adp {
                cfg.promotion_threshold
                    .clamp(cfg.adaptive.min_threshold, cfg.adaptive.max_threshold)
            } else {
                cfg.promotion_threshold
            },
            ewma: (cfg.adaptive.lo_water + cfg.adaptive.hi_water) / 2.0,
            promotions_in_window: 0,
            counts: Counts::default(),
        };
        if matches!(
            cfg.policy,
            PolicyKind::PageMove | PolicyKind::StatComb | PolicyKind::AdpComb
        ) {
            o.find_candidate();
        }
        o
    }

    fn chunks(&self) -> u64 {
        self.bpp
    }

    fn is_fast(&self, internal: u64) -> bool {
        internal < self.fast_pages
    }

    fn host_of(&self, internal: u64) -> u64 {
        *self
            .map
            .iter()
            .find(|(_, &i)| i == internal)
            .expect("mapping is a bijection")
            .0
    }

    fn find_candidate(&mut self) {
        for _ in 0..16 * self.total_pages {
            self.counter += 1;
            let host = splitmix(self.counter) % self.total_pages;
            let internal = self.map[&host];
            if self.is_fast(internal) && !self.recent.contains(&host) {
                self.candidate = Some(internal);
                return;
            }
        }
        panic!("reference victim search found no cold fast page");
    }

    fn advance(&mut self, now: u64) {
        let Some(mut sw) = self.swap.clone() else {
            return;
        };
        let done = ((now - sw.start) / self.chunk_ns).min(self.chunks());
        for chunk in sw.applied..done {
            for i in 0..self.block {
                let a = sw.src * self.page + chunk * self.block + i;
                let b = sw.dst * self.page + chunk * self.block + i;
                let va = self.mem.remove(&a);
                let vb = self.mem.remove(&b);
                if let Some(v) = va {
                    self.mem.insert(b, v);
                }
                if let Some(v) = vb {
                    self.mem.insert(a, v);
                }
            }
        }
        sw.applied = done;
        if done == self.chunks() {
            let ha = self.host_of(sw.src);
            let hb = self.host_of(sw.dst);
            self.map.insert(ha, sw.dst);
            self.map.insert(hb, sw.src);
            self.swap = None;
            self.counts.swaps_done += 1;
            self.find_candidate();
        } else {
            self.swap = Some(sw);
        }
    }

    fn place(&self, host_page: u64, blk: u64, write: bool, now: u64) -> Place {
        let internal = self.map[&host_page];
        let plain = Place {
            content_page: internal,
            device_page: internal,
            stall: 0,
            in_flight: false,
        };
        let Some(sw) = &self.swap else {
            return plain;
        };
        if internal != sw.src && internal != sw.dst {
            return plain;
        }
        let other = if internal == sw.src { sw.dst } else { sw.src };
        let done = ((now - sw.start) / self.chunk_ns).min(self.chunks());
        if blk < done {
            Place {
                content_page: other,
                device_page: other,
                stall: 0,
                in_flight: true,
            }
        } else if write
            && blk == done
            && done < self.chunks()
            && now > sw.start + done * self.chunk_ns
        {
            Place {
                content_page: internal,
                device_page: other,
                stall: sw.start + (done + 1) * self.chunk_ns - now,
                in_flight: true,
            }
        } else {
            Place {
                in_flight: true,
                ..plain
            }
        }
    }

    fn byte(&self, internal_addr: u64) -> u8 {
        self.mem.get(&internal_addr).copied().unwrap_or(0)
    }

    fn visible_byte(&self, host_addr: u64) -> u8 {
        let hb = host_addr / self.block;
        if !self.sets.is_empty() {
            let set = &self.sets[(hb % self.sets.len() as u64) as usize];
            if let Some(w) = set.find(hb) {
                return set.ways[w].as_ref().unwrap().data[(host_addr % self.block) as usize];
            }
        }
        let p = self.place(host_addr / self.page, hb % self.bpp, false, self.clock);
        self.byte(p.content_page * self.page + host_addr % self.page)
    }

    fn count_access(&mut self, fast: bool, write: bool, background: bool, units: u64) {
        let c = &mut self.counts;
        let slot = match (background, fast, write) {
            (false, true, false) => &mut c.fast_reads,
            (false, true, true) => &mut c.fast_writes,
            (false, false, false) => &mut c.slow_reads,
            (false, false, true) => &mut c.slow_writes,
            (true, true, false) => &mut c.mig_fast_reads,
            (true, true, true) => &mut c.mig_fast_writes,
            (true, false, false) => &mut c.mig_slow_reads,
            (true, false, true) => &mut c.mig_slow_writes,
        };
        *slot += units;
    }

    fn latency(&self, fast: bool, write: bool) -> u64 {
        match (fast, write) {
            (true, false) => self.cfg.fast_read_ns,
            (true, true) => self.cfg.fast_write_ns,
            (false, false) => self.cfg.slow_read_ns,
            (false, true) => self.cfg.slow_write_ns,
        }
    }

    fn step(&mut self, seq: u64, rec: &TraceRecord) -> Result<Option<Vec<u8>>> {
        let addr = rec.host_addr;
        let size = rec.size_bytes as u64;
        let write = rec.kind == AccessKind::Write;
        if size == 0 {
            return Err(Error::ZeroSize { seq });
        }
        let space = self.total_pages * self.page;
        if addr >= space || space - addr < size {
            return Err(Error::AddressOutOfRange {
                seq,
                addr,
                size: rec.size_bytes,
                limit: space,
            });
        }
        if addr / self.block != (addr + size - 1) / self.block {
            return Err(Error::CrossesBlock {
                seq,
                addr,
                size: rec.size_bytes,
                block: self.block,
            });
        }
        let host_page = addr / self.page;
        if self.cfg.policy == PolicyKind::AllDram && !self.is_fast(self.map[&host_page]) {
            return Err(Error::AllDramInfeasible {
                seq,
                page: host_page,
            });
        }

        let now = self.clock;
        self.advance(now);

        let hb = addr / self.block;
        let blk = hb % self.bpp;
        let off = addr % self.block;
        let payload: Vec<u8> = (0..size).map(|i| payload_byte(seq, addr + i)).collect();

        self.recent.push_back(host_page);
        if self.recent.len() > self.cfg.bloom_window as usize {
            self.recent.pop_front();
        }
        let bit = (blk / (self.bpp / 8).max(1)).min(7);
        *self.bitmaps.entry(host_page).or_default() |= 1 << bit;

        if !self.sets.is_empty() {
            let si = (hb % self.sets.len() as u64) as usize;
            if let Some(way) = self.sets[si].find(hb) {
                self.sets[si].touch(way);
                if self.is_fast(self.map[&host_page]) {
                    let line = self.sets[si].ways[way].take().unwrap();
                    *self.cached.get_mut(&host_page).unwrap() -= 1;
                    self.counts.recycles += 1;
                    if line.dirty {
                        self.write_back(&line, now);
                    }
                } else {
                    let lat = self.latency(true, write);
                    self.count_access(true, write, false, 1);
                    self.counts.foreground_ns += lat;
                    self.clock += lat;
                    let line = self.sets[si].ways[way].as_mut().unwrap();
                    let range = off as usize..(off + size) as usize;
                    if write {
                        line.data[range].copy_from_slice(&payload);
                        line.dirty = true;
                        return Ok(None);
                    }
                    return Ok(Some(line.data[range].to_vec()));
                }
            }
        }

        let p = self.place(host_page, blk, write, now);
        let fast = self.is_fast(p.device_page);
        if p.stall > 0 {
            self.counts.stalls += 1;
            self.counts.stall_ns += p.stall;
            self.counts.foreground_ns += p.stall;
        }
        let lat = self.latency(fast, write);
        self.count_access(fast, write, false, 1);
        self.counts.foreground_ns += lat;
        let base = p.content_page * self.page + blk * self.block + off;
        let data = if write {
            for (i, &b) in payload.iter().enumerate() {
                self.mem.insert(base + i as u64, b);
            }
            None
        } else {
            Some((0..size).map(|i| self.byte(base + i)).collect())
        };
        self.clock += lat + p.stall;

        if fast || p.in_flight {
            return Ok(data);
        }
        let wants_swap = match self.cfg.policy {
            PolicyKind::Static | PolicyKind::AllDram => return Ok(data),
            PolicyKind::PageMove => true,
            PolicyKind::StatComb | PolicyKind::AdpComb => {
                let count = self.cached.get(&host_page).copied().unwrap_or(0).min(15);
                count >= self.threshold as u64
            }
        };
        if wants_swap {
            if self.swap.is_none() {
                if let Some(dst) = self.candidate.take() {
                    self.start_swap(host_page, dst);
                }
            }
        } else {
            self.fill(hb, p.content_page, now);
        }
        Ok(data)
    }

    fn start_swap(&mut self, host_page: u64, dst: u64) {
        self.swap = Some(Swap {
            src: self.map[&host_page],
            dst,
            start: self.clock,
            applied: 0,
        });
        let units = self.bpp;
        self.count_access(false, false, true, units);
        self.count_access(true, true, true, units);
        self.count_access(true, false, true, units);
        self.count_access(false, true, true, units);
        self.counts.swaps += 1;
        let bitmap = self.bitmaps.remove(&host_page).unwrap_or(0);
        if self.cfg.policy == PolicyKind::AdpComb {
            let a = self.cfg.adaptive;
            let sample = bitmap.count_ones() as f64 / 8.0;
            self.ewma = a.alpha * sample + (1.0 - a.alpha) * self.ewma;
            if a.window_pages > 0 {
                self.promotions_in_window += 1;
                if self.promotions_in_window == a.window_pages {
                    self.promotions_in_window = 0;
                    if self.ewma > a.hi_water {
                        self.threshold = self.threshold.saturating_sub(1).max(a.min_threshold);
                    } else if self.ewma < a.lo_water {
                        self.threshold = (self.threshold + 1).min(a.max_threshold);
                    }
                }
            }
        }
    }

    fn fill(&mut self, hb: u64, content_page: u64, now: u64) {
        let blk = hb % self.bpp;
        let base = content_page * self.page + blk * self.block;
        let data: Vec<u8> = (0..self.block).map(|i| self.byte(base + i)).collect();
        let si = (hb % self.sets.len() as u64) as usize;
        let set = &mut self.sets[si];
        let way = set
            .ways
            .iter()
            .position(Option::is_none)
            .unwrap_or_else(|| set.victim());
        let old = set.ways[way].replace(Line {
            block: hb,
            dirty: false,
            data,
        });
        set.touch(way);
        *self.cached.entry(hb / self.bpp).or_default() += 1;
        self.count_access(false, false, true, 1);
        self.count_access(true, true, true, 1);
        self.counts.fills += 1;
        self.counts.block_moves += 1;
        if let Some(line) = old {
            *self.cached.get_mut(&(line.block / self.bpp)).unwrap() -= 1;
            if line.dirty {
                self.write_back(&line, now);
                self.counts.writebacks += 1;
            }
        }
    }

    fn write_back(&mut self, line: &Line, now: u64) {
        let page = line.block / self.bpp;
        let blk = line.block % self.bpp;
        let p = self.place(page, blk, true, now);
        let base = p.content_page * self.page + blk * self.block;
        for (i, &b) in line.data.iter().enumerate() {
            self.mem.insert(base + i as u64, b);
        }
        self.count_access(true, false, true, 1);
        let fast = self.is_fast(p.device_page);
        self.count_access(fast, true, true, 1);
        self.counts.block_moves += 1;
    }
}

/// SplitMix64 finalizer, written out independently of the simulator's copy.
fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
