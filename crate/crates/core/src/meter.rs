//! Time, energy and traffic accounting, plus the hardware metadata-cost
//! calculator.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::{PolicyKind, SimConfig, CACHE_WAYS, GIB};
use crate::error::{Error, Result};
use crate::types::{AccessKind, Tier};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Whether an access is a host request or DMA traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lane {
    Foreground,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub tier: Tier,
    pub kind: AccessKind,
    pub lane: Lane,
    pub bytes: u64,
}

/// Raw counters of one run. Access counts are in block-sized units.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterLedger {
    pub fast_reads: u64,
    pub fast_writes: u64,
    pub slow_reads: u64,
    pub slow_writes: u64,
    pub mig_fast_reads: u64,
    pub mig_fast_writes: u64,
    pub mig_slow_reads: u64,
    pub mig_slow_writes: u64,
    pub total_foreground_ns: u64,
    pub write_stalls: u64,
    pub stall_ns: u64,
    pub page_swaps: u64,
    pub block_fills: u64,
    pub writebacks: u64,
    pub recycles: u64,
    pub migrated_bytes: u64,
}

/// Charges accesses against the device table of a configuration.
#[derive(Debug, Clone)]
pub struct Meter {
    block_bytes: u64,
    latency: [u64; 4],
    ledger: MeterLedger,
}

fn slot(tier: Tier, kind: AccessKind) -> usize {
    match (tier, kind) {
        (Tier::Fast, AccessKind::Read) => 0,
        (Tier::Fast, AccessKind::Write) => 1,
        (Tier::Slow, AccessKind::Read) => 2,
        (Tier::Slow, AccessKind::Write) => 3,
    }
}

impl Meter {
    pub fn new(cfg: &SimConfig) -> Self {
        Self {
            block_bytes: cfg.block_size_bytes,
            latency: [
                cfg.fast_read_ns,
                cfg.fast_write_ns,
                cfg.slow_read_ns,
                cfg.slow_write_ns,
            ],
            ledger: MeterLedger::default(),
        }
    }

    pub fn ledger(&self) -> &MeterLedger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut MeterLedger {
        &mut self.ledger
    }

    pub fn latency(&self, tier: Tier, kind: AccessKind) -> u64 {
        self.latency[slot(tier, kind)]
    }

    /// Records one access; returns the foreground time it adds.
    pub fn charge(&mut self, a: Access) -> u64 {
        let units = a.bytes.div_ceil(self.block_bytes).max(1);
        let ns = self.latency(a.tier, a.kind);
        let l = &mut self.ledger;
        let counter = match (a.lane, a.tier, a.kind) {
            (Lane::Foreground, Tier::Fast, AccessKind::Read) => &mut l.fast_reads,
            (Lane::Foreground, Tier::Fast, AccessKind::Write) => &mut l.fast_writes,
            (Lane::Foreground, Tier::Slow, AccessKind::Read) => &mut l.slow_reads,
            (Lane::Foreground, Tier::Slow, AccessKind::Write) => &mut l.slow_writes,
            (Lane::Background, Tier::Fast, AccessKind::Read) => &mut l.mig_fast_reads,
            (Lane::Background, Tier::Fast, AccessKind::Write) => &mut l.mig_fast_writes,
            (Lane::Background, Tier::Slow, AccessKind::Read) => &mut l.mig_slow_reads,
            (Lane::Background, Tier::Slow, AccessKind::Write) => &mut l.mig_slow_writes,
        };
        *counter += units;
        match a.lane {
            Lane::Foreground => {
                l.total_foreground_ns += ns;
                ns
            }
            Lane::Background => 0,
        }
    }

    /// Time a foreground write spent waiting on the DMA engine.
    pub fn charge_stall(&mut self, ns: u64) {
        if ns > 0 {
            self.ledger.write_stalls += 1;
            self.ledger.stall_ns += ns;
            self.ledger.total_foreground_ns += ns;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub fast_background: f64,
    pub fast_read: f64,
    pub fast_write: f64,
    pub slow_read: f64,
    pub slow_write: f64,
    pub total: f64,
}

/// Ratios against an AllDRAM run of the same trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    /// AllDRAM runtime divided by this run's runtime.
    pub speedup: f64,
    pub runtime_ratio: f64,
    pub energy_ratio: f64,
}

/// Everything a run measured, in a stable serialized shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub schema_version: u32,
    pub policy: PolicyKind,
    pub requests: u64,
    pub fast_reads: u64,
    pub fast_writes: u64,
    pub slow_reads: u64,
    pub slow_writes: u64,
    pub mig_fast_reads: u64,
    pub mig_fast_writes: u64,
    pub mig_slow_reads: u64,
    pub mig_slow_writes: u64,
    pub page_swaps: u64,
    pub block_fills: u64,
    pub writebacks: u64,
    pub recycles: u64,
    pub write_stalls: u64,
    pub stall_ns: u64,
    pub migrated_bytes: u64,
    pub total_foreground_ns: u64,
    pub elapsed_ns: u64,
    pub slow_writes_total: u64,
    pub fast_hit_fraction: f64,
    pub final_threshold: u32,
    pub energy_nj: EnergyBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vs_alldram: Option<Normalized>,
}

/// DRAM background energy in nJ: mW/GiB × GiB × ns × 1e-3.
pub fn background_energy_nj(mw_per_gb: f64, fast_capacity_bytes: u64, elapsed_ns: u64) -> f64 {
    mw_per_gb * (fast_capacity_bytes as f64 / GIB as f64) * elapsed_ns as f64 * 1e-3
}

/// Turns a ledger into a report, using `elapsed_ns` for background power.
pub fn finalize(
    cfg: &SimConfig,
    ledger: &MeterLedger,
    elapsed_ns: u64,
    final_threshold: u32,
) -> FinalReport {
    let l = ledger;
    let fast_background = background_energy_nj(
        cfg.fast_background_mw_per_gb,
        cfg.fast_capacity_bytes,
        elapsed_ns,
    );
    let fast_read = (l.fast_reads + l.mig_fast_reads) as f64 * cfg.fast_read_nj;
    let fast_write = (l.fast_writes + l.mig_fast_writes) as f64 * cfg.fast_write_nj;
    let slow_read = (l.slow_reads + l.mig_slow_reads) as f64 * cfg.slow_read_nj;
    let slow_write = (l.slow_writes + l.mig_slow_writes) as f64 * cfg.slow_write_nj;
    let requests = l.fast_reads + l.fast_writes + l.slow_reads + l.slow_writes;
    FinalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        policy: cfg.policy,
        requests,
        fast_reads: l.fast_reads,
        fast_writes: l.fast_writes,
        slow_reads: l.slow_reads,
        slow_writes: l.slow_writes,
        mig_fast_reads: l.mig_fast_reads,
        mig_fast_writes: l.mig_fast_writes,
        mig_slow_reads: l.mig_slow_reads,
        mig_slow_writes: l.mig_slow_writes,
        page_swaps: l.page_swaps,
        block_fills: l.block_fills,
        writebacks: l.writebacks,
        recycles: l.recycles,
        write_stalls: l.write_stalls,
        stall_ns: l.stall_ns,
        migrated_bytes: l.migrated_bytes,
        total_foreground_ns: l.total_foreground_ns,
        elapsed_ns,
        slow_writes_total: l.slow_writes + l.mig_slow_writes,
        fast_hit_fraction: if requests == 0 {
            0.0
        } else {
            (l.fast_reads + l.fast_writes) as f64 / requests as f64
        },
        final_threshold,
        energy_nj: EnergyBreakdown {
            fast_background,
            fast_read,
            fast_write,
            slow_read,
            slow_write,
            total: fast_background + fast_read + fast_write + slow_read + slow_write,
        },
        vs_alldram: None,
    }
}

impl FinalReport {
    /// Fills `vs_alldram` from a same-trace AllDRAM report.
    pub fn normalize_to(&mut self, alldram: &FinalReport) {
        let ratio = |a: f64, b: f64| if b == 0.0 { 1.0 } else { a / b };
        let ns = self.total_foreground_ns as f64;
        let base = alldram.total_foreground_ns as f64;
        self.vs_alldram = Some(Normalized {
            speedup: ratio(base, ns),
            runtime_ratio: ratio(ns, base),
            energy_ratio: ratio(self.energy_nj.total, alldram.energy_nj.total),
        });
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub const CSV_HEADER: [&'static str; 33] = [
        "schema_version",
        "policy",
        "requests",
        "fast_reads",
        "fast_writes",
        "slow_reads",
        "slow_writes",
        "mig_fast_reads",
        "mig_fast_writes",
        "mig_slow_reads",
        "mig_slow_writes",
        "page_swaps",
        "block_fills",
        "writebacks",
        "recycles",
        "write_stalls",
        "stall_ns",
        "migrated_bytes",
        "total_foreground_ns",
        "elapsed_ns",
        "slow_writes_total",
        "fast_hit_fraction",
        "final_threshold",
        "energy_fast_background_nj",
        "energy_fast_read_nj",
        "energy_fast_write_nj",
        "energy_slow_read_nj",
        "energy_slow_write_nj",
        "energy_total_nj",
        "speedup_vs_alldram",
        "runtime_ratio_vs_alldram",
        "energy_ratio_vs_alldram",
        "label",
    ];

    /// Flat CSV row matching [`FinalReport::CSV_HEADER`]; `label` names the
    /// run (for example a sweep point).
    pub fn csv_row(&self, label: &str) -> Vec<String> {
        let e = &self.energy_nj;
        let n = self.vs_alldram;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.schema_version.to_string(),
            self.policy.to_string(),
            self.requests.to_string(),
            self.fast_reads.to_string(),
            self.fast_writes.to_string(),
            self.slow_reads.to_string(),
            self.slow_writes.to_string(),
            self.mig_fast_reads.to_string(),
            self.mig_fast_writes.to_string(),
            self.mig_slow_reads.to_string(),
            self.mig_slow_writes.to_string(),
            self.page_swaps.to_string(),
            self.block_fills.to_string(),
            self.writebacks.to_string(),
            self.recycles.to_string(),
            self.write_stalls.to_string(),
            self.stall_ns.to_string(),
            self.migrated_bytes.to_string(),
            self.total_foreground_ns.to_string(),
            self.elapsed_ns.to_string(),
            self.slow_writes_total.to_string(),
            self.fast_hit_fraction.to_string(),
            self.final_threshold.to_string(),
            e.fast_background.to_string(),
            e.fast_read.to_string(),
            e.fast_write.to_string(),
            e.slow_read.to_string(),
            e.slow_write.to_string(),
            e.total.to_string(),
            opt(n.map(|n| n.speedup)),
            opt(n.map(|n| n.runtime_ratio)),
            opt(n.map(|n| n.energy_ratio)),
            label.to_owned(),
        ]
    }

    /// Writes labelled reports as CSV with a header row.
    pub fn write_csv<'a, W: Write>(
        out: W,
        rows: impl IntoIterator<Item = (&'a str, &'a FinalReport)>,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for (label, r) in rows {
            w.write_record(r.csv_row(label))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Inputs to the metadata-cost calculator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetadataGeometry {
    pub space_bytes: u64,
    pub page_bytes: u64,
    pub block_bytes: u64,
    pub sets: u64,
    /// Per-entry statistics bits in the published estimate.
    pub stat_bits: u32,
    /// Tag width per way in the published estimate.
    pub tag_bits: u32,
}

impl Default for MetadataGeometry {
    fn default() -> Self {
        Self {
            space_bytes: 2 * GIB,
            page_bytes: 4096,
            block_bytes: 128,
            sets: 1 << 16,
            stat_bits: 5,
            tag_bits: 8,
        }
    }
}

/// Hardware metadata cost of the page table and cache zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataCostReport {
    pub entries: u64,
    pub bits_per_page_entry: u32,
    pub bytes_per_page_entry: u32,
    pub total_page_table_bytes: u64,
    pub sets: u64,
    pub bits_per_cache_set: u32,
    pub total_cache_meta_bits: u64,
    pub total_cache_meta_bytes: u64,
    /// The same costs for the fields the simulator actually keeps: a 4-bit
    /// counter plus 8-bit bitmap per entry, and a conventional tag plus
    /// valid and dirty bit per way.
    pub functional: FunctionalCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalCost {
    pub bits_per_page_entry: u32,
    pub bytes_per_page_entry: u32,
    pub total_page_table_bytes: u64,
    pub tag_bits: u32,
    pub bits_per_cache_set: u32,
    pub total_cache_meta_bytes: u64,
}

pub fn metadata_cost(g: &MetadataGeometry) -> Result<MetadataCostReport> {
    let bad = |m: String| Err(Error::Geometry(m));
    if !g.page_bytes.is_power_of_two() {
        return bad(format!("page size {} is not a power of two", g.page_bytes));
    }
    if !g.block_bytes.is_power_of_two() || g.block_bytes > g.page_bytes {
        return bad(format!("block size {} invalid", g.block_bytes));
    }
    if g.space_bytes < g.page_bytes || !g.space_bytes.is_multiple_of(g.page_bytes) {
        return bad(format!(
            "space {} is not a whole number of {}-byte pages",
            g.space_bytes, g.page_bytes
        ));
    }
    if !g.sets.is_power_of_two() {
        return bad(format!("set count {} is not a power of two", g.sets));
    }
    let entries = g.space_bytes / g.page_bytes;
    let addr_bits = ceil_log2(entries);
    let bits_per_page_entry = addr_bits + g.stat_bits;
    let bytes_per_page_entry = bits_per_page_entry.div_ceil(8);
    let ways = CACHE_WAYS as u32;
    let plru_bits = ways - 1;
    let bits_per_cache_set = ways * g.tag_bits + plru_bits + ways;
    let total_cache_meta_bits = bits_per_cache_set as u64 * g.sets;

    let f_entry = addr_bits + 4 + 8;
    let f_bytes = f_entry.div_ceil(8);
    let total_blocks = g.space_bytes / g.block_bytes;
    let f_tag = ceil_log2(total_blocks).saturating_sub(ceil_log2(g.sets));
    let f_set = ways * (f_tag + 2) + plru_bits;
    Ok(MetadataCostReport {
        entries,
        bits_per_page_entry,
        bytes_per_page_entry,
        total_page_table_bytes: entries * bytes_per_page_entry as u64,
        sets: g.sets,
        bits_per_cache_set,
        total_cache_meta_bits,
        total_cache_meta_bytes: total_cache_meta_bits.div_ceil(8),
        functional: FunctionalCost {
            bits_per_page_entry: f_entry,
            bytes_per_page_entry: f_bytes,
            total_page_table_bytes: entries * f_bytes as u64,
            tag_bits: f_tag,
            bits_per_cache_set: f_set,
            total_cache_meta_bytes: (f_set as u64 * g.sets).div_ceil(8),
        },
    })
}

fn ceil_log2(n: u64) -> u32 {
    debug_assert!(n > 0);
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MIB;

    fn meter() -> Meter {
        Meter::new(&SimConfig::default())
    }

    #[test]
    fn foreground_fast_read() {
        let mut m = meter();
        let ns = m.charge(Access {
            tier: Tier::Fast,
            kind: AccessKind::Read,
            lane: Lane::Foreground,
            bytes: 64,
        });
        assert_eq!(ns, 50);
        let r = finalize(&SimConfig::default(), m.ledger(), 0, 4);
        assert_eq!(r.energy_nj.fast_read, 4.2);
    }

    #[test]
    fn background_writeback_costs_no_time() {
        let mut m = meter();
        let ns = m.charge(Access {
            tier: Tier::Slow,
            kind: AccessKind::Write,
            lane: Lane::Background,
            bytes: 128,
        });
        assert_eq!(ns, 0);
        assert_eq!(m.ledger().mig_slow_writes, 1);
        let r = finalize(&SimConfig::default(), m.ledger(), 0, 4);
        assert_eq!(r.energy_nj.slow_write, 8.7);
        assert_eq!(r.total_foreground_ns, 0);
    }

    #[test]
    fn page_transfer_is_32_block_accesses() {
        let mut m = meter();
        m.charge(Access {
            tier: Tier::Slow,
            kind: AccessKind::Read,
            lane: Lane::Background,
            bytes: 4096,
        });
        assert_eq!(m.ledger().mig_slow_reads, 4096 / 128);
    }

    #[test]
    fn background_power() {
        let nj = background_energy_nj(30.0, GIB, 1_000_000_000);
        assert!((nj - 30e6).abs() < 1e-6, "1 GiB for 1 s = 30 mJ");
        let nj = background_energy_nj(30.0, 128 * MIB, 1_000_000);
        assert!((nj - 3750.0).abs() < 1e-9, "128 MiB for 1 ms = 3.75 uJ");
        assert_eq!(background_energy_nj(30.0, GIB, 0), 0.0);
    }

    #[test]
    fn energy_buckets_sum() {
        let cfg = SimConfig::default();
        let l = MeterLedger {
            fast_reads: 3,
            fast_writes: 5,
            slow_reads: 7,
            slow_writes: 11,
            mig_slow_writes: 32,
            ..MeterLedger::default()
        };
        let r = finalize(&cfg, &l, 12345, 4);
        let e = r.energy_nj;
        assert_eq!(
            e.total,
            e.fast_background + e.fast_read + e.fast_write + e.slow_read + e.slow_write
        );
        assert_eq!(r.slow_writes_total, 43);
    }

    #[test]
    fn published_metadata_costs() {
        let r = metadata_cost(&MetadataGeometry::default()).unwrap();
        assert_eq!(r.bits_per_page_entry, 24);
        assert_eq!(r.bytes_per_page_entry, 3);
        assert_eq!(r.entries, 524_288);
        assert_eq!(r.total_page_table_bytes, 3 * MIB / 2);
        assert_eq!(r.bits_per_cache_set, 39);
        assert_eq!(r.total_cache_meta_bits, 39 * 65_536);
        assert_eq!(r.total_cache_meta_bytes, 312 * 1024);
        assert_eq!(r.functional.tag_bits, 8);
        assert_eq!(r.functional.bits_per_cache_set, 43);
    }

    #[test]
    fn single_page_space() {
        let g = MetadataGeometry {
            space_bytes: 4096,
            ..MetadataGeometry::default()
        };
        let r = metadata_cost(&g).unwrap();
        assert_eq!(r.bits_per_page_entry, 5);
        assert_eq!(r.bytes_per_page_entry, 1);
    }

    #[test]
    fn rejects_odd_page() {
        let g = MetadataGeometry {
            page_bytes: 3000,
            ..MetadataGeometry::default()
        };
        assert!(metadata_cost(&g).is_err());
    }
}
