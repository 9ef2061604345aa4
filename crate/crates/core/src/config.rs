//! Simulator configuration.
//!
//! Defaults reproduce the evaluated platform: 128 MiB of DDR4 in front of
//! 1 GiB of 3D-XPoint, 4 KiB pages, 128-byte sub-page blocks and the DDR4 /
//! 3D-XPoint latency and energy table. The text format is one `key = value`
//! pair per line; byte sizes accept `KiB`/`MiB`/`GiB` suffixes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KIB: u64 = 1 << 10;
pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;

/// Associativity of the sub-page cache zone.
pub const CACHE_WAYS: usize = 4;

/// Width of the per-page access bitmap.
pub const BITMAP_BITS: u32 = 8;

/// Largest value the 4-bit cached-block counter can report.
pub const CACHED_COUNT_MAX: u8 = 15;

/// Placement and migration policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// Pages randomly placed once, never migrated.
    Static,
    /// Whole-page promotion on every slow-memory touch.
    PageMove,
    /// Sub-page block caching with a fixed promotion threshold.
    StatComb,
    /// Sub-page block caching with an adaptive promotion threshold.
    AdpComb,
    /// Every page served from fast memory.
    AllDram,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Static,
        PolicyKind::PageMove,
        PolicyKind::StatComb,
        PolicyKind::AdpComb,
        PolicyKind::AllDram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Static => "static",
            PolicyKind::PageMove => "pagemove",
            PolicyKind::StatComb => "statcomb",
            PolicyKind::AdpComb => "adpcomb",
            PolicyKind::AllDram => "alldram",
        }
    }

    /// Whether the policy reserves part of fast memory as a block cache.
    pub fn uses_cache_zone(self) -> bool {
        matches!(self, PolicyKind::StatComb | PolicyKind::AdpComb)
    }

    /// Whether the policy ever relocates whole pages.
    pub fn migrates_pages(self) -> bool {
        matches!(
            self,
            PolicyKind::PageMove | PolicyKind::StatComb | PolicyKind::AdpComb
        )
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "static" => Ok(PolicyKind::Static),
            "pagemove" | "page-move" => Ok(PolicyKind::PageMove),
            "statcomb" | "stat-comb" => Ok(PolicyKind::StatComb),
            "adpcomb" | "adp-comb" => Ok(PolicyKind::AdpComb),
            "alldram" | "all-dram" => Ok(PolicyKind::AllDram),
            other => Err(Error::Config(format!("unknown policy `{other}`"))),
        }
    }
}

/// How the recency filter remembers recently touched pages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecencyMode {
    /// Two alternating bloom filters (the hardware structure).
    #[default]
    Bloom,
    /// Exact queue of the last `bloom_window` accesses. Used for
    /// differential testing against the reference model.
    Exact,
}

impl FromStr for RecencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bloom" => Ok(RecencyMode::Bloom),
            "exact" => Ok(RecencyMode::Exact),
            other => Err(Error::Config(format!("unknown recency mode `{other}`"))),
        }
    }
}

/// Tuning of the adaptive threshold controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveParams {
    pub min_threshold: u32,
    pub max_threshold: u32,
    /// Promotions per evaluation window; 0 disables adaptation.
    pub window_pages: u32,
    pub alpha: f64,
    pub hi_water: f64,
    pub lo_water: f64,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        Self {
            min_threshold: 1,
            max_threshold: 8,
            window_pages: 64,
            alpha: 0.25,
            hi_water: 0.75,
            lo_water: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub fast_capacity_bytes: u64,
    pub slow_capacity_bytes: u64,
    pub page_size_bytes: u64,
    pub block_size_bytes: u64,
    /// Portion of fast memory reserved for the block cache.
    pub cache_zone_bytes: u64,
    pub fast_read_ns: u64,
    pub fast_write_ns: u64,
    pub slow_read_ns: u64,
    pub slow_write_ns: u64,
    pub fast_read_nj: f64,
    pub fast_write_nj: f64,
    pub slow_read_nj: f64,
    pub slow_write_nj: f64,
    pub fast_background_mw_per_gb: f64,
    pub dma_bandwidth_bytes_per_ns: f64,
    pub promotion_threshold: u32,
    pub bloom_window: u32,
    pub policy: PolicyKind,
    pub rng_seed: u64,
    pub recency: RecencyMode,
    pub adaptive: AdaptiveParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            fast_capacity_bytes: 128 * MIB,
            slow_capacity_bytes: GIB,
            page_size_bytes: 4 * KIB,
            block_size_bytes: 128,
            cache_zone_bytes: 0,
            fast_read_ns: 50,
            fast_write_ns: 50,
            slow_read_ns: 100,
            slow_write_ns: 300,
            fast_read_nj: 4.2,
            fast_write_nj: 3.5,
            slow_read_nj: 1.28,
            slow_write_nj: 8.7,
            fast_background_mw_per_gb: 30.0,
            dma_bandwidth_bytes_per_ns: 8.0,
            promotion_threshold: 4,
            bloom_window: 2048,
            policy: PolicyKind::PageMove,
            rng_seed: 0,
            recency: RecencyMode::Bloom,
            adaptive: AdaptiveParams::default(),
        }
    }
}

/// Default cache zone for the combined policies (16 of the 128 MiB).
pub const DEFAULT_CACHE_ZONE_BYTES: u64 = 16 * MIB;

impl SimConfig {
    /// The configuration a given policy runs under when several policies
    /// are compared on one base configuration.
    ///
    /// Combined policies get `cache_zone` bytes reserved; the others get
    /// none. AllDRAM is widened so fast memory spans the whole flat space
    /// and the slow tier is empty.
    pub fn for_policy(&self, policy: PolicyKind, cache_zone: u64) -> SimConfig {
        let mut cfg = self.clone();
        cfg.policy = policy;
        cfg.cache_zone_bytes = if policy.uses_cache_zone() {
            cache_zone
        } else {
            0
        };
        if policy == PolicyKind::AllDram {
            cfg.fast_capacity_bytes += cfg.slow_capacity_bytes;
            cfg.slow_capacity_bytes = 0;
        }
        cfg
    }

    pub fn blocks_per_page(&self) -> u64 {
        self.page_size_bytes / self.block_size_bytes
    }

    /// Fast pages available to the page-granular zone.
    pub fn fast_pages(&self) -> u64 {
        (self.fast_capacity_bytes - self.cache_zone_bytes) / self.page_size_bytes
    }

    pub fn slow_pages(&self) -> u64 {
        self.slow_capacity_bytes / self.page_size_bytes
    }

    pub fn total_pages(&self) -> u64 {
        self.fast_pages() + self.slow_pages()
    }

    /// Size of the host physical address space the HMMU exposes.
    pub fn host_space_bytes(&self) -> u64 {
        self.total_pages() * self.page_size_bytes
    }

    pub fn cache_sets(&self) -> u64 {
        self.cache_zone_bytes / (self.block_size_bytes * CACHE_WAYS as u64)
    }

    /// Nanoseconds for the DMA engine to exchange one block-sized chunk in
    /// both directions.
    pub fn dma_chunk_ns(&self) -> u64 {
        let ns = (2 * self.block_size_bytes) as f64 / self.dma_bandwidth_bytes_per_ns;
        (ns.ceil() as u64).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let page = self.page_size_bytes;
        let block = self.block_size_bytes;
        if !page.is_power_of_two() {
            return bad(format!("page size {page} is not a power of two"));
        }
        if !block.is_power_of_two() || block > page {
            return bad(format!(
                "block size {block} must be a power of two no larger than the page"
            ));
        }
        if page / block > 256 {
            return bad(format!("{} blocks per page exceeds 256", page / block));
        }
        if !self.fast_capacity_bytes.is_multiple_of(page)
            || !self.slow_capacity_bytes.is_multiple_of(page)
        {
            return bad("tier capacities must be whole pages".into());
        }
        if self.cache_zone_bytes >= self.fast_capacity_bytes && self.cache_zone_bytes > 0 {
            return bad("cache zone must be smaller than fast memory".into());
        }
        if self.policy.uses_cache_zone() {
            let set_bytes = block * CACHE_WAYS as u64;
            if self.cache_zone_bytes == 0 {
                return bad(format!("{} needs a non-empty cache zone", self.policy));
            }
            if !self.cache_zone_bytes.is_multiple_of(set_bytes)
                || !self.cache_sets().is_power_of_two()
            {
                return bad(format!(
                    "cache zone {} B must hold a power-of-two number of {set_bytes}-byte sets",
                    self.cache_zone_bytes
                ));
            }
            if !self.cache_zone_bytes.is_multiple_of(page) {
                return bad("cache zone must be whole pages".into());
            }
        } else if self.cache_zone_bytes != 0 {
            return bad(format!("{} does not use a cache zone", self.policy));
        }
        if self.fast_pages() == 0 {
            return bad("fast memory holds no pages".into());
        }
        if self.total_pages() > u32::MAX as u64 {
            return bad("more than 2^32 pages".into());
        }
        let bpp = self.blocks_per_page();
        if self.promotion_threshold == 0 || self.promotion_threshold as u64 > bpp {
            return bad(format!(
                "promotion threshold {} outside [1, {bpp}]",
                self.promotion_threshold
            ));
        }
        if self.bloom_window == 0 {
            return bad("bloom window must be positive".into());
        }
        if self.policy.migrates_pages() && self.fast_pages() <= self.bloom_window as u64 {
            return bad(format!(
                "{} fast pages cannot exceed a recency window of {} pages",
                self.fast_pages(),
                self.bloom_window
            ));
        }
        if !(self.dma_bandwidth_bytes_per_ns.is_finite() && self.dma_bandwidth_bytes_per_ns > 0.0) {
            return bad("DMA bandwidth must be positive".into());
        }
        let energies = [
            self.fast_read_nj,
            self.fast_write_nj,
            self.slow_read_nj,
            self.slow_write_nj,
            self.fast_background_mw_per_gb,
        ];
        if energies.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return bad("energy parameters must be finite and non-negative".into());
        }
        if self.policy == PolicyKind::AdpComb {
            let a = &self.adaptive;
            if a.min_threshold == 0
                || a.min_threshold > a.max_threshold
                || a.max_threshold as u64 > bpp
            {
                return bad(format!(
                    "adaptive bounds [{}, {}] invalid for {bpp} blocks per page",
                    a.min_threshold, a.max_threshold
                ));
            }
            if !(a.min_threshold..=a.max_threshold).contains(&self.promotion_threshold) {
                return bad("starting threshold outside adaptive bounds".into());
            }
            if !(a.alpha > 0.0 && a.alpha <= 1.0) {
                return bad("adaptive alpha must lie in (0, 1]".into());
            }
            if !(0.0 <= a.lo_water && a.lo_water <= a.hi_water && a.hi_water <= 1.0) {
                return bad("adaptive water marks must satisfy 0 <= lo <= hi <= 1".into());
            }
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<u64> {
            v.parse::<u64>()
                .map_err(|_| Error::Config(format!("`{key}` expects an integer, got `{v}`")))
        };
        let float = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{v}`")))
        };
        let value = value.trim();
        match key.trim() {
            "fast_capacity_bytes" | "fast_capacity" => {
                self.fast_capacity_bytes = parse_size(value)?
            }
            "slow_capacity_bytes" | "slow_capacity" => {
                self.slow_capacity_bytes = parse_size(value)?
            }
            "page_size_bytes" | "page_size" => self.page_size_bytes = parse_size(value)?,
            "block_size_bytes" | "block_size" => self.block_size_bytes = parse_size(value)?,
            "cache_zone_bytes" | "cache_zone" => self.cache_zone_bytes = parse_size(value)?,
            "fast_read_ns" => self.fast_read_ns = num(value)?,
            "fast_write_ns" => self.fast_write_ns = num(value)?,
            "slow_read_ns" => self.slow_read_ns = num(value)?,
            "slow_write_ns" => self.slow_write_ns = num(value)?,
            "fast_read_nj" => self.fast_read_nj = float(value)?,
            "fast_write_nj" => self.fast_write_nj = float(value)?,
            "slow_read_nj" => self.slow_read_nj = float(value)?,
            "slow_write_nj" => self.slow_write_nj = float(value)?,
            "fast_background_mw_per_gb" => self.fast_background_mw_per_gb = float(value)?,
            "dma_bandwidth_bytes_per_ns" | "dma_bandwidth" => {
                self.dma_bandwidth_bytes_per_ns = float(value)?
            }
            "promotion_threshold" | "threshold" => self.promotion_threshold = num(value)? as u32,
            "bloom_window" => self.bloom_window = num(value)? as u32,
            "policy" => self.policy = value.parse()?,
            "rng_seed" | "seed" => self.rng_seed = num(value)?,
            "recency" => self.recency = value.parse()?,
            "adaptive_min" => self.adaptive.min_threshold = num(value)? as u32,
            "adaptive_max" => self.adaptive.max_threshold = num(value)? as u32,
            "adaptive_window" => self.adaptive.window_pages = num(value)? as u32,
            "adaptive_alpha" => self.adaptive.alpha = float(value)?,
            "adaptive_hi" => self.adaptive.hi_water = float(value)?,
            "adaptive_lo" => self.adaptive.lo_water = float(value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` text on top of the defaults.
    pub fn from_text(text: &str) -> Result<SimConfig> {
        let mut cfg = SimConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigSyntax {
                line: idx + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key, value).map_err(|e| Error::ConfigSyntax {
                line: idx + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<SimConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_text(&text)
    }
}

/// Parses a byte count such as `4096`, `4KiB`, `128 MiB` or `1.5GiB`.
pub fn parse_size(text: &str) -> Result<u64> {
    let t = text.trim();
    let split = t
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(t.len());
    let (number, unit) = t.split_at(split);
    let scale = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kib" | "kb" => KIB,
        "m" | "mib" | "mb" => MIB,
        "g" | "gib" | "gb" => GIB,
        "t" | "tib" | "tb" => 1 << 40,
        _ => return Err(Error::SizeLiteral(text.to_owned())),
    };
    if let Ok(n) = number.parse::<u64>() {
        return n
            .checked_mul(scale)
            .ok_or_else(|| Error::SizeLiteral(text.to_owned()));
    }
    let f: f64 = number
        .parse()
        .map_err(|_| Error::SizeLiteral(text.to_owned()))?;
    let bytes = f * scale as f64;
    if !bytes.is_finite() || bytes < 0.0 || bytes.fract() != 0.0 {
        return Err(Error::SizeLiteral(text.to_owned()));
    }
    Ok(bytes as u64)
}

/// Formats a byte count with the largest binary unit that keeps it short,
/// e.g. `1.5MiB` or `312KiB`.
pub fn format_size(bytes: u64) -> String {
    const UNITS: [(&str, u64); 4] = [("GiB", GIB), ("MiB", MIB), ("KiB", KIB), ("B", 1)];
    for (name, scale) in UNITS {
        if bytes >= scale && scale > 1 {
            let v = bytes as f64 / scale as f64;
            let s = format!("{v:.3}");
            let s = s.trim_end_matches('0').trim_end_matches('.');
            return format!("{s}{name}");
        }
    }
    format!("{bytes}B")
}
