//! Memory traces: the text format, block splitting, and synthetic workloads.
//!
//! One request per line: `R|W <hex-addr> [<size>]`, size in decimal bytes
//! (default 64). Lines starting with `#` and blank lines are ignored. Files
//! starting with the gzip magic are decompressed transparently.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::AccessKind;

pub const DEFAULT_REQUEST_BYTES: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    pub kind: AccessKind,
    pub host_addr: u64,
    pub size_bytes: u32,
}

impl TraceRecord {
    pub fn read(host_addr: u64, size_bytes: u32) -> Self {
        Self {
            kind: AccessKind::Read,
            host_addr,
            size_bytes,
        }
    }

    pub fn write(host_addr: u64, size_bytes: u32) -> Self {
        Self {
            kind: AccessKind::Write,
            host_addr,
            size_bytes,
        }
    }
}

/// Splits a request at block boundaries, preserving order and total size.
pub fn split_at_blocks(rec: TraceRecord, block_bytes: u64) -> impl Iterator<Item = TraceRecord> {
    let end = rec.host_addr + rec.size_bytes as u64;
    let mut addr = rec.host_addr;
    std::iter::from_fn(move || {
        if addr >= end {
            return None;
        }
        let boundary = (addr / block_bytes + 1) * block_bytes;
        let stop = boundary.min(end);
        let piece = TraceRecord {
            kind: rec.kind,
            host_addr: addr,
            size_bytes: (stop - addr) as u32,
        };
        addr = stop;
        Some(piece)
    })
}

fn parse_line(line: &str, lineno: usize) -> Result<Option<TraceRecord>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let err = |msg: String| Error::TraceSyntax { line: lineno, msg };
    let mut fields = line.split_whitespace();
    let kind = match fields.next() {
        Some("R") | Some("r") => AccessKind::Read,
        Some("W") | Some("w") => AccessKind::Write,
        Some(other) => return Err(err(format!("unknown access kind `{other}`"))),
        None => unreachable!("non-empty line"),
    };
    let addr_text = fields.next().ok_or_else(|| err("missing address".into()))?;
    let hex = addr_text
        .strip_prefix("0x")
        .or_else(|| addr_text.strip_prefix("0X"))
        .unwrap_or(addr_text);
    let host_addr =
        u64::from_str_radix(hex, 16).map_err(|_| err(format!("bad hex address `{addr_text}`")))?;
    let size_bytes = match fields.next() {
        None => DEFAULT_REQUEST_BYTES,
        Some(s) => s
            .parse::<u32>()
            .map_err(|_| err(format!("bad size `{s}`")))?,
    };
    if size_bytes == 0 {
        return Err(err("size must be positive".into()));
    }
    if let Some(extra) = fields.next() {
        return Err(err(format!("unexpected trailing field `{extra}`")));
    }
    if host_addr.checked_add(size_bytes as u64).is_none() {
        return Err(err("request wraps the address space".into()));
    }
    Ok(Some(TraceRecord {
        kind,
        host_addr,
        size_bytes,
    }))
}

/// Parses a text trace, splitting requests that straddle block boundaries.
pub fn parse_trace<R: BufRead>(input: R, block_bytes: u64) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        if let Some(rec) = parse_line(&line?, idx + 1)? {
            out.extend(split_at_blocks(rec, block_bytes));
        }
    }
    Ok(out)
}

/// Reads a trace file, plain or gzip-compressed.
pub fn read_trace_file(path: &Path, block_bytes: u64) -> Result<Vec<TraceRecord>> {
    let io_err = |source| Error::Io {
        path: path.to_owned(),
        source,
    };
    let mut file = BufReader::new(File::open(path).map_err(io_err)?);
    let gz = file.fill_buf().map_err(io_err)?.starts_with(&[0x1f, 0x8b]);
    let reader: Box<dyn Read> = if gz {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    parse_trace(BufReader::new(reader), block_bytes)
}

pub fn write_trace<W: Write>(mut out: W, records: &[TraceRecord]) -> io::Result<()> {
    for r in records {
        let k = match r.kind {
            AccessKind::Read => 'R',
            AccessKind::Write => 'W',
        };
        writeln!(out, "{k} {:#x} {}", r.host_addr, r.size_bytes)?;
    }
    Ok(())
}

/// Access-pattern families for synthetic traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum WorkloadKind {
    /// Consecutive requests walking the footprint.
    Sequential,
    /// Fixed byte stride, wrapping at the footprint.
    Strided { stride: u64 },
    /// Zipf-distributed popularity over request-sized items; `s = 0` is
    /// uniform.
    Zipfian { s: f64 },
    /// One fixed block per page, pages visited in a fresh random order on
    /// every pass.
    SparseWide,
    /// Sequential stores.
    StreamingStore,
}

impl WorkloadKind {
    pub fn name(&self) -> &'static str {
        match self {
            WorkloadKind::Sequential => "sequential",
            WorkloadKind::Strided { .. } => "strided",
            WorkloadKind::Zipfian { .. } => "zipfian",
            WorkloadKind::SparseWide => "sparse-wide",
            WorkloadKind::StreamingStore => "streaming-store",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub base_addr: u64,
    pub footprint_bytes: u64,
    pub request_count: u64,
    pub request_bytes: u32,
    /// Fraction of requests that are writes (ignored by streaming-store).
    pub write_fraction: f64,
    pub page_bytes: u64,
    pub block_bytes: u64,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, footprint_bytes: u64, request_count: u64) -> Self {
        Self {
            kind,
            base_addr: 0,
            footprint_bytes,
            request_count,
            request_bytes: DEFAULT_REQUEST_BYTES,
            write_fraction: 0.3,
            page_bytes: 4096,
            block_bytes: 128,
            seed: 0,
        }
    }
}

/// Generates a trace for `spec` inside an address space of
/// `address_space_bytes`.
pub fn generate(spec: &WorkloadSpec, address_space_bytes: u64) -> Result<Vec<TraceRecord>> {
    let bad = |m: String| Err(Error::Workload(m));
    let req = spec.request_bytes as u64;
    if req == 0 || !req.is_power_of_two() || req > spec.block_bytes {
        return bad(format!(
            "request size {req} must be a power of two no larger than a {}-byte block",
            spec.block_bytes
        ));
    }
    if !spec.page_bytes.is_power_of_two() || !spec.page_bytes.is_multiple_of(spec.block_bytes) {
        return bad("page size must be a power-of-two multiple of the block size".into());
    }
    if spec.footprint_bytes < spec.page_bytes
        || !spec.footprint_bytes.is_multiple_of(spec.page_bytes)
    {
        return bad(format!(
            "footprint {} must be a positive whole number of pages",
            spec.footprint_bytes
        ));
    }
    if !spec.base_addr.is_multiple_of(spec.page_bytes) {
        return bad("base address must be page aligned".into());
    }
    match spec.base_addr.checked_add(spec.footprint_bytes) {
        Some(end) if end <= address_space_bytes => {}
        _ => {
            return bad(format!(
                "footprint {:#x}..+{:#x} exceeds the {:#x}-byte address space",
                spec.base_addr, spec.footprint_bytes, address_space_bytes
            ))
        }
    }
    if !(0.0..=1.0).contains(&spec.write_fraction) {
        return bad("write fraction must lie in [0, 1]".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let items = spec.footprint_bytes / req;
    let n = spec.request_count;
    let mut offsets: Vec<u64> = Vec::with_capacity(n as usize);
    match spec.kind {
        WorkloadKind::Sequential | WorkloadKind::StreamingStore => {
            offsets.extend((0..n).map(|i| (i % items) * req));
        }
        WorkloadKind::Strided { stride } => {
            if stride == 0 {
                return bad("stride must be positive".into());
            }
            offsets.extend((0..n).map(|i| {
                let off = (i as u128 * stride as u128 % spec.footprint_bytes as u128) as u64;
                off / req * req
            }));
        }
        WorkloadKind::Zipfian { s } => {
            let zipf = Zipf::new(items as f64, s)
                .map_err(|e| Error::Workload(format!("zipf(s = {s}): {e}")))?;
            let mut rank_to_item: Vec<u64> = (0..items).collect();
            rank_to_item.shuffle(&mut rng);
            for _ in 0..n {
                let rank = zipf.sample(&mut rng) as u64;
                offsets.push(rank_to_item[(rank.clamp(1, items) - 1) as usize] * req);
            }
        }
        WorkloadKind::SparseWide => {
            let pages = spec.footprint_bytes / spec.page_bytes;
            let blocks = spec.page_bytes / spec.block_bytes;
            let block_of: Vec<u64> = (0..pages).map(|_| rng.random_range(0..blocks)).collect();
            let mut order: Vec<u64> = (0..pages).collect();
            let mut i = 0;
            while (offsets.len() as u64) < n {
                if i % pages == 0 {
                    order.shuffle(&mut rng);
                }
                let p = order[(i % pages) as usize];
                offsets.push(p * spec.page_bytes + block_of[p as usize] * spec.block_bytes);
                i += 1;
            }
        }
    }
    let always_write = matches!(spec.kind, WorkloadKind::StreamingStore);
    Ok(offsets
        .into_iter()
        .map(|off| {
            let write = always_write || rng.random_bool(spec.write_fraction);
            TraceRecord {
                kind: if write {
                    AccessKind::Write
                } else {
                    AccessKind::Read
                },
                host_addr: spec.base_addr + off,
                size_bytes: spec.request_bytes,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn parse(text: &str) -> Result<Vec<TraceRecord>> {
        parse_trace(text.as_bytes(), 128)
    }

    #[test]
    fn default_size_read() {
        assert_eq!(
            parse("R 0x1000").unwrap(),
            vec![TraceRecord::read(0x1000, 64)]
        );
    }

    #[test]
    fn boundary_split() {
        assert_eq!(
            parse("W 0x10f8 16").unwrap(),
            vec![TraceRecord::write(0x10f8, 8), TraceRecord::write(0x1100, 8)]
        );
    }

    #[test]
    fn bad_kind_reports_line() {
        let err = parse("# header\n\nR 0x0\nX 0x0\n").unwrap_err();
        assert!(matches!(err, Error::TraceSyntax { line: 4, .. }), "{err}");
    }

    #[test]
    fn zero_size_rejected() {
        let err = parse("R 0x40 0").unwrap_err();
        assert!(matches!(err, Error::TraceSyntax { line: 1, .. }));
    }

    #[test]
    fn bare_hex_and_comments() {
        let recs = parse("# c\nw 1f80 128\n\nR 0X20 4\n").unwrap();
        assert_eq!(
            recs,
            vec![TraceRecord::write(0x1f80, 128), TraceRecord::read(0x20, 4)]
        );
    }

    #[test]
    fn gzip_is_transparent() {
        use flate2::write::GzEncoder;
        let dir = std::env::temp_dir().join(format!("hmmu-gz-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.trc.gz");
        let mut enc = GzEncoder::new(File::create(&path).unwrap(), flate2::Compression::fast());
        enc.write_all(b"R 0x1000\nW 0x2000 8\n").unwrap();
        enc.finish().unwrap();
        let recs = read_trace_file(&path, 128).unwrap();
        assert_eq!(
            recs,
            vec![TraceRecord::read(0x1000, 64), TraceRecord::write(0x2000, 8)]
        );
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn sequential_two_pages() {
        let spec = WorkloadSpec {
            write_fraction: 0.0,
            ..WorkloadSpec::new(WorkloadKind::Sequential, 8192, 128)
        };
        let t = generate(&spec, 1 << 20).unwrap();
        assert_eq!(t.len(), 128);
        for (i, r) in t.iter().enumerate() {
            assert_eq!(r.host_addr, i as u64 * 64);
        }
        let blocks: HashSet<u64> = t.iter().map(|r| r.host_addr / 128).collect();
        assert_eq!(blocks.len(), 64, "every block of both pages");
    }

    #[test]
    fn sparse_wide_touches_every_page_once_per_pass() {
        let pages = 300;
        let spec = WorkloadSpec::new(WorkloadKind::SparseWide, pages * 4096, pages);
        let t = generate(&spec, 1 << 30).unwrap();
        let distinct: HashSet<u64> = t.iter().map(|r| r.host_addr / 4096).collect();
        assert_eq!(distinct.len() as u64, pages);
        // Second pass reuses the same block of each page.
        let spec2 = WorkloadSpec {
            request_count: 2 * pages,
            ..spec
        };
        let t2 = generate(&spec2, 1 << 30).unwrap();
        let blocks: HashSet<u64> = t2.iter().map(|r| r.host_addr / 128).collect();
        assert_eq!(blocks.len() as u64, pages);
    }

    #[test]
    fn zipf_zero_is_uniform() {
        let items = 256u64;
        let n = 100_000u64;
        let spec = WorkloadSpec {
            seed: 5,
            ..WorkloadSpec::new(WorkloadKind::Zipfian { s: 0.0 }, items * 64, n)
        };
        let t = generate(&spec, 1 << 30).unwrap();
        let mut counts = vec![0u64; items as usize];
        for r in &t {
            counts[(r.host_addr / 64) as usize] += 1;
        }
        let expect = n as f64 / items as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expect).powi(2) / expect)
            .sum();
        // 255 degrees of freedom: mean 255, sd ~22.6. Five sigma bound.
        assert!(chi2 < 255.0 + 5.0 * 22.6, "chi-square {chi2}");
    }

    #[test]
    fn skewed_zipf_concentrates() {
        let spec = WorkloadSpec::new(WorkloadKind::Zipfian { s: 1.2 }, 1 << 20, 20_000);
        let t = generate(&spec, 1 << 30).unwrap();
        let mut counts = std::collections::HashMap::new();
        for r in &t {
            *counts.entry(r.host_addr).or_insert(0u64) += 1;
        }
        let max = *counts.values().max().unwrap();
        assert!(max > 2000, "hottest item should dominate, got {max}");
    }

    #[test]
    fn footprint_beyond_space_rejected() {
        let spec = WorkloadSpec::new(WorkloadKind::Sequential, 1 << 21, 10);
        assert!(matches!(generate(&spec, 1 << 20), Err(Error::Workload(_))));
    }

    #[test]
    fn generation_is_seeded() {
        let spec = WorkloadSpec {
            seed: 42,
            ..WorkloadSpec::new(WorkloadKind::Zipfian { s: 0.9 }, 1 << 20, 1000)
        };
        assert_eq!(
            generate(&spec, 1 << 30).unwrap(),
            generate(&spec, 1 << 30).unwrap()
        );
    }

    fn any_kind() -> impl Strategy<Value = WorkloadKind> {
        prop_oneof![
            Just(WorkloadKind::Sequential),
            (1u64..20_000).prop_map(|stride| WorkloadKind::Strided { stride }),
            (0.0f64..2.0).prop_map(|s| WorkloadKind::Zipfian { s }),
            Just(WorkloadKind::SparseWide),
            Just(WorkloadKind::StreamingStore),
        ]
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(kind in any_kind(), seed in any::<u64>(), pages in 1u64..16) {
            let spec = WorkloadSpec { seed, ..WorkloadSpec::new(kind, pages * 4096, 200) };
            let t = generate(&spec, 1 << 30).unwrap();
            let mut text = Vec::new();
            write_trace(&mut text, &t).unwrap();
            prop_assert_eq!(parse_trace(text.as_slice(), 128).unwrap(), t);
        }

        #[test]
        fn splitting_preserves_bytes_and_order(addr in 0u64..1 << 20, size in 1u32..1000) {
            let rec = TraceRecord::write(addr, size);
            let parts: Vec<_> = split_at_blocks(rec, 128).collect();
            prop_assert_eq!(parts.iter().map(|p| p.size_bytes as u64).sum::<u64>(), size as u64);
            let mut next = addr;
            for p in &parts {
                prop_assert_eq!(p.host_addr, next);
                prop_assert_eq!(p.host_addr / 128, (p.host_addr + p.size_bytes as u64 - 1) / 128);
                next += p.size_bytes as u64;
            }
        }
    }
}
