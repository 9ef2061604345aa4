use super::*;
use crate::config::{RecencyMode, KIB};
use crate::migration::BlockCopyKind;

const PAGE: u64 = 4096;

/// 20 fast pages (one of them given to the cache zone for the combined
/// policies), 64 slow pages, 4 KiB pages, 128 B blocks.
fn small(policy: PolicyKind) -> SimConfig {
    let base = SimConfig {
        fast_capacity_bytes: 20 * PAGE,
        slow_capacity_bytes: 64 * PAGE,
        bloom_window: 4,
        recency: RecencyMode::Exact,
        ..SimConfig::default()
    };
    base.for_policy(policy, 4 * KIB)
}

fn sim(policy: PolicyKind) -> Simulator {
    Simulator::new(small(policy)).unwrap()
}

fn read(sim: &mut Simulator, seq: u64, addr: u64) -> ServiceOutcome {
    let out = sim
        .dispatch(MemoryRequest {
            kind: AccessKind::Read,
            host_addr: addr,
            size_bytes: 8,
            seq,
        })
        .unwrap();
    sim.check_invariants().unwrap();
    out
}

fn write(sim: &mut Simulator, seq: u64, addr: u64) -> ServiceOutcome {
    let out = sim
        .dispatch(MemoryRequest {
            kind: AccessKind::Write,
            host_addr: addr,
            size_bytes: 8,
            seq,
        })
        .unwrap();
    sim.check_invariants().unwrap();
    out
}

fn expected_payload(seq: u64, addr: u64) -> Vec<u8> {
    (0..8).map(|i| payload_byte(seq, addr + i)).collect()
}

fn slow_page(n: u64) -> u64 {
    (40 + n) * PAGE
}

#[test]
fn fast_hit_costs_one_fast_read() {
    let mut s = sim(PolicyKind::PageMove);
    let out = read(&mut s, 0, 0x40);
    assert_eq!((out.device, out.latency_ns), (Tier::Fast, 50));
    assert!(out.migrations.is_empty());
    assert_eq!(out.data, Some(vec![0; 8]));
}

#[test]
fn slow_touch_under_comb_copies_the_block() {
    let mut s = sim(PolicyKind::StatComb);
    let addr = slow_page(0) + 0x200;
    let out = read(&mut s, 0, addr);
    assert_eq!((out.device, out.latency_ns), (Tier::Slow, 100));
    match out.migrations.as_slice() {
        [MigrationAction::BlockCopy(job)] => {
            assert_eq!(job.kind, BlockCopyKind::Fill);
            assert_eq!(job.block, addr / 128);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(s.page_table().entry(40).cached_block_count(), 1);
    let again = read(&mut s, 1, addr + 8);
    assert!(again.cache_hit);
    assert_eq!((again.device, again.latency_ns), (Tier::Fast, 50));
}

#[test]
fn page_move_swaps_in_the_background() {
    let mut s = sim(PolicyKind::PageMove);
    let addr = slow_page(0);
    let out = read(&mut s, 0, addr);
    assert_eq!((out.device, out.latency_ns), (Tier::Slow, 100));
    assert!(matches!(
        out.migrations.as_slice(),
        [MigrationAction::SwapStarted { host_page: 40, .. }]
    ));
    assert!(!s.page_table().is_fast(40));
    assert_eq!(s.dma().busy_until(), Some(100 + 1024));
    let mut seq = 1;
    while s.now() < 100 + 1024 {
        read(&mut s, seq, 0x1000 * (seq % 3));
        seq += 1;
    }
    let out = read(&mut s, seq, addr);
    assert_eq!(out.device, Tier::Fast);
    assert!(s.page_table().is_fast(40));
}

#[test]
fn empty_trace_reports_zeros() {
    let mut s = sim(PolicyKind::StatComb);
    let r = s.run(&[]).unwrap();
    assert_eq!(r.requests, 0);
    assert_eq!(r.total_foreground_ns, 0);
    assert_eq!(r.energy_nj.total, 0.0);
}

#[test]
fn single_access_under_alldram() {
    let mut s = sim(PolicyKind::AllDram);
    let r = s.run(&[TraceRecord::read(slow_page(0), 64)]).unwrap();
    assert_eq!((r.fast_reads, r.slow_reads), (1, 0));
    assert_eq!(r.total_foreground_ns, 50);
    let bg = 30.0 * (84.0 * PAGE as f64 / (1u64 << 30) as f64) * 50.0 * 1e-3;
    assert!((r.energy_nj.total - (4.2 + bg)).abs() < 1e-12);
}

#[test]
fn raw_alldram_config_rejects_slow_pages() {
    let mut cfg = small(PolicyKind::PageMove);
    cfg.policy = PolicyKind::AllDram;
    let mut s = Simulator::new(cfg).unwrap();
    let err = s.run(&[TraceRecord::read(slow_page(0), 8)]).unwrap_err();
    assert!(matches!(err, Error::AllDramInfeasible { seq: 0, page: 40 }));
}

#[test]
fn out_of_range_and_crossing_requests_fail() {
    let mut s = sim(PolicyKind::PageMove);
    let space = s.config().host_space_bytes();
    let err = s.run(&[TraceRecord::read(space, 8)]).unwrap_err();
    assert!(matches!(err, Error::AddressOutOfRange { seq: 0, .. }));
    let mut s = sim(PolicyKind::PageMove);
    let err = s
        .run(&[TraceRecord::read(0, 8), TraceRecord::read(124, 8)])
        .unwrap_err();
    assert!(matches!(err, Error::CrossesBlock { seq: 1, .. }));
}

#[test]
fn runs_are_deterministic() {
    let trace: Vec<TraceRecord> = (0..400u64)
        .map(|i| {
            let addr = (crate::types::mix64(i) % (80 * PAGE)) & !7;
            if i % 3 == 0 {
                TraceRecord::write(addr, 8)
            } else {
                TraceRecord::read(addr, 8)
            }
        })
        .collect();
    for policy in PolicyKind::ALL {
        let once = |t: &[TraceRecord]| {
            let mut s = Simulator::new(small(policy)).unwrap();
            let r = s.run(t).unwrap();
            (r, s.content_digest(t.iter().map(|r| r.host_addr / 128)))
        };
        assert_eq!(once(&trace), once(&trace), "{policy}");
    }
}

#[test]
fn fourth_cached_block_triggers_promotion() {
    let mut s = sim(PolicyKind::StatComb);
    let page = slow_page(0);
    for b in 0..4u64 {
        let out = read(&mut s, b, page + b * 128);
        assert!(matches!(
            out.migrations.as_slice(),
            [MigrationAction::BlockCopy(_)]
        ));
    }
    assert_eq!(s.page_table().entry(40).cached_block_count(), 4);
    let out = read(&mut s, 4, page + 4 * 128);
    assert!(matches!(
        out.migrations.as_slice(),
        [MigrationAction::SwapStarted { host_page: 40, .. }]
    ));
    assert_eq!(s.meter().ledger().page_swaps, 1);
}

#[test]
fn write_into_chunk_in_flight_stalls() {
    let mut s = sim(PolicyKind::PageMove);
    let page = slow_page(0);
    read(&mut s, 0, page);
    // Swap starts at 100; a fast read takes the clock to 150, when chunk 0
    // is done and chunk 1 (bytes 128..256) is being copied until 164.
    read(&mut s, 1, 0);
    assert_eq!(s.now(), 150);
    let out = write(&mut s, 2, page + 136);
    assert_eq!(out.stall_ns, 14);
    assert_eq!((out.device, out.latency_ns), (Tier::Fast, 64));
    assert_eq!(s.meter().ledger().write_stalls, 1);
    // A write further ahead goes to the old copy without waiting.
    let out = write(&mut s, 3, page + 2048);
    assert_eq!((out.device, out.stall_ns), (Tier::Slow, 0));
    s.drain();
    assert!(s.page_table().is_fast(40));
    assert_eq!(s.peek(page + 136, 8), expected_payload(2, page + 136));
    assert_eq!(s.peek(page + 2048, 8), expected_payload(3, page + 2048));
}

#[test]
fn dirty_block_of_promoted_page_is_merged() {
    let mut s = sim(PolicyKind::StatComb);
    let page = slow_page(0);
    write(&mut s, 0, page);
    let hit = write(&mut s, 1, page + 8);
    assert!(hit.cache_hit);
    for b in 1..4u64 {
        read(&mut s, 10 + b, page + b * 128);
    }
    let out = read(&mut s, 20, page + 4 * 128);
    assert!(matches!(
        out.migrations.as_slice(),
        [MigrationAction::SwapStarted { .. }]
    ));
    let mut seq = 100;
    while s.dma().active().is_some() || s.now() < 2000 {
        read(&mut s, seq, 0);
        seq += 1;
    }
    assert!(s.page_table().is_fast(40));
    // Clean copies are dropped, the dirty one is merged into the page.
    let out = read(&mut s, seq, page + 8);
    assert!(!out.cache_hit);
    assert_eq!(out.device, Tier::Fast);
    assert_eq!(out.data, Some(expected_payload(1, page + 8)));
    assert_eq!(s.peek(page, 8), expected_payload(0, page));
    let ledger = s.meter().ledger();
    assert_eq!(ledger.recycles, 1);
    assert!(matches!(
        out.migrations.as_slice(),
        [MigrationAction::BlockCopy(BlockCopyJob {
            kind: BlockCopyKind::RecycleMerge,
            ..
        })]
    ));
}

#[test]
fn eviction_writes_back_only_dirty_blocks() {
    let mut s = sim(PolicyKind::StatComb);
    // Block 0 of every page falls in set 0 (32 blocks per page, 8 sets).
    write(&mut s, 0, slow_page(0));
    write(&mut s, 1, slow_page(0) + 16);
    for n in 1..4 {
        read(&mut s, 1 + n, slow_page(n));
    }
    assert_eq!(s.cache().unwrap().valid_blocks(), 4);
    let out = read(&mut s, 10, slow_page(4));
    assert_eq!(out.migrations.len(), 2);
    assert_eq!(s.meter().ledger().writebacks, 1);
    assert_eq!(s.page_table().cached_blocks_exact(40), 0);
    assert!(!s.cache().unwrap().contains(slow_page(0) / 128));
    assert_eq!(
        s.peek(slow_page(0) + 16, 8),
        expected_payload(1, slow_page(0) + 16)
    );
    // Clean victim next: no writeback.
    read(&mut s, 11, slow_page(5));
    assert_eq!(s.meter().ledger().writebacks, 1);
    assert_eq!(s.meter().ledger().block_fills, 6);
}

#[test]
fn static_policy_never_migrates() {
    let mut s = sim(PolicyKind::Static);
    for i in 0..200u64 {
        let out = read(&mut s, i, (i * 4096 + 64) % (84 * PAGE));
        assert!(out.migrations.is_empty());
    }
    let r = s.finish();
    assert_eq!(r.migrated_bytes, 0);
    assert_eq!(r.page_swaps, 0);
}
