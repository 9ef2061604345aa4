//! Shared fixtures for the simulator benchmarks.

use hmmu::config::{KIB, MIB};
use hmmu::trace::generate;
use hmmu::{PolicyKind, SimConfig, TraceRecord, WorkloadKind, WorkloadSpec};

/// 16 MiB fast, 112 MiB slow, 2 MiB cache zone for the combined policies.
pub fn bench_config(policy: PolicyKind) -> SimConfig {
    let base = SimConfig {
        fast_capacity_bytes: 16 * MIB,
        slow_capacity_bytes: 112 * MIB,
        bloom_window: 512,
        ..SimConfig::default()
    };
    base.for_policy(policy, 2 * MIB)
}

/// A workload over 8192 pages starting just past fast memory.
pub fn bench_trace(kind: WorkloadKind, requests: u64) -> Vec<TraceRecord> {
    let mut spec = WorkloadSpec::new(kind, 8192 * 4 * KIB, requests);
    spec.base_addr = 16 * MIB;
    spec.seed = 42;
    let space = bench_config(PolicyKind::StatComb).host_space_bytes();
    generate(&spec, space).expect("bench workload fits")
}
