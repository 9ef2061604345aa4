//! Expands command-line choices into a run matrix and executes it.

use std::path::PathBuf;

use anyhow::{Context, Result};
use hmmu::trace::{generate, read_trace_file};
use hmmu::{
    parse_size, Error, PolicyKind, SimConfig, Simulator, TraceRecord, WorkloadKind, WorkloadSpec,
};
use rayon::prelude::*;

use crate::output::{Document, RunRecord};

pub enum TraceSource {
    File(PathBuf),
    Generated {
        kind: WorkloadKind,
        pages: u64,
        requests: u64,
        base: Option<u64>,
        write_fraction: f64,
        request_bytes: u32,
        seed: Option<u64>,
    },
}

impl TraceSource {
    fn describe(&self) -> String {
        match self {
            TraceSource::File(p) => p.display().to_string(),
            TraceSource::Generated {
                kind,
                pages,
                requests,
                ..
            } => format!("{} ({pages} pages, {requests} requests)", kind.name()),
        }
    }
}

pub struct Sweep {
    pub param: String,
    pub values: Vec<String>,
}

pub struct RunPlan {
    pub base: SimConfig,
    /// Cache zone given to the combined policies.
    pub cache_zone: u64,
    pub source: TraceSource,
    pub policies: Vec<PolicyKind>,
    pub sweep: Option<Sweep>,
}

struct Point {
    value: Option<String>,
    cfg: SimConfig,
    cache_zone: u64,
}

impl RunPlan {
    fn points(&self) -> Result<Vec<Point>> {
        let Some(sweep) = &self.sweep else {
            return Ok(vec![Point {
                value: None,
                cfg: self.base.clone(),
                cache_zone: self.cache_zone,
            }]);
        };
        sweep
            .values
            .iter()
            .map(|v| {
                let mut cfg = self.base.clone();
                let mut cache_zone = self.cache_zone;
                match sweep.param.as_str() {
                    "cache_zone" | "cache_zone_bytes" | "cache_size" => cache_zone = parse_size(v)?,
                    p => cfg
                        .set(p, v)
                        .with_context(|| format!("sweep value `{v}` for `{p}`"))?,
                }
                Ok(Point {
                    value: Some(v.clone()),
                    cfg,
                    cache_zone,
                })
            })
            .collect()
    }

    /// The trace to replay under `cfg`.
    pub fn trace_for(&self, cfg: &SimConfig) -> Result<Vec<TraceRecord>> {
        match &self.source {
            TraceSource::File(path) => Ok(read_trace_file(path, cfg.block_size_bytes)?),
            TraceSource::Generated {
                kind,
                pages,
                requests,
                base,
                write_fraction,
                request_bytes,
                seed,
            } => {
                let mut spec = WorkloadSpec::new(*kind, pages * cfg.page_size_bytes, *requests);
                spec.base_addr = base.unwrap_or(cfg.fast_capacity_bytes);
                spec.write_fraction = *write_fraction;
                spec.request_bytes = *request_bytes;
                spec.page_bytes = cfg.page_size_bytes;
                spec.block_bytes = cfg.block_size_bytes;
                spec.seed = seed.unwrap_or(cfg.rng_seed);
                // Must fit every policy's host space; the combined policies
                // give up their cache zone and have the least.
                let space = self
                    .policies
                    .iter()
                    .map(|&p| cfg.for_policy(p, self.cache_zone).host_space_bytes())
                    .min()
                    .unwrap_or_else(|| cfg.host_space_bytes());
                Ok(generate(&spec, space)?)
            }
        }
    }

    pub fn execute(&self) -> Result<Document> {
        let points = self.points()?;
        let traces = points
            .iter()
            .map(|p| self.trace_for(&p.cfg))
            .collect::<Result<Vec<_>>>()?;
        let jobs: Vec<(usize, PolicyKind)> = (0..points.len())
            .flat_map(|i| self.policies.iter().map(move |&p| (i, p)))
            .collect();
        let mut runs: Vec<RunRecord> = jobs
            .par_iter()
            .map(|&(i, policy)| {
                let point = &points[i];
                let cfg = point.cfg.for_policy(policy, point.cache_zone);
                let result = Simulator::new(cfg)
                    .and_then(|mut sim| sim.run(&traces[i]))
                    .map_err(|e| match (policy, &e) {
                        (PolicyKind::AllDram, Error::AddressOutOfRange { .. }) => {
                            format!(
                                "AllDRAM is infeasible: the trace footprint exceeds memory: {e}"
                            )
                        }
                        _ => e.to_string(),
                    });
                RunRecord::new(
                    policy,
                    point.value.clone(),
                    self.sweep.as_ref().map(|s| s.param.as_str()),
                    result,
                )
            })
            .collect();
        normalize(&mut runs);
        Ok(Document::new(
            self.source.describe(),
            traces.first().map_or(0, Vec::len) as u64,
            self.sweep.as_ref().map(|s| s.param.clone()),
            runs,
        ))
    }
}

/// Ratios against the AllDRAM run of the same sweep point, when there is one.
fn normalize(runs: &mut [RunRecord]) {
    let baselines: Vec<_> = runs
        .iter()
        .filter(|r| r.policy == PolicyKind::AllDram)
        .filter_map(|r| Some((r.sweep_value.clone(), r.report.clone()?)))
        .collect();
    for run in runs.iter_mut() {
        let Some(report) = run.report.as_mut() else {
            continue;
        };
        if let Some((_, base)) = baselines.iter().find(|(v, _)| *v == run.sweep_value) {
            report.normalize_to(base);
        }
    }
}
