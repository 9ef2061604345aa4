//! Background DMA engine: whole-page swaps and single-block copies.
//!
//! A swap exchanges two internal pages through a bounce buffer, one
//! block-sized chunk at a time, both directions in lockstep. Progress is a
//! pure function of elapsed time, so advancing in several steps lands on the
//! same state as one large step.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::types::{AccessKind, Tier};

/// Proof that a swap has finished; the only way to update the page table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompletedSwap {
    src: u32,
    dst: u32,
}

impl CompletedSwap {
    pub(crate) fn new(src: u32, dst: u32) -> Self {
        Self { src, dst }
    }

    pub fn src_internal(&self) -> u32 {
        self.src
    }

    pub fn dst_internal(&self) -> u32 {
        self.dst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwapState {
    Pending,
    Copying,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwapJob {
    /// Slow page being promoted.
    pub src_internal: u32,
    /// Fast candidate being demoted.
    pub dst_internal: u32,
    pub start_ns: u64,
    chunk_ns: u64,
    chunk_bytes: u64,
    chunks: u64,
    /// Chunks whose data has already been exchanged in the content model.
    applied_chunks: u64,
}

impl SwapJob {
    pub fn completion_ns(&self) -> u64 {
        self.start_ns + self.chunks * self.chunk_ns
    }

    pub fn chunks_done(&self, now: u64) -> u64 {
        (now.saturating_sub(self.start_ns) / self.chunk_ns).min(self.chunks)
    }

    /// Bytes copied in each direction by `now`.
    pub fn progress_bytes(&self, now: u64) -> u64 {
        self.chunks_done(now) * self.chunk_bytes
    }

    pub fn state(&self, now: u64) -> SwapState {
        match self.chunks_done(now) {
            0 if now <= self.start_ns => SwapState::Pending,
            n if n == self.chunks => SwapState::Complete,
            _ => SwapState::Copying,
        }
    }

    pub fn involves(&self, internal_page: u32) -> bool {
        internal_page == self.src_internal || internal_page == self.dst_internal
    }

    /// Where a request at byte `offset` of `internal_page` (one of the two
    /// pages in flight, named by its pre-swap location) must go at `now`.
    pub fn route(&self, internal_page: u32, offset: u64, kind: AccessKind, now: u64) -> Route {
        debug_assert!(self.involves(internal_page));
        let new_page = if internal_page == self.src_internal {
            self.dst_internal
        } else {
            self.src_internal
        };
        let done = self.chunks_done(now);
        let chunk = offset / self.chunk_bytes;
        if chunk < done {
            return Route {
                content_page: new_page,
                device_page: new_page,
                stall_ns: 0,
            };
        }
        // Not yet copied: the old copy is still authoritative, and the
        // exchange will carry anything written there.
        let in_flight =
            chunk == done && done < self.chunks && now > self.start_ns + done * self.chunk_ns;
        if kind.is_write() && in_flight {
            let chunk_end = self.start_ns + (done + 1) * self.chunk_ns;
            Route {
                content_page: internal_page,
                device_page: new_page,
                stall_ns: chunk_end - now,
            }
        } else {
            Route {
                content_page: internal_page,
                device_page: internal_page,
                stall_ns: 0,
            }
        }
    }
}

/// Outcome of routing a request that touches a page in flight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    /// Internal page whose bytes hold (or will receive) the data right now.
    pub content_page: u32,
    /// Internal page whose device services the access.
    pub device_page: u32,
    /// Time a write waits for the chunk being copied.
    pub stall_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockCopyKind {
    /// Slow page block copied into the cache zone.
    Fill,
    /// Dirty cached block written back to its page.
    Writeback,
    /// Dirty cached block of a promoted page merged into its fast copy.
    RecycleMerge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockCopyJob {
    pub block: u64,
    pub kind: BlockCopyKind,
    pub from: Tier,
    pub to: Tier,
}

/// What an advance produced.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Advance {
    /// Chunk indices newly exchanged, to be applied to the content model.
    pub chunks: Range<u64>,
    pub src_internal: u32,
    pub dst_internal: u32,
    pub completed: Option<CompletedSwap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("a page swap is already in flight")]
pub struct SwapBusy;

/// The single DMA engine.
#[derive(Debug, Clone)]
pub struct DmaEngine {
    page_bytes: u64,
    chunk_bytes: u64,
    chunk_ns: u64,
    active: Option<SwapJob>,
    swaps_started: u64,
    swaps_completed: u64,
    block_copies: u64,
}

impl DmaEngine {
    pub fn new(page_bytes: u64, chunk_bytes: u64, chunk_ns: u64) -> Self {
        assert!(chunk_ns > 0 && page_bytes.is_multiple_of(chunk_bytes));
        Self {
            page_bytes,
            chunk_bytes,
            chunk_ns,
            active: None,
            swaps_started: 0,
            swaps_completed: 0,
            block_copies: 0,
        }
    }

    pub fn active(&self) -> Option<&SwapJob> {
        self.active.as_ref()
    }

    pub fn is_idle(&self) -> bool {
        self.active.is_none()
    }

    pub fn swaps_started(&self) -> u64 {
        self.swaps_started
    }

    pub fn swaps_completed(&self) -> u64 {
        self.swaps_completed
    }

    pub fn block_copies(&self) -> u64 {
        self.block_copies
    }

    /// Bytes moved by finished transfers.
    pub fn migrated_bytes(&self) -> u64 {
        2 * self.page_bytes * self.swaps_completed + self.chunk_bytes * self.block_copies
    }

    pub fn start_swap(&mut self, src: u32, dst: u32, now: u64) -> Result<&SwapJob, SwapBusy> {
        if self.active.is_some() {
            return Err(SwapBusy);
        }
        self.swaps_started += 1;
        Ok(self.active.insert(SwapJob {
            src_internal: src,
            dst_internal: dst,
            start_ns: now,
            chunk_ns: self.chunk_ns,
            chunk_bytes: self.chunk_bytes,
            chunks: self.page_bytes / self.chunk_bytes,
            applied_chunks: 0,
        }))
    }

    /// Block copies complete within the step that issues them.
    pub fn copy_block(&mut self, job: BlockCopyJob) -> BlockCopyJob {
        self.block_copies += 1;
        job
    }

    /// Moves the active swap forward to `now`.
    pub fn advance_to(&mut self, now: u64) -> Advance {
        let Some(job) = self.active.as_mut() else {
            return Advance::default();
        };
        let done = job.chunks_done(now);
        let adv = Advance {
            chunks: job.applied_chunks..done,
            src_internal: job.src_internal,
            dst_internal: job.dst_internal,
            completed: (done == job.chunks)
                .then(|| CompletedSwap::new(job.src_internal, job.dst_internal)),
        };
        job.applied_chunks = done;
        if adv.completed.is_some() {
            self.active = None;
            self.swaps_completed += 1;
        }
        adv
    }

    /// Completion time of the active swap, if any.
    pub fn busy_until(&self) -> Option<u64> {
        self.active.as_ref().map(SwapJob::completion_ns)
    }
}
