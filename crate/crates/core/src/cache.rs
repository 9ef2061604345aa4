//! The cache zone: a slice of fast memory managed as a 4-way set-associative
//! cache of sub-page blocks with tree pseudo-LRU replacement.
//!
//! Tags are full host block numbers (`host_page * blocks_per_page + index`),
//! so a cached block keeps following its page when the page is swapped
//! between tiers. The set index is the low bits of the block number.

use std::collections::HashMap;
use std::io::{self, Write};

use crate::config::CACHE_WAYS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheGeometry {
    pub block_bytes: u64,
    pub ways: usize,
    pub sets: u64,
}

impl CacheGeometry {
    pub fn new(cache_zone_bytes: u64, block_bytes: u64) -> Self {
        let sets = cache_zone_bytes / (block_bytes * CACHE_WAYS as u64);
        assert!(
            sets.is_power_of_two(),
            "cache set count must be a power of two"
        );
        Self {
            block_bytes,
            ways: CACHE_WAYS,
            sets,
        }
    }

    pub fn set_of(&self, block: u64) -> usize {
        (block & (self.sets - 1)) as usize
    }
}

/// Three-bit tree pseudo-LRU for four ways.
///
/// Bit 0 is the root and points at the half holding the next victim
/// (0 = ways 0-1, 1 = ways 2-3); bit 1 picks within ways 0-1 and bit 2
/// within ways 2-3.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TreePlru(u8);

impl TreePlru {
    pub fn bits(self) -> u8 {
        self.0
    }

    /// Points every node on the path to `way` away from it.
    pub fn touch(&mut self, way: usize) {
        let b = match way {
            0 => (self.0 | 0b001) | 0b010,
            1 => (self.0 | 0b001) & !0b010,
            2 => (self.0 & !0b001) | 0b100,
            3 => (self.0 & !0b001) & !0b100,
            _ => unreachable!("4-way tree"),
        };
        self.0 = b;
    }

    pub fn victim(self) -> usize {
        if self.0 & 0b001 == 0 {
            if self.0 & 0b010 == 0 {
                0
            } else {
                1
            }
        } else if self.0 & 0b100 == 0 {
            2
        } else {
            3
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct SetMeta {
    tags: [u64; CACHE_WAYS],
    valid: u8,
    dirty: u8,
    plru: TreePlru,
}

impl SetMeta {
    fn find(&self, block: u64) -> Option<usize> {
        (0..CACHE_WAYS).find(|&w| self.valid & (1 << w) != 0 && self.tags[w] == block)
    }
}

/// A block pushed out of the cache.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evicted {
    pub block: u64,
    pub dirty: bool,
    pub data: Box<[u8]>,
}

#[derive(Debug, Clone)]
pub struct SubpageCache {
    geom: CacheGeometry,
    sets: Vec<SetMeta>,
    data: HashMap<usize, Box<[u8]>>,
    valid_blocks: u64,
}

impl SubpageCache {
    pub fn new(geom: CacheGeometry) -> Self {
        Self {
            geom,
            sets: vec![SetMeta::default(); geom.sets as usize],
            data: HashMap::new(),
            valid_blocks: 0,
        }
    }

    pub fn geometry(&self) -> CacheGeometry {
        self.geom
    }

    pub fn valid_blocks(&self) -> u64 {
        self.valid_blocks
    }

    fn slot(set: usize, way: usize) -> usize {
        set * CACHE_WAYS + way
    }

    /// Tag check that also refreshes the replacement state on a hit.
    pub fn lookup(&mut self, block: u64) -> Option<usize> {
        let set = self.geom.set_of(block);
        let meta = &mut self.sets[set];
        let way = meta.find(block)?;
        meta.plru.touch(way);
        Some(way)
    }

    /// Tag check without side effects.
    pub fn contains(&self, block: u64) -> bool {
        self.sets[self.geom.set_of(block)].find(block).is_some()
    }

    pub fn is_dirty(&self, block: u64) -> Option<bool> {
        let meta = &self.sets[self.geom.set_of(block)];
        meta.find(block).map(|w| meta.dirty & (1 << w) != 0)
    }

    /// Installs `block`, evicting the pseudo-LRU way when the set is full.
    pub fn insert(&mut self, block: u64, data: Box<[u8]>, dirty: bool) -> Option<Evicted> {
        debug_assert_eq!(data.len() as u64, self.geom.block_bytes);
        let set = self.geom.set_of(block);
        let meta = &mut self.sets[set];
        debug_assert!(meta.find(block).is_none(), "block {block} already cached");
        let free = (0..CACHE_WAYS).find(|&w| meta.valid & (1 << w) == 0);
        let way = free.unwrap_or_else(|| meta.plru.victim());
        let evicted = if free.is_none() {
            let old = self
                .data
                .remove(&Self::slot(set, way))
                .expect("valid way has data");
            Some(Evicted {
                block: meta.tags[way],
                dirty: meta.dirty & (1 << way) != 0,
                data: old,
            })
        } else {
            self.valid_blocks += 1;
            None
        };
        meta.tags[way] = block;
        meta.valid |= 1 << way;
        if dirty {
            meta.dirty |= 1 << way;
        } else {
            meta.dirty &= !(1 << way);
        }
        meta.plru.touch(way);
        self.data.insert(Self::slot(set, way), data);
        evicted
    }

    fn resident(&self, block: u64) -> (usize, usize) {
        let set = self.geom.set_of(block);
        let way = self.sets[set]
            .find(block)
            .unwrap_or_else(|| panic!("block {block} is not resident in the cache zone"));
        (set, way)
    }

    pub fn read(&self, block: u64, offset: usize, len: usize) -> &[u8] {
        let (set, way) = self.resident(block);
        &self.data[&Self::slot(set, way)][offset..offset + len]
    }

    /// Writes into a resident block and marks it dirty.
    pub fn write(&mut self, block: u64, offset: usize, bytes: &[u8]) {
        let (set, way) = self.resident(block);
        self.sets[set].dirty |= 1 << way;
        let buf = self.data.get_mut(&Self::slot(set, way)).expect("valid way");
        buf[offset..offset + bytes.len()].copy_from_slice(bytes);
    }

    /// Drops `block` from the cache, returning its contents.
    pub fn invalidate(&mut self, block: u64) -> Option<Evicted> {
        let set = self.geom.set_of(block);
        let meta = &mut self.sets[set];
        let way = meta.find(block)?;
        let dirty = meta.dirty & (1 << way) != 0;
        meta.valid &= !(1 << way);
        meta.dirty &= !(1 << way);
        self.valid_blocks -= 1;
        let data = self.data.remove(&Self::slot(set, way)).expect("valid way");
        Some(Evicted { block, dirty, data })
    }

    /// Checks per-set invariants: unique valid tags and dirty ⊆ valid.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut valid = 0;
        for (i, s) in self.sets.iter().enumerate() {
            if s.dirty & !s.valid != 0 {
                return Err(format!("set {i}: dirty way without valid bit"));
            }
            for a in 0..CACHE_WAYS {
                if s.valid & (1 << a) == 0 {
                    continue;
                }
                valid += 1;
                if self.geom.set_of(s.tags[a]) != i {
                    return Err(format!("set {i}: tag {} indexes elsewhere", s.tags[a]));
                }
                for b in a + 1..CACHE_WAYS {
                    if s.valid & (1 << b) != 0 && s.tags[a] == s.tags[b] {
                        return Err(format!("set {i}: duplicate tag {}", s.tags[a]));
                    }
                }
            }
        }
        if valid != self.valid_blocks {
            return Err(format!(
                "{valid} valid ways, counter says {}",
                self.valid_blocks
            ));
        }
        Ok(())
    }

    /// Resident block numbers in set/way order.
    pub fn resident_blocks(&self) -> impl Iterator<Item = u64> + '_ {
        self.sets.iter().flat_map(|s| {
            (0..CACHE_WAYS)
                .filter(move |&w| s.valid & (1 << w) != 0)
                .map(move |w| s.tags[w])
        })
    }

    /// One line per set: `set plru tag/flags ...` with `-` for empty ways.
    pub fn dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# set plru way0 way1 way2 way3 (tag:V|VD or -)")?;
        for (i, s) in self.sets.iter().enumerate() {
            write!(out, "{i} {:03b}", s.plru.bits())?;
            for w in 0..CACHE_WAYS {
                if s.valid & (1 << w) == 0 {
                    write!(out, " -")?;
                } else {
                    let flags = if s.dirty & (1 << w) != 0 { "VD" } else { "V" };
                    write!(out, " {:x}:{flags}", s.tags[w])?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
