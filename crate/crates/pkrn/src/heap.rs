//! Arena heap and precise mark-sweep collector.
//!
//! The arena is a growable vector of 8-byte slots. Every object starts with
//! a header word: bit 0 is the mark bit, bits 1..4 the object kind, bit 4 a
//! kind-specific flag (the bignum sign), and bits 8..64 a kind-specific
//! count. Handles are header slot indices and never move; reclaimed storage
//! is kept on a sorted, coalesced free list and reused first-fit.
//!
//! Collection is precise: the caller supplies every root (symbol table
//! cells, the registry below, evaluator and VM shadow stacks). Anything not
//! reachable from those is swept. There is no scanning of native stacks, so
//! native code must keep intermediate values rooted while allocating.

use crate::value::Value;
use std::time::Duration;

pub const DEFAULT_INITIAL_BYTES: usize = 1 << 20;
pub const DEFAULT_CAP_BYTES: usize = 512 << 20;

const HEADER_SLOTS: usize = 1;
const MARK_BIT: u64 = 1;
const KIND_SHIFT: u32 = 1;
const KIND_MASK: u64 = 0b111 << KIND_SHIFT;
const NEG_BIT: u64 = 1 << 4;
const COUNT_SHIFT: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ObjKind {
    Free = 0,
    Cons = 1,
    Str = 2,
    Vector = 3,
    Bignum = 4,
    Float = 5,
    Chunk = 6,
}

fn pack_header(kind: ObjKind, neg: bool, count: usize) -> u64 {
    ((count as u64) << COUNT_SHIFT)
        | if neg { NEG_BIT } else { 0 }
        | ((kind as u64) << KIND_SHIFT)
}

fn header_kind(h: u64) -> ObjKind {
    match (h & KIND_MASK) >> KIND_SHIFT {
        0 => ObjKind::Free,
        1 => ObjKind::Cons,
        2 => ObjKind::Str,
        3 => ObjKind::Vector,
        4 => ObjKind::Bignum,
        5 => ObjKind::Float,
        6 => ObjKind::Chunk,
        k => unreachable!("corrupt heap header kind {k}"),
    }
}

fn header_count(h: u64) -> usize {
    (h >> COUNT_SHIFT) as usize
}

/// Total slots (header included) an object of this kind and count occupies.
pub fn needed_slots(kind: ObjKind, count: usize) -> usize {
    HEADER_SLOTS + payload_slots(kind, count)
}

/// Payload slots occupied by an object with the given kind and count.
fn payload_slots(kind: ObjKind, count: usize) -> usize {
    match kind {
        // Free headers store the total block size including the header.
        ObjKind::Free => count - HEADER_SLOTS,
        ObjKind::Cons => 2,
        ObjKind::Str => count.div_ceil(8),
        ObjKind::Vector => count,
        ObjKind::Bignum => count.div_ceil(2),
        ObjKind::Float => 1,
        ObjKind::Chunk => count,
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct HeapStats {
    pub allocations: u64,
    pub collections: u64,
    pub reclaimed_slots: u64,
    pub allocs_since_collect: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct CollectStats {
    pub live_slots: usize,
    pub reclaimed_slots: usize,
    pub duration: Option<Duration>,
}

/// Opaque handle for one registered root. Deliberately neither `Clone` nor
/// `Copy`: releasing consumes the ticket, so a double release cannot compile.
#[derive(Debug)]
pub struct RootTicket(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct FreeBlock {
    start: usize,
    len: usize,
}

#[derive(Clone)]
pub struct Heap {
    slots: Vec<u64>,
    cap_slots: usize,
    /// Sorted by start, pairwise non-adjacent (coalesced at sweep).
    free: Vec<FreeBlock>,
    used_slots: usize,
    root_cells: Vec<Option<Value>>,
    root_free: Vec<usize>,
    pub stats: HeapStats,
}

impl Heap {
    pub fn new(initial_bytes: usize, cap_bytes: usize) -> Heap {
        let initial = (initial_bytes / 8).max(64);
        let cap = (cap_bytes / 8).max(initial);
        let mut heap = Heap {
            slots: vec![0; initial],
            cap_slots: cap,
            free: Vec::new(),
            used_slots: 0,
            root_cells: Vec::new(),
            root_free: Vec::new(),
            stats: HeapStats::default(),
        };
        heap.set_free(0, initial);
        heap.free.push(FreeBlock { start: 0, len: initial });
        heap
    }

    fn set_free(&mut self, start: usize, len: usize) {
        self.slots[start] = pack_header(ObjKind::Free, false, len);
    }

    pub fn capacity_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn used_slots(&self) -> usize {
        self.used_slots
    }

    /// True when an allocation of `extra` slots would push occupancy past
    /// 80% of current capacity.
    pub fn over_threshold(&self, extra: usize) -> bool {
        (self.used_slots + extra) * 5 > self.slots.len() * 4
    }

    /// Allocates an object, zero-filling its payload so a collection between
    /// allocation and initialization sees only valid (fixnum 0) words.
    /// Returns the header slot index, or None when no free block fits.
    pub fn try_alloc(
        &mut self,
        kind: ObjKind,
        neg: bool,
        count: usize,
    ) -> Option<usize> {
        let need = HEADER_SLOTS + payload_slots(kind, count);
        let pos = self.free.iter().position(|b| b.len >= need)?;
        let block = self.free[pos];
        if block.len == need {
            self.free.remove(pos);
        } else {
            let rest = FreeBlock { start: block.start + need, len: block.len - need };
            self.set_free(rest.start, rest.len);
            self.free[pos] = rest;
        }
        self.slots[block.start] = pack_header(kind, neg, count);
        for s in block.start + 1..block.start + need {
            self.slots[s] = 0;
        }
        self.used_slots += need;
        self.stats.allocations += 1;
        self.stats.allocs_since_collect += 1;
        Some(block.start)
    }

    /// Doubles the arena (at least by `min_extra` slots) up to the cap.
    /// Returns false when already at the cap.
    pub fn grow(&mut self, min_extra: usize) -> bool {
        let len = self.slots.len();
        if len >= self.cap_slots {
            return false;
        }
        let target = (len * 2).max(len + min_extra).min(self.cap_slots);
        self.slots.resize(target, 0);
        let added = target - len;
        self.set_free(len, added);
        // Coalesce with a trailing free block if one ends exactly at `len`.
        if let Some(last) = self.free.last_mut() {
            if last.start + last.len == len {
                last.len += added;
                let (s, l) = (last.start, last.len);
                self.set_free(s, l);
                return true;
            }
        }
        self.free.push(FreeBlock { start: len, len: added });
        true
    }

    pub fn read(&self, slot: usize) -> u64 {
        self.slots[slot]
    }

    pub fn write(&mut self, slot: usize, word: u64) {
        self.slots[slot] = word;
    }

    pub fn read_value(&self, slot: usize) -> Value {
        // Safety of the cast rests on the heap only ever storing Value words
        // in value-typed slots; enforced by the typed accessors in session.
        Value::from_raw(self.slots[slot])
    }

    pub fn write_value(&mut self, slot: usize, v: Value) {
        self.slots[slot] = v.raw();
    }

    pub fn kind_of(&self, handle: usize) -> ObjKind {
        header_kind(self.slots[handle])
    }

    pub fn count_of(&self, handle: usize) -> usize {
        header_count(self.slots[handle])
    }

    pub fn neg_of(&self, handle: usize) -> bool {
        self.slots[handle] & NEG_BIT != 0
    }

    pub fn object_slots(&self, handle: usize) -> usize {
        let h = self.slots[handle];
        HEADER_SLOTS + payload_slots(header_kind(h), header_count(h))
    }

    pub fn protect(&mut self, v: Value) -> RootTicket {
        if let Some(id) = self.root_free.pop() {
            self.root_cells[id] = Some(v);
            RootTicket(id)
        } else {
            self.root_cells.push(Some(v));
            RootTicket(self.root_cells.len() - 1)
        }
    }

    pub fn release(&mut self, ticket: RootTicket) {
        let cell = &mut self.root_cells[ticket.0];
        assert!(cell.is_some(), "root ticket {} released twice", ticket.0);
        *cell = None;
        self.root_free.push(ticket.0);
    }

    /// Marks from `roots` plus the registry, then sweeps. Chunk tracing
    /// depends on the chunk payload layout defined in session.rs.
    pub fn collect(&mut self, roots: &[Value]) -> CollectStats {
        let mut worklist: Vec<usize> = Vec::new();
        for &v in roots {
            self.mark_value(v, &mut worklist);
        }
        let cells: Vec<Value> = self.root_cells.iter().flatten().copied().collect();
        for v in cells {
            self.mark_value(v, &mut worklist);
        }
        while let Some(handle) = worklist.pop() {
            self.trace(handle, &mut worklist);
        }
        let stats = self.sweep();
        self.stats.collections += 1;
        self.stats.reclaimed_slots += stats.reclaimed_slots as u64;
        self.stats.allocs_since_collect = 0;
        stats
    }

    fn mark_value(&mut self, v: Value, worklist: &mut Vec<usize>) {
        if !(v.is_cons() || v.is_heapobj()) {
            return;
        }
        let handle = v.handle();
        if self.slots[handle] & MARK_BIT == 0 {
            self.slots[handle] |= MARK_BIT;
            worklist.push(handle);
        }
    }

    fn trace(&mut self, handle: usize, worklist: &mut Vec<usize>) {
        let h = self.slots[handle];
        match header_kind(h) {
            ObjKind::Cons => {
                for off in 1..=2 {
                    let v = Value::from_raw(self.slots[handle + off]);
                    self.mark_value(v, worklist);
                }
            }
            ObjKind::Vector => {
                for off in 1..=header_count(h) {
                    let v = Value::from_raw(self.slots[handle + off]);
                    self.mark_value(v, worklist);
                }
            }
            ObjKind::Chunk => {
                // Value-typed chunk payload: consts, params, name. See the
                // layout in session.rs.
                let meta = self.slots[handle + 1];
                let arity = (meta & 0xffff) as usize;
                let nconsts = ((meta >> 32) & 0xffff) as usize;
                let first = handle + 3;
                for off in 0..nconsts + arity + 1 {
                    let v = Value::from_raw(self.slots[first + off]);
                    self.mark_value(v, worklist);
                }
            }
            ObjKind::Free | ObjKind::Str | ObjKind::Bignum | ObjKind::Float => {}
        }
    }

    fn sweep(&mut self) -> CollectStats {
        let total = self.slots.len();
        let mut cursor = 0;
        let mut live = 0;
        let mut reclaimed = 0;
        let mut free: Vec<FreeBlock> = Vec::new();
        let mut run_start: Option<usize> = None;
        while cursor < total {
            let h = self.slots[cursor];
            let kind = header_kind(h);
            let size = HEADER_SLOTS + payload_slots(kind, header_count(h));
            let dead = kind == ObjKind::Free || h & MARK_BIT == 0;
            if dead {
                if kind != ObjKind::Free {
                    reclaimed += size;
                }
                if run_start.is_none() {
                    run_start = Some(cursor);
                }
            } else {
                self.slots[cursor] = h & !MARK_BIT;
                live += size;
                if let Some(start) = run_start.take() {
                    free.push(FreeBlock { start, len: cursor - start });
                }
            }
            cursor += size;
        }
        if let Some(start) = run_start.take() {
            free.push(FreeBlock { start, len: total - start });
        }
        for b in &free {
            self.set_free(b.start, b.len);
        }
        self.free = free;
        self.used_slots = live;
        CollectStats { live_slots: live, reclaimed_slots: reclaimed, duration: None }
    }
}

