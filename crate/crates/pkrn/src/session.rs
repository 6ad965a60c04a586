//! A kernel session: heap, symbol table, binding stacks, and output buffer.
//!
//! Sessions are single-threaded and share nothing; cloning one yields an
//! independent snapshot (the differential engine evaluates each form on a
//! clone and on the original and compares). All allocation goes through the
//! typed constructors here, which root their arguments on the shadow stack
//! so a collection triggered mid-construction cannot reclaim them.

use crate::eval::{EvalError, InstateOutcome};
use crate::heap::{self, CollectStats, Heap, ObjKind, RootTicket};
use crate::symbol::{FunCell, SymbolData, SymbolTable};
use crate::value::Value;
use std::time::Duration;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Tree,
    Byte,
    Diff,
}

/// Argument order the surface language's `mapcar` calls arrive in; the
/// translation pass rewrites the list-first dialect to the canonical
/// function-first order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapcarOrder {
    FnFirst,
    ListFirst,
}

#[derive(Clone)]
pub struct SessionConfig {
    pub heap_initial: usize,
    pub heap_cap: usize,
    pub engine: Engine,
    /// When true, the portable reference definitions of the modular
    /// arithmetic functions are installed over the native ones.
    pub reference_arith: bool,
    pub dialect: MapcarOrder,
    /// Collect on every n-th allocation; testing aid for rooting discipline.
    pub gc_stress: Option<u64>,
    /// Monotonic clock supplied by the platform layer; collections report
    /// no duration without one.
    pub clock: Option<fn() -> Duration>,
    /// Tree-walker nesting limit.
    pub depth_cap: usize,
    /// VM call-frame limit.
    pub frame_cap: usize,
}

impl Default for SessionConfig {
    fn default() -> SessionConfig {
        SessionConfig {
            heap_initial: heap::DEFAULT_INITIAL_BYTES,
            heap_cap: heap::DEFAULT_CAP_BYTES,
            engine: Engine::Byte,
            reference_arith: false,
            dialect: MapcarOrder::FnFirst,
            gc_stress: None,
            clock: None,
            depth_cap: 2_000,
            frame_cap: 10_000,
        }
    }
}

/// Frequently used symbols, resolved once at boot.
#[derive(Clone, Copy)]
pub struct WellKnown {
    pub t: Value,
    pub quote: Value,
    pub lambda: Value,
    pub cond: Value,
    pub prog: Value,
    pub setq: Value,
    pub de: Value,
    pub go: Value,
    pub ret: Value,
    pub progn: Value,
    pub and_: Value,
    pub or_: Value,
    pub native: Value,
    pub current_modulus: Value,
    pub rn: Value,
}

impl WellKnown {
    fn resolve(syms: &mut SymbolTable) -> WellKnown {
        WellKnown {
            t: syms.intern("t"),
            quote: syms.intern("quote"),
            lambda: syms.intern("lambda"),
            cond: syms.intern("cond"),
            prog: syms.intern("prog"),
            setq: syms.intern("setq"),
            de: syms.intern("de"),
            go: syms.intern("go"),
            ret: syms.intern("return"),
            progn: syms.intern("progn"),
            and_: syms.intern("and"),
            or_: syms.intern("or"),
            native: syms.intern("native"),
            current_modulus: syms.intern("current-modulus"),
            rn: syms.intern(":rn:"),
        }
    }
}

/// One VM activation record. Code bytes are copied out of the chunk at call
/// time so the dispatch loop never aliases the heap.
#[derive(Clone)]
pub struct VmFrame {
    pub chunk: Value,
    pub code: Vec<u8>,
    pub ip: usize,
    pub stack_base: usize,
    pub locals_base: usize,
    pub save_mark: usize,
}

/// Chunk fields prepared by the compiler, before heap placement.
pub struct ChunkBuild {
    pub arity: u16,
    pub nlocals: u16,
    pub consts: Vec<Value>,
    pub params: Vec<Value>,
    pub name: Value,
    pub code: Vec<u8>,
}

#[derive(Clone)]
pub struct Session {
    pub heap: Heap,
    pub syms: SymbolTable,
    pub wk: WellKnown,
    pub engine: Engine,
    pub dialect: MapcarOrder,
    /// Root stack for native-code intermediates.
    pub shadow: Vec<Value>,
    /// Shallow-binding save stack: (symbol index, previous cell value).
    pub save: Vec<(usize, Value)>,
    pub vm_frames: Vec<VmFrame>,
    pub vm_stack: Vec<Value>,
    pub vm_locals: Vec<Value>,
    /// Buffered session output; the driver flushes it to the host.
    pub out: Vec<u8>,
    /// Pending textual input for `read-value`.
    pub input: String,
    pub input_pos: usize,
    pub depth: usize,
    pub depth_cap: usize,
    pub frame_cap: usize,
    pub gc_stress: Option<u64>,
    pub clock: Option<fn() -> Duration>,
    pub instate_report: Vec<(String, InstateOutcome)>,
}

impl Session {
    /// Boots a fresh session: interns the reserved symbols, installs the
    /// builtins, and runs the reference-definition pass.
    pub fn new(config: &SessionConfig) -> Session {
        let mut s = Session::empty(config);
        s.boot(config.reference_arith);
        s
    }

    /// A bare session with an empty symbol table; used by the image loader,
    /// which reconstructs the table before anything can run.
    pub fn empty(config: &SessionConfig) -> Session {
        let syms = SymbolTable::new();
        let placeholder = WellKnown {
            t: Value::NIL,
            quote: Value::NIL,
            lambda: Value::NIL,
            cond: Value::NIL,
            prog: Value::NIL,
            setq: Value::NIL,
            de: Value::NIL,
            go: Value::NIL,
            ret: Value::NIL,
            progn: Value::NIL,
            and_: Value::NIL,
            or_: Value::NIL,
            native: Value::NIL,
            current_modulus: Value::NIL,
            rn: Value::NIL,
        };
        Session {
            heap: Heap::new(config.heap_initial, config.heap_cap),
            syms,
            wk: placeholder,
            engine: config.engine,
            dialect: config.dialect,
            shadow: Vec::new(),
            save: Vec::new(),
            vm_frames: Vec::new(),
            vm_stack: Vec::new(),
            vm_locals: Vec::new(),
            out: Vec::new(),
            input: String::new(),
            input_pos: 0,
            depth: 0,
            depth_cap: config.depth_cap,
            frame_cap: config.frame_cap,
            gc_stress: config.gc_stress,
            clock: config.clock,
            instate_report: Vec::new(),
        }
    }

    fn boot(&mut self, reference_arith: bool) {
        let nil = self.syms.intern("nil");
        assert_eq!(nil, Value::NIL, "nil must be symbol 0");
        self.syms.get_mut(nil).value = nil;
        self.finish_wk();
        let t = self.wk.t;
        self.syms.get_mut(t).value = t;
        let cm = self.wk.current_modulus;
        self.syms.get_mut(cm).value = Value::NIL;
        crate::eval::install_builtins(self);
        if !reference_arith {
            let native = self.wk.native;
            for name in crate::algebra::NATIVE_ARITH_NAMES {
                let sym = self.syms.intern(name);
                self.syms.get_mut(sym).flags.push(native);
            }
        }
        let report = crate::eval::instate_reference(self, crate::algebra::REFERENCE_DEFS)
            .expect("reference definitions must install");
        self.instate_report = report;
    }

    /// Resolves the well-known symbol set against the current table.
    pub fn finish_wk(&mut self) {
        self.wk = WellKnown::resolve(&mut self.syms);
    }

    pub fn intern(&mut self, name: &str) -> Value {
        self.syms.intern(name)
    }

    pub fn symbol_name(&self, sym: Value) -> &str {
        self.syms.name(sym)
    }

    pub fn symbol_value(&self, sym: Value) -> Value {
        self.syms.get(sym).value
    }

    pub fn set_symbol_value(&mut self, sym: Value, v: Value) {
        self.syms.get_mut(sym).value = v;
    }

    // ---- shadow stack -------------------------------------------------

    pub fn shadow_mark(&self) -> usize {
        self.shadow.len()
    }

    pub fn keep(&mut self, v: Value) {
        self.shadow.push(v);
    }

    pub fn shadow_truncate(&mut self, mark: usize) {
        self.shadow.truncate(mark);
    }

    // ---- shallow binding ----------------------------------------------

    pub fn save_mark(&self) -> usize {
        self.save.len()
    }

    /// Binds `sym` to `v`, remembering the previous cell for restore.
    pub fn bind(&mut self, sym: Value, v: Value) {
        let idx = sym.symbol_index();
        let old = self.syms.get(sym).value;
        self.save.push((idx, old));
        self.syms.get_mut(sym).value = v;
    }

    /// Unwinds the save stack to `mark`, restoring shadowed cells.
    pub fn restore_saves(&mut self, mark: usize) {
        while self.save.len() > mark {
            let (idx, old) = self.save.pop().unwrap();
            self.syms.get_mut(Value::symbol(idx)).value = old;
        }
    }

    // ---- allocation ----------------------------------------------------

    fn alloc_object(
        &mut self,
        kind: ObjKind,
        neg: bool,
        count: usize,
    ) -> Result<usize, EvalError> {
        let need = heap::needed_slots(kind, count);
        if let Some(n) = self.gc_stress {
            if n > 0 && self.heap.stats.allocations.is_multiple_of(n) {
                self.collect();
            }
        }
        if self.heap.over_threshold(need) && self.heap.stats.allocs_since_collect > 0 {
            self.collect();
            if self.heap.over_threshold(need) {
                self.heap.grow(need);
            }
        }
        if let Some(h) = self.heap.try_alloc(kind, neg, count) {
            return Ok(h);
        }
        self.collect();
        loop {
            if let Some(h) = self.heap.try_alloc(kind, neg, count) {
                return Ok(h);
            }
            if !self.heap.grow(need) {
                return Err(EvalError::new("out of memory: heap cap reached"));
            }
        }
    }

    pub fn alloc_cons(&mut self, car: Value, cdr: Value) -> Result<Value, EvalError> {
        let mark = self.shadow_mark();
        self.keep(car);
        self.keep(cdr);
        let r = self.alloc_object(ObjKind::Cons, false, 2);
        self.shadow_truncate(mark);
        let h = r?;
        self.heap.write_value(h + 1, car);
        self.heap.write_value(h + 2, cdr);
        Ok(Value::cons_at(h))
    }

    pub fn alloc_string(&mut self, text: &str) -> Result<Value, EvalError> {
        let bytes = text.as_bytes();
        let h = self.alloc_object(ObjKind::Str, false, bytes.len())?;
        for (i, chunk) in bytes.chunks(8).enumerate() {
            let mut word = 0u64;
            for (j, &b) in chunk.iter().enumerate() {
                word |= (b as u64) << (8 * j);
            }
            self.heap.write(h + 1 + i, word);
        }
        Ok(Value::heapobj_at(h))
    }

    pub fn alloc_float(&mut self, f: f64) -> Result<Value, EvalError> {
        let h = self.alloc_object(ObjKind::Float, false, 1)?;
        self.heap.write(h + 1, f.to_bits());
        Ok(Value::heapobj_at(h))
    }

    /// Raw bignum allocation; digits little-endian base 2^32, already
    /// normalized (callers use `bignum::make_int`, which demotes).
    pub fn alloc_bignum(&mut self, neg: bool, digits: &[u32]) -> Result<Value, EvalError> {
        debug_assert!(!digits.is_empty() && *digits.last().unwrap() != 0);
        let h = self.alloc_object(ObjKind::Bignum, neg, digits.len())?;
        for (i, pair) in digits.chunks(2).enumerate() {
            let mut word = pair[0] as u64;
            if let Some(&hi) = pair.get(1) {
                word |= (hi as u64) << 32;
            }
            self.heap.write(h + 1 + i, word);
        }
        Ok(Value::heapobj_at(h))
    }

    pub fn alloc_vector(&mut self, items: &[Value]) -> Result<Value, EvalError> {
        let mark = self.shadow_mark();
        self.shadow.extend_from_slice(items);
        let r = self.alloc_object(ObjKind::Vector, false, items.len());
        self.shadow_truncate(mark);
        let h = r?;
        for (i, &v) in items.iter().enumerate() {
            self.heap.write_value(h + 1 + i, v);
        }
        Ok(Value::heapobj_at(h))
    }

    /// Chunk payload layout (slots after the header):
    ///   +1 meta: arity | nlocals<<16 | nconsts<<32
    ///   +2 code length in bytes
    ///   +3 .. consts, then params, then name, then packed code bytes
    pub fn alloc_chunk(&mut self, build: &ChunkBuild) -> Result<Value, EvalError> {
        assert_eq!(build.params.len(), build.arity as usize);
        let nconsts = build.consts.len();
        let code_slots = build.code.len().div_ceil(8);
        let payload = 2 + nconsts + build.arity as usize + 1 + code_slots;
        let mark = self.shadow_mark();
        self.shadow.extend_from_slice(&build.consts);
        self.shadow.extend_from_slice(&build.params);
        self.keep(build.name);
        let r = self.alloc_object(ObjKind::Chunk, false, payload);
        self.shadow_truncate(mark);
        let h = r?;
        let meta = build.arity as u64
            | ((build.nlocals as u64) << 16)
            | ((nconsts as u64) << 32);
        self.heap.write(h + 1, meta);
        self.heap.write(h + 2, build.code.len() as u64);
        let mut at = h + 3;
        for &c in &build.consts {
            self.heap.write_value(at, c);
            at += 1;
        }
        for &p in &build.params {
            self.heap.write_value(at, p);
            at += 1;
        }
        self.heap.write_value(at, build.name);
        at += 1;
        for chunk in build.code.chunks(8) {
            let mut word = 0u64;
            for (j, &b) in chunk.iter().enumerate() {
                word |= (b as u64) << (8 * j);
            }
            self.heap.write(at, word);
            at += 1;
        }
        Ok(Value::heapobj_at(h))
    }

    // ---- accessors -------------------------------------------------------

    pub fn is_obj_kind(&self, v: Value, kind: ObjKind) -> bool {
        v.is_heapobj() && self.heap.kind_of(v.handle()) == kind
    }

    /// car of nil is nil.
    pub fn car(&self, v: Value) -> Value {
        if v.is_nil() {
            return Value::NIL;
        }
        debug_assert!(v.is_cons());
        self.heap.read_value(v.handle() + 1)
    }

    /// cdr of nil is nil.
    pub fn cdr(&self, v: Value) -> Value {
        if v.is_nil() {
            return Value::NIL;
        }
        debug_assert!(v.is_cons());
        self.heap.read_value(v.handle() + 2)
    }

    pub fn set_car(&mut self, cell: Value, v: Value) {
        debug_assert!(cell.is_cons());
        self.heap.write_value(cell.handle() + 1, v);
    }

    pub fn set_cdr(&mut self, cell: Value, v: Value) {
        debug_assert!(cell.is_cons());
        self.heap.write_value(cell.handle() + 2, v);
    }

    pub fn string_text(&self, v: Value) -> String {
        debug_assert!(self.is_obj_kind(v, ObjKind::Str));
        let h = v.handle();
        let len = self.heap.count_of(h);
        let mut bytes = Vec::with_capacity(len);
        for i in 0..len {
            let word = self.heap.read(h + 1 + i / 8);
            bytes.push((word >> (8 * (i % 8))) as u8);
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }

    pub fn float_value(&self, v: Value) -> f64 {
        debug_assert!(self.is_obj_kind(v, ObjKind::Float));
        f64::from_bits(self.heap.read(v.handle() + 1))
    }

    pub fn bignum_parts(&self, v: Value) -> (bool, Vec<u32>) {
        debug_assert!(self.is_obj_kind(v, ObjKind::Bignum));
        let h = v.handle();
        let n = self.heap.count_of(h);
        let neg = self.heap.neg_of(h);
        let mut digits = Vec::with_capacity(n);
        for i in 0..n {
            let word = self.heap.read(h + 1 + i / 2);
            digits.push(if i % 2 == 0 { word as u32 } else { (word >> 32) as u32 });
        }
        (neg, digits)
    }

    pub fn vector_len(&self, v: Value) -> usize {
        debug_assert!(self.is_obj_kind(v, ObjKind::Vector));
        self.heap.count_of(v.handle())
    }

    pub fn vector_get(&self, v: Value, i: usize) -> Value {
        debug_assert!(i < self.vector_len(v));
        self.heap.read_value(v.handle() + 1 + i)
    }

    pub fn vector_set(&mut self, v: Value, i: usize, item: Value) {
        debug_assert!(i < self.vector_len(v));
        self.heap.write_value(v.handle() + 1 + i, item);
    }

    pub fn is_chunk(&self, v: Value) -> bool {
        self.is_obj_kind(v, ObjKind::Chunk)
    }

    pub fn chunk_arity(&self, v: Value) -> usize {
        (self.heap.read(v.handle() + 1) & 0xffff) as usize
    }

    pub fn chunk_nlocals(&self, v: Value) -> usize {
        ((self.heap.read(v.handle() + 1) >> 16) & 0xffff) as usize
    }

    pub fn chunk_nconsts(&self, v: Value) -> usize {
        ((self.heap.read(v.handle() + 1) >> 32) & 0xffff) as usize
    }

    pub fn chunk_code_len(&self, v: Value) -> usize {
        self.heap.read(v.handle() + 2) as usize
    }

    pub fn chunk_const(&self, v: Value, i: usize) -> Value {
        debug_assert!(i < self.chunk_nconsts(v));
        self.heap.read_value(v.handle() + 3 + i)
    }

    pub fn chunk_param(&self, v: Value, i: usize) -> Value {
        debug_assert!(i < self.chunk_arity(v));
        self.heap.read_value(v.handle() + 3 + self.chunk_nconsts(v) + i)
    }

    pub fn chunk_name(&self, v: Value) -> Value {
        self.heap
            .read_value(v.handle() + 3 + self.chunk_nconsts(v) + self.chunk_arity(v))
    }

    pub fn chunk_code(&self, v: Value) -> Vec<u8> {
        let h = v.handle();
        let len = self.chunk_code_len(v);
        let base = h + 3 + self.chunk_nconsts(v) + self.chunk_arity(v) + 1;
        let mut code = Vec::with_capacity(len);
        for i in 0..len {
            let word = self.heap.read(base + i / 8);
            code.push((word >> (8 * (i % 8))) as u8);
        }
        code
    }

    // ---- list helpers ----------------------------------------------------

    /// Builds a proper list; items are rooted for the duration.
    pub fn list_from(&mut self, items: &[Value]) -> Result<Value, EvalError> {
        let mark = self.shadow_mark();
        self.shadow.extend_from_slice(items);
        let mut acc = Value::NIL;
        let mut result = Ok(());
        for &item in items.iter().rev() {
            match self.alloc_cons(item, acc) {
                Ok(c) => acc = c,
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
            // Keep the partial list alive across the next allocation.
            self.shadow.push(acc);
        }
        self.shadow_truncate(mark);
        result.map(|()| acc)
    }

    /// Collects a proper list into a vector; None when the spine is dotted.
    pub fn proper_list(&self, mut v: Value) -> Option<Vec<Value>> {
        let mut items = Vec::new();
        while !v.is_nil() {
            if !v.is_cons() {
                return None;
            }
            items.push(self.car(v));
            v = self.cdr(v);
        }
        Some(items)
    }

    // ---- collection ------------------------------------------------------

    pub fn protect(&mut self, v: Value) -> RootTicket {
        self.heap.protect(v)
    }

    pub fn release(&mut self, ticket: RootTicket) {
        self.heap.release(ticket)
    }

    pub fn collect(&mut self) -> CollectStats {
        let start = self.clock.map(|f| f());
        let mut roots: Vec<Value> =
            Vec::with_capacity(self.syms.len() * 2 + self.shadow.len() + 64);
        for sym in self.syms.iter() {
            roots.push(sym.value);
            match &sym.fun {
                FunCell::None | FunCell::Builtin(_) => {}
                FunCell::Lambda(src) => roots.push(*src),
                FunCell::Chunk { chunk, source } => {
                    roots.push(*chunk);
                    roots.push(*source);
                }
            }
            for &(k, v) in &sym.plist {
                roots.push(k);
                roots.push(v);
            }
            roots.extend_from_slice(&sym.flags);
        }
        roots.extend_from_slice(&self.shadow);
        for &(_, old) in &self.save {
            roots.push(old);
        }
        roots.extend_from_slice(&self.vm_stack);
        roots.extend_from_slice(&self.vm_locals);
        for f in &self.vm_frames {
            roots.push(f.chunk);
        }
        let mut stats = self.heap.collect(&roots);
        if let (Some(f), Some(t0)) = (self.clock, start) {
            stats.duration = Some(f() - t0);
        }
        stats
    }

    // ---- output / input ---------------------------------------------------

    pub fn write_out(&mut self, text: &str) {
        self.out.extend_from_slice(text.as_bytes());
    }

    pub fn take_out(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.out)
    }

    pub fn push_input(&mut self, text: &str) {
        self.input.push_str(text);
    }

    /// Symbol data snapshot accessors used by tests and the image writer.
    pub fn symbol_data(&self, sym: Value) -> &SymbolData {
        self.syms.get(sym)
    }
}
