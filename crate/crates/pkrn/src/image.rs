//! Whole-session checkpoint as a portable byte image.
//!
//! The image is a serialization of the symbol table and everything reachable
//! from it, not a memory dump: no addresses, no word-size or byte-order
//! dependence. Layout:
//!
//! ```text
//! "PKRN"  magic
//! u32 LE  format version
//! u32 LE  flags (zero)
//! varint  symbol count, then per symbol: varint name length + UTF-8 name
//! per symbol, in interning order:
//!   value record
//!   function cell: 0 none | 1 builtin (name string) | 2 lambda (record)
//!                | 3 compiled (chunk record + source record)
//!   varint property count + key/value record pairs
//!   varint flag count + records
//! ```
//!
//! A record is a tag byte followed by its payload; varints are LEB128.
//! Heap objects are assigned sequential ids in first-encounter order, before
//! their children are written, and later occurrences write a back-reference
//! instead, so shared structure and cycles reload exactly. Cons spines are
//! written and read iteratively; recursion depth is bounded by car-side
//! nesting only. Two saves of an unchanged session are byte-identical, and
//! save, load, save yields the identical image again because ids depend only
//! on traversal order.

use crate::bignum;
use crate::bytecode;
use crate::eval::{self, EvalError};
use crate::session::{ChunkBuild, Session, SessionConfig};
use crate::symbol::FunCell;
use crate::value::Value;
use std::collections::HashMap;
use std::fmt;

pub const MAGIC: &[u8; 4] = b"PKRN";
pub const VERSION: u32 = 1;

const TAG_FIXNUM: u8 = 0;
const TAG_BIGNUM: u8 = 1;
const TAG_SYMBOL: u8 = 2;
const TAG_CONS: u8 = 3;
const TAG_STRING: u8 = 4;
const TAG_VECTOR: u8 = 5;
const TAG_FLOAT: u8 = 6;
const TAG_CHUNK: u8 = 7;
const TAG_BACKREF: u8 = 8;
const TAG_CHAR: u8 = 9;
const TAG_UNBOUND: u8 = 10;

const FUN_NONE: u8 = 0;
const FUN_BUILTIN: u8 = 1;
const FUN_LAMBDA: u8 = 2;
const FUN_CHUNK: u8 = 3;

/// A load defect, with the byte offset where it was detected.
#[derive(Debug, Clone)]
pub struct ImageError {
    pub message: String,
    pub offset: usize,
}

impl fmt::Display for ImageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "byte {}: {}", self.offset, self.message)
    }
}

impl std::error::Error for ImageError {}

// ---- writing -----------------------------------------------------------------

struct Writer<'a> {
    s: &'a Session,
    out: Vec<u8>,
    ids: HashMap<u64, u64>,
}

fn push_varint(out: &mut Vec<u8>, mut n: u64) {
    loop {
        let byte = (n & 0x7f) as u8;
        n >>= 7;
        if n == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

fn zigzag(i: i64) -> u64 {
    ((i << 1) ^ (i >> 63)) as u64
}

fn unzigzag(n: u64) -> i64 {
    ((n >> 1) as i64) ^ -((n & 1) as i64)
}

impl Writer<'_> {
    fn string(&mut self, text: &str) {
        push_varint(&mut self.out, text.len() as u64);
        self.out.extend_from_slice(text.as_bytes());
    }

    fn value(&mut self, v: Value) {
        let mut v = v;
        loop {
            if v.is_fixnum() {
                self.out.push(TAG_FIXNUM);
                push_varint(&mut self.out, zigzag(v.as_fixnum()));
                return;
            }
            if v.is_symbol() {
                self.out.push(TAG_SYMBOL);
                push_varint(&mut self.out, v.symbol_index() as u64);
                return;
            }
            if v == Value::UNBOUND {
                self.out.push(TAG_UNBOUND);
                return;
            }
            if let Some(c) = v.as_char() {
                self.out.push(TAG_CHAR);
                push_varint(&mut self.out, c as u64);
                return;
            }
            // Heap object: back-reference or first full encoding.
            if let Some(&id) = self.ids.get(&v.raw()) {
                self.out.push(TAG_BACKREF);
                push_varint(&mut self.out, id);
                return;
            }
            let id = self.ids.len() as u64;
            self.ids.insert(v.raw(), id);
            let s = self.s;
            if v.is_cons() {
                self.out.push(TAG_CONS);
                self.value(s.car(v));
                v = s.cdr(v);
                continue;
            }
            if bignum::is_int(s, v) {
                let n = bignum::int_parts(s, v).expect("bignum parts");
                self.out.push(TAG_BIGNUM);
                self.out.push(n.neg as u8);
                push_varint(&mut self.out, n.digits.len() as u64);
                for d in n.digits {
                    self.out.extend_from_slice(&d.to_le_bytes());
                }
            } else if bignum::is_float(s, v) {
                self.out.push(TAG_FLOAT);
                self.out.extend_from_slice(&s.float_value(v).to_bits().to_le_bytes());
            } else if s.is_chunk(v) {
                self.out.push(TAG_CHUNK);
                push_varint(&mut self.out, s.chunk_arity(v) as u64);
                push_varint(&mut self.out, s.chunk_nlocals(v) as u64);
                let code = s.chunk_code(v);
                push_varint(&mut self.out, code.len() as u64);
                self.out.extend_from_slice(&code);
                push_varint(&mut self.out, s.chunk_nconsts(v) as u64);
                for i in 0..s.chunk_nconsts(v) {
                    self.value(s.chunk_const(v, i));
                }
                for i in 0..s.chunk_arity(v) {
                    self.value(s.chunk_param(v, i));
                }
                self.value(s.chunk_name(v));
            } else if s.is_obj_kind(v, crate::heap::ObjKind::Vector) {
                self.out.push(TAG_VECTOR);
                push_varint(&mut self.out, s.vector_len(v) as u64);
                for i in 0..s.vector_len(v) {
                    self.value(s.vector_get(v, i));
                }
            } else {
                self.out.push(TAG_STRING);
                self.string(&s.string_text(v));
            }
            return;
        }
    }
}

/// Serializes the whole session. Deterministic: equal sessions give equal
/// bytes.
pub fn save_bytes(s: &Session) -> Vec<u8> {
    let mut w = Writer { s, out: Vec::new(), ids: HashMap::new() };
    w.out.extend_from_slice(MAGIC);
    w.out.extend_from_slice(&VERSION.to_le_bytes());
    w.out.extend_from_slice(&0u32.to_le_bytes());
    push_varint(&mut w.out, s.syms.len() as u64);
    for i in 0..s.syms.len() {
        let name = s.symbol_name(Value::symbol(i)).to_string();
        w.string(&name);
    }
    for i in 0..s.syms.len() {
        let data = s.syms.get(Value::symbol(i));
        let (value, fun, plist, flags) =
            (data.value, data.fun.clone(), data.plist.clone(), data.flags.clone());
        w.value(value);
        match fun {
            FunCell::None => w.out.push(FUN_NONE),
            FunCell::Builtin(index) => {
                w.out.push(FUN_BUILTIN);
                let name = eval::builtin_name(index).expect("builtin index").to_string();
                w.string(&name);
            }
            FunCell::Lambda(src) => {
                w.out.push(FUN_LAMBDA);
                w.value(src);
            }
            FunCell::Chunk { chunk, source } => {
                w.out.push(FUN_CHUNK);
                w.value(chunk);
                w.value(source);
            }
        }
        push_varint(&mut w.out, plist.len() as u64);
        for (k, v) in plist {
            w.value(k);
            w.value(v);
        }
        push_varint(&mut w.out, flags.len() as u64);
        for f in flags {
            w.value(f);
        }
    }
    w.out
}

// ---- reading -----------------------------------------------------------------

struct Loader<'a> {
    bytes: &'a [u8],
    pos: usize,
    objects: Vec<Value>,
    symbol_count: usize,
}

impl<'a> Loader<'a> {
    fn fail(&self, message: impl Into<String>) -> ImageError {
        ImageError { message: message.into(), offset: self.pos }
    }

    fn byte(&mut self) -> Result<u8, ImageError> {
        let b = *self.bytes.get(self.pos).ok_or_else(|| self.fail("truncated image"))?;
        self.pos += 1;
        Ok(b)
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ImageError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| self.fail("truncated image"))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn varint(&mut self) -> Result<u64, ImageError> {
        let mut n = 0u64;
        let mut shift = 0u32;
        loop {
            let b = self.byte()?;
            if shift >= 64 || (shift == 63 && b > 1) {
                return Err(self.fail("varint overflows 64 bits"));
            }
            n |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(n);
            }
            shift += 7;
        }
    }

    fn count(&mut self, what: &str, cap: u64) -> Result<usize, ImageError> {
        let n = self.varint()?;
        if n > cap {
            return Err(self.fail(format!("{what} count {n} is implausible")));
        }
        Ok(n as usize)
    }

    fn string(&mut self) -> Result<String, ImageError> {
        let len = self.count("string byte", 1 << 32)?;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.fail("string is not UTF-8"))
    }

    fn register(&mut self, s: &mut Session, v: Value) {
        // The shadow stack is the only thing rooting objects until they land
        // in a symbol cell, so every allocation is kept for the whole load.
        s.keep(v);
        self.objects.push(v);
    }

    fn backref(&mut self, id: u64) -> Result<Value, ImageError> {
        self.objects
            .get(id as usize)
            .copied()
            .ok_or_else(|| self.fail(format!("dangling back-reference {id}")))
    }

    fn symbol(&mut self, index: u64) -> Result<Value, ImageError> {
        if (index as usize) < self.symbol_count {
            Ok(Value::symbol(index as usize))
        } else {
            Err(self.fail(format!("symbol index {index} out of range")))
        }
    }

    fn value(&mut self, s: &mut Session) -> Result<Value, ImageError> {
        let tag = self.byte()?;
        if tag == TAG_CONS {
            return self.cons_spine(s);
        }
        self.leaf(s, tag)
    }

    /// Reads the records of a cons chain without recursing down the cdr side.
    fn cons_spine(&mut self, s: &mut Session) -> Result<Value, ImageError> {
        let head = self.alloc_cons(s)?;
        let mut cur = head;
        loop {
            let car = self.value(s)?;
            s.set_car(cur, car);
            if self.peek() == Some(TAG_CONS) {
                self.pos += 1;
                let next = self.alloc_cons(s)?;
                s.set_cdr(cur, next);
                cur = next;
                continue;
            }
            let cdr = self.value(s)?;
            s.set_cdr(cur, cdr);
            return Ok(head);
        }
    }

    fn alloc_cons(&mut self, s: &mut Session) -> Result<Value, ImageError> {
        let cell = s
            .alloc_cons(Value::NIL, Value::NIL)
            .map_err(|e| self.fail(format!("allocation failed: {e}")))?;
        self.register(s, cell);
        Ok(cell)
    }

    fn leaf(&mut self, s: &mut Session, tag: u8) -> Result<Value, ImageError> {
        match tag {
            TAG_FIXNUM => {
                let i = unzigzag(self.varint()?);
                Value::checked_fixnum(i)
                    .ok_or_else(|| self.fail(format!("fixnum {i} out of range")))
            }
            TAG_SYMBOL => {
                let index = self.varint()?;
                self.symbol(index)
            }
            TAG_UNBOUND => Ok(Value::UNBOUND),
            TAG_CHAR => {
                let code = self.varint()?;
                u8::try_from(code)
                    .map(Value::char_value)
                    .map_err(|_| self.fail(format!("character code {code} out of range")))
            }
            TAG_BACKREF => {
                let id = self.varint()?;
                self.backref(id)
            }
            TAG_BIGNUM => {
                let neg = match self.byte()? {
                    0 => false,
                    1 => true,
                    b => return Err(self.fail(format!("bad bignum sign byte {b}"))),
                };
                let ndigits = self.count("bignum digit", 1 << 24)?;
                let mut digits = Vec::with_capacity(ndigits);
                for _ in 0..ndigits {
                    let raw = self.take(4)?;
                    digits.push(u32::from_le_bytes(raw.try_into().unwrap()));
                }
                if digits.last() == Some(&0) || digits.is_empty() {
                    return Err(self.fail("bignum digits not normalized"));
                }
                let v = s
                    .alloc_bignum(neg, &digits)
                    .map_err(|e| self.fail(format!("allocation failed: {e}")))?;
                self.register(s, v);
                Ok(v)
            }
            TAG_FLOAT => {
                let raw = self.take(8)?;
                let f = f64::from_bits(u64::from_le_bytes(raw.try_into().unwrap()));
                let v = s
                    .alloc_float(f)
                    .map_err(|e| self.fail(format!("allocation failed: {e}")))?;
                self.register(s, v);
                Ok(v)
            }
            TAG_STRING => {
                let text = self.string()?;
                let v = s
                    .alloc_string(&text)
                    .map_err(|e| self.fail(format!("allocation failed: {e}")))?;
                self.register(s, v);
                Ok(v)
            }
            TAG_VECTOR => {
                let len = self.count("vector element", 1 << 24)?;
                // Reserve the id before the elements, matching the writer.
                let slot = self.objects.len();
                self.objects.push(Value::NIL);
                let mut items = Vec::with_capacity(len);
                for _ in 0..len {
                    items.push(self.value(s)?);
                }
                let v = s
                    .alloc_vector(&items)
                    .map_err(|e| self.fail(format!("allocation failed: {e}")))?;
                s.keep(v);
                self.objects[slot] = v;
                Ok(v)
            }
            TAG_CHUNK => {
                let arity = self.count("chunk parameter", 0xffff)? as u16;
                let nlocals = self.count("chunk local", 0xffff)? as u16;
                let code_len = self.count("code byte", 0xffff)?;
                let code = self.take(code_len)?.to_vec();
                let nconsts = self.count("chunk constant", 0xffff)?;
                let slot = self.objects.len();
                self.objects.push(Value::NIL);
                let mut consts = Vec::with_capacity(nconsts);
                for _ in 0..nconsts {
                    consts.push(self.value(s)?);
                }
                let mut params = Vec::with_capacity(arity as usize);
                for _ in 0..arity {
                    params.push(self.value(s)?);
                }
                let name = self.value(s)?;
                let build = ChunkBuild { arity, nlocals, consts, params, name, code };
                let v = s
                    .alloc_chunk(&build)
                    .map_err(|e| self.fail(format!("allocation failed: {e}")))?;
                s.keep(v);
                self.objects[slot] = v;
                Ok(v)
            }
            other => Err(self.fail(format!("unknown record tag {other}"))),
        }
    }
}

/// Reconstructs a session from image bytes. The returned session is fully
/// booted in the sense that all well-known symbols and builtins are wired,
/// but its definitions are exactly the saved ones. On any defect the
/// session under construction is discarded.
pub fn load_bytes(config: &SessionConfig, bytes: &[u8]) -> Result<Session, ImageError> {
    let mut l = Loader { bytes, pos: 0, objects: Vec::new(), symbol_count: 0 };
    let magic = l.take(4)?;
    if magic != MAGIC {
        return Err(ImageError { message: "bad magic (not an image file)".into(), offset: 0 });
    }
    let version = u32::from_le_bytes(l.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(ImageError {
            message: format!("unsupported image version {version} (this build reads {VERSION})"),
            offset: 4,
        });
    }
    let _flags = u32::from_le_bytes(l.take(4)?.try_into().unwrap());

    let mut s = Session::empty(config);
    let mark = s.shadow_mark();
    let r = load_body(&mut l, &mut s);
    s.shadow_truncate(mark);
    r.map(|()| s)
}

fn load_body(l: &mut Loader, s: &mut Session) -> Result<(), ImageError> {
    l.symbol_count = l.count("symbol", 1 << 32)?;
    if l.symbol_count == 0 {
        return Err(l.fail("image has no symbols"));
    }
    for i in 0..l.symbol_count {
        let name = l.string()?;
        if i == 0 && name != "nil" {
            return Err(l.fail(format!("symbol 0 is {name:?}, expected \"nil\"")));
        }
        let sym = s.intern(&name);
        if sym.symbol_index() != i {
            return Err(l.fail(format!("duplicate symbol name {name:?}")));
        }
    }
    let mut chunks = Vec::new();
    for i in 0..l.symbol_count {
        let sym = Value::symbol(i);
        let value = l.value(s)?;
        let fun = match l.byte()? {
            FUN_NONE => FunCell::None,
            FUN_BUILTIN => {
                let name = l.string()?;
                let index = eval::builtin_index(&name)
                    .ok_or_else(|| l.fail(format!("unknown builtin {name:?}")))?;
                FunCell::Builtin(index)
            }
            FUN_LAMBDA => FunCell::Lambda(l.value(s)?),
            FUN_CHUNK => {
                let chunk = l.value(s)?;
                let source = l.value(s)?;
                if !s.is_chunk(chunk) {
                    return Err(l.fail(format!(
                        "function cell of {} is not compiled code",
                        s.symbol_name(sym)
                    )));
                }
                chunks.push(chunk);
                FunCell::Chunk { chunk, source }
            }
            other => return Err(l.fail(format!("unknown function cell kind {other}"))),
        };
        let nprops = l.count("property", 1 << 24)?;
        let mut plist = Vec::with_capacity(nprops);
        for _ in 0..nprops {
            let k = l.value(s)?;
            let v = l.value(s)?;
            plist.push((k, v));
        }
        let nflags = l.count("flag", 1 << 24)?;
        let mut flags = Vec::with_capacity(nflags);
        for _ in 0..nflags {
            flags.push(l.value(s)?);
        }
        let data = s.syms.get_mut(sym);
        data.value = value;
        data.fun = fun;
        data.plist = plist;
        data.flags = flags;
    }
    if l.pos != l.bytes.len() {
        return Err(l.fail("trailing bytes after image body"));
    }
    s.finish_wk();
    // Code is data from an external source; re-verify every chunk before it
    // can run.
    for chunk in chunks {
        bytecode::verify_chunk(s, chunk).map_err(|e| l.fail(e.message))?;
    }
    Ok(())
}

/// Convenience wrapper mapping image errors into evaluator errors.
pub fn load_for_eval(config: &SessionConfig, bytes: &[u8]) -> Result<Session, EvalError> {
    load_bytes(config, bytes).map_err(|e| EvalError::new(format!("image load failed: {e}")))
}
