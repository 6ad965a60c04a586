//! Stack bytecode: compiler, assembler, verifier, disassembler, and VM.
//!
//! The compiler accepts the same language as the tree walker or refuses with
//! `Compiled::Unsupported`, in which case the caller falls back to the tree;
//! a form must never compile to something observably different. Variables
//! live in symbol value cells even when compiled (parameters are dynamically
//! bound at frame entry), which keeps the shallow-binding discipline and the
//! algebra layer's variable lookups identical across engines. Locals slots
//! hold only compiler temporaries.
//!
//! The VM is a non-recursive frame machine over session-owned stacks, so
//! deep call chains cost heap, not Rust stack. Every chunk is verified at
//! construction and again at image load; the verifier checks instruction
//! boundaries, operand ranges, and abstract stack-depth consistency, so the
//! dispatch loop can index without further guards.

use crate::eval::{self, EvalError, EvalResult};
use crate::session::{ChunkBuild, Session, VmFrame};
use crate::symbol::FunCell;
use crate::value::Value;
use std::collections::HashMap;

pub const OP_LOADCONST: u8 = 0;
pub const OP_LOADLOCAL: u8 = 1;
pub const OP_STORELOCAL: u8 = 2;
pub const OP_LOADGLOBAL: u8 = 3;
pub const OP_STOREGLOBAL: u8 = 4;
pub const OP_CALL: u8 = 5;
pub const OP_JUMP: u8 = 6;
pub const OP_JUMPNIL: u8 = 7;
pub const OP_RETURN: u8 = 8;
pub const OP_CONS: u8 = 9;
pub const OP_CAR: u8 = 10;
pub const OP_CDR: u8 = 11;
pub const OP_ADD: u8 = 12;
pub const OP_SUB: u8 = 13;
pub const OP_MUL: u8 = 14;
pub const OP_DIV: u8 = 15;
pub const OP_REM: u8 = 16;
pub const OP_EQ: u8 = 17;
pub const OP_POP: u8 = 18;
/// Prefix: the following instruction's index operand is u16 little-endian.
pub const OP_WIDE: u8 = 255;

pub fn mnemonic(op: u8) -> &'static str {
    match op {
        OP_LOADCONST => "loadconst",
        OP_LOADLOCAL => "loadlocal",
        OP_STORELOCAL => "storelocal",
        OP_LOADGLOBAL => "loadglobal",
        OP_STOREGLOBAL => "storeglobal",
        OP_CALL => "call",
        OP_JUMP => "jump",
        OP_JUMPNIL => "jumpnil",
        OP_RETURN => "return",
        OP_CONS => "cons",
        OP_CAR => "car",
        OP_CDR => "cdr",
        OP_ADD => "add",
        OP_SUB => "sub",
        OP_MUL => "mul",
        OP_DIV => "div",
        OP_REM => "rem",
        OP_EQ => "eq",
        OP_POP => "pop",
        _ => "???",
    }
}

fn has_index(op: u8) -> bool {
    matches!(
        op,
        OP_LOADCONST
            | OP_LOADLOCAL
            | OP_STORELOCAL
            | OP_LOADGLOBAL
            | OP_STOREGLOBAL
            | OP_CALL
            | OP_JUMP
            | OP_JUMPNIL
    )
}

/// One decoded instruction; `k` is the index/target operand, `n` the call
/// argument count, `next` the offset just past the instruction.
#[derive(Debug, Clone, Copy)]
pub struct Decoded {
    pub op: u8,
    pub k: usize,
    pub n: usize,
    pub next: usize,
}

pub fn decode_at(code: &[u8], at: usize) -> Result<Decoded, String> {
    let byte = |i: usize| -> Result<u8, String> {
        code.get(i).copied().ok_or_else(|| format!("truncated instruction at {at}"))
    };
    let mut i = at;
    let mut op = byte(i)?;
    i += 1;
    let wide = op == OP_WIDE;
    if wide {
        op = byte(i)?;
        i += 1;
        if !has_index(op) {
            return Err(format!("wide prefix on operand-less opcode {op} at {at}"));
        }
    }
    if !has_index(op) {
        if op > OP_POP {
            return Err(format!("unknown opcode {op} at {at}"));
        }
        return Ok(Decoded { op, k: 0, n: 0, next: i });
    }
    let k = if wide {
        let lo = byte(i)? as usize;
        let hi = byte(i + 1)? as usize;
        i += 2;
        lo | (hi << 8)
    } else {
        let k = byte(i)? as usize;
        i += 1;
        k
    };
    let n = if op == OP_CALL {
        let n = byte(i)? as usize;
        i += 1;
        n
    } else {
        0
    };
    Ok(Decoded { op, k, n, next: i })
}

// ---- compiler ---------------------------------------------------------------

pub enum Compiled {
    Chunk(Value),
    /// The form uses something this compiler does not handle; the reason is
    /// diagnostic only, the caller falls back to the tree walker.
    Unsupported(String),
}

enum CErr {
    Unsupported(String),
    Hard(EvalError),
}

impl From<EvalError> for CErr {
    fn from(e: EvalError) -> CErr {
        CErr::Hard(e)
    }
}

fn unsupported(msg: impl Into<String>) -> CErr {
    CErr::Unsupported(msg.into())
}

enum Ins {
    Simple(u8),
    Idx(u8, usize),
    Call { k: usize, n: usize },
    Jump { op: u8, label: usize },
}

struct Unit<'a> {
    s: &'a mut Session,
    consts: Vec<Value>,
    ins: Vec<Ins>,
    /// Label id -> instruction index, filled by `place_label`.
    labels: Vec<Option<usize>>,
    /// `go` targets of the enclosing prog body, when compiling one.
    prog_labels: Vec<(Value, usize)>,
    in_prog: bool,
    temps_cur: usize,
    temps_high: usize,
    shadow_base: usize,
}

impl<'a> Unit<'a> {
    fn new(s: &'a mut Session, in_prog: bool) -> Unit<'a> {
        let shadow_base = s.shadow_mark();
        Unit {
            s,
            consts: Vec::new(),
            ins: Vec::new(),
            labels: Vec::new(),
            prog_labels: Vec::new(),
            in_prog,
            temps_cur: 0,
            temps_high: 0,
            shadow_base,
        }
    }

    /// Interns a constant, deduplicating by value word only.
    fn const_k(&mut self, v: Value) -> usize {
        if let Some(i) = self.consts.iter().position(|&c| c == v) {
            return i;
        }
        self.s.keep(v);
        self.consts.push(v);
        self.consts.len() - 1
    }

    fn new_label(&mut self) -> usize {
        self.labels.push(None);
        self.labels.len() - 1
    }

    fn place_label(&mut self, id: usize) {
        debug_assert!(self.labels[id].is_none());
        self.labels[id] = Some(self.ins.len());
    }

    fn temp_alloc(&mut self) -> usize {
        let t = self.temps_cur;
        self.temps_cur += 1;
        self.temps_high = self.temps_high.max(self.temps_cur);
        t
    }

    fn temp_free(&mut self) {
        self.temps_cur -= 1;
    }

    fn compile_form(&mut self, form: Value) -> Result<(), CErr> {
        use crate::value::TypeTag;
        match form.tag() {
            TypeTag::Fixnum | TypeTag::Immediate | TypeTag::HeapObj => {
                let k = self.const_k(form);
                self.ins.push(Ins::Idx(OP_LOADCONST, k));
                Ok(())
            }
            TypeTag::Symbol => {
                if form.is_nil() || form == self.s.wk.t {
                    let k = self.const_k(form);
                    self.ins.push(Ins::Idx(OP_LOADCONST, k));
                } else {
                    let k = self.const_k(form);
                    self.ins.push(Ins::Idx(OP_LOADGLOBAL, k));
                }
                Ok(())
            }
            TypeTag::Cons => self.compile_call(form),
        }
    }

    fn items_of(&self, v: Value) -> Result<Vec<Value>, CErr> {
        self.s.proper_list(v).ok_or_else(|| unsupported("improper list in form"))
    }

    fn compile_call(&mut self, form: Value) -> Result<(), CErr> {
        let head = self.s.car(form);
        let rest = self.s.cdr(form);
        if head.is_symbol() {
            let wk = self.s.wk;
            if head == wk.quote {
                let items = self.items_of(rest)?;
                if items.len() != 1 {
                    return Err(unsupported("malformed quote"));
                }
                let k = self.const_k(items[0]);
                self.ins.push(Ins::Idx(OP_LOADCONST, k));
                return Ok(());
            }
            if head == wk.cond {
                return self.compile_cond(rest);
            }
            if head == wk.prog {
                return self.compile_prog(rest);
            }
            if head == wk.setq {
                return self.compile_setq(rest);
            }
            if head == wk.lambda {
                return Err(unsupported("bare lambda form"));
            }
            if head == wk.de {
                return Err(unsupported("function definition"));
            }
            if head == wk.go {
                return self.compile_go(rest);
            }
            if head == wk.ret {
                return self.compile_return(rest);
            }
            if head == wk.progn {
                let items = self.items_of(rest)?;
                return self.compile_seq(&items);
            }
            if head == wk.and_ {
                return self.compile_and(rest);
            }
            if head == wk.or_ {
                return self.compile_or(rest);
            }
            let args = self.items_of(rest)?;
            if args.len() > u8::MAX as usize {
                return Err(unsupported("too many call arguments"));
            }
            if let Some(op) = self.foldable_op(head, args.len()) {
                self.compile_form(args[0])?;
                if args.len() == 1 {
                    // Unary op: the operand is already on the stack.
                    self.ins.push(Ins::Simple(op));
                }
                for &a in &args[1..] {
                    self.compile_form(a)?;
                    self.ins.push(Ins::Simple(op));
                }
                return Ok(());
            }
            for &a in &args {
                self.compile_form(a)?;
            }
            let k = self.const_k(head);
            self.ins.push(Ins::Call { k, n: args.len() });
            return Ok(());
        }
        if head.is_cons() && self.s.car(head) == self.s.wk.lambda {
            return self.compile_inline_lambda(head, rest);
        }
        Err(unsupported("head is not a function"))
    }

    /// Emits a dedicated opcode when the head symbol is still bound to the
    /// original builtin and the argument count matches its shape; `plus` and
    /// `times` fold pairwise left-to-right.
    fn foldable_op(&self, head: Value, argc: usize) -> Option<u8> {
        let FunCell::Builtin(i) = self.s.syms.get(head).fun else {
            return None;
        };
        let name = eval::BUILTINS.get(i as usize)?.name;
        match (name, argc) {
            ("car", 1) => Some(OP_CAR),
            ("cdr", 1) => Some(OP_CDR),
            ("cons", 2) => Some(OP_CONS),
            ("eq", 2) => Some(OP_EQ),
            ("difference", 2) => Some(OP_SUB),
            ("quotient", 2) => Some(OP_DIV),
            ("remainder", 2) => Some(OP_REM),
            ("plus", n) if n >= 2 => Some(OP_ADD),
            ("times", n) if n >= 2 => Some(OP_MUL),
            _ => None,
        }
    }

    fn compile_seq(&mut self, items: &[Value]) -> Result<(), CErr> {
        if items.is_empty() {
            let k = self.const_k(Value::NIL);
            self.ins.push(Ins::Idx(OP_LOADCONST, k));
            return Ok(());
        }
        for (i, &item) in items.iter().enumerate() {
            self.compile_form(item)?;
            if i + 1 < items.len() {
                self.ins.push(Ins::Simple(OP_POP));
            }
        }
        Ok(())
    }

    fn compile_cond(&mut self, rest: Value) -> Result<(), CErr> {
        let clauses = self.items_of(rest)?;
        let end = self.new_label();
        for &clause in &clauses {
            let items = self.items_of(clause)?;
            if items.is_empty() {
                return Err(unsupported("empty cond clause"));
            }
            let next = self.new_label();
            if items.len() == 1 {
                // Test-only clause: its value is the result when non-nil.
                self.compile_form(items[0])?;
                let t = self.temp_alloc();
                self.ins.push(Ins::Idx(OP_STORELOCAL, t));
                self.ins.push(Ins::Jump { op: OP_JUMPNIL, label: next });
                self.ins.push(Ins::Idx(OP_LOADLOCAL, t));
                self.temp_free();
                self.ins.push(Ins::Jump { op: OP_JUMP, label: end });
            } else {
                self.compile_form(items[0])?;
                self.ins.push(Ins::Jump { op: OP_JUMPNIL, label: next });
                self.compile_seq(&items[1..])?;
                self.ins.push(Ins::Jump { op: OP_JUMP, label: end });
            }
            self.place_label(next);
        }
        let k = self.const_k(Value::NIL);
        self.ins.push(Ins::Idx(OP_LOADCONST, k));
        self.place_label(end);
        Ok(())
    }

    fn compile_and(&mut self, rest: Value) -> Result<(), CErr> {
        let items = self.items_of(rest)?;
        if items.is_empty() {
            let t = self.s.wk.t;
            let k = self.const_k(t);
            self.ins.push(Ins::Idx(OP_LOADCONST, k));
            return Ok(());
        }
        let fail = self.new_label();
        let end = self.new_label();
        for &item in &items[..items.len() - 1] {
            self.compile_form(item)?;
            self.ins.push(Ins::Jump { op: OP_JUMPNIL, label: fail });
        }
        self.compile_form(items[items.len() - 1])?;
        self.ins.push(Ins::Jump { op: OP_JUMP, label: end });
        self.place_label(fail);
        let k = self.const_k(Value::NIL);
        self.ins.push(Ins::Idx(OP_LOADCONST, k));
        self.place_label(end);
        Ok(())
    }

    fn compile_or(&mut self, rest: Value) -> Result<(), CErr> {
        let items = self.items_of(rest)?;
        if items.is_empty() {
            let k = self.const_k(Value::NIL);
            self.ins.push(Ins::Idx(OP_LOADCONST, k));
            return Ok(());
        }
        let end = self.new_label();
        let t = self.temp_alloc();
        for &item in &items[..items.len() - 1] {
            self.compile_form(item)?;
            let next = self.new_label();
            self.ins.push(Ins::Idx(OP_STORELOCAL, t));
            self.ins.push(Ins::Jump { op: OP_JUMPNIL, label: next });
            self.ins.push(Ins::Idx(OP_LOADLOCAL, t));
            self.ins.push(Ins::Jump { op: OP_JUMP, label: end });
            self.place_label(next);
        }
        self.temp_free();
        self.compile_form(items[items.len() - 1])?;
        self.place_label(end);
        Ok(())
    }

    fn compile_setq(&mut self, rest: Value) -> Result<(), CErr> {
        let items = self.items_of(rest)?;
        if items.len() != 2 {
            return Err(unsupported("malformed setq"));
        }
        let var = items[0];
        if !var.is_symbol() || var.is_nil() || var == self.s.wk.t {
            return Err(unsupported("setq target is not assignable"));
        }
        self.compile_form(items[1])?;
        let k = self.const_k(var);
        self.ins.push(Ins::Idx(OP_STOREGLOBAL, k));
        Ok(())
    }

    fn compile_go(&mut self, rest: Value) -> Result<(), CErr> {
        if !self.in_prog {
            return Err(unsupported("go outside prog"));
        }
        let items = self.items_of(rest)?;
        if items.len() != 1 || !items[0].is_symbol() {
            return Err(unsupported("malformed go"));
        }
        match self.prog_labels.iter().find(|(sym, _)| *sym == items[0]) {
            Some(&(_, label)) => {
                self.ins.push(Ins::Jump { op: OP_JUMP, label });
                Ok(())
            }
            // Unknown labels are a runtime error owned by the tree walker,
            // so the whole form falls back to it and both engines agree on
            // the message even when the bad go is never reached.
            None => Err(unsupported("go to a label not in this prog")),
        }
    }

    fn compile_return(&mut self, rest: Value) -> Result<(), CErr> {
        if !self.in_prog {
            return Err(unsupported("return outside prog"));
        }
        let items = self.items_of(rest)?;
        if items.len() != 1 {
            return Err(unsupported("malformed return"));
        }
        self.compile_form(items[0])?;
        self.ins.push(Ins::Simple(OP_RETURN));
        Ok(())
    }

    /// A prog becomes a nested chunk whose parameters are the prog variables,
    /// called immediately with nils; `go` is a jump within it and `return`
    /// its RETURN, so dynamic binding of the variables falls out of the
    /// ordinary frame discipline.
    fn compile_prog(&mut self, rest: Value) -> Result<(), CErr> {
        let items = self.items_of(rest)?;
        if items.is_empty() {
            return Err(unsupported("malformed prog"));
        }
        let vars = self.items_of(items[0])?;
        for &v in &vars {
            if !v.is_symbol() || v.is_nil() || v == self.s.wk.t {
                return Err(unsupported("prog variable is not bindable"));
            }
        }
        if vars.len() > u8::MAX as usize {
            return Err(unsupported("too many prog variables"));
        }
        let body = &items[1..];
        let name = self.s.intern("%prog");
        let chunk = {
            let mut sub = Unit::new(self.s, true);
            for &form in body {
                if form.is_symbol() && !sub.prog_labels.iter().any(|(sym, _)| *sym == form) {
                    let id = sub.new_label();
                    sub.prog_labels.push((form, id));
                }
            }
            let mut placed: Vec<Value> = Vec::new();
            for &form in body {
                if form.is_symbol() {
                    if !placed.contains(&form) {
                        let id = sub
                            .prog_labels
                            .iter()
                            .find(|(sym, _)| *sym == form)
                            .map(|&(_, id)| id)
                            .unwrap();
                        sub.place_label(id);
                        placed.push(form);
                    }
                    continue;
                }
                sub.compile_form(form)?;
                sub.ins.push(Ins::Simple(OP_POP));
            }
            let k = sub.const_k(Value::NIL);
            sub.ins.push(Ins::Idx(OP_LOADCONST, k));
            sub.ins.push(Ins::Simple(OP_RETURN));
            sub.finish(name, &vars)?
        };
        let k = self.const_k(chunk);
        let nil_k = self.const_k(Value::NIL);
        for _ in 0..vars.len() {
            self.ins.push(Ins::Idx(OP_LOADCONST, nil_k));
        }
        self.ins.push(Ins::Call { k, n: vars.len() });
        Ok(())
    }

    fn compile_inline_lambda(&mut self, head: Value, rest: Value) -> Result<(), CErr> {
        let parts = self.items_of(head)?;
        if parts.len() < 2 {
            return Err(unsupported("malformed lambda"));
        }
        let params = self.items_of(parts[1])?;
        for &p in &params {
            if !p.is_symbol() || p.is_nil() || p == self.s.wk.t {
                return Err(unsupported("lambda parameter is not bindable"));
            }
        }
        let args = self.items_of(rest)?;
        if args.len() != params.len() || args.len() > u8::MAX as usize {
            return Err(unsupported("lambda argument count mismatch"));
        }
        for &a in &args {
            self.compile_form(a)?;
        }
        let name = self.s.intern("%lambda");
        let chunk = {
            let mut sub = Unit::new(self.s, false);
            sub.compile_seq(&parts[2..])?;
            sub.ins.push(Ins::Simple(OP_RETURN));
            sub.finish(name, &params)?
        };
        let k = self.const_k(chunk);
        self.ins.push(Ins::Call { k, n: args.len() });
        Ok(())
    }

    /// Assembles, allocates, and verifies the finished chunk.
    fn finish(mut self, name: Value, params: &[Value]) -> Result<Value, CErr> {
        if self.consts.len() > u16::MAX as usize {
            return Err(unsupported("too many constants"));
        }
        if self.temps_high > u16::MAX as usize {
            return Err(unsupported("too many locals"));
        }
        let label_at: Vec<usize> = self
            .labels
            .iter()
            .map(|l| l.expect("every label placed"))
            .collect();
        let code = assemble(&self.ins, &label_at)?;
        let build = ChunkBuild {
            arity: params.len() as u16,
            nlocals: self.temps_high as u16,
            consts: std::mem::take(&mut self.consts),
            params: params.to_vec(),
            name,
            code,
        };
        let chunk = self.s.alloc_chunk(&build)?;
        self.s.shadow_truncate(self.shadow_base);
        self.s.keep(chunk);
        verify_chunk(self.s, chunk)?;
        Ok(chunk)
    }
}

/// Two-pass assembly: every jump starts narrow and widens when its target
/// offset cannot fit a byte; widening only grows offsets, so iterating to a
/// fixed point terminates.
fn assemble(ins: &[Ins], label_at: &[usize]) -> Result<Vec<u8>, CErr> {
    let base_width = |i: &Ins, wide_jump: bool| -> usize {
        match i {
            Ins::Simple(_) => 1,
            Ins::Idx(_, k) => {
                if *k > u8::MAX as usize {
                    4
                } else {
                    2
                }
            }
            Ins::Call { k, .. } => {
                if *k > u8::MAX as usize {
                    5
                } else {
                    3
                }
            }
            Ins::Jump { .. } => {
                if wide_jump {
                    4
                } else {
                    2
                }
            }
        }
    };
    let mut wide: Vec<bool> = vec![false; ins.len()];
    let mut offsets: Vec<usize> = vec![0; ins.len() + 1];
    loop {
        let mut at = 0;
        for (i, item) in ins.iter().enumerate() {
            offsets[i] = at;
            at += base_width(item, wide[i]);
        }
        offsets[ins.len()] = at;
        let mut changed = false;
        for (i, item) in ins.iter().enumerate() {
            if let Ins::Jump { label, .. } = item {
                let target = offsets[label_at[*label]];
                if target > u8::MAX as usize && !wide[i] {
                    wide[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    if *offsets.last().unwrap() > u16::MAX as usize {
        return Err(unsupported("code too long"));
    }
    let mut code = Vec::with_capacity(*offsets.last().unwrap());
    for (i, item) in ins.iter().enumerate() {
        match item {
            Ins::Simple(op) => code.push(*op),
            Ins::Idx(op, k) => {
                if *k > u8::MAX as usize {
                    code.push(OP_WIDE);
                    code.push(*op);
                    code.extend_from_slice(&(*k as u16).to_le_bytes());
                } else {
                    code.push(*op);
                    code.push(*k as u8);
                }
            }
            Ins::Call { k, n } => {
                if *k > u8::MAX as usize {
                    code.push(OP_WIDE);
                    code.push(OP_CALL);
                    code.extend_from_slice(&(*k as u16).to_le_bytes());
                } else {
                    code.push(OP_CALL);
                    code.push(*k as u8);
                }
                code.push(*n as u8);
            }
            Ins::Jump { op, label } => {
                let target = offsets[label_at[*label]];
                if wide[i] {
                    code.push(OP_WIDE);
                    code.push(*op);
                    code.extend_from_slice(&(target as u16).to_le_bytes());
                } else {
                    code.push(*op);
                    code.push(target as u8);
                }
            }
        }
        debug_assert_eq!(code.len(), offsets[i] + base_width(item, wide[i]));
    }
    Ok(code)
}

/// Compiles one top-level form into a zero-argument chunk.
pub fn compile_top(s: &mut Session, form: Value) -> Result<Compiled, EvalError> {
    let name = s.intern("%top");
    compile_unit(s, name, &[], &[form])
}

/// Compiles a named function body; called by `de`.
pub fn compile_function(
    s: &mut Session,
    name: Value,
    params: &[Value],
    body: &[Value],
) -> Result<Compiled, EvalError> {
    compile_unit(s, name, params, body)
}

fn compile_unit(
    s: &mut Session,
    name: Value,
    params: &[Value],
    body: &[Value],
) -> Result<Compiled, EvalError> {
    if params.len() > u8::MAX as usize {
        return Ok(Compiled::Unsupported("too many parameters".into()));
    }
    let run = |s: &mut Session| -> Result<Value, CErr> {
        let mut unit = Unit::new(s, false);
        unit.compile_seq(body)?;
        unit.ins.push(Ins::Simple(OP_RETURN));
        unit.finish(name, params)
    };
    match run(s) {
        Ok(chunk) => Ok(Compiled::Chunk(chunk)),
        Err(CErr::Unsupported(msg)) => Ok(Compiled::Unsupported(msg)),
        Err(CErr::Hard(e)) => Err(e),
    }
}

// ---- verifier ---------------------------------------------------------------

pub fn verify_chunk(s: &Session, chunk: Value) -> Result<(), EvalError> {
    let chunk_label = crate::sexpr::print(s, s.chunk_name(chunk));
    let fail = |msg: String| EvalError::new(format!("invalid chunk {chunk_label}: {msg}"));
    let code = s.chunk_code(chunk);
    let nconsts = s.chunk_nconsts(chunk);
    let nlocals = s.chunk_nlocals(chunk);
    if code.is_empty() {
        return Err(fail("empty code".into()));
    }
    let mut decoded: HashMap<usize, Decoded> = HashMap::new();
    let mut at = 0;
    while at < code.len() {
        let d = decode_at(&code, at).map_err(fail)?;
        match d.op {
            OP_LOADCONST => {
                if d.k >= nconsts {
                    return Err(fail(format!("const index {} out of range at {at}", d.k)));
                }
            }
            OP_LOADLOCAL | OP_STORELOCAL => {
                if d.k >= nlocals {
                    return Err(fail(format!("local index {} out of range at {at}", d.k)));
                }
            }
            OP_LOADGLOBAL | OP_STOREGLOBAL => {
                if d.k >= nconsts {
                    return Err(fail(format!("const index {} out of range at {at}", d.k)));
                }
                if !s.chunk_const(chunk, d.k).is_symbol() {
                    return Err(fail(format!("global operand at {at} is not a symbol")));
                }
            }
            OP_CALL => {
                if d.k >= nconsts {
                    return Err(fail(format!("const index {} out of range at {at}", d.k)));
                }
                let callee = s.chunk_const(chunk, d.k);
                if !callee.is_symbol() && !s.is_chunk(callee) {
                    return Err(fail(format!("call target at {at} is neither symbol nor chunk")));
                }
            }
            OP_JUMP | OP_JUMPNIL if d.k >= code.len() => {
                return Err(fail(format!("jump target {} out of range at {at}", d.k)));
            }
            _ => {}
        }
        decoded.insert(at, d);
        at = d.next;
    }
    for (&at, d) in &decoded {
        if matches!(d.op, OP_JUMP | OP_JUMPNIL) && !decoded.contains_key(&d.k) {
            return Err(fail(format!("jump at {at} lands inside an instruction")));
        }
    }
    // Abstract interpretation of operand stack depth. Every reachable offset
    // must have a single depth, and RETURN must see exactly one value.
    let mut depth_at: HashMap<usize, usize> = HashMap::new();
    let mut work: Vec<(usize, usize)> = vec![(0, 0)];
    while let Some((at, depth)) = work.pop() {
        match depth_at.get(&at) {
            Some(&d) if d == depth => continue,
            Some(&d) => {
                return Err(fail(format!("inconsistent stack depth at {at}: {d} vs {depth}")));
            }
            None => {
                depth_at.insert(at, depth);
            }
        }
        let d = decoded[&at];
        let need = |n: usize| -> Result<(), EvalError> {
            if depth < n {
                Err(fail(format!("stack underflow at {at}")))
            } else {
                Ok(())
            }
        };
        let mut push_next = |target: usize, depth: usize| -> Result<(), EvalError> {
            if target >= code.len() && !decoded.contains_key(&target) {
                return Err(fail(format!("execution falls off the end after {at}")));
            }
            work.push((target, depth));
            Ok(())
        };
        match d.op {
            OP_LOADCONST | OP_LOADLOCAL | OP_LOADGLOBAL => push_next(d.next, depth + 1)?,
            OP_STORELOCAL | OP_STOREGLOBAL => {
                need(1)?;
                push_next(d.next, depth)?;
            }
            OP_CALL => {
                need(d.n)?;
                push_next(d.next, depth - d.n + 1)?;
            }
            OP_JUMP => push_next(d.k, depth)?,
            OP_JUMPNIL => {
                need(1)?;
                push_next(d.k, depth - 1)?;
                push_next(d.next, depth - 1)?;
            }
            OP_RETURN => {
                if depth != 1 {
                    return Err(fail(format!("return at {at} with stack depth {depth}")));
                }
            }
            OP_CONS | OP_ADD | OP_SUB | OP_MUL | OP_DIV | OP_REM | OP_EQ => {
                need(2)?;
                push_next(d.next, depth - 1)?;
            }
            OP_CAR | OP_CDR => {
                need(1)?;
                push_next(d.next, depth)?;
            }
            OP_POP => {
                need(1)?;
                push_next(d.next, depth - 1)?;
            }
            _ => unreachable!("decode admitted opcode {}", d.op),
        }
    }
    Ok(())
}

// ---- disassembler --------------------------------------------------------------

fn clip(text: &str, max: usize) -> String {
    if text.chars().count() <= max {
        return text.to_string();
    }
    let cut: String = text.chars().take(max).collect();
    format!("{cut}...")
}

pub fn disassemble(s: &Session, chunk: Value) -> String {
    let name = crate::sexpr::print(s, s.chunk_name(chunk));
    let mut out = format!(
        "chunk {name} arity={} locals={} consts={}\n",
        s.chunk_arity(chunk),
        s.chunk_nlocals(chunk),
        s.chunk_nconsts(chunk)
    );
    let code = s.chunk_code(chunk);
    let mut at = 0;
    while at < code.len() {
        let d = match decode_at(&code, at) {
            Ok(d) => d,
            Err(e) => {
                out.push_str(&format!("{at:>4} <{e}>\n"));
                break;
            }
        };
        let mut line = format!("{at:>4} {}", mnemonic(d.op));
        match d.op {
            OP_LOADCONST => {
                let c = s.chunk_const(chunk, d.k);
                line.push_str(&format!(" {} ; {}", d.k, clip(&crate::sexpr::print(s, c), 40)));
            }
            OP_LOADLOCAL | OP_STORELOCAL => line.push_str(&format!(" {}", d.k)),
            OP_LOADGLOBAL | OP_STOREGLOBAL => {
                let c = s.chunk_const(chunk, d.k);
                line.push_str(&format!(" {} ; {}", d.k, clip(&crate::sexpr::print(s, c), 40)));
            }
            OP_CALL => {
                let c = s.chunk_const(chunk, d.k);
                let label = if s.is_chunk(c) {
                    format!("#<chunk {}>", crate::sexpr::print(s, s.chunk_name(c)))
                } else {
                    crate::sexpr::print(s, c)
                };
                line.push_str(&format!(" {} {} ; call {}/{}", d.k, d.n, clip(&label, 40), d.n));
            }
            OP_JUMP | OP_JUMPNIL => line.push_str(&format!(" {} ; -> {}", d.k, d.k)),
            _ => {}
        }
        line.push('\n');
        out.push_str(&line);
        at = d.next;
    }
    out
}

// ---- virtual machine -------------------------------------------------------------

/// Runs a chunk to completion on the session's frame machine. Reentrant: a
/// builtin reached from inside may call back in, so unwinding stops at this
/// invocation's entry depth.
pub fn execute_chunk(s: &mut Session, chunk: Value, args: &[Value]) -> EvalResult {
    let entry_frames = s.vm_frames.len();
    let entry_stack = s.vm_stack.len();
    let entry_locals = s.vm_locals.len();
    let result = push_frame(s, chunk, args).and_then(|()| run(s, entry_frames));
    if result.is_err() {
        while s.vm_frames.len() > entry_frames {
            let frame = s.vm_frames.pop().unwrap();
            s.restore_saves(frame.save_mark);
        }
        s.vm_stack.truncate(entry_stack);
        s.vm_locals.truncate(entry_locals);
    }
    result
}

fn push_frame(s: &mut Session, chunk: Value, args: &[Value]) -> Result<(), EvalError> {
    if s.vm_frames.len() >= s.frame_cap {
        return Err(EvalError::new("call stack overflow"));
    }
    let arity = s.chunk_arity(chunk);
    if args.len() != arity {
        return Err(EvalError::new(format!(
            "wrong number of arguments: expected {arity}, got {}",
            args.len()
        )));
    }
    let save_mark = s.save_mark();
    for (i, &a) in args.iter().enumerate() {
        let p = s.chunk_param(chunk, i);
        s.bind(p, a);
    }
    let locals_base = s.vm_locals.len();
    for _ in 0..s.chunk_nlocals(chunk) {
        s.vm_locals.push(Value::NIL);
    }
    let code = s.chunk_code(chunk);
    s.vm_frames.push(VmFrame {
        chunk,
        code,
        ip: 0,
        stack_base: s.vm_stack.len(),
        locals_base,
        save_mark,
    });
    Ok(())
}

fn run(s: &mut Session, entry_frames: usize) -> EvalResult {
    loop {
        let frame = s.vm_frames.last().expect("running frame");
        let chunk = frame.chunk;
        let locals_base = frame.locals_base;
        let d = decode_at(&frame.code, frame.ip).map_err(EvalError::new)?;
        s.vm_frames.last_mut().expect("running frame").ip = d.next;
        match d.op {
            OP_LOADCONST => {
                let v = s.chunk_const(chunk, d.k);
                s.vm_stack.push(v);
            }
            OP_LOADLOCAL => {
                let v = s.vm_locals[locals_base + d.k];
                s.vm_stack.push(v);
            }
            OP_STORELOCAL => {
                let v = *s.vm_stack.last().expect("verified depth");
                s.vm_locals[locals_base + d.k] = v;
            }
            OP_LOADGLOBAL => {
                let sym = s.chunk_const(chunk, d.k);
                let v = s.symbol_value(sym);
                if v == Value::UNBOUND {
                    return Err(EvalError::new(format!(
                        "unbound variable: {}",
                        s.symbol_name(sym)
                    )));
                }
                s.vm_stack.push(v);
            }
            OP_STOREGLOBAL => {
                let sym = s.chunk_const(chunk, d.k);
                let v = *s.vm_stack.last().expect("verified depth");
                s.set_symbol_value(sym, v);
            }
            OP_CALL => {
                let callee = s.chunk_const(chunk, d.k);
                let at = s.vm_stack.len() - d.n;
                if callee.is_symbol() {
                    match s.syms.get(callee).fun.clone() {
                        FunCell::None => {
                            return Err(EvalError::new(format!(
                                "undefined function: {}",
                                s.symbol_name(callee)
                            )));
                        }
                        FunCell::Builtin(i) => {
                            let args: Vec<Value> = s.vm_stack.split_off(at);
                            let mark = s.shadow_mark();
                            for &a in &args {
                                s.keep(a);
                            }
                            let r = eval::call_builtin(s, i, &args);
                            s.shadow_truncate(mark);
                            s.vm_stack.push(r?);
                        }
                        FunCell::Lambda(src) => {
                            let args: Vec<Value> = s.vm_stack.split_off(at);
                            let mark = s.shadow_mark();
                            for &a in &args {
                                s.keep(a);
                            }
                            let r = eval::apply_lambda(s, src, &args);
                            s.shadow_truncate(mark);
                            s.vm_stack.push(r?);
                        }
                        FunCell::Chunk { chunk: target, .. } => {
                            let args: Vec<Value> = s.vm_stack.split_off(at);
                            let mark = s.shadow_mark();
                            for &a in &args {
                                s.keep(a);
                            }
                            let r = push_frame(s, target, &args);
                            s.shadow_truncate(mark);
                            r?;
                        }
                    }
                } else {
                    // Verified: a non-symbol call target is a chunk.
                    let args: Vec<Value> = s.vm_stack.split_off(at);
                    let mark = s.shadow_mark();
                    for &a in &args {
                        s.keep(a);
                    }
                    let r = push_frame(s, callee, &args);
                    s.shadow_truncate(mark);
                    r?;
                }
            }
            OP_JUMP => {
                s.vm_frames.last_mut().expect("running frame").ip = d.k;
            }
            OP_JUMPNIL => {
                let v = s.vm_stack.pop().expect("verified depth");
                if v.is_nil() {
                    s.vm_frames.last_mut().expect("running frame").ip = d.k;
                }
            }
            OP_RETURN => {
                let result = s.vm_stack.pop().expect("verified depth");
                let frame = s.vm_frames.pop().expect("running frame");
                s.restore_saves(frame.save_mark);
                s.vm_locals.truncate(frame.locals_base);
                s.vm_stack.truncate(frame.stack_base);
                if s.vm_frames.len() == entry_frames {
                    return Ok(result);
                }
                s.vm_stack.push(result);
            }
            OP_CONS => {
                let b = s.vm_stack[s.vm_stack.len() - 1];
                let a = s.vm_stack[s.vm_stack.len() - 2];
                let r = s.alloc_cons(a, b)?;
                s.vm_stack.truncate(s.vm_stack.len() - 2);
                s.vm_stack.push(r);
            }
            OP_CAR | OP_CDR => {
                let v = *s.vm_stack.last().expect("verified depth");
                let r = if d.op == OP_CAR {
                    eval::car_value(s, v)?
                } else {
                    eval::cdr_value(s, v)?
                };
                *s.vm_stack.last_mut().expect("verified depth") = r;
            }
            OP_ADD | OP_SUB | OP_MUL | OP_DIV | OP_REM => {
                let b = s.vm_stack[s.vm_stack.len() - 1];
                let a = s.vm_stack[s.vm_stack.len() - 2];
                let r = match d.op {
                    OP_ADD => crate::bignum::num_add(s, a, b)?,
                    OP_SUB => crate::bignum::num_sub(s, a, b)?,
                    OP_MUL => crate::bignum::num_mul(s, a, b)?,
                    OP_DIV => eval::quotient_values(s, a, b)?,
                    _ => eval::remainder_values(s, a, b)?,
                };
                s.vm_stack.truncate(s.vm_stack.len() - 2);
                s.vm_stack.push(r);
            }
            OP_EQ => {
                let b = s.vm_stack.pop().expect("verified depth");
                let a = s.vm_stack.pop().expect("verified depth");
                let r = if a == b { s.wk.t } else { Value::NIL };
                s.vm_stack.push(r);
            }
            OP_POP => {
                s.vm_stack.pop().expect("verified depth");
            }
            _ => unreachable!("decode admitted opcode {}", d.op),
        }
    }
}
