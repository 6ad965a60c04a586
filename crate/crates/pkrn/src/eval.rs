//! Tree-walking evaluator, builtin functions, and engine dispatch.
//!
//! The tree walker is the semantic reference: the bytecode engine must agree
//! with it observably (result print and bytes written), which the
//! differential engine checks form by form. Control flow inside `prog` is
//! carried as a `Signal` so `go` and `return` unwind Rust frames without
//! unwinding the dynamic binding stack prematurely; each binding site
//! restores its own saves on every exit path.

use crate::session::{Engine, Session};
use crate::sexpr::{print, Reader};
use crate::symbol::FunCell;
use crate::value::Value;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalError {
    pub message: String,
}

impl EvalError {
    pub fn new(message: impl Into<String>) -> EvalError {
        EvalError { message: message.into() }
    }
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for EvalError {}

/// Non-local exits of the tree walker. `Go` and `Return` are caught by the
/// innermost `prog`; reaching a function boundary uncaught is an error.
#[derive(Debug)]
pub enum Signal {
    Error(EvalError),
    Go(Value),
    Return(Value),
}

impl From<EvalError> for Signal {
    fn from(e: EvalError) -> Signal {
        Signal::Error(e)
    }
}

pub type EvalResult = Result<Value, EvalError>;
pub type FlowResult = Result<Value, Signal>;

/// What happened to one reference definition at boot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstateOutcome {
    /// The portable definition was installed as the function.
    Installed,
    /// The name is flagged native and a native definition exists; kept it.
    Skipped,
    /// The name is flagged native but nothing defines it; nothing installed.
    SkippedUndefined,
}

// ---- builtin table ----------------------------------------------------------

pub type BuiltinFn = fn(&mut Session, &[Value]) -> EvalResult;

pub struct Builtin {
    pub name: &'static str,
    pub min_args: usize,
    pub max_args: usize,
    pub run: BuiltinFn,
}

const MANY: usize = usize::MAX;

pub static BUILTINS: &[Builtin] = &[
    Builtin { name: "car", min_args: 1, max_args: 1, run: bi_car },
    Builtin { name: "cdr", min_args: 1, max_args: 1, run: bi_cdr },
    Builtin { name: "cons", min_args: 2, max_args: 2, run: bi_cons },
    Builtin { name: "atom", min_args: 1, max_args: 1, run: bi_atom },
    Builtin { name: "eq", min_args: 2, max_args: 2, run: bi_eq },
    Builtin { name: "null", min_args: 1, max_args: 1, run: bi_null },
    Builtin { name: "numberp", min_args: 1, max_args: 1, run: bi_numberp },
    Builtin { name: "plus", min_args: 0, max_args: MANY, run: bi_plus },
    Builtin { name: "difference", min_args: 2, max_args: 2, run: bi_difference },
    Builtin { name: "times", min_args: 0, max_args: MANY, run: bi_times },
    Builtin { name: "quotient", min_args: 2, max_args: 2, run: bi_quotient },
    Builtin { name: "remainder", min_args: 2, max_args: 2, run: bi_remainder },
    Builtin { name: "greaterp", min_args: 2, max_args: 2, run: bi_greaterp },
    Builtin { name: "lessp", min_args: 2, max_args: 2, run: bi_lessp },
    Builtin { name: "eqn", min_args: 2, max_args: 2, run: bi_eqn },
    Builtin { name: "get", min_args: 2, max_args: 2, run: bi_get },
    Builtin { name: "put", min_args: 3, max_args: 3, run: bi_put },
    Builtin { name: "flag", min_args: 2, max_args: 2, run: bi_flag },
    Builtin { name: "flagp", min_args: 2, max_args: 2, run: bi_flagp },
    Builtin { name: "list", min_args: 0, max_args: MANY, run: bi_list },
    Builtin { name: "reverse", min_args: 1, max_args: 1, run: bi_reverse },
    Builtin { name: "append", min_args: 2, max_args: 2, run: bi_append },
    Builtin { name: "length", min_args: 1, max_args: 1, run: bi_length },
    Builtin { name: "mapcar", min_args: 2, max_args: 2, run: bi_mapcar },
    Builtin { name: "print-value", min_args: 1, max_args: 1, run: bi_print_value },
    Builtin { name: "read-value", min_args: 0, max_args: 0, run: bi_read_value },
    Builtin { name: "error", min_args: 1, max_args: MANY, run: bi_error },
    Builtin { name: "write", min_args: 1, max_args: MANY, run: crate::algebra::bi_write },
    Builtin { name: "aeval", min_args: 1, max_args: 1, run: crate::algebra::bi_aeval },
    Builtin { name: "setmod", min_args: 1, max_args: 1, run: crate::algebra::bi_setmod },
    Builtin { name: "modplus", min_args: 2, max_args: 2, run: crate::algebra::bi_modplus },
    Builtin { name: "moddifference", min_args: 2, max_args: 2, run: crate::algebra::bi_moddifference },
    Builtin { name: "modtimes", min_args: 2, max_args: 2, run: crate::algebra::bi_modtimes },
];

pub fn builtin_index(name: &str) -> Option<u16> {
    BUILTINS.iter().position(|b| b.name == name).map(|i| i as u16)
}

pub fn builtin_name(index: u16) -> Option<&'static str> {
    BUILTINS.get(index as usize).map(|b| b.name)
}

pub fn install_builtins(s: &mut Session) {
    for (i, b) in BUILTINS.iter().enumerate() {
        let sym = s.intern(b.name);
        s.syms.get_mut(sym).fun = FunCell::Builtin(i as u16);
    }
}

pub fn call_builtin(s: &mut Session, index: u16, args: &[Value]) -> EvalResult {
    let b = BUILTINS
        .get(index as usize)
        .ok_or_else(|| EvalError::new(format!("builtin index {index} out of range")))?;
    if args.len() < b.min_args || args.len() > b.max_args {
        return Err(EvalError::new(format!(
            "{}: wrong number of arguments: got {}",
            b.name,
            args.len()
        )));
    }
    (b.run)(s, args)
}

// ---- reference definitions ---------------------------------------------------

/// Installs portable definitions, honoring the `native` flag: a flagged name
/// keeps whatever native definition exists, and the report records every
/// decision so callers can audit which implementation is live.
pub fn instate_reference(
    s: &mut Session,
    defs: &[(&str, &str)],
) -> Result<Vec<(String, InstateOutcome)>, EvalError> {
    let mut report = Vec::new();
    for &(name, source) in defs {
        let sym = s.intern(name);
        let native = s.wk.native;
        if s.syms.get(sym).flags.contains(&native) {
            let defined = !matches!(s.syms.get(sym).fun, FunCell::None);
            let outcome =
                if defined { InstateOutcome::Skipped } else { InstateOutcome::SkippedUndefined };
            report.push((name.to_string(), outcome));
            continue;
        }
        let mut reader = Reader::new(source);
        let form = reader
            .read(s)
            .map_err(|e| EvalError::new(format!("reference definition {name}: {e}")))?
            .ok_or_else(|| EvalError::new(format!("reference definition {name}: empty")))?;
        if !(form.is_cons() && s.car(form) == s.wk.lambda) {
            return Err(EvalError::new(format!("reference definition {name}: not a lambda")));
        }
        s.syms.get_mut(sym).fun = FunCell::Lambda(form);
        report.push((name.to_string(), InstateOutcome::Installed));
    }
    Ok(report)
}

// ---- engine dispatch ----------------------------------------------------------

/// Evaluates one top-level form under the session's engine.
pub fn eval_top(s: &mut Session, form: Value) -> EvalResult {
    let mark = s.shadow_mark();
    s.keep(form);
    let r = match s.engine {
        Engine::Tree => tree_eval(s, form),
        Engine::Byte => byte_eval(s, form),
        Engine::Diff => diff_eval(s, form),
    };
    s.shadow_truncate(mark);
    r
}

pub fn tree_eval(s: &mut Session, form: Value) -> EvalResult {
    run_flow(eval(s, form))
}

fn byte_eval(s: &mut Session, form: Value) -> EvalResult {
    match crate::bytecode::compile_top(s, form)? {
        crate::bytecode::Compiled::Chunk(chunk) => {
            let mark = s.shadow_mark();
            s.keep(chunk);
            let r = crate::bytecode::execute_chunk(s, chunk, &[]);
            s.shadow_truncate(mark);
            r
        }
        crate::bytecode::Compiled::Unsupported(_) => tree_eval(s, form),
    }
}

/// Runs the form on a tree-engine clone and on this session's bytecode
/// engine, then compares the printed result and the bytes written. The
/// bytecode outcome is what survives; two errors count as agreement since
/// message texts legitimately differ.
fn diff_eval(s: &mut Session, form: Value) -> EvalResult {
    let mut probe = s.clone();
    probe.engine = Engine::Tree;
    let probe_out_mark = probe.out.len();
    let tree_result = eval_top(&mut probe, form);
    let out_mark = s.out.len();
    let byte_result = byte_eval(s, form);
    match (&tree_result, &byte_result) {
        (Err(_), Err(_)) => byte_result,
        (Ok(tv), Ok(bv)) => {
            let tp = print(&probe, *tv);
            let bp = print(s, *bv);
            if tp != bp {
                return Err(EvalError::new(format!(
                    "engine divergence: tree gave {tp}, bytecode gave {bp}"
                )));
            }
            if probe.out[probe_out_mark..] != s.out[out_mark..] {
                return Err(EvalError::new("engine divergence: output differs"));
            }
            byte_result
        }
        (Ok(tv), Err(e)) => Err(EvalError::new(format!(
            "engine divergence: tree gave {}, bytecode failed: {}",
            print(&probe, *tv),
            e.message
        ))),
        (Err(e), Ok(bv)) => Err(EvalError::new(format!(
            "engine divergence: tree failed ({}), bytecode gave {}",
            e.message,
            print(s, *bv)
        ))),
    }
}

pub fn run_flow(r: FlowResult) -> EvalResult {
    match r {
        Ok(v) => Ok(v),
        Err(Signal::Error(e)) => Err(e),
        Err(Signal::Go(_)) => Err(EvalError::new("go used outside prog")),
        Err(Signal::Return(_)) => Err(EvalError::new("return used outside prog")),
    }
}

/// Reads and evaluates every form in `text`, returning printed results.
pub fn run_text(s: &mut Session, text: &str) -> Result<Vec<String>, EvalError> {
    let mut results = Vec::new();
    let mut reader = Reader::new(text);
    loop {
        match reader.read(s) {
            Ok(None) => return Ok(results),
            Ok(Some(form)) => {
                let v = eval_top(s, form)?;
                results.push(print(s, v));
            }
            Err(e) => return Err(EvalError::new(format!("parse error: {e}"))),
        }
    }
}

// ---- tree walker ----------------------------------------------------------------

pub fn eval(s: &mut Session, form: Value) -> FlowResult {
    s.depth += 1;
    if s.depth > s.depth_cap {
        s.depth -= 1;
        return Err(Signal::Error(EvalError::new("evaluation too deep")));
    }
    let r = eval_inner(s, form);
    s.depth -= 1;
    r
}

fn eval_inner(s: &mut Session, form: Value) -> FlowResult {
    use crate::value::TypeTag;
    match form.tag() {
        TypeTag::Fixnum | TypeTag::Immediate | TypeTag::HeapObj => Ok(form),
        TypeTag::Symbol => {
            let v = s.symbol_value(form);
            if v == Value::UNBOUND {
                Err(Signal::Error(EvalError::new(format!(
                    "unbound variable: {}",
                    s.symbol_name(form)
                ))))
            } else {
                Ok(v)
            }
        }
        TypeTag::Cons => eval_call(s, form),
    }
}

/// Splits a form into a proper-list item vector, rejecting dotted tails.
pub fn form_items(s: &Session, v: Value) -> Result<Vec<Value>, EvalError> {
    s.proper_list(v)
        .ok_or_else(|| EvalError::new(format!("malformed form: improper list: {}", print(s, v))))
}

fn eval_call(s: &mut Session, form: Value) -> FlowResult {
    let head = s.car(form);
    let rest = s.cdr(form);
    if head.is_symbol() {
        let wk = s.wk;
        if head == wk.quote {
            let items = form_items(s, rest)?;
            if items.len() != 1 {
                return Err(EvalError::new("quote: expected one argument").into());
            }
            return Ok(items[0]);
        }
        if head == wk.cond {
            return sf_cond(s, rest);
        }
        if head == wk.prog {
            return sf_prog(s, rest);
        }
        if head == wk.setq {
            return sf_setq(s, rest);
        }
        if head == wk.lambda {
            return Err(EvalError::new("lambda form is only callable, not evaluable").into());
        }
        if head == wk.de {
            return sf_de(s, rest);
        }
        if head == wk.go {
            let items = form_items(s, rest)?;
            if items.len() != 1 || !items[0].is_symbol() {
                return Err(EvalError::new("go: expected a label symbol").into());
            }
            return Err(Signal::Go(items[0]));
        }
        if head == wk.ret {
            let items = form_items(s, rest)?;
            if items.len() != 1 {
                return Err(EvalError::new("return: expected one argument").into());
            }
            let v = eval(s, items[0])?;
            return Err(Signal::Return(v));
        }
        if head == wk.progn {
            let items = form_items(s, rest)?;
            return eval_seq(s, &items);
        }
        if head == wk.and_ {
            let items = form_items(s, rest)?;
            let mut last = s.wk.t;
            for &item in &items {
                last = eval(s, item)?;
                if last.is_nil() {
                    return Ok(Value::NIL);
                }
            }
            return Ok(last);
        }
        if head == wk.or_ {
            let items = form_items(s, rest)?;
            for &item in &items {
                let v = eval(s, item)?;
                if !v.is_nil() {
                    return Ok(v);
                }
            }
            return Ok(Value::NIL);
        }
        let args = eval_args(s, rest)?;
        let mark = s.shadow_mark();
        for &a in &args {
            s.keep(a);
        }
        let r = apply_function(s, head, &args);
        s.shadow_truncate(mark);
        return r.map_err(Signal::Error);
    }
    if head.is_cons() && s.car(head) == s.wk.lambda {
        let args = eval_args(s, rest)?;
        let mark = s.shadow_mark();
        for &a in &args {
            s.keep(a);
        }
        let r = apply_lambda(s, head, &args);
        s.shadow_truncate(mark);
        return r.map_err(Signal::Error);
    }
    Err(EvalError::new(format!("not a function: {}", print(s, head))).into())
}

fn eval_args(s: &mut Session, rest: Value) -> Result<Vec<Value>, Signal> {
    let items = form_items(s, rest)?;
    let mark = s.shadow_mark();
    let mut args = Vec::with_capacity(items.len());
    for &item in &items {
        match eval(s, item) {
            Ok(v) => {
                s.keep(v);
                args.push(v);
            }
            Err(e) => {
                s.shadow_truncate(mark);
                return Err(e);
            }
        }
    }
    s.shadow_truncate(mark);
    Ok(args)
}

fn eval_seq(s: &mut Session, items: &[Value]) -> FlowResult {
    let mut last = Value::NIL;
    for &item in items {
        last = eval(s, item)?;
    }
    Ok(last)
}

fn sf_cond(s: &mut Session, rest: Value) -> FlowResult {
    let clauses = form_items(s, rest)?;
    for &clause in &clauses {
        let items = form_items(s, clause)?;
        if items.is_empty() {
            return Err(EvalError::new("cond: empty clause").into());
        }
        let test = eval(s, items[0])?;
        if !test.is_nil() {
            if items.len() == 1 {
                return Ok(test);
            }
            return eval_seq(s, &items[1..]);
        }
    }
    Ok(Value::NIL)
}

/// Checks that a symbol may carry a binding or assignment.
fn bindable(s: &Session, v: Value) -> Result<(), EvalError> {
    if !v.is_symbol() {
        return Err(EvalError::new(format!("not a bindable symbol: {}", print(s, v))));
    }
    if v.is_nil() || v == s.wk.t {
        return Err(EvalError::new(format!("cannot rebind {}", s.symbol_name(v))));
    }
    Ok(())
}

fn sf_setq(s: &mut Session, rest: Value) -> FlowResult {
    let items = form_items(s, rest)?;
    if items.len() != 2 {
        return Err(EvalError::new("setq: expected a variable and one value").into());
    }
    bindable(s, items[0])?;
    let v = eval(s, items[1])?;
    s.set_symbol_value(items[0], v);
    Ok(v)
}

fn sf_prog(s: &mut Session, rest: Value) -> FlowResult {
    let items = form_items(s, rest)?;
    if items.is_empty() {
        return Err(EvalError::new("prog: expected a variable list").into());
    }
    let vars = form_items(s, items[0])?;
    for &v in &vars {
        bindable(s, v)?;
    }
    let body = &items[1..];
    let mark = s.save_mark();
    for &v in &vars {
        s.bind(v, Value::NIL);
    }
    let mut i = 0;
    let result = loop {
        if i >= body.len() {
            break Ok(Value::NIL);
        }
        let form = body[i];
        if form.is_symbol() {
            i += 1;
            continue;
        }
        match eval(s, form) {
            Ok(_) => i += 1,
            Err(Signal::Go(label)) => match body.iter().position(|&b| b == label) {
                Some(j) => i = j + 1,
                // Labels are scoped to their own prog body; a go may not
                // jump into an enclosing prog.
                None => {
                    break Err(EvalError::new(format!(
                        "go: undefined label: {}",
                        s.symbol_name(label)
                    ))
                    .into());
                }
            },
            Err(Signal::Return(v)) => break Ok(v),
            Err(e) => break Err(e),
        }
    };
    s.restore_saves(mark);
    result
}

fn sf_de(s: &mut Session, rest: Value) -> FlowResult {
    let items = form_items(s, rest)?;
    if items.len() < 2 {
        return Err(EvalError::new("de: expected a name and a parameter list").into());
    }
    let name = items[0];
    if !name.is_symbol() || name.is_nil() || name == s.wk.t {
        return Err(EvalError::new("de: name must be a symbol").into());
    }
    let params = form_items(s, items[1])?;
    for &p in &params {
        bindable(s, p)?;
    }
    // Shares structure with the definition form: (lambda params body...).
    let lam = s.wk.lambda;
    let tail = s.cdr(rest);
    let source = s.alloc_cons(lam, tail)?;
    let mark = s.shadow_mark();
    s.keep(source);
    let fun = if s.engine == Engine::Tree {
        FunCell::Lambda(source)
    } else {
        match crate::bytecode::compile_function(s, name, &params, &items[2..]) {
            Ok(crate::bytecode::Compiled::Chunk(chunk)) => FunCell::Chunk { chunk, source },
            Ok(crate::bytecode::Compiled::Unsupported(_)) => FunCell::Lambda(source),
            Err(e) => {
                s.shadow_truncate(mark);
                return Err(e.into());
            }
        }
    };
    s.shadow_truncate(mark);
    s.syms.get_mut(name).fun = fun;
    Ok(name)
}

// ---- application -------------------------------------------------------------

/// Applies a function designator: a symbol with a function cell, a literal
/// `(lambda ...)` form, or a compiled chunk object.
pub fn apply_function(s: &mut Session, f: Value, args: &[Value]) -> EvalResult {
    if f.is_symbol() {
        let fun = s.syms.get(f).fun.clone();
        return match fun {
            FunCell::None => {
                Err(EvalError::new(format!("undefined function: {}", s.symbol_name(f))))
            }
            FunCell::Builtin(i) => call_builtin(s, i, args),
            FunCell::Lambda(src) => apply_lambda(s, src, args),
            FunCell::Chunk { chunk, source } => {
                if s.engine == Engine::Tree {
                    apply_lambda(s, source, args)
                } else {
                    crate::bytecode::execute_chunk(s, chunk, args)
                }
            }
        };
    }
    if f.is_cons() && s.car(f) == s.wk.lambda {
        return apply_lambda(s, f, args);
    }
    if s.is_chunk(f) {
        return crate::bytecode::execute_chunk(s, f, args);
    }
    Err(EvalError::new(format!("not a function: {}", print(s, f))))
}

pub fn apply_lambda(s: &mut Session, src: Value, args: &[Value]) -> EvalResult {
    let items = form_items(s, src)?;
    if items.len() < 2 || items[0] != s.wk.lambda {
        return Err(EvalError::new(format!("malformed lambda: {}", print(s, src))));
    }
    let params = form_items(s, items[1])?;
    for &p in &params {
        bindable(s, p)?;
    }
    if params.len() != args.len() {
        return Err(EvalError::new(format!(
            "wrong number of arguments: expected {}, got {}",
            params.len(),
            args.len()
        )));
    }
    // Root the source: the body may redefine this very function, dropping
    // the function cell that kept it alive.
    let shadow = s.shadow_mark();
    s.keep(src);
    let mark = s.save_mark();
    for (&p, &a) in params.iter().zip(args) {
        s.bind(p, a);
    }
    let r = eval_seq(s, &items[2..]);
    s.restore_saves(mark);
    s.shadow_truncate(shadow);
    run_flow(r)
}

// ---- core builtins -------------------------------------------------------------

/// `car` semantics shared by the builtin and the dedicated opcode.
pub fn car_value(s: &Session, v: Value) -> EvalResult {
    if v.is_nil() || v.is_cons() {
        Ok(s.car(v))
    } else {
        Err(EvalError::new(format!("car: not a list: {}", print(s, v))))
    }
}

pub fn cdr_value(s: &Session, v: Value) -> EvalResult {
    if v.is_nil() || v.is_cons() {
        Ok(s.cdr(v))
    } else {
        Err(EvalError::new(format!("cdr: not a list: {}", print(s, v))))
    }
}

fn bi_car(s: &mut Session, args: &[Value]) -> EvalResult {
    car_value(s, args[0])
}

fn bi_cdr(s: &mut Session, args: &[Value]) -> EvalResult {
    cdr_value(s, args[0])
}

fn bi_cons(s: &mut Session, args: &[Value]) -> EvalResult {
    s.alloc_cons(args[0], args[1])
}

fn truth(s: &Session, b: bool) -> Value {
    if b {
        s.wk.t
    } else {
        Value::NIL
    }
}

fn bi_atom(s: &mut Session, args: &[Value]) -> EvalResult {
    Ok(truth(s, !args[0].is_cons()))
}

fn bi_eq(s: &mut Session, args: &[Value]) -> EvalResult {
    Ok(truth(s, args[0] == args[1]))
}

fn bi_null(s: &mut Session, args: &[Value]) -> EvalResult {
    Ok(truth(s, args[0].is_nil()))
}

fn bi_numberp(s: &mut Session, args: &[Value]) -> EvalResult {
    Ok(truth(s, crate::bignum::is_number(s, args[0])))
}

fn bi_plus(s: &mut Session, args: &[Value]) -> EvalResult {
    let mut acc = Value::fixnum(0);
    let mark = s.shadow_mark();
    for &a in args {
        match crate::bignum::num_add(s, acc, a) {
            Ok(v) => {
                s.shadow_truncate(mark);
                s.keep(v);
                acc = v;
            }
            Err(e) => {
                s.shadow_truncate(mark);
                return Err(e);
            }
        }
    }
    s.shadow_truncate(mark);
    Ok(acc)
}

fn bi_difference(s: &mut Session, args: &[Value]) -> EvalResult {
    crate::bignum::num_sub(s, args[0], args[1])
}

fn bi_times(s: &mut Session, args: &[Value]) -> EvalResult {
    let mut acc = Value::fixnum(1);
    let mark = s.shadow_mark();
    for &a in args {
        match crate::bignum::num_mul(s, acc, a) {
            Ok(v) => {
                s.shadow_truncate(mark);
                s.keep(v);
                acc = v;
            }
            Err(e) => {
                s.shadow_truncate(mark);
                return Err(e);
            }
        }
    }
    s.shadow_truncate(mark);
    Ok(acc)
}

/// `quotient` semantics shared by the builtin and the dedicated opcode:
/// float contagion gives true division, integers divide truncating.
pub fn quotient_values(s: &mut Session, a: Value, b: Value) -> EvalResult {
    use crate::bignum;
    if bignum::is_float(s, a) || bignum::is_float(s, b) {
        let fa = bignum::as_f64(s, a).ok_or_else(|| EvalError::new("quotient: not a number"))?;
        let fb = bignum::as_f64(s, b).ok_or_else(|| EvalError::new("quotient: not a number"))?;
        if fb == 0.0 {
            return Err(EvalError::new("division by zero"));
        }
        return s.alloc_float(fa / fb);
    }
    Ok(bignum::num_divrem(s, a, b)?.0)
}

pub fn remainder_values(s: &mut Session, a: Value, b: Value) -> EvalResult {
    use crate::bignum;
    if bignum::is_float(s, a) || bignum::is_float(s, b) {
        return Err(EvalError::new("remainder: integer arguments required"));
    }
    Ok(bignum::num_divrem(s, a, b)?.1)
}

fn bi_quotient(s: &mut Session, args: &[Value]) -> EvalResult {
    quotient_values(s, args[0], args[1])
}

fn bi_remainder(s: &mut Session, args: &[Value]) -> EvalResult {
    remainder_values(s, args[0], args[1])
}

fn bi_greaterp(s: &mut Session, args: &[Value]) -> EvalResult {
    let ord = crate::bignum::num_cmp(s, args[0], args[1])?;
    Ok(truth(s, ord == std::cmp::Ordering::Greater))
}

fn bi_lessp(s: &mut Session, args: &[Value]) -> EvalResult {
    let ord = crate::bignum::num_cmp(s, args[0], args[1])?;
    Ok(truth(s, ord == std::cmp::Ordering::Less))
}

fn bi_eqn(s: &mut Session, args: &[Value]) -> EvalResult {
    let ord = crate::bignum::num_cmp(s, args[0], args[1])?;
    Ok(truth(s, ord == std::cmp::Ordering::Equal))
}

fn symbol_arg(s: &Session, op: &str, v: Value) -> Result<Value, EvalError> {
    if v.is_symbol() {
        Ok(v)
    } else {
        Err(EvalError::new(format!("{op}: not a symbol: {}", print(s, v))))
    }
}

fn bi_get(s: &mut Session, args: &[Value]) -> EvalResult {
    let sym = symbol_arg(s, "get", args[0])?;
    let key = args[1];
    Ok(s.syms
        .get(sym)
        .plist
        .iter()
        .find(|(k, _)| *k == key)
        .map_or(Value::NIL, |&(_, v)| v))
}

fn bi_put(s: &mut Session, args: &[Value]) -> EvalResult {
    let sym = symbol_arg(s, "put", args[0])?;
    let (key, val) = (args[1], args[2]);
    let plist = &mut s.syms.get_mut(sym).plist;
    match plist.iter_mut().find(|(k, _)| *k == key) {
        Some(entry) => entry.1 = val,
        None => plist.push((key, val)),
    }
    Ok(val)
}

/// Marks one symbol or every symbol in a list with the given flag.
fn bi_flag(s: &mut Session, args: &[Value]) -> EvalResult {
    let targets = if args[0].is_cons() || args[0] == Value::NIL {
        list_arg(s, "flag", args[0])?
    } else {
        vec![args[0]]
    };
    let flag = args[1];
    for target in targets {
        let sym = symbol_arg(s, "flag", target)?;
        let flags = &mut s.syms.get_mut(sym).flags;
        if !flags.contains(&flag) {
            flags.push(flag);
        }
    }
    Ok(s.wk.t)
}

fn bi_flagp(s: &mut Session, args: &[Value]) -> EvalResult {
    let sym = symbol_arg(s, "flagp", args[0])?;
    Ok(truth(s, s.syms.get(sym).flags.contains(&args[1])))
}

fn bi_list(s: &mut Session, args: &[Value]) -> EvalResult {
    s.list_from(args)
}

fn list_arg(s: &Session, op: &str, v: Value) -> Result<Vec<Value>, EvalError> {
    s.proper_list(v)
        .ok_or_else(|| EvalError::new(format!("{op}: not a proper list: {}", print(s, v))))
}

fn bi_reverse(s: &mut Session, args: &[Value]) -> EvalResult {
    let items = list_arg(s, "reverse", args[0])?;
    let mut acc = Value::NIL;
    for &item in &items {
        acc = s.alloc_cons(item, acc)?;
    }
    Ok(acc)
}

fn bi_append(s: &mut Session, args: &[Value]) -> EvalResult {
    let items = list_arg(s, "append", args[0])?;
    let mut acc = args[1];
    for &item in items.iter().rev() {
        acc = s.alloc_cons(item, acc)?;
    }
    Ok(acc)
}

fn bi_length(s: &mut Session, args: &[Value]) -> EvalResult {
    let items = list_arg(s, "length", args[0])?;
    Ok(Value::fixnum(items.len() as i64))
}

// Canonical argument order is function first; list-first input dialects are
// rewritten to this order at translation time, never here.
fn bi_mapcar(s: &mut Session, args: &[Value]) -> EvalResult {
    let (f, list) = (args[0], args[1]);
    let items = list_arg(s, "mapcar", list)?;
    let mark = s.shadow_mark();
    let mut results = Vec::with_capacity(items.len());
    for &item in &items {
        match apply_function(s, f, &[item]) {
            Ok(v) => {
                s.keep(v);
                results.push(v);
            }
            Err(e) => {
                s.shadow_truncate(mark);
                return Err(e);
            }
        }
    }
    let out = s.list_from(&results);
    s.shadow_truncate(mark);
    out
}

fn bi_print_value(s: &mut Session, args: &[Value]) -> EvalResult {
    let text = print(s, args[0]);
    s.write_out(&text);
    s.write_out("\n");
    Ok(args[0])
}

fn bi_read_value(s: &mut Session, _args: &[Value]) -> EvalResult {
    let text = std::mem::take(&mut s.input);
    let base = s.input_pos;
    let mut reader = Reader::new(&text[base..]);
    let outcome = reader.read(s);
    let consumed = reader.pos();
    s.input = text;
    match outcome {
        Ok(Some(v)) => {
            s.input_pos = base + consumed;
            Ok(v)
        }
        Ok(None) => Err(EvalError::new("read-value: end of input")),
        Err(e) => Err(EvalError::new(format!("read-value: {e}"))),
    }
}

fn bi_error(s: &mut Session, args: &[Value]) -> EvalResult {
    use crate::heap::ObjKind;
    let mut message = String::new();
    for (i, &a) in args.iter().enumerate() {
        if i > 0 {
            message.push(' ');
        }
        if s.is_obj_kind(a, ObjKind::Str) {
            message.push_str(&s.string_text(a));
        } else {
            message.push_str(&print(s, a));
        }
    }
    Err(EvalError::new(message))
}
