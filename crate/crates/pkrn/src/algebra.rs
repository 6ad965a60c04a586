//! Polynomial algebra over the kernel: canonical forms, arithmetic,
//! differentiation, substitution, and modular arithmetic.
//!
//! A standard form is built from kernel values: an integer (fixnum or
//! bignum), an exact rational `(:rn: . (num . den))` with den > 1 and
//! gcd-reduced, or a polynomial `(var . termlist)` whose termlist holds
//! `(exponent . coefficient)` pairs in strictly decreasing exponent order
//! with no zero coefficients. A polynomial's coefficients may only mention
//! variables of larger interning index than its main variable, so the
//! representation is canonical: mathematically equal forms are structurally
//! identical. Rationals appear only at the coefficient level; with a modulus
//! set, coefficients are integers in [0, m).
//!
//! The Lisp boundary never sees these internals: `aeval` and `write` lower
//! results to ordinary prefix forms (numbers, `(quotient n d)`, and
//! plus/times/expt trees) that re-evaluate to the same form.

use crate::bignum::{self, to_decimal};
use crate::eval::{self, EvalError, EvalResult};
use crate::session::Session;
use crate::sexpr::print;
use crate::symbol::FunCell;
use crate::value::Value;
use std::cmp::Ordering;

/// Modular arithmetic names eligible for a native implementation; the
/// `native` flag on these decides whether the reference definitions stand.
pub const NATIVE_ARITH_NAMES: &[&str] = &["modplus", "moddifference", "modtimes"];

/// Portable definitions written in the core language itself. `modnorm` is
/// always installed; the other three give way to natives when flagged.
pub const REFERENCE_DEFS: &[(&str, &str)] = &[
    (
        "modnorm",
        "(lambda (a) (remainder (plus (remainder a current-modulus) current-modulus) \
         current-modulus))",
    ),
    ("modplus", "(lambda (a b) (modnorm (plus a b)))"),
    ("moddifference", "(lambda (a b) (modnorm (difference a b)))"),
    ("modtimes", "(lambda (a b) (modnorm (times a b)))"),
];

const ZERO: Value = Value::fixnum_const(0);
const ONE: Value = Value::fixnum_const(1);

// ---- coefficient layer -------------------------------------------------------

pub fn is_rat(s: &Session, v: Value) -> bool {
    v.is_cons() && s.car(v) == s.wk.rn
}

pub fn is_poly(s: &Session, v: Value) -> bool {
    v.is_cons() && s.car(v) != s.wk.rn
}

fn rat_parts(s: &Session, v: Value) -> (Value, Value) {
    let pair = s.cdr(v);
    (s.car(pair), s.cdr(pair))
}

/// Splits an integer or rational into (numerator, denominator).
fn split_ratio(s: &Session, v: Value) -> Result<(Value, Value), EvalError> {
    if bignum::is_int(s, v) {
        Ok((v, ONE))
    } else if is_rat(s, v) {
        Ok(rat_parts(s, v))
    } else {
        Err(EvalError::new(format!("not a numeric coefficient: {}", print(s, v))))
    }
}

fn is_coeff_number(s: &Session, v: Value) -> bool {
    bignum::is_int(s, v) || is_rat(s, v)
}

fn int_sign(s: &Session, v: Value) -> Ordering {
    bignum::num_cmp(s, v, ZERO).expect("integer sign")
}

fn int_abs(s: &mut Session, v: Value) -> EvalResult {
    if int_sign(s, v) == Ordering::Less {
        bignum::num_neg(s, v)
    } else {
        Ok(v)
    }
}

fn int_gcd(s: &mut Session, a: Value, b: Value) -> EvalResult {
    let mark = s.shadow_mark();
    let mut a = int_abs(s, a)?;
    s.keep(a);
    let mut b = int_abs(s, b)?;
    s.keep(b);
    while b != ZERO {
        let (_, r) = bignum::num_divrem(s, a, b)?;
        a = b;
        b = r;
        s.shadow_truncate(mark);
        s.keep(a);
        s.keep(b);
    }
    s.shadow_truncate(mark);
    Ok(a)
}

/// Builds the canonical exact ratio: gcd-reduced, positive denominator,
/// collapsing to a plain integer when the denominator is 1.
pub fn make_rat(s: &mut Session, num: Value, den: Value) -> EvalResult {
    if den == ZERO || int_sign(s, den) == Ordering::Equal {
        return Err(EvalError::new("division by zero"));
    }
    if num == ZERO || int_sign(s, num) == Ordering::Equal {
        return Ok(ZERO);
    }
    let mark = s.shadow_mark();
    let (mut num, mut den) = (num, den);
    if int_sign(s, den) == Ordering::Less {
        num = bignum::num_neg(s, num)?;
        s.keep(num);
        den = bignum::num_neg(s, den)?;
        s.keep(den);
    }
    let g = int_gcd(s, num, den)?;
    s.keep(g);
    if g != ONE {
        num = bignum::num_divrem(s, num, g)?.0;
        s.keep(num);
        den = bignum::num_divrem(s, den, g)?.0;
        s.keep(den);
    }
    let out = if den == ONE {
        num
    } else {
        let pair = s.alloc_cons(num, den)?;
        s.keep(pair);
        let rn = s.wk.rn;
        s.alloc_cons(rn, pair)?
    };
    s.shadow_truncate(mark);
    Ok(out)
}

fn modulus_value(s: &Session) -> Option<Value> {
    let v = s.symbol_value(s.wk.current_modulus);
    if v == Value::UNBOUND || v.is_nil() {
        None
    } else {
        Some(v)
    }
}

/// Reduces an integer into [0, m).
fn norm_mod(s: &mut Session, v: Value, m: Value) -> EvalResult {
    if !bignum::is_int(s, v) {
        return Err(EvalError::new(format!(
            "rational or non-integer coefficient with modulus set: {}",
            print(s, v)
        )));
    }
    let (_, r) = bignum::num_divrem(s, v, m)?;
    if int_sign(s, r) == Ordering::Less {
        let mark = s.shadow_mark();
        s.keep(r);
        let out = bignum::num_add(s, r, m);
        s.shadow_truncate(mark);
        out
    } else {
        Ok(r)
    }
}

fn coeff_add(s: &mut Session, a: Value, b: Value) -> EvalResult {
    if let Some(m) = modulus_value(s) {
        let mark = s.shadow_mark();
        let a = norm_mod(s, a, m)?;
        s.keep(a);
        let b = norm_mod(s, b, m)?;
        s.keep(b);
        let sum = bignum::num_add(s, a, b)?;
        s.keep(sum);
        let out = norm_mod(s, sum, m);
        s.shadow_truncate(mark);
        return out;
    }
    let (an, ad) = split_ratio(s, a)?;
    let (bn, bd) = split_ratio(s, b)?;
    let mark = s.shadow_mark();
    let x = bignum::num_mul(s, an, bd)?;
    s.keep(x);
    let y = bignum::num_mul(s, bn, ad)?;
    s.keep(y);
    let num = bignum::num_add(s, x, y)?;
    s.keep(num);
    let den = bignum::num_mul(s, ad, bd)?;
    s.keep(den);
    let out = make_rat(s, num, den);
    s.shadow_truncate(mark);
    out
}

fn coeff_mul(s: &mut Session, a: Value, b: Value) -> EvalResult {
    if let Some(m) = modulus_value(s) {
        let mark = s.shadow_mark();
        let a = norm_mod(s, a, m)?;
        s.keep(a);
        let b = norm_mod(s, b, m)?;
        s.keep(b);
        let prod = bignum::num_mul(s, a, b)?;
        s.keep(prod);
        let out = norm_mod(s, prod, m);
        s.shadow_truncate(mark);
        return out;
    }
    let (an, ad) = split_ratio(s, a)?;
    let (bn, bd) = split_ratio(s, b)?;
    let mark = s.shadow_mark();
    let num = bignum::num_mul(s, an, bn)?;
    s.keep(num);
    let den = bignum::num_mul(s, ad, bd)?;
    s.keep(den);
    let out = make_rat(s, num, den);
    s.shadow_truncate(mark);
    out
}

fn coeff_neg(s: &mut Session, a: Value) -> EvalResult {
    if let Some(m) = modulus_value(s) {
        let mark = s.shadow_mark();
        let a = norm_mod(s, a, m)?;
        s.keep(a);
        let n = bignum::num_neg(s, a)?;
        s.keep(n);
        let out = norm_mod(s, n, m);
        s.shadow_truncate(mark);
        return out;
    }
    let (an, ad) = split_ratio(s, a)?;
    let mark = s.shadow_mark();
    let num = bignum::num_neg(s, an)?;
    s.keep(num);
    let out = make_rat(s, num, ad);
    s.shadow_truncate(mark);
    out
}

fn coeff_div(s: &mut Session, a: Value, b: Value) -> EvalResult {
    if modulus_value(s).is_some() {
        return Err(EvalError::new("division with a modulus set is not supported"));
    }
    let (an, ad) = split_ratio(s, a)?;
    let (bn, bd) = split_ratio(s, b)?;
    if bn == ZERO || int_sign(s, bn) == Ordering::Equal {
        return Err(EvalError::new("division by zero"));
    }
    let mark = s.shadow_mark();
    let num = bignum::num_mul(s, an, bd)?;
    s.keep(num);
    let den = bignum::num_mul(s, ad, bn)?;
    s.keep(den);
    let out = make_rat(s, num, den);
    s.shadow_truncate(mark);
    out
}

// ---- standard-form structure ---------------------------------------------------

pub fn main_var(s: &Session, p: Value) -> Value {
    s.car(p)
}

/// `a` is more main than `b` when it was interned earlier.
fn outranks(a: Value, b: Value) -> bool {
    a.symbol_index() < b.symbol_index()
}

fn terms_vec(s: &Session, p: Value) -> Vec<(i64, Value)> {
    let mut out = Vec::new();
    let mut cur = s.cdr(p);
    while cur.is_cons() {
        let term = s.car(cur);
        out.push((s.car(term).as_fixnum(), s.cdr(term)));
        cur = s.cdr(cur);
    }
    out
}

/// Builds a polynomial from terms sorted by strictly decreasing exponent and
/// free of zero coefficients, collapsing degenerate shapes.
fn make_poly(s: &mut Session, var: Value, terms: &[(i64, Value)]) -> EvalResult {
    debug_assert!(terms.windows(2).all(|w| w[0].0 > w[1].0));
    debug_assert!(terms.iter().all(|&(e, _)| e >= 0));
    if terms.is_empty() {
        return Ok(ZERO);
    }
    if terms.len() == 1 && terms[0].0 == 0 {
        return Ok(terms[0].1);
    }
    let mark = s.shadow_mark();
    let mut list = Value::NIL;
    for &(e, c) in terms.iter().rev() {
        let term = s.alloc_cons(Value::fixnum(e), c)?;
        s.keep(term);
        list = s.alloc_cons(term, list)?;
        s.shadow_truncate(mark);
        s.keep(list);
    }
    let out = s.alloc_cons(var, list);
    s.shadow_truncate(mark);
    out
}

fn kernel(s: &mut Session, var: Value) -> EvalResult {
    make_poly(s, var, &[(1, ONE)])
}

fn is_zero_sf(v: Value) -> bool {
    v == ZERO
}

// ---- arithmetic -----------------------------------------------------------------

pub fn sf_add(s: &mut Session, a: Value, b: Value) -> EvalResult {
    let pa = is_poly(s, a);
    let pb = is_poly(s, b);
    if !pa && !pb {
        return coeff_add(s, a, b);
    }
    if pa && (!pb || outranks(main_var(s, a), main_var(s, b))) {
        return add_lower(s, a, b);
    }
    if pb && (!pa || outranks(main_var(s, b), main_var(s, a))) {
        return add_lower(s, b, a);
    }
    // Same main variable: merge the term lists.
    let var = main_var(s, a);
    let ta = terms_vec(s, a);
    let tb = terms_vec(s, b);
    let mark = s.shadow_mark();
    let mut out: Vec<(i64, Value)> = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < ta.len() || j < tb.len() {
        let pick_a = j >= tb.len() || (i < ta.len() && ta[i].0 > tb[j].0);
        let pick_b = i >= ta.len() || (j < tb.len() && tb[j].0 > ta[i].0);
        if pick_a {
            out.push(ta[i]);
            i += 1;
        } else if pick_b {
            out.push(tb[j]);
            j += 1;
        } else {
            let c = sf_add(s, ta[i].1, tb[j].1)?;
            if !is_zero_sf(c) {
                s.keep(c);
                out.push((ta[i].0, c));
            }
            i += 1;
            j += 1;
        }
    }
    let r = make_poly(s, var, &out);
    s.shadow_truncate(mark);
    r
}

/// Adds `c` (strictly lower rank than p's main variable, or a number) into
/// the exponent-0 slot of `p`.
fn add_lower(s: &mut Session, p: Value, c: Value) -> EvalResult {
    if is_zero_sf(c) {
        return Ok(p);
    }
    let var = main_var(s, p);
    let ts = terms_vec(s, p);
    let mark = s.shadow_mark();
    let mut out: Vec<(i64, Value)> = Vec::new();
    let mut absorbed = false;
    for &(e, coeff) in &ts {
        if e == 0 {
            let merged = sf_add(s, coeff, c)?;
            if !is_zero_sf(merged) {
                s.keep(merged);
                out.push((0, merged));
            }
            absorbed = true;
        } else {
            out.push((e, coeff));
        }
    }
    if !absorbed {
        out.push((0, c));
    }
    let r = make_poly(s, var, &out);
    s.shadow_truncate(mark);
    r
}

pub fn sf_neg(s: &mut Session, a: Value) -> EvalResult {
    if !is_poly(s, a) {
        return coeff_neg(s, a);
    }
    let var = main_var(s, a);
    let ts = terms_vec(s, a);
    let mark = s.shadow_mark();
    let mut out = Vec::with_capacity(ts.len());
    for &(e, c) in &ts {
        let n = sf_neg(s, c)?;
        s.keep(n);
        out.push((e, n));
    }
    let r = make_poly(s, var, &out);
    s.shadow_truncate(mark);
    r
}

pub fn sf_sub(s: &mut Session, a: Value, b: Value) -> EvalResult {
    let mark = s.shadow_mark();
    let nb = sf_neg(s, b)?;
    s.keep(nb);
    let r = sf_add(s, a, nb);
    s.shadow_truncate(mark);
    r
}

pub fn sf_mul(s: &mut Session, a: Value, b: Value) -> EvalResult {
    if is_zero_sf(a) || is_zero_sf(b) {
        return Ok(ZERO);
    }
    let pa = is_poly(s, a);
    let pb = is_poly(s, b);
    if !pa && !pb {
        return coeff_mul(s, a, b);
    }
    if pa && (!pb || outranks(main_var(s, a), main_var(s, b))) {
        return scale_poly(s, a, b);
    }
    if pb && (!pa || outranks(main_var(s, b), main_var(s, a))) {
        return scale_poly(s, b, a);
    }
    let var = main_var(s, a);
    let ta = terms_vec(s, a);
    let tb = terms_vec(s, b);
    let mark = s.shadow_mark();
    // Accumulate the convolution sorted by decreasing exponent.
    let mut acc: Vec<(i64, Value)> = Vec::new();
    for &(ea, ca) in &ta {
        for &(eb, cb) in &tb {
            let e = ea + eb;
            let c = sf_mul(s, ca, cb)?;
            s.keep(c);
            match acc.binary_search_by(|probe| e.cmp(&probe.0)) {
                Ok(pos) => {
                    let merged = sf_add(s, acc[pos].1, c)?;
                    s.keep(merged);
                    if is_zero_sf(merged) {
                        acc.remove(pos);
                    } else {
                        acc[pos].1 = merged;
                    }
                }
                Err(pos) => acc.insert(pos, (e, c)),
            }
        }
    }
    let r = make_poly(s, var, &acc);
    s.shadow_truncate(mark);
    r
}

/// Multiplies every coefficient of `p` by `c`, a form of strictly lower rank.
fn scale_poly(s: &mut Session, p: Value, c: Value) -> EvalResult {
    let var = main_var(s, p);
    let ts = terms_vec(s, p);
    let mark = s.shadow_mark();
    let mut out = Vec::with_capacity(ts.len());
    for &(e, coeff) in &ts {
        let m = sf_mul(s, coeff, c)?;
        if !is_zero_sf(m) {
            s.keep(m);
            out.push((e, m));
        }
    }
    let r = make_poly(s, var, &out);
    s.shadow_truncate(mark);
    r
}

pub fn sf_pow(s: &mut Session, a: Value, n: u64) -> EvalResult {
    if n == 0 {
        return Ok(ONE);
    }
    let mark = s.shadow_mark();
    let mut result = ONE;
    let mut base = a;
    let mut k = n;
    loop {
        if k & 1 == 1 {
            result = sf_mul(s, result, base)?;
        }
        k >>= 1;
        if k == 0 {
            break;
        }
        let squared = sf_mul(s, base, base)?;
        base = squared;
        s.shadow_truncate(mark);
        s.keep(result);
        s.keep(base);
    }
    s.shadow_truncate(mark);
    Ok(result)
}

/// Divides every coefficient by a nonzero numeric constant.
pub fn sf_quot_const(s: &mut Session, a: Value, c: Value) -> EvalResult {
    if !is_poly(s, a) {
        return coeff_div(s, a, c);
    }
    let var = main_var(s, a);
    let ts = terms_vec(s, a);
    let mark = s.shadow_mark();
    let mut out = Vec::with_capacity(ts.len());
    for &(e, coeff) in &ts {
        let q = sf_quot_const(s, coeff, c)?;
        s.keep(q);
        out.push((e, q));
    }
    let r = make_poly(s, var, &out);
    s.shadow_truncate(mark);
    r
}

// ---- calculus --------------------------------------------------------------------

fn df1(s: &mut Session, a: Value, var: Value) -> EvalResult {
    if !is_poly(s, a) {
        return Ok(ZERO);
    }
    let v = main_var(s, a);
    let ts = terms_vec(s, a);
    let mark = s.shadow_mark();
    let mut out: Vec<(i64, Value)> = Vec::new();
    if v == var {
        for &(e, c) in &ts {
            if e == 0 {
                continue;
            }
            let scaled = sf_mul(s, c, Value::fixnum(e))?;
            // A modulus can annihilate the factor e.
            if !is_zero_sf(scaled) {
                s.keep(scaled);
                out.push((e - 1, scaled));
            }
        }
    } else {
        for &(e, c) in &ts {
            let d = df1(s, c, var)?;
            if !is_zero_sf(d) {
                s.keep(d);
                out.push((e, d));
            }
        }
    }
    let r = make_poly(s, v, &out);
    s.shadow_truncate(mark);
    r
}

/// n-th partial derivative with respect to `var`.
pub fn df(s: &mut Session, a: Value, var: Value, n: u64) -> EvalResult {
    let mark = s.shadow_mark();
    let mut cur = a;
    for _ in 0..n {
        cur = df1(s, cur, var)?;
        s.shadow_truncate(mark);
        s.keep(cur);
    }
    s.shadow_truncate(mark);
    Ok(cur)
}

/// Substitutes `val` for `var` and renormalizes by rebuilding with ring
/// operations, so the variable-order invariant holds whatever `val` is.
pub fn subst(s: &mut Session, a: Value, var: Value, val: Value) -> EvalResult {
    if !is_poly(s, a) {
        return Ok(a);
    }
    let v = main_var(s, a);
    let ts = terms_vec(s, a);
    let mark = s.shadow_mark();
    let base = if v == var {
        val
    } else {
        let k = kernel(s, v)?;
        s.keep(k);
        k
    };
    let mut acc = ZERO;
    for &(e, c) in &ts {
        let c2 = if v == var { c } else { subst(s, c, var, val)? };
        s.keep(c2);
        let p = sf_pow(s, base, e as u64)?;
        s.keep(p);
        let term = sf_mul(s, c2, p)?;
        s.keep(term);
        acc = sf_add(s, acc, term)?;
        s.keep(acc);
    }
    s.shadow_truncate(mark);
    Ok(acc)
}

// ---- prefix-form interface ---------------------------------------------------------

fn expect_symbol_op(s: &Session, head: Value) -> Result<(), EvalError> {
    if head.is_symbol() {
        Ok(())
    } else {
        Err(EvalError::new(format!("not an algebraic operator: {}", print(s, head))))
    }
}

/// Restricted normalizer: integers, symbols (always treated as kernels), and
/// plus/difference/times/expt/minus only.
pub fn simp(s: &mut Session, form: Value) -> EvalResult {
    if bignum::is_int(s, form) {
        return Ok(form);
    }
    if form.is_symbol() {
        if form.is_nil() || form == s.wk.t {
            return Err(EvalError::new(format!("{} is not algebraic", s.symbol_name(form))));
        }
        return kernel(s, form);
    }
    if !form.is_cons() {
        return Err(EvalError::new(format!("not an algebraic form: {}", print(s, form))));
    }
    let head = s.car(form);
    expect_symbol_op(s, head)?;
    let items = eval::form_items(s, s.cdr(form))?;
    let op = s.symbol_name(head).to_string();
    let mark = s.shadow_mark();
    let r = match op.as_str() {
        "plus" | "times" if items.len() >= 2 => {
            let mut acc = simp(s, items[0])?;
            s.keep(acc);
            for &item in &items[1..] {
                let b = simp(s, item)?;
                s.keep(b);
                acc = if op == "plus" { sf_add(s, acc, b)? } else { sf_mul(s, acc, b)? };
                s.shadow_truncate(mark);
                s.keep(acc);
            }
            Ok(acc)
        }
        "difference" if items.len() == 2 => {
            let a = simp(s, items[0])?;
            s.keep(a);
            let b = simp(s, items[1])?;
            s.keep(b);
            sf_sub(s, a, b)
        }
        "minus" if items.len() == 1 => {
            let a = simp(s, items[0])?;
            s.keep(a);
            sf_neg(s, a)
        }
        "expt" if items.len() == 2 => {
            let base = simp(s, items[0])?;
            s.keep(base);
            let e = simp(s, items[1])?;
            let n = nonneg_int_exponent(s, e)?;
            sf_pow(s, base, n)
        }
        _ => Err(EvalError::new(format!("unknown algebraic operator: {op}/{}", items.len()))),
    };
    s.shadow_truncate(mark);
    r
}

fn nonneg_int_exponent(s: &Session, e: Value) -> Result<u64, EvalError> {
    if !bignum::is_int(s, e) {
        return Err(EvalError::new(format!("exponent is not an integer: {}", print(s, e))));
    }
    if int_sign(s, e) == Ordering::Less {
        return Err(EvalError::new(format!("negative exponent: {}", print(s, e))));
    }
    if !e.is_fixnum() {
        return Err(EvalError::new("exponent too large"));
    }
    Ok(e.as_fixnum() as u64)
}

/// Full algebraic evaluation to a standard form: bound symbols chase their
/// values, operators with function cells are applied through the evaluator,
/// and `quotient`/`df` extend the restricted `simp` language.
pub fn aeval_sf(s: &mut Session, form: Value) -> EvalResult {
    s.depth += 1;
    if s.depth > s.depth_cap {
        s.depth -= 1;
        return Err(EvalError::new("algebraic evaluation too deep"));
    }
    let r = aeval_inner(s, form);
    s.depth -= 1;
    r
}

fn aeval_inner(s: &mut Session, form: Value) -> EvalResult {
    if bignum::is_int(s, form) {
        return Ok(form);
    }
    if bignum::is_float(s, form) {
        return Err(EvalError::new("float in algebraic context"));
    }
    if form.is_symbol() {
        if form.is_nil() || form == s.wk.t {
            return Err(EvalError::new(format!("{} is not algebraic", s.symbol_name(form))));
        }
        let v = s.symbol_value(form);
        if v == Value::UNBOUND {
            return kernel(s, form);
        }
        return aeval_sf(s, v);
    }
    if !form.is_cons() {
        return Err(EvalError::new(format!("not an algebraic form: {}", print(s, form))));
    }
    let head = s.car(form);
    expect_symbol_op(s, head)?;
    let items = eval::form_items(s, s.cdr(form))?;
    let op = s.symbol_name(head).to_string();
    match op.as_str() {
        "plus" | "times" if items.len() >= 2 => {
            let mark = s.shadow_mark();
            let mut acc = aeval_sf(s, items[0])?;
            s.keep(acc);
            for &item in &items[1..] {
                let b = aeval_sf(s, item)?;
                s.keep(b);
                acc = if op == "plus" { sf_add(s, acc, b)? } else { sf_mul(s, acc, b)? };
                s.shadow_truncate(mark);
                s.keep(acc);
            }
            s.shadow_truncate(mark);
            Ok(acc)
        }
        "difference" if items.len() == 2 => {
            let mark = s.shadow_mark();
            let a = aeval_sf(s, items[0])?;
            s.keep(a);
            let b = aeval_sf(s, items[1])?;
            s.keep(b);
            let r = sf_sub(s, a, b);
            s.shadow_truncate(mark);
            r
        }
        "minus" if items.len() == 1 => {
            let mark = s.shadow_mark();
            let a = aeval_sf(s, items[0])?;
            s.keep(a);
            let r = sf_neg(s, a);
            s.shadow_truncate(mark);
            r
        }
        "expt" if items.len() == 2 => {
            let mark = s.shadow_mark();
            let base = aeval_sf(s, items[0])?;
            s.keep(base);
            let e = aeval_sf(s, items[1])?;
            s.keep(e);
            let r = aeval_expt(s, base, e);
            s.shadow_truncate(mark);
            r
        }
        "quotient" if items.len() == 2 => {
            let mark = s.shadow_mark();
            let a = aeval_sf(s, items[0])?;
            s.keep(a);
            let b = aeval_sf(s, items[1])?;
            s.keep(b);
            if !is_coeff_number(s, b) {
                s.shadow_truncate(mark);
                return Err(EvalError::new("non-constant divisor"));
            }
            let r = sf_quot_const(s, a, b);
            s.shadow_truncate(mark);
            r
        }
        "df" if items.len() == 2 || items.len() == 3 => {
            let mark = s.shadow_mark();
            let a = aeval_sf(s, items[0])?;
            s.keep(a);
            let varg = aeval_sf(s, items[1])?;
            s.keep(varg);
            let var = single_kernel(s, varg)?;
            let n = if items.len() == 3 {
                let e = aeval_sf(s, items[2])?;
                nonneg_int_exponent(s, e)?
            } else {
                1
            };
            let r = df(s, a, var, n);
            s.shadow_truncate(mark);
            r
        }
        _ => {
            let fun_defined = !matches!(s.syms.get(head).fun, FunCell::None);
            if !fun_defined {
                return Err(EvalError::new(format!(
                    "unknown algebraic operator: {op}/{}",
                    items.len()
                )));
            }
            // Operator with a function definition: evaluate the call with
            // lowered arguments, then re-read the result algebraically.
            let mark = s.shadow_mark();
            let mut lowered = Vec::with_capacity(items.len());
            for &item in &items {
                let sf = aeval_sf(s, item)?;
                s.keep(sf);
                let p = mk_prefix(s, sf)?;
                s.keep(p);
                lowered.push(p);
            }
            let result = eval::apply_function(s, head, &lowered);
            s.shadow_truncate(mark);
            let result = result?;
            s.keep(result);
            let r = aeval_sf(s, result);
            s.shadow_truncate(mark);
            r
        }
    }
}

fn aeval_expt(s: &mut Session, base: Value, e: Value) -> EvalResult {
    if !bignum::is_int(s, e) {
        return Err(EvalError::new(format!("exponent is not an integer: {}", print(s, e))));
    }
    if int_sign(s, e) != Ordering::Less {
        return sf_pow(s, base, nonneg_int_exponent(s, e)?);
    }
    // Negative exponent: defined only for a nonzero constant base.
    if !is_coeff_number(s, base) {
        return Err(EvalError::new("negative exponent of a non-constant base"));
    }
    if is_zero_sf(base) {
        return Err(EvalError::new("division by zero"));
    }
    let mark = s.shadow_mark();
    let mag = bignum::num_neg(s, e)?;
    let n = nonneg_int_exponent(s, mag)?;
    let p = sf_pow(s, base, n)?;
    s.keep(p);
    let r = coeff_div(s, ONE, p);
    s.shadow_truncate(mark);
    r
}

fn single_kernel(s: &Session, sf: Value) -> Result<Value, EvalError> {
    if is_poly(s, sf) {
        let ts = terms_vec(s, sf);
        if ts.len() == 1 && ts[0].0 == 1 && ts[0].1 == ONE {
            return Ok(main_var(s, sf));
        }
    }
    Err(EvalError::new("df: differentiation variable is not a kernel"))
}

// ---- lowering and rendering ----------------------------------------------------------

/// Lowers a standard form to an ordinary prefix form that `aeval` reads back
/// to the same standard form.
pub fn mk_prefix(s: &mut Session, sf: Value) -> EvalResult {
    if bignum::is_int(s, sf) {
        return Ok(sf);
    }
    if is_rat(s, sf) {
        let (n, d) = rat_parts(s, sf);
        let q = s.intern("quotient");
        return s.list_from(&[q, n, d]);
    }
    let var = main_var(s, sf);
    let ts = terms_vec(s, sf);
    let mark = s.shadow_mark();
    let mut parts: Vec<Value> = Vec::with_capacity(ts.len());
    for &(e, c) in &ts {
        let p = term_prefix(s, var, e, c)?;
        s.keep(p);
        parts.push(p);
    }
    let r = if parts.len() == 1 {
        Ok(parts[0])
    } else {
        let plus = s.intern("plus");
        let mut all = Vec::with_capacity(parts.len() + 1);
        all.push(plus);
        all.extend_from_slice(&parts);
        s.list_from(&all)
    };
    s.shadow_truncate(mark);
    r
}

fn term_prefix(s: &mut Session, var: Value, e: i64, c: Value) -> EvalResult {
    let mark = s.shadow_mark();
    let varpow = if e == 1 {
        var
    } else {
        let expt = s.intern("expt");
        let p = s.list_from(&[expt, var, Value::fixnum(e)])?;
        s.keep(p);
        p
    };
    let r = if e == 0 {
        mk_prefix(s, c)
    } else if c == ONE {
        Ok(varpow)
    } else {
        let cp = mk_prefix(s, c)?;
        s.keep(cp);
        let times = s.intern("times");
        s.list_from(&[times, cp, varpow])
    };
    s.shadow_truncate(mark);
    r
}

/// Renders a standard form in the frozen infix style: terms separated by
/// " + " / " - " with the magnitude following, a leading minus unspaced,
/// unit coefficients dropped, no spaces around `*` and `^`, and nested
/// polynomial coefficients parenthesized.
pub fn render(s: &Session, sf: Value) -> String {
    let mut out = String::new();
    render_into(s, sf, &mut out);
    out
}

fn render_into(s: &Session, sf: Value, out: &mut String) {
    if !is_poly(s, sf) {
        let (neg, mag) = coeff_text(s, sf);
        if neg {
            out.push('-');
        }
        out.push_str(&mag);
        return;
    }
    let var = s.symbol_name(main_var(s, sf)).to_string();
    for (i, &(e, c)) in terms_vec(s, sf).iter().enumerate() {
        let (neg, mag) = coeff_text(s, c);
        if i == 0 {
            if neg {
                out.push('-');
            }
        } else {
            out.push_str(if neg { " - " } else { " + " });
        }
        let varpow = match e {
            0 => None,
            1 => Some(var.clone()),
            _ => Some(format!("{var}^{e}")),
        };
        match varpow {
            None => out.push_str(&mag),
            Some(vp) => {
                if mag == "1" {
                    out.push_str(&vp);
                } else {
                    out.push_str(&mag);
                    out.push('*');
                    out.push_str(&vp);
                }
            }
        }
    }
}

/// Splits a coefficient into sign and magnitude text; polynomial
/// coefficients render parenthesized and carry no extractable sign.
fn coeff_text(s: &Session, c: Value) -> (bool, String) {
    if bignum::is_int(s, c) {
        let text = to_decimal(s, c);
        match text.strip_prefix('-') {
            Some(mag) => (true, mag.to_string()),
            None => (false, text),
        }
    } else if is_rat(s, c) {
        let (n, d) = rat_parts(s, c);
        let ntext = to_decimal(s, n);
        let dtext = to_decimal(s, d);
        match ntext.strip_prefix('-') {
            Some(mag) => (true, format!("{mag}/{dtext}")),
            None => (false, format!("{ntext}/{dtext}")),
        }
    } else {
        (false, format!("({})", render(s, c)))
    }
}

// ---- the demo -------------------------------------------------------------------------

/// Rodrigues construction: for k = 0..k_max, differentiate (x^2 - 1)^k
/// k times and divide by 2^k k!. Results are kept on the shadow stack; the
/// caller owns the mark.
pub fn legendre_demo(s: &mut Session, k_max: u64) -> Result<Vec<Value>, EvalError> {
    let x = s.intern("x");
    let mark = s.shadow_mark();
    let xk = kernel(s, x)?;
    s.keep(xk);
    let x2 = sf_mul(s, xk, xk)?;
    s.keep(x2);
    let neg1 = Value::fixnum(-1);
    let base = sf_add(s, x2, neg1)?;
    s.keep(base);
    let mut out = Vec::new();
    let mut denom = ONE;
    s.keep(denom);
    for k in 0..=k_max {
        if k > 0 {
            // denom *= 2k, folding the 2^k and k! factors together.
            denom = bignum::num_mul(s, denom, Value::fixnum(2 * k as i64))?;
            s.keep(denom);
        }
        let powed = sf_pow(s, base, k)?;
        s.keep(powed);
        let deriv = df(s, powed, x, k)?;
        s.keep(deriv);
        let p = sf_quot_const(s, deriv, denom)?;
        s.keep(p);
        out.push(p);
    }
    // Deliberately no truncate to `mark`: the results must stay rooted.
    let _ = mark;
    Ok(out)
}

// ---- builtins ---------------------------------------------------------------------------

pub fn bi_write(s: &mut Session, args: &[Value]) -> EvalResult {
    let mark = s.shadow_mark();
    let mut last = Value::NIL;
    for &arg in args {
        let sf = aeval_sf(s, arg)?;
        s.shadow_truncate(mark);
        s.keep(sf);
        let text = render(s, sf);
        s.write_out(&text);
        last = sf;
    }
    s.write_out("\n");
    let r = mk_prefix(s, last);
    s.shadow_truncate(mark);
    r
}

pub fn bi_aeval(s: &mut Session, args: &[Value]) -> EvalResult {
    let mark = s.shadow_mark();
    let sf = aeval_sf(s, args[0])?;
    s.keep(sf);
    let r = mk_prefix(s, sf);
    s.shadow_truncate(mark);
    r
}

pub fn bi_setmod(s: &mut Session, args: &[Value]) -> EvalResult {
    let m = args[0];
    let prev = {
        let v = s.symbol_value(s.wk.current_modulus);
        if v == Value::UNBOUND {
            Value::NIL
        } else {
            v
        }
    };
    let new = if m.is_nil() {
        Value::NIL
    } else if bignum::is_int(s, m) {
        match int_sign(s, m) {
            Ordering::Equal => Value::NIL,
            Ordering::Greater => m,
            Ordering::Less => {
                return Err(EvalError::new("setmod: positive integer required"));
            }
        }
    } else {
        return Err(EvalError::new("setmod: positive integer required"));
    };
    let cm = s.wk.current_modulus;
    s.set_symbol_value(cm, new);
    Ok(prev)
}

fn mod_args(s: &Session, op: &str, args: &[Value]) -> Result<Value, EvalError> {
    let m = modulus_value(s)
        .ok_or_else(|| EvalError::new(format!("{op}: no modulus set")))?;
    for &a in args {
        if !bignum::is_int(s, a) {
            return Err(EvalError::new(format!("{op}: not an integer: {}", print(s, a))));
        }
    }
    Ok(m)
}

pub fn bi_modplus(s: &mut Session, args: &[Value]) -> EvalResult {
    let m = mod_args(s, "modplus", args)?;
    let mark = s.shadow_mark();
    let sum = bignum::num_add(s, args[0], args[1])?;
    s.keep(sum);
    let r = norm_mod(s, sum, m);
    s.shadow_truncate(mark);
    r
}

pub fn bi_moddifference(s: &mut Session, args: &[Value]) -> EvalResult {
    let m = mod_args(s, "moddifference", args)?;
    let mark = s.shadow_mark();
    let d = bignum::num_sub(s, args[0], args[1])?;
    s.keep(d);
    let r = norm_mod(s, d, m);
    s.shadow_truncate(mark);
    r
}

pub fn bi_modtimes(s: &mut Session, args: &[Value]) -> EvalResult {
    let m = mod_args(s, "modtimes", args)?;
    let mark = s.shadow_mark();
    let p = bignum::num_mul(s, args[0], args[1])?;
    s.keep(p);
    let r = norm_mod(s, p, m);
    s.shadow_truncate(mark);
    r
}
