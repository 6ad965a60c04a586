//! Arbitrary-precision signed integer arithmetic.
//!
//! Digits are little-endian base 2^32, so double-width intermediate products
//! fit in u64 without carry-flag tricks. Multiplication is schoolbook and
//! division is the classic normalize/estimate/correct long division; sizes
//! here never justify subquadratic algorithms. Every result is normalized:
//! no leading zero digit, and any value inside the fixnum range (zero
//! included) is demoted to a fixnum on construction, so a heap bignum always
//! lies outside the fixnum range.

use crate::eval::EvalError;
use crate::heap::ObjKind;
use crate::session::Session;
use crate::value::{Value, FIXNUM_MAX, FIXNUM_MIN};
use std::cmp::Ordering;

const BASE: u64 = 1 << 32;

/// Sign-magnitude integer pulled out of a Value; zero is the empty digit
/// vector with neg = false.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Num {
    pub neg: bool,
    pub digits: Vec<u32>,
}

impl Num {
    pub fn zero() -> Num {
        Num { neg: false, digits: Vec::new() }
    }

    pub fn is_zero(&self) -> bool {
        self.digits.is_empty()
    }

    pub fn from_i64(i: i64) -> Num {
        let neg = i < 0;
        let mut mag = i.unsigned_abs();
        let mut digits = Vec::new();
        while mag > 0 {
            digits.push(mag as u32);
            mag >>= 32;
        }
        Num { neg, digits }
    }
}

// ---- digit-vector primitives (magnitudes only) ----------------------------

pub fn trim(digits: &mut Vec<u32>) {
    while digits.last() == Some(&0) {
        digits.pop();
    }
}

pub fn cmp_digits(a: &[u32], b: &[u32]) -> Ordering {
    if a.len() != b.len() {
        return a.len().cmp(&b.len());
    }
    for i in (0..a.len()).rev() {
        if a[i] != b[i] {
            return a[i].cmp(&b[i]);
        }
    }
    Ordering::Equal
}

pub fn add_digits(a: &[u32], b: &[u32]) -> Vec<u32> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut out = Vec::with_capacity(long.len() + 1);
    let mut carry = 0u64;
    for (i, &d) in long.iter().enumerate() {
        let sum = d as u64 + short.get(i).copied().unwrap_or(0) as u64 + carry;
        out.push(sum as u32);
        carry = sum >> 32;
    }
    if carry > 0 {
        out.push(carry as u32);
    }
    out
}

/// Requires |a| >= |b|.
pub fn sub_digits(a: &[u32], b: &[u32]) -> Vec<u32> {
    debug_assert!(cmp_digits(a, b) != Ordering::Less);
    let mut out = Vec::with_capacity(a.len());
    let mut borrow = 0i64;
    for (i, &ad) in a.iter().enumerate() {
        let d = ad as i64 - b.get(i).copied().unwrap_or(0) as i64 - borrow;
        if d < 0 {
            out.push((d + BASE as i64) as u32);
            borrow = 1;
        } else {
            out.push(d as u32);
            borrow = 0;
        }
    }
    debug_assert_eq!(borrow, 0);
    trim(&mut out);
    out
}

pub fn mul_digits(a: &[u32], b: &[u32]) -> Vec<u32> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0u32; a.len() + b.len()];
    for (i, &ad) in a.iter().enumerate() {
        if ad == 0 {
            continue;
        }
        let mut carry = 0u64;
        for (j, &bd) in b.iter().enumerate() {
            let cur = out[i + j] as u64 + ad as u64 * bd as u64 + carry;
            out[i + j] = cur as u32;
            carry = cur >> 32;
        }
        let mut k = i + b.len();
        while carry > 0 {
            let cur = out[k] as u64 + carry;
            out[k] = cur as u32;
            carry = cur >> 32;
            k += 1;
        }
    }
    trim(&mut out);
    out
}

pub fn mul_small(a: &[u32], m: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + 1);
    let mut carry = 0u64;
    for &d in a {
        let cur = d as u64 * m as u64 + carry;
        out.push(cur as u32);
        carry = cur >> 32;
    }
    if carry > 0 {
        out.push(carry as u32);
    }
    trim(&mut out);
    out
}

pub fn add_small(a: &[u32], m: u32) -> Vec<u32> {
    add_digits(a, &[m])
}

pub fn divrem_small(a: &[u32], d: u32) -> (Vec<u32>, u32) {
    debug_assert!(d != 0);
    let mut q = vec![0u32; a.len()];
    let mut rem = 0u64;
    for i in (0..a.len()).rev() {
        let cur = (rem << 32) | a[i] as u64;
        q[i] = (cur / d as u64) as u32;
        rem = cur % d as u64;
    }
    trim(&mut q);
    (q, rem as u32)
}

fn shl_bits(a: &[u32], s: u32) -> Vec<u32> {
    if s == 0 {
        let mut v = a.to_vec();
        v.push(0);
        return v;
    }
    let mut out = Vec::with_capacity(a.len() + 1);
    let mut carry = 0u32;
    for &d in a {
        out.push((d << s) | carry);
        carry = d >> (32 - s);
    }
    out.push(carry);
    out
}

fn shr_bits(a: &[u32], s: u32) -> Vec<u32> {
    let mut out = a.to_vec();
    if s > 0 {
        for i in 0..out.len() {
            let hi = if i + 1 < out.len() { out[i + 1] } else { 0 };
            out[i] = (out[i] >> s) | (hi << (32 - s));
        }
    }
    trim(&mut out);
    out
}

/// Long division of magnitudes: returns (quotient, remainder).
pub fn divrem_digits(u: &[u32], v: &[u32]) -> (Vec<u32>, Vec<u32>) {
    assert!(!v.is_empty(), "division by zero magnitude");
    if cmp_digits(u, v) == Ordering::Less {
        return (Vec::new(), u.to_vec());
    }
    if v.len() == 1 {
        let (q, r) = divrem_small(u, v[0]);
        return (q, if r == 0 { Vec::new() } else { vec![r] });
    }
    let shift = v.last().unwrap().leading_zeros();
    let vn = {
        let mut vn = shl_bits(v, shift);
        vn.pop();
        vn
    };
    let mut un = shl_bits(u, shift);
    let n = vn.len();
    let m = un.len() - n - 1;
    let mut q = vec![0u32; m + 1];
    for j in (0..=m).rev() {
        let top = ((un[j + n] as u64) << 32) | un[j + n - 1] as u64;
        let mut qhat = top / vn[n - 1] as u64;
        let mut rhat = top % vn[n - 1] as u64;
        while qhat >= BASE
            || qhat * vn[n - 2] as u64 > (rhat << 32) + un[j + n - 2] as u64
        {
            qhat -= 1;
            rhat += vn[n - 1] as u64;
            if rhat >= BASE {
                break;
            }
        }
        // Multiply-subtract qhat * vn from the window, signed borrow style.
        let mut k: i64 = 0;
        let mut t: i64;
        for i in 0..n {
            let p = qhat * vn[i] as u64;
            t = un[i + j] as i64 - k - (p & 0xffff_ffff) as i64;
            un[i + j] = t as u32;
            k = (p >> 32) as i64 - (t >> 32);
        }
        t = un[j + n] as i64 - k;
        un[j + n] = t as u32;
        q[j] = qhat as u32;
        if t < 0 {
            // qhat was one too large: add the divisor back.
            q[j] -= 1;
            let mut carry = 0u64;
            for i in 0..n {
                let sum = un[i + j] as u64 + vn[i] as u64 + carry;
                un[i + j] = sum as u32;
                carry = sum >> 32;
            }
            un[j + n] = (un[j + n] as u64 + carry) as u32;
        }
    }
    trim(&mut q);
    un.truncate(n);
    let r = shr_bits(&un, shift);
    (q, r)
}

// ---- Value-level interface -------------------------------------------------

pub fn is_int(s: &Session, v: Value) -> bool {
    v.is_fixnum() || s.is_obj_kind(v, ObjKind::Bignum)
}

pub fn is_float(s: &Session, v: Value) -> bool {
    s.is_obj_kind(v, ObjKind::Float)
}

pub fn is_number(s: &Session, v: Value) -> bool {
    is_int(s, v) || is_float(s, v)
}

pub fn int_parts(s: &Session, v: Value) -> Option<Num> {
    if v.is_fixnum() {
        Some(Num::from_i64(v.as_fixnum()))
    } else if s.is_obj_kind(v, ObjKind::Bignum) {
        let (neg, digits) = s.bignum_parts(v);
        Some(Num { neg, digits })
    } else {
        None
    }
}

pub fn as_f64(s: &Session, v: Value) -> Option<f64> {
    if v.is_fixnum() {
        return Some(v.as_fixnum() as f64);
    }
    if is_float(s, v) {
        return Some(s.float_value(v));
    }
    if s.is_obj_kind(v, ObjKind::Bignum) {
        let (neg, digits) = s.bignum_parts(v);
        let mut f = 0.0f64;
        for &d in digits.iter().rev() {
            f = f * BASE as f64 + d as f64;
        }
        return Some(if neg { -f } else { f });
    }
    None
}

/// Builds an integer value, demoting to a fixnum whenever it fits.
pub fn make_int(s: &mut Session, neg: bool, mut digits: Vec<u32>) -> Result<Value, EvalError> {
    trim(&mut digits);
    if digits.is_empty() {
        return Ok(Value::fixnum(0));
    }
    if digits.len() <= 2 {
        let mag = digits[0] as u64 | digits.get(1).map_or(0, |&d| (d as u64) << 32);
        let limit = if neg { FIXNUM_MIN.unsigned_abs() } else { FIXNUM_MAX as u64 };
        if mag <= limit {
            let i = if neg { -(mag as i64) } else { mag as i64 };
            return Ok(Value::fixnum(i));
        }
    }
    s.alloc_bignum(neg, &digits)
}

pub fn make_from_num(s: &mut Session, n: Num) -> Result<Value, EvalError> {
    make_int(s, n.neg, n.digits)
}

fn type_err(s: &Session, op: &str, v: Value) -> EvalError {
    EvalError::new(format!("{op}: not a number: {}", crate::sexpr::print(s, v)))
}

pub fn num_neg(s: &mut Session, v: Value) -> Result<Value, EvalError> {
    if is_float(s, v) {
        let f = s.float_value(v);
        return s.alloc_float(-f);
    }
    let n = int_parts(s, v).ok_or_else(|| type_err(s, "minus", v))?;
    if n.is_zero() {
        return Ok(Value::fixnum(0));
    }
    make_int(s, !n.neg, n.digits)
}

fn signed_add(a: &Num, b: &Num) -> Num {
    if a.neg == b.neg {
        return Num { neg: a.neg, digits: add_digits(&a.digits, &b.digits) };
    }
    match cmp_digits(&a.digits, &b.digits) {
        Ordering::Equal => Num::zero(),
        Ordering::Greater => Num { neg: a.neg, digits: sub_digits(&a.digits, &b.digits) },
        Ordering::Less => Num { neg: b.neg, digits: sub_digits(&b.digits, &a.digits) },
    }
}

pub fn num_add(s: &mut Session, a: Value, b: Value) -> Result<Value, EvalError> {
    if a.is_fixnum() && b.is_fixnum() {
        let sum = a.as_fixnum() + b.as_fixnum();
        if let Some(v) = Value::checked_fixnum(sum) {
            return Ok(v);
        }
        return make_from_num(s, Num::from_i64(sum));
    }
    if is_float(s, a) || is_float(s, b) {
        let fa = as_f64(s, a).ok_or_else(|| type_err(s, "plus", a))?;
        let fb = as_f64(s, b).ok_or_else(|| type_err(s, "plus", b))?;
        return s.alloc_float(fa + fb);
    }
    let na = int_parts(s, a).ok_or_else(|| type_err(s, "plus", a))?;
    let nb = int_parts(s, b).ok_or_else(|| type_err(s, "plus", b))?;
    make_from_num(s, signed_add(&na, &nb))
}

pub fn num_sub(s: &mut Session, a: Value, b: Value) -> Result<Value, EvalError> {
    if a.is_fixnum() && b.is_fixnum() {
        let diff = a.as_fixnum() - b.as_fixnum();
        if let Some(v) = Value::checked_fixnum(diff) {
            return Ok(v);
        }
        return make_from_num(s, Num::from_i64(diff));
    }
    if is_float(s, a) || is_float(s, b) {
        let fa = as_f64(s, a).ok_or_else(|| type_err(s, "difference", a))?;
        let fb = as_f64(s, b).ok_or_else(|| type_err(s, "difference", b))?;
        return s.alloc_float(fa - fb);
    }
    let na = int_parts(s, a).ok_or_else(|| type_err(s, "difference", a))?;
    let nb = int_parts(s, b).ok_or_else(|| type_err(s, "difference", b))?;
    let nb = Num { neg: !nb.neg && !nb.is_zero(), digits: nb.digits };
    make_from_num(s, signed_add(&na, &nb))
}

pub fn num_mul(s: &mut Session, a: Value, b: Value) -> Result<Value, EvalError> {
    if a.is_fixnum() && b.is_fixnum() {
        let prod = a.as_fixnum() as i128 * b.as_fixnum() as i128;
        if prod >= FIXNUM_MIN as i128 && prod <= FIXNUM_MAX as i128 {
            return Ok(Value::fixnum(prod as i64));
        }
    }
    if is_float(s, a) || is_float(s, b) {
        let fa = as_f64(s, a).ok_or_else(|| type_err(s, "times", a))?;
        let fb = as_f64(s, b).ok_or_else(|| type_err(s, "times", b))?;
        return s.alloc_float(fa * fb);
    }
    let na = int_parts(s, a).ok_or_else(|| type_err(s, "times", a))?;
    let nb = int_parts(s, b).ok_or_else(|| type_err(s, "times", b))?;
    if na.is_zero() || nb.is_zero() {
        return Ok(Value::fixnum(0));
    }
    make_int(s, na.neg != nb.neg, mul_digits(&na.digits, &nb.digits))
}

/// Truncated division: quotient rounds toward zero, remainder takes the
/// dividend's sign, |r| < |b|.
pub fn num_divrem(s: &mut Session, a: Value, b: Value) -> Result<(Value, Value), EvalError> {
    let na = int_parts(s, a).ok_or_else(|| type_err(s, "quotient", a))?;
    let nb = int_parts(s, b).ok_or_else(|| type_err(s, "quotient", b))?;
    if nb.is_zero() {
        return Err(EvalError::new("division by zero"));
    }
    if na.is_zero() {
        return Ok((Value::fixnum(0), Value::fixnum(0)));
    }
    let (qd, rd) = divrem_digits(&na.digits, &nb.digits);
    let q = make_int(s, na.neg != nb.neg, qd)?;
    let mark = s.shadow_mark();
    s.keep(q);
    let r = make_int(s, na.neg, rd);
    s.shadow_truncate(mark);
    Ok((q, r?))
}

pub fn num_cmp(s: &Session, a: Value, b: Value) -> Result<Ordering, EvalError> {
    if a.is_fixnum() && b.is_fixnum() {
        return Ok(a.as_fixnum().cmp(&b.as_fixnum()));
    }
    if is_float(s, a) || is_float(s, b) {
        let fa = as_f64(s, a).ok_or_else(|| type_err(s, "compare", a))?;
        let fb = as_f64(s, b).ok_or_else(|| type_err(s, "compare", b))?;
        return fa
            .partial_cmp(&fb)
            .ok_or_else(|| EvalError::new("compare: invalid float comparison"));
    }
    let na = int_parts(s, a).ok_or_else(|| type_err(s, "compare", a))?;
    let nb = int_parts(s, b).ok_or_else(|| type_err(s, "compare", b))?;
    Ok(match (na.neg, nb.neg) {
        (false, true) => Ordering::Greater,
        (true, false) => Ordering::Less,
        (false, false) => cmp_digits(&na.digits, &nb.digits),
        (true, true) => cmp_digits(&nb.digits, &na.digits),
    })
}

// ---- decimal text ----------------------------------------------------------

const CHUNK: u32 = 1_000_000_000;

pub fn from_decimal(s: &mut Session, text: &str) -> Result<Value, EvalError> {
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    if body.is_empty() || !body.bytes().all(|b| b.is_ascii_digit()) {
        return Err(EvalError::new(format!("malformed integer literal: {text}")));
    }
    let mut digits: Vec<u32> = Vec::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let take = if i == 0 && bytes.len() % 9 != 0 { bytes.len() % 9 } else { 9 };
        let mut chunk = 0u32;
        for &b in &bytes[i..i + take] {
            chunk = chunk * 10 + (b - b'0') as u32;
        }
        let scale = 10u32.pow(take as u32);
        digits = mul_small(&digits, scale);
        digits = add_small(&digits, chunk);
        i += take;
    }
    make_int(s, neg, digits)
}

pub fn to_decimal(s: &Session, v: Value) -> String {
    if v.is_fixnum() {
        return v.as_fixnum().to_string();
    }
    let n = int_parts(s, v).expect("to_decimal needs an integer");
    let mut chunks: Vec<u32> = Vec::new();
    let mut rest = n.digits;
    while !rest.is_empty() {
        let (q, r) = divrem_small(&rest, CHUNK);
        chunks.push(r);
        rest = q;
    }
    let mut out = String::new();
    if n.neg {
        out.push('-');
    }
    out.push_str(&chunks.last().unwrap().to_string());
    for c in chunks.iter().rev().skip(1) {
        out.push_str(&format!("{c:09}"));
    }
    out
}
