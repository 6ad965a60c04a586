//! Shared helpers for the integration tests: session construction, deep
//! structural comparison, and the independent oracles the suites check the
//! kernel against (decimal-string integer arithmetic, exact i128 rational
//! polynomials, and a shunting-yard infix parser).
//!
//! Everything here is deliberately written against different algorithms and
//! representations than the crate under test so that agreement is evidence,
//! not tautology.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::process::{Command, Stdio};

use pkrn::bignum;
use pkrn::session::{Engine, Session, SessionConfig};
use pkrn::value::Value;
use rand::Rng;

// ---- sessions -----------------------------------------------------------

pub fn session(engine: Engine) -> Session {
    Session::new(&SessionConfig { engine, ..SessionConfig::default() })
}

pub fn default_session() -> Session {
    session(Engine::Byte)
}

/// Runs lisp source and returns the printed representation of each form's
/// value, panicking on any error.
pub fn run(s: &mut Session, text: &str) -> Vec<String> {
    pkrn::eval::run_text(s, text).unwrap_or_else(|e| panic!("eval failed: {e}\nsource: {text}"))
}

pub fn out_text(s: &mut Session) -> String {
    String::from_utf8_lossy(&s.take_out()).into_owned()
}

// ---- deep structural equality -------------------------------------------

/// Structural equality over acyclic kernel data: numbers by value, strings
/// and floats by content, conses recursively. Symbols and chars compare by
/// identity (their word). Distinct-looking heap kinds never compare equal.
pub fn deep_equal(s: &Session, a: Value, b: Value) -> bool {
    let mut work = vec![(a, b)];
    while let Some((a, b)) = work.pop() {
        if a.raw() == b.raw() {
            continue;
        }
        if bignum::is_int(s, a) && bignum::is_int(s, b) {
            let pa = bignum::int_parts(s, a).unwrap();
            let pb = bignum::int_parts(s, b).unwrap();
            if pa.neg != pb.neg || pa.digits != pb.digits {
                return false;
            }
            continue;
        }
        if a.is_cons() && b.is_cons() {
            work.push((s.car(a), s.car(b)));
            work.push((s.cdr(a), s.cdr(b)));
            continue;
        }
        if bignum::is_float(s, a) && bignum::is_float(s, b) {
            if s.float_value(a).to_bits() != s.float_value(b).to_bits() {
                return false;
            }
            continue;
        }
        let both_strings = s.is_obj_kind(a, pkrn::heap::ObjKind::Str)
            && s.is_obj_kind(b, pkrn::heap::ObjKind::Str);
        if both_strings {
            if s.string_text(a) != s.string_text(b) {
                return false;
            }
            continue;
        }
        return false;
    }
    true
}

// ---- decimal-string integer oracle ----------------------------------------

/// Sign-magnitude decimal integer: little-endian base-10 digits with no
/// leading zeros; zero is the empty magnitude with `neg` false. The whole
/// point is to share no representation or algorithm with the kernel's
/// base-2^32 numbers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dec {
    pub neg: bool,
    pub mag: Vec<u8>,
}

fn trim10(mag: &mut Vec<u8>) {
    while mag.last() == Some(&0) {
        mag.pop();
    }
}

fn cmp10(a: &[u8], b: &[u8]) -> Ordering {
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

fn add10(a: &[u8], b: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(a.len().max(b.len()) + 1);
    let mut carry = 0u8;
    for i in 0..a.len().max(b.len()) {
        let t = a.get(i).copied().unwrap_or(0) + b.get(i).copied().unwrap_or(0) + carry;
        out.push(t % 10);
        carry = t / 10;
    }
    if carry > 0 {
        out.push(carry);
    }
    out
}

/// Requires a >= b.
fn sub10(a: &[u8], b: &[u8]) -> Vec<u8> {
    debug_assert!(cmp10(a, b) != Ordering::Less);
    let mut out = Vec::with_capacity(a.len());
    let mut borrow = 0i8;
    for i in 0..a.len() {
        let mut t = a[i] as i8 - b.get(i).copied().unwrap_or(0) as i8 - borrow;
        if t < 0 {
            t += 10;
            borrow = 1;
        } else {
            borrow = 0;
        }
        out.push(t as u8);
    }
    debug_assert_eq!(borrow, 0);
    trim10(&mut out);
    out
}

fn mul10(a: &[u8], b: &[u8]) -> Vec<u8> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut acc = vec![0u32; a.len() + b.len()];
    for (i, &da) in a.iter().enumerate() {
        for (j, &db) in b.iter().enumerate() {
            acc[i + j] += da as u32 * db as u32;
        }
        // Flush carries often enough that the u32 cells cannot overflow.
        if i % 512 == 511 {
            carry10(&mut acc);
        }
    }
    carry10(&mut acc);
    let mut out: Vec<u8> = acc.into_iter().map(|d| d as u8).collect();
    trim10(&mut out);
    out
}

fn carry10(acc: &mut [u32]) {
    let mut carry = 0u32;
    for cell in acc.iter_mut() {
        let t = *cell + carry;
        *cell = t % 10;
        carry = t / 10;
    }
    debug_assert_eq!(carry, 0, "digit accumulator overflow");
}

/// Schoolbook long division on magnitudes; b must be nonzero.
fn divrem10(a: &[u8], b: &[u8]) -> (Vec<u8>, Vec<u8>) {
    assert!(!b.is_empty(), "oracle division by zero");
    let mut q = vec![0u8; a.len()];
    let mut rem: Vec<u8> = Vec::new();
    for i in (0..a.len()).rev() {
        rem.insert(0, a[i]);
        trim10(&mut rem);
        let mut d = 0u8;
        while cmp10(&rem, b) != Ordering::Less {
            rem = sub10(&rem, b);
            d += 1;
            assert!(d <= 9, "long division digit out of range");
        }
        q[i] = d;
    }
    trim10(&mut q);
    (q, rem)
}

impl Dec {
    pub fn zero() -> Dec {
        Dec { neg: false, mag: Vec::new() }
    }

    pub fn is_zero(&self) -> bool {
        self.mag.is_empty()
    }

    pub fn from_str(text: &str) -> Dec {
        let (neg, digits) = match text.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, text),
        };
        let mut mag: Vec<u8> = digits.bytes().rev().map(|b| b - b'0').collect();
        trim10(&mut mag);
        Dec { neg: neg && !mag.is_empty(), mag }
    }

    pub fn from_i64(i: i64) -> Dec {
        Dec::from_str(&i.to_string())
    }

    pub fn render(&self) -> String {
        if self.mag.is_empty() {
            return "0".to_string();
        }
        let mut out = String::with_capacity(self.mag.len() + 1);
        if self.neg {
            out.push('-');
        }
        for &d in self.mag.iter().rev() {
            out.push((b'0' + d) as char);
        }
        out
    }

    fn with_sign(neg: bool, mag: Vec<u8>) -> Dec {
        Dec { neg: neg && !mag.is_empty(), mag }
    }

    pub fn neg(&self) -> Dec {
        Dec::with_sign(!self.neg, self.mag.clone())
    }

    pub fn abs_cmp(&self, other: &Dec) -> Ordering {
        cmp10(&self.mag, &other.mag)
    }

    pub fn cmp_val(&self, other: &Dec) -> Ordering {
        match (self.neg, other.neg) {
            (false, true) => Ordering::Greater,
            (true, false) => Ordering::Less,
            (false, false) => cmp10(&self.mag, &other.mag),
            (true, true) => cmp10(&other.mag, &self.mag),
        }
    }

    pub fn add(&self, other: &Dec) -> Dec {
        if self.neg == other.neg {
            return Dec::with_sign(self.neg, add10(&self.mag, &other.mag));
        }
        match cmp10(&self.mag, &other.mag) {
            Ordering::Equal => Dec::zero(),
            Ordering::Greater => Dec::with_sign(self.neg, sub10(&self.mag, &other.mag)),
            Ordering::Less => Dec::with_sign(other.neg, sub10(&other.mag, &self.mag)),
        }
    }

    pub fn sub(&self, other: &Dec) -> Dec {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Dec) -> Dec {
        Dec::with_sign(self.neg != other.neg, mul10(&self.mag, &other.mag))
    }

    /// Truncated division: the quotient rounds toward zero and the remainder
    /// takes the dividend's sign, matching the kernel's convention.
    pub fn divrem(&self, other: &Dec) -> (Dec, Dec) {
        let (q, r) = divrem10(&self.mag, &other.mag);
        (Dec::with_sign(self.neg != other.neg, q), Dec::with_sign(self.neg, r))
    }
}

/// Uniform random decimal integer of up to `max_digits` digits (about 3.32
/// bits per digit), occasionally zero, either sign.
pub fn random_dec(rng: &mut impl Rng, max_digits: usize) -> Dec {
    if rng.gen_ratio(1, 20) {
        return Dec::zero();
    }
    let len = rng.gen_range(1..=max_digits);
    let mut mag: Vec<u8> = (0..len).map(|_| rng.gen_range(0..10u8)).collect();
    let last = mag.len() - 1;
    mag[last] = rng.gen_range(1..10u8);
    Dec { neg: rng.gen_bool(0.5), mag }
}

// ---- exact rational arithmetic (i128) --------------------------------------

fn gcd_i128(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Normalized rational: den > 0, gcd(num, den) = 1.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Rat {
    pub num: i128,
    pub den: i128,
}

impl Rat {
    pub fn new(num: i128, den: i128) -> Rat {
        assert!(den != 0, "rational with zero denominator");
        let g = gcd_i128(num, den).max(1);
        let sign = if den < 0 { -1 } else { 1 };
        Rat { num: sign * num / g, den: sign * den / g }
    }

    pub fn int(i: i128) -> Rat {
        Rat { num: i, den: 1 }
    }

    pub fn zero() -> Rat {
        Rat::int(0)
    }

    pub fn one() -> Rat {
        Rat::int(1)
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    // Sums and products pre-reduce by cross gcds so i128 headroom is spent
    // on the value, not on a common denominator both sides already share.

    pub fn add(&self, o: &Rat) -> Rat {
        let g = gcd_i128(self.den, o.den).max(1);
        let lcm = (self.den / g) * o.den;
        Rat::new(self.num * (o.den / g) + o.num * (self.den / g), lcm)
    }

    pub fn sub(&self, o: &Rat) -> Rat {
        self.add(&o.neg())
    }

    pub fn mul(&self, o: &Rat) -> Rat {
        let g1 = gcd_i128(self.num, o.den).max(1);
        let g2 = gcd_i128(o.num, self.den).max(1);
        Rat::new((self.num / g1) * (o.num / g2), (self.den / g2) * (o.den / g1))
    }

    pub fn div(&self, o: &Rat) -> Rat {
        assert!(o.num != 0, "rational division by zero");
        self.mul(&Rat { num: o.den, den: o.num })
    }

    pub fn neg(&self) -> Rat {
        Rat { num: -self.num, den: self.den }
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

// ---- dense rational polynomials ---------------------------------------------

/// Coefficient vector indexed by exponent, trailing zeros trimmed.
pub type Poly = Vec<Rat>;

pub fn poly_trim(p: &mut Poly) {
    while p.last().map(Rat::is_zero).unwrap_or(false) {
        p.pop();
    }
}

pub fn poly_add(a: &Poly, b: &Poly) -> Poly {
    let mut out = vec![Rat::zero(); a.len().max(b.len())];
    for (i, c) in a.iter().enumerate() {
        out[i] = out[i].add(c);
    }
    for (i, c) in b.iter().enumerate() {
        out[i] = out[i].add(c);
    }
    poly_trim(&mut out);
    out
}

pub fn poly_scale(a: &Poly, k: Rat) -> Poly {
    let mut out: Poly = a.iter().map(|c| c.mul(&k)).collect();
    poly_trim(&mut out);
    out
}

/// Multiplies by the variable (shifts every exponent up by one).
pub fn poly_shift(a: &Poly) -> Poly {
    if a.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(a.len() + 1);
    out.push(Rat::zero());
    out.extend_from_slice(a);
    out
}

pub fn poly_eval(p: &Poly, x: Rat) -> Rat {
    let mut acc = Rat::zero();
    for c in p.iter().rev() {
        acc = acc.mul(&x).add(c);
    }
    acc
}

pub fn poly_mul(a: &Poly, b: &Poly) -> Poly {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![Rat::zero(); a.len() + b.len() - 1];
    for (i, ca) in a.iter().enumerate() {
        for (j, cb) in b.iter().enumerate() {
            out[i + j] = out[i + j].add(&ca.mul(cb));
        }
    }
    poly_trim(&mut out);
    out
}

pub fn poly_derive(p: &Poly) -> Poly {
    let mut out: Poly =
        p.iter().enumerate().skip(1).map(|(e, c)| c.mul(&Rat::int(e as i128))).collect();
    poly_trim(&mut out);
    out
}

/// Parses a rendered constant — `n`, `-n`, or `n/d` with an optional leading
/// minus — back into a rational. Panics on anything else; callers only hand
/// it renders of constant values.
pub fn rat_from_render(text: &str) -> Rat {
    let (num_text, den_text) = match text.split_once('/') {
        Some((n, d)) => (n, d),
        None => (text, "1"),
    };
    let num: i128 = num_text.trim().parse().unwrap_or_else(|e| {
        panic!("numerator {num_text:?} of rendered constant {text:?}: {e}")
    });
    let den: i128 = den_text.trim().parse().unwrap_or_else(|e| {
        panic!("denominator {den_text:?} of rendered constant {text:?}: {e}")
    });
    Rat::new(num, den)
}

/// Legendre polynomial coefficients by the three-term recurrence
/// (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}, with P_0 = 1 and P_1 = x.
pub fn legendre(k: usize) -> Poly {
    let mut prev: Poly = vec![Rat::one()];
    if k == 0 {
        return prev;
    }
    let mut cur: Poly = vec![Rat::zero(), Rat::one()];
    for m in 1..k {
        let m = m as i128;
        let lead = poly_scale(&poly_shift(&cur), Rat::new(2 * m + 1, m + 1));
        let tail = poly_scale(&prev, Rat::new(-m, m + 1));
        let next = poly_add(&lead, &tail);
        prev = cur;
        cur = next;
    }
    cur
}

fn int_value(s: &mut Session, i: i128) -> Value {
    bignum::from_decimal(s, &i.to_string()).expect("oracle integer allocation")
}

/// Builds the prefix form a rational-coefficient polynomial would be typed
/// as: a plus of times/expt/quotient terms, highest exponent first.
pub fn poly_to_prefix(s: &mut Session, p: &Poly, var: &str) -> Value {
    let x = s.intern(var);
    let plus = s.intern("plus");
    let times = s.intern("times");
    let expt = s.intern("expt");
    let quotient = s.intern("quotient");
    let mark = s.shadow_mark();
    let mut terms: Vec<Value> = Vec::new();
    for (e, c) in p.iter().enumerate().rev() {
        if c.is_zero() {
            continue;
        }
        let coeff = if c.den == 1 {
            int_value(s, c.num)
        } else {
            let n = int_value(s, c.num);
            s.keep(n);
            let d = int_value(s, c.den);
            s.keep(d);
            s.list_from(&[quotient, n, d]).expect("oracle alloc")
        };
        s.keep(coeff);
        let term = match e {
            0 => coeff,
            _ => {
                let powed = if e == 1 {
                    x
                } else {
                    let ev = Value::fixnum(e as i64);
                    s.list_from(&[expt, x, ev]).expect("oracle alloc")
                };
                s.keep(powed);
                if c.num == 1 && c.den == 1 {
                    powed
                } else {
                    s.list_from(&[times, coeff, powed]).expect("oracle alloc")
                }
            }
        };
        s.keep(term);
        terms.push(term);
    }
    let form = match terms.len() {
        0 => Value::fixnum(0),
        1 => terms[0],
        _ => {
            let mut items = vec![plus];
            items.extend(terms);
            s.list_from(&items).expect("oracle alloc")
        }
    };
    s.shadow_truncate(mark);
    form
}

// ---- shunting-yard infix oracle -----------------------------------------------

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum YardOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Neg,
    Open,
}

fn yard_prec(op: YardOp) -> u8 {
    match op {
        YardOp::Add | YardOp::Sub => 1,
        YardOp::Mul | YardOp::Div => 2,
        YardOp::Neg => 3,
        YardOp::Pow => 4,
        YardOp::Open => 0,
    }
}

fn yard_left_assoc(op: YardOp) -> bool {
    !matches!(op, YardOp::Pow | YardOp::Neg)
}

/// Independent infix parser: classic shunting-yard over +, -, *, /, ^,
/// unary minus, integers, the variable x, and parentheses. Returns the
/// prefix form as kernel data. Panics on malformed input; the generator
/// only produces well-formed expressions.
pub fn shunting_yard(s: &mut Session, text: &str) -> Value {
    let plus = s.intern("plus");
    let difference = s.intern("difference");
    let times = s.intern("times");
    let quotient = s.intern("quotient");
    let expt = s.intern("expt");
    let minus = s.intern("minus");
    let xsym = s.intern("x");

    let mut out: Vec<Value> = Vec::new();
    let mut ops: Vec<YardOp> = Vec::new();
    let mark = s.shadow_mark();

    fn apply(s: &mut Session, out: &mut Vec<Value>, op: YardOp, names: [Value; 6]) {
        let [plus, difference, times, quotient, expt, minus] = names;
        let form = if op == YardOp::Neg {
            let a = out.pop().expect("operand for unary minus");
            s.list_from(&[minus, a]).expect("oracle alloc")
        } else {
            let b = out.pop().expect("right operand");
            let a = out.pop().expect("left operand");
            let head = match op {
                YardOp::Add => plus,
                YardOp::Sub => difference,
                YardOp::Mul => times,
                YardOp::Div => quotient,
                YardOp::Pow => expt,
                _ => unreachable!(),
            };
            s.list_from(&[head, a, b]).expect("oracle alloc")
        };
        s.keep(form);
        out.push(form);
    }
    let names = [plus, difference, times, quotient, expt, minus];

    let bytes = text.as_bytes();
    let mut i = 0;
    let mut expect_operand = true;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' => i += 1,
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let n: i64 = text[start..i].parse().expect("integer literal");
                out.push(Value::fixnum(n));
                expect_operand = false;
            }
            b'x' => {
                out.push(xsym);
                i += 1;
                expect_operand = false;
            }
            b'(' => {
                ops.push(YardOp::Open);
                i += 1;
                expect_operand = true;
            }
            b')' => {
                while let Some(&top) = ops.last() {
                    if top == YardOp::Open {
                        break;
                    }
                    ops.pop();
                    apply(s, &mut out, top, names);
                }
                assert_eq!(ops.pop(), Some(YardOp::Open), "unbalanced parens");
                i += 1;
                expect_operand = false;
            }
            _ => {
                let cur = match b {
                    b'+' => YardOp::Add,
                    b'-' if expect_operand => YardOp::Neg,
                    b'-' => YardOp::Sub,
                    b'*' => YardOp::Mul,
                    b'/' => YardOp::Div,
                    b'^' => YardOp::Pow,
                    _ => panic!("unexpected byte {b:?} in infix oracle"),
                };
                if cur != YardOp::Neg {
                    while let Some(&top) = ops.last() {
                        let p = yard_prec(top);
                        let pc = yard_prec(cur);
                        if top != YardOp::Open && (p > pc || (p == pc && yard_left_assoc(cur))) {
                            ops.pop();
                            apply(s, &mut out, top, names);
                        } else {
                            break;
                        }
                    }
                }
                ops.push(cur);
                i += 1;
                expect_operand = true;
            }
        }
    }
    while let Some(top) = ops.pop() {
        assert!(top != YardOp::Open, "unbalanced parens");
        apply(s, &mut out, top, names);
    }
    assert_eq!(out.len(), 1, "infix oracle left {} operands", out.len());
    let v = out[0];
    s.shadow_truncate(mark);
    v
}

/// Random well-formed infix expression over ints, x, + - * / ^ and parens.
/// Divisors are nonzero integer literals and exponents are small nonnegative
/// literals so evaluation can never fault and degrees stay tame.
pub fn gen_infix(rng: &mut impl Rng) -> String {
    let mut buf = String::new();
    gen_infix_expr(rng, 1, &mut buf);
    buf
}

fn gen_infix_expr(rng: &mut impl Rng, depth: u32, buf: &mut String) {
    gen_infix_term(rng, depth, buf);
    for _ in 0..rng.gen_range(0..3) {
        let op = [b'+', b'-', b'*', b'/'][rng.gen_range(0..4)];
        buf.push(op as char);
        if op == b'/' {
            // Constant nonzero divisor keeps the expression total.
            if rng.gen_bool(0.3) {
                buf.push('-');
            }
            buf.push_str(&rng.gen_range(1..10i64).to_string());
        } else {
            gen_infix_term(rng, depth, buf);
        }
    }
}

fn gen_infix_term(rng: &mut impl Rng, depth: u32, buf: &mut String) {
    if rng.gen_bool(0.25) {
        buf.push('-');
    }
    gen_infix_factor(rng, depth, buf);
    if rng.gen_bool(0.35) {
        buf.push('^');
        buf.push_str(&rng.gen_range(0..4i64).to_string());
    }
}

fn gen_infix_factor(rng: &mut impl Rng, depth: u32, buf: &mut String) {
    let roll = rng.gen_range(0..10);
    if depth > 0 && roll < 3 {
        buf.push('(');
        gen_infix_expr(rng, depth - 1, buf);
        buf.push(')');
    } else if roll < 7 {
        buf.push('x');
    } else {
        buf.push_str(&rng.gen_range(0..100i64).to_string());
    }
}

// ---- random readable data trees ------------------------------------------------

const SYMBOL_POOL: &[&str] =
    &["a", "b", "foo", "bar", "x", "y", "zz", "plus", "alpha", "beta9", "t", "nil"];
const STRING_POOL: &[&str] =
    &["", "hello", "two words", "with \" quote", "tab\tand ; semi", "(not a list)", "00"];

/// Random acyclic kernel datum built from readable atoms: integers of any
/// size, symbols, strings, characters, floats, proper and dotted lists.
pub fn gen_tree(s: &mut Session, rng: &mut impl Rng, depth: u32) -> Value {
    let atom_roll = if depth == 0 { 10 } else { rng.gen_range(0..14) };
    match atom_roll {
        0..=2 => Value::fixnum(rng.gen_range(-10_000..10_000i64)),
        3 => {
            // A bignum-sized integer via the decimal reader.
            let len = rng.gen_range(25..70);
            let mut text = String::new();
            if rng.gen_bool(0.5) {
                text.push('-');
            }
            text.push(char::from(b'1' + rng.gen_range(0..9u8)));
            for _ in 1..len {
                text.push(char::from(b'0' + rng.gen_range(0..10u8)));
            }
            bignum::from_decimal(s, &text).expect("tree bignum")
        }
        4..=5 => {
            let name = SYMBOL_POOL[rng.gen_range(0..SYMBOL_POOL.len())];
            s.intern(name)
        }
        6 => {
            let text = STRING_POOL[rng.gen_range(0..STRING_POOL.len())];
            s.alloc_string(text).expect("tree string")
        }
        7 => Value::char_value(rng.gen::<u8>()),
        8 => {
            let f = rng.gen_range(-64_000..64_000i64) as f64 / 8.0;
            s.alloc_float(f).expect("tree float")
        }
        9..=10 => Value::NIL,
        11..=12 => {
            // Proper list of up to four children.
            let mark = s.shadow_mark();
            let n = rng.gen_range(0..=4);
            let mut items = Vec::with_capacity(n);
            for _ in 0..n {
                let child = gen_tree(s, rng, depth - 1);
                s.keep(child);
                items.push(child);
            }
            let v = s.list_from(&items).expect("tree list");
            s.shadow_truncate(mark);
            v
        }
        _ => {
            // Dotted pair.
            let mark = s.shadow_mark();
            let car = gen_tree(s, rng, depth - 1);
            s.keep(car);
            let cdr = gen_tree(s, rng, depth - 1);
            s.keep(cdr);
            let v = s.alloc_cons(car, cdr).expect("tree cons");
            s.shadow_truncate(mark);
            v
        }
    }
}

// ---- error-free evaluable form corpus ---------------------------------------

/// Generates lisp source for one self-contained form that always evaluates
/// without error: arithmetic, list primitives, conditionals, definitions
/// with immediate calls, and bounded prog loops. `idx` keeps any defined
/// names unique across the corpus.
pub fn gen_eval_form(rng: &mut impl Rng, idx: usize) -> String {
    match rng.gen_range(0..8) {
        0 | 1 => gen_arith(rng, 2),
        2 => gen_list_expr(rng, 2),
        3 => {
            let a = gen_arith(rng, 1);
            let b = gen_arith(rng, 1);
            let c = gen_arith(rng, 1);
            format!("(cond ((greaterp {a} {b}) {c}) (t (list {a} {b})))")
        }
        4 => {
            let parts: Vec<String> = (0..rng.gen_range(1..4)).map(|_| gen_arith(rng, 1)).collect();
            format!("(progn {})", parts.join(" "))
        }
        5 => {
            let body = gen_arith(rng, 1);
            let arg1 = rng.gen_range(-50..50);
            let arg2 = rng.gen_range(-50..50);
            format!(
                "(progn (de fgen{idx} (u v) (plus {body} (times u v))) (fgen{idx} {arg1} {arg2}))"
            )
        }
        6 => {
            let n = rng.gen_range(0..15);
            format!(
                "(prog (i acc) (setq i 0) (setq acc 1) \
                 top (cond ((greaterp i {n}) (return acc))) \
                 (setq acc (plus acc (times i i))) (setq i (plus i 1)) (go top))"
            )
        }
        _ => {
            let op = ["and", "or"][rng.gen_range(0..2)];
            let parts: Vec<String> = (0..rng.gen_range(2..4))
                .map(|_| {
                    if rng.gen_bool(0.2) {
                        "nil".to_string()
                    } else {
                        gen_arith(rng, 1)
                    }
                })
                .collect();
            format!("({op} {})", parts.join(" "))
        }
    }
}

fn gen_arith(rng: &mut impl Rng, depth: u32) -> String {
    if depth == 0 || rng.gen_bool(0.3) {
        return rng.gen_range(-99..100i64).to_string();
    }
    match rng.gen_range(0..7) {
        0 => {
            let parts: Vec<String> =
                (0..rng.gen_range(2..4)).map(|_| gen_arith(rng, depth - 1)).collect();
            format!("(plus {})", parts.join(" "))
        }
        1 => {
            let parts: Vec<String> =
                (0..rng.gen_range(2..4)).map(|_| gen_arith(rng, depth - 1)).collect();
            format!("(times {})", parts.join(" "))
        }
        2 => format!("(difference {} {})", gen_arith(rng, depth - 1), gen_arith(rng, depth - 1)),
        3 => format!("(quotient {} {})", gen_arith(rng, depth - 1), rng.gen_range(1..20)),
        4 => format!("(remainder {} {})", gen_arith(rng, depth - 1), rng.gen_range(1..20)),
        5 => format!("(length (list {} {}))", gen_arith(rng, depth - 1), gen_arith(rng, depth - 1)),
        _ => {
            let items: Vec<String> = (0..rng.gen_range(0..4))
                .map(|_| rng.gen_range(-9..10i64).to_string())
                .collect();
            format!("(length (quote ({})))", items.join(" "))
        }
    }
}

fn quoted_ints(rng: &mut impl Rng, lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..hi);
    let items: Vec<String> = (0..n).map(|_| rng.gen_range(-99..100i64).to_string()).collect();
    format!("(quote ({}))", items.join(" "))
}

fn gen_list_expr(rng: &mut impl Rng, depth: u32) -> String {
    match rng.gen_range(0..7) {
        0 => format!("(cons {} {})", gen_arith(rng, 1), quoted_ints(rng, 0, 4)),
        1 => format!("(reverse {})", quoted_ints(rng, 0, 6)),
        2 => format!("(append {} {})", quoted_ints(rng, 0, 4), quoted_ints(rng, 0, 4)),
        3 => format!("(car {})", quoted_ints(rng, 1, 5)),
        4 => format!("(cdr {})", quoted_ints(rng, 1, 5)),
        5 => {
            let k = rng.gen_range(-9..10);
            format!("(mapcar (quote (lambda (e) (times e {k}))) {})", quoted_ints(rng, 0, 5))
        }
        _ => {
            if depth == 0 {
                quoted_ints(rng, 0, 5)
            } else {
                format!("(list {} {})", gen_list_expr(rng, depth - 1), gen_arith(rng, 1))
            }
        }
    }
}

// ---- running the real binary ----------------------------------------------------

pub fn bin_path() -> &'static str {
    env!("CARGO_BIN_EXE_pkrn")
}

pub struct BinOut {
    pub out: String,
    pub err: String,
    pub code: i32,
}

pub fn run_bin(args: &[&str], stdin: Option<&str>) -> BinOut {
    let mut cmd = Command::new(bin_path());
    cmd.args(args);
    cmd.stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() });
    cmd.stdout(Stdio::piped());
    cmd.stderr(Stdio::piped());
    let mut child = cmd.spawn().expect("spawn pkrn");
    if let Some(text) = stdin {
        use std::io::Write;
        child.stdin.take().unwrap().write_all(text.as_bytes()).expect("feed stdin");
    }
    let output = child.wait_with_output().expect("wait for pkrn");
    BinOut {
        out: String::from_utf8_lossy(&output.stdout).into_owned(),
        err: String::from_utf8_lossy(&output.stderr).into_owned(),
        code: output.status.code().unwrap_or(-1),
    }
}

pub fn golden_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn read_golden(name: &str) -> String {
    let path = golden_path(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("missing golden {path:?}: {e}"))
}

pub fn corpus_path(kind: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join(kind)
}
