//! S-expression reader and printer.
//!
//! The reader is a plain recursive-descent scanner over a byte slice; list
//! spines are consumed iteratively so only genuine nesting costs recursion
//! depth. The printer emits a canonical external form: one space between
//! elements, dotted tails only where the final cdr is a non-nil atom, and no
//! quote shorthand, so equal structures print identically.

use crate::session::Session;
use crate::value::Value;
use std::fmt;

const MAX_NESTING: usize = 1000;

#[derive(Debug, Clone)]
pub struct ParseError {
    pub message: String,
    pub line: usize,
    pub col: usize,
    /// True when the input ended mid-form; a REPL can ask for more input.
    pub eof: bool,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

impl std::error::Error for ParseError {}

pub struct Reader<'a> {
    text: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Reader<'a> {
    pub fn new(text: &'a str) -> Reader<'a> {
        Reader { text: text.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    fn err(&self, message: impl Into<String>, eof: bool) -> ParseError {
        ParseError { message: message.into(), line: self.line, col: self.col, eof }
    }

    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek()?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn skip_ws(&mut self) {
        loop {
            match self.peek() {
                Some(b' ' | b'\t' | b'\r' | b'\n') => {
                    self.bump();
                }
                Some(b';') => {
                    while let Some(b) = self.peek() {
                        if b == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => return,
            }
        }
    }

    /// Reads the next form, or None at a clean end of input.
    pub fn read(&mut self, s: &mut Session) -> Result<Option<Value>, ParseError> {
        self.skip_ws();
        if self.peek().is_none() {
            return Ok(None);
        }
        let mark = s.shadow_mark();
        let result = self.read_form(s, 0);
        s.shadow_truncate(mark);
        result.map(Some)
    }

    fn read_form(&mut self, s: &mut Session, depth: usize) -> Result<Value, ParseError> {
        if depth > MAX_NESTING {
            return Err(self.err("nesting too deep", false));
        }
        self.skip_ws();
        match self.peek() {
            None => Err(self.err("unexpected end of input", true)),
            Some(b'(') => {
                self.bump();
                self.read_list(s, depth)
            }
            Some(b')') => Err(self.err("unexpected )", false)),
            Some(b'\'') => {
                self.bump();
                let inner = self.read_form(s, depth + 1)?;
                s.keep(inner);
                let quote = s.wk.quote;
                s.list_from(&[quote, inner]).map_err(|e| self.err(e.message, false))
            }
            Some(b'"') => self.read_string(s),
            Some(_) => self.read_atom(s),
        }
    }

    fn read_list(&mut self, s: &mut Session, depth: usize) -> Result<Value, ParseError> {
        let mut items: Vec<Value> = Vec::new();
        let mut tail = Value::NIL;
        loop {
            self.skip_ws();
            match self.peek() {
                None => return Err(self.err("unclosed (", true)),
                Some(b')') => {
                    self.bump();
                    break;
                }
                Some(b'.') if self.dot_is_alone() => {
                    self.bump();
                    if items.is_empty() {
                        return Err(self.err("dotted tail with no preceding element", false));
                    }
                    tail = self.read_form(s, depth + 1)?;
                    s.keep(tail);
                    self.skip_ws();
                    if self.peek() == Some(b')') {
                        self.bump();
                        break;
                    }
                    let eof = self.peek().is_none();
                    return Err(self.err("expected ) after dotted tail", eof));
                }
                Some(_) => {
                    let item = self.read_form(s, depth + 1)?;
                    s.keep(item);
                    items.push(item);
                }
            }
        }
        let mut list = tail;
        for &item in items.iter().rev() {
            s.keep(list);
            list = s.alloc_cons(item, list).map_err(|e| self.err(e.message, false))?;
        }
        Ok(list)
    }

    /// A '.' only ends a list element position when followed by a delimiter;
    /// otherwise it starts a float like .5 is not supported but 1.5 begins
    /// with a digit, so this only guards tokens like ".foo".
    fn dot_is_alone(&self) -> bool {
        match self.text.get(self.pos + 1) {
            None => true,
            Some(b) => is_delimiter(*b),
        }
    }

    fn read_string(&mut self, s: &mut Session) -> Result<Value, ParseError> {
        self.bump();
        let mut text = String::new();
        loop {
            match self.bump() {
                None => return Err(self.err("unclosed string", true)),
                Some(b'"') => {
                    if self.peek() == Some(b'"') {
                        self.bump();
                        text.push('"');
                    } else {
                        break;
                    }
                }
                Some(b) => text.push(b as char),
            }
        }
        s.alloc_string(&text).map_err(|e| self.err(e.message, false))
    }

    fn read_atom(&mut self, s: &mut Session) -> Result<Value, ParseError> {
        let start = self.pos;
        while let Some(b) = self.peek() {
            if is_delimiter(b) {
                break;
            }
            self.bump();
        }
        let token = std::str::from_utf8(&self.text[start..self.pos])
            .map_err(|_| self.err("atom is not valid UTF-8", false))?;
        debug_assert!(!token.is_empty());
        if let Some(rest) = token.strip_prefix("#\\x") {
            let byte = u8::from_str_radix(rest, 16)
                .map_err(|_| self.err(format!("malformed character literal: {token}"), false))?;
            return Ok(Value::char_value(byte));
        }
        if token.starts_with('#') {
            return Err(self.err(format!("unreadable token: {token}"), false));
        }
        match classify_number(token) {
            NumberShape::Int => {
                crate::bignum::from_decimal(s, token).map_err(|e| self.err(e.message, false))
            }
            NumberShape::Float => {
                let f: f64 = token
                    .parse()
                    .map_err(|_| self.err(format!("malformed float literal: {token}"), false))?;
                s.alloc_float(f).map_err(|e| self.err(e.message, false))
            }
            NumberShape::NotANumber => Ok(s.intern(token)),
        }
    }
}

fn is_delimiter(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\r' | b'\n' | b'(' | b')' | b';' | b'"' | b'\'')
}

enum NumberShape {
    Int,
    Float,
    NotANumber,
}

/// Numeric tokens are -?digits, optionally followed by .digits and/or an
/// exponent part; anything else is a symbol (so `-` and `1x` stay symbols).
fn classify_number(token: &str) -> NumberShape {
    let bytes = token.as_bytes();
    let mut i = 0;
    if bytes.first() == Some(&b'-') {
        i = 1;
    }
    let int_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i == int_start {
        return NumberShape::NotANumber;
    }
    let mut is_float = false;
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == frac_start {
            return NumberShape::NotANumber;
        }
        is_float = true;
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        i += 1;
        if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
            i += 1;
        }
        let exp_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return NumberShape::NotANumber;
        }
        is_float = true;
    }
    if i != bytes.len() {
        return NumberShape::NotANumber;
    }
    if is_float {
        NumberShape::Float
    } else {
        NumberShape::Int
    }
}

// ---- printer ---------------------------------------------------------------

/// Caps total printed nodes so shared-structure blowups stay bounded.
const PRINT_BUDGET: usize = 1_000_000;

pub fn print(s: &Session, v: Value) -> String {
    let mut out = String::new();
    let mut path: Vec<Value> = Vec::new();
    let mut budget = PRINT_BUDGET;
    print_into(s, v, &mut out, &mut path, &mut budget);
    out
}

fn print_into(s: &Session, v: Value, out: &mut String, path: &mut Vec<Value>, budget: &mut usize) {
    if *budget == 0 {
        out.push_str("...");
        return;
    }
    *budget -= 1;
    if !v.is_cons() {
        print_atom(s, v, out);
        return;
    }
    if path.contains(&v) {
        out.push_str("#cycle#");
        return;
    }
    out.push('(');
    let spine_base = path.len();
    let mut cur = v;
    let mut first = true;
    loop {
        if !first {
            out.push(' ');
        }
        first = false;
        path.push(cur);
        print_into(s, s.car(cur), out, path, budget);
        let next = s.cdr(cur);
        if next.is_nil() {
            break;
        }
        if !next.is_cons() {
            out.push_str(" . ");
            print_into(s, next, out, path, budget);
            break;
        }
        if path.contains(&next) {
            out.push_str(" . #cycle#");
            break;
        }
        if *budget == 0 {
            out.push_str(" ...");
            break;
        }
        *budget -= 1;
        cur = next;
    }
    path.truncate(spine_base);
    out.push(')');
}

fn print_atom(s: &Session, v: Value, out: &mut String) {
    use crate::heap::ObjKind;
    use crate::value::TypeTag;
    match v.tag() {
        TypeTag::Fixnum => out.push_str(&v.as_fixnum().to_string()),
        TypeTag::Symbol => out.push_str(s.symbol_name(v)),
        TypeTag::Immediate => {
            if v == Value::UNBOUND {
                out.push_str("#unbound#");
            } else if let Some(c) = v.as_char() {
                out.push_str(&format!("#\\x{c:02x}"));
            } else {
                out.push_str("#immediate#");
            }
        }
        TypeTag::Cons => unreachable!("cons handled by caller"),
        TypeTag::HeapObj => match s.heap.kind_of(v.handle()) {
            ObjKind::Str => {
                out.push('"');
                for ch in s.string_text(v).chars() {
                    if ch == '"' {
                        out.push('"');
                    }
                    out.push(ch);
                }
                out.push('"');
            }
            ObjKind::Float => out.push_str(&format!("{:?}", s.float_value(v))),
            ObjKind::Bignum => out.push_str(&crate::bignum::to_decimal(s, v)),
            ObjKind::Vector => {
                out.push_str("#(");
                for i in 0..s.vector_len(v) {
                    if i > 0 {
                        out.push(' ');
                    }
                    // Vectors hold atoms or small structures; budget is not
                    // threaded here because nothing in the kernel builds
                    // cyclic vectors.
                    out.push_str(&print(s, s.vector_get(v, i)));
                }
                out.push(')');
            }
            ObjKind::Chunk => {
                out.push_str("#<chunk ");
                out.push_str(&print(s, s.chunk_name(v)));
                out.push('>');
            }
            // A heap-object handle never points at a cons header.
            ObjKind::Free | ObjKind::Cons => out.push_str("#free#"),
        },
    }
}
