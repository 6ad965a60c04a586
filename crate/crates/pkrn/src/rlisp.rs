//! The Algol-style surface language: tokenizer, recursive-descent parser,
//! and a translator that lowers every statement to one core-language form.
//!
//! The grammar is a deliberately small subset: procedure definitions,
//! `:=` assignment, `for` loops with `do`/`product`/`sum` bodies, `while`,
//! `if`/`then`/`else`, `begin`…`end` blocks, `write`, and expression
//! statements, every statement terminated by `;`. Expressions use infix
//! `+ - * / ^` with the usual precedence, `^` binding tightest and
//! right-associatively, unary minus between `^` and `*`, and a single
//! optional comparison at the top. Application is `f(a, b)` or, for one
//! argument, juxtaposition: `factorial k`. Keywords are reserved and
//! cannot name variables.
//!
//! Loops are not primitives: the translator expands them into `prog` forms
//! with generated `%`-prefixed temporaries (`%` cannot start a user
//! identifier, so they never collide). Algebraic expressions are embedded
//! as quoted prefix forms handed to `aeval`/`write` at run time.

use crate::bignum;
use crate::eval::EvalError;
use crate::session::{MapcarOrder, Session};
use crate::sexpr::print;
use crate::value::Value;
use std::fmt;

// ---- tokens ------------------------------------------------------------------

const KEYWORDS: &[&str] = &[
    "procedure", "for", "step", "until", "do", "product", "sum", "while", "if", "then",
    "else", "begin", "end", "write", "return",
];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Id(String),
    Int(String),
    Kw(&'static str),
    Assign,
    Eq,
    Lt,
    Gt,
    Le,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Semi,
    Colon,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Id(name) => write!(f, "identifier {name}"),
            Tok::Int(text) => write!(f, "integer {text}"),
            Tok::Kw(kw) => write!(f, "'{kw}'"),
            Tok::Assign => write!(f, "':='"),
            Tok::Eq => write!(f, "'='"),
            Tok::Lt => write!(f, "'<'"),
            Tok::Gt => write!(f, "'>'"),
            Tok::Le => write!(f, "'<='"),
            Tok::Ge => write!(f, "'>='"),
            Tok::Plus => write!(f, "'+'"),
            Tok::Minus => write!(f, "'-'"),
            Tok::Star => write!(f, "'*'"),
            Tok::Slash => write!(f, "'/'"),
            Tok::Caret => write!(f, "'^'"),
            Tok::LParen => write!(f, "'('"),
            Tok::RParen => write!(f, "')'"),
            Tok::Comma => write!(f, "','"),
            Tok::Semi => write!(f, "';'"),
            Tok::Colon => write!(f, "':'"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

/// Syntax error with a 1-based source position. `eof` distinguishes a
/// statement cut short by end of input (the REPL reads more) from a
/// malformed one.
#[derive(Debug, Clone)]
pub struct SyntaxError {
    pub message: String,
    pub line: usize,
    pub col: usize,
    pub eof: bool,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

impl std::error::Error for SyntaxError {}

fn err_at(line: usize, col: usize, message: impl Into<String>) -> SyntaxError {
    SyntaxError { message: message.into(), line, col, eof: false }
}

fn tokenize(text: &str) -> Result<(Vec<Token>, (usize, usize)), SyntaxError> {
    let mut toks = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = text.chars().peekable();
    macro_rules! bump {
        () => {{
            let c = chars.next().unwrap();
            if c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            c
        }};
    }
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '%' {
            while chars.peek().is_some_and(|&c| c != '\n') {
                bump!();
            }
            continue;
        }
        let (tline, tcol) = (line, col);
        let tok = if c.is_ascii_alphabetic() {
            let mut word = String::new();
            while chars.peek().is_some_and(|c| c.is_ascii_alphanumeric() || *c == '_') {
                word.push(bump!());
            }
            match KEYWORDS.iter().find(|&&kw| kw == word) {
                Some(&kw) => Tok::Kw(kw),
                None => Tok::Id(word),
            }
        } else if c.is_ascii_digit() {
            let mut digits = String::new();
            while chars.peek().is_some_and(|c| c.is_ascii_digit()) {
                digits.push(bump!());
            }
            Tok::Int(digits)
        } else {
            bump!();
            match c {
                ':' if chars.peek() == Some(&'=') => {
                    bump!();
                    Tok::Assign
                }
                ':' => Tok::Colon,
                '<' if chars.peek() == Some(&'=') => {
                    bump!();
                    Tok::Le
                }
                '<' => Tok::Lt,
                '>' if chars.peek() == Some(&'=') => {
                    bump!();
                    Tok::Ge
                }
                '>' => Tok::Gt,
                '=' => Tok::Eq,
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                '*' => Tok::Star,
                '/' => Tok::Slash,
                '^' => Tok::Caret,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                ';' => Tok::Semi,
                _ => return Err(err_at(tline, tcol, format!("illegal character '{c}'"))),
            }
        };
        toks.push(Token { tok, line: tline, col: tcol });
    }
    Ok((toks, (line, col)))
}

// ---- syntax tree --------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CmpOp {
    Eq,
    Lt,
    Gt,
    Le,
    Ge,
}

#[derive(Debug, Clone)]
enum Expr {
    Int(String),
    Var(String),
    Call(String, Vec<Expr>),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone)]
enum ForBody {
    Do(Box<Stmt>),
    Product(Expr),
    Sum(Expr),
}

#[derive(Debug, Clone)]
enum Stmt {
    Procedure(String, Vec<String>, Box<Stmt>),
    Assign(String, Expr),
    For { var: String, from: Expr, step: Option<Expr>, until: Expr, body: ForBody },
    While(Expr, Box<Stmt>),
    If(Expr, Box<Stmt>, Option<Box<Stmt>>),
    Begin(Vec<Stmt>),
    Write(Vec<Expr>),
    Return(Expr),
    Expr(Expr),
}

// ---- parser --------------------------------------------------------------------

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|t| &t.tok)
    }

    fn here(&self) -> (usize, usize) {
        match self.toks.get(self.pos) {
            Some(t) => (t.line, t.col),
            None => self.end,
        }
    }

    fn fail(&self, expected: &str) -> SyntaxError {
        let (line, col) = self.here();
        match self.toks.get(self.pos) {
            Some(t) => err_at(line, col, format!("expected {expected}, found {}", t.tok)),
            None => SyntaxError {
                message: format!("expected {expected}, found end of input"),
                line,
                col,
                eof: true,
            },
        }
    }

    fn advance(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, want: &Tok) -> bool {
        if self.peek() == Some(want) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<(), SyntaxError> {
        if self.eat(want) {
            Ok(())
        } else {
            Err(self.fail(what))
        }
    }

    fn expect_id(&mut self, what: &str) -> Result<String, SyntaxError> {
        match self.peek() {
            Some(Tok::Id(_)) => match self.advance() {
                Some(Tok::Id(name)) => Ok(name),
                _ => unreachable!(),
            },
            _ => Err(self.fail(what)),
        }
    }

    // -- statements --

    fn parse_stmt(&mut self) -> Result<Stmt, SyntaxError> {
        match self.peek() {
            Some(Tok::Kw("procedure")) => self.parse_procedure(),
            Some(Tok::Kw("for")) => self.parse_for(),
            Some(Tok::Kw("while")) => self.parse_while(),
            Some(Tok::Kw("if")) => self.parse_if(),
            Some(Tok::Kw("begin")) => self.parse_begin(),
            Some(Tok::Kw("return")) => {
                self.pos += 1;
                Ok(Stmt::Return(self.parse_expr()?))
            }
            Some(Tok::Kw("write")) => {
                self.pos += 1;
                let mut items = vec![self.parse_expr()?];
                while self.eat(&Tok::Comma) {
                    items.push(self.parse_expr()?);
                }
                Ok(Stmt::Write(items))
            }
            Some(Tok::Id(_)) if self.peek2() == Some(&Tok::Assign) => {
                let name = self.expect_id("identifier")?;
                self.pos += 1; // :=
                Ok(Stmt::Assign(name, self.parse_expr()?))
            }
            Some(_) => Ok(Stmt::Expr(self.parse_expr()?)),
            None => Err(self.fail("a statement")),
        }
    }

    fn parse_procedure(&mut self) -> Result<Stmt, SyntaxError> {
        self.pos += 1;
        let name = self.expect_id("procedure name")?;
        let mut params = Vec::new();
        match self.peek() {
            Some(Tok::LParen) => {
                self.pos += 1;
                if !self.eat(&Tok::RParen) {
                    params.push(self.expect_id("parameter name")?);
                    while self.eat(&Tok::Comma) {
                        params.push(self.expect_id("parameter name")?);
                    }
                    self.expect(&Tok::RParen, "')'")?;
                }
            }
            Some(Tok::Id(_)) => params.push(self.expect_id("parameter name")?),
            _ => {}
        }
        self.expect(&Tok::Semi, "';' after procedure head")?;
        let body = self.parse_stmt()?;
        Ok(Stmt::Procedure(name, params, Box::new(body)))
    }

    fn parse_for(&mut self) -> Result<Stmt, SyntaxError> {
        self.pos += 1;
        let var = self.expect_id("loop variable")?;
        self.expect(&Tok::Assign, "':='")?;
        let from = self.parse_expr()?;
        let (step, until) = if self.eat(&Tok::Colon) {
            (None, self.parse_expr()?)
        } else if self.eat(&Tok::Kw("step")) {
            let step = self.parse_expr()?;
            self.expect(&Tok::Kw("until"), "'until'")?;
            (Some(step), self.parse_expr()?)
        } else {
            return Err(self.fail("':' or 'step'"));
        };
        let body = match self.peek() {
            Some(Tok::Kw("do")) => {
                self.pos += 1;
                ForBody::Do(Box::new(self.parse_stmt()?))
            }
            Some(Tok::Kw("product")) => {
                self.pos += 1;
                ForBody::Product(self.parse_expr()?)
            }
            Some(Tok::Kw("sum")) => {
                self.pos += 1;
                ForBody::Sum(self.parse_expr()?)
            }
            _ => return Err(self.fail("'do', 'product', or 'sum'")),
        };
        Ok(Stmt::For { var, from, step, until, body })
    }

    fn parse_while(&mut self) -> Result<Stmt, SyntaxError> {
        self.pos += 1;
        let pred = self.parse_expr()?;
        self.expect(&Tok::Kw("do"), "'do'")?;
        let body = self.parse_stmt()?;
        Ok(Stmt::While(pred, Box::new(body)))
    }

    fn parse_if(&mut self) -> Result<Stmt, SyntaxError> {
        self.pos += 1;
        let pred = self.parse_expr()?;
        self.expect(&Tok::Kw("then"), "'then'")?;
        let yes = self.parse_stmt()?;
        let no = if self.eat(&Tok::Kw("else")) { Some(Box::new(self.parse_stmt()?)) } else { None };
        Ok(Stmt::If(pred, Box::new(yes), no))
    }

    fn parse_begin(&mut self) -> Result<Stmt, SyntaxError> {
        self.pos += 1;
        let mut stmts = Vec::new();
        loop {
            if self.eat(&Tok::Kw("end")) {
                break;
            }
            if self.peek().is_none() {
                return Err(self.fail("'end'"));
            }
            stmts.push(self.parse_stmt()?);
            if !self.eat(&Tok::Semi) {
                self.expect(&Tok::Kw("end"), "';' or 'end'")?;
                break;
            }
        }
        Ok(Stmt::Begin(stmts))
    }

    // -- expressions --

    fn parse_expr(&mut self) -> Result<Expr, SyntaxError> {
        let left = self.parse_sum()?;
        let op = match self.peek() {
            Some(Tok::Eq) => CmpOp::Eq,
            Some(Tok::Lt) => CmpOp::Lt,
            Some(Tok::Gt) => CmpOp::Gt,
            Some(Tok::Le) => CmpOp::Le,
            Some(Tok::Ge) => CmpOp::Ge,
            _ => return Ok(left),
        };
        self.pos += 1;
        let right = self.parse_sum()?;
        // Comparisons do not chain; a second one is a syntax error upstream.
        Ok(Expr::Cmp(op, Box::new(left), Box::new(right)))
    }

    fn parse_sum(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.parse_term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(left),
            };
            self.pos += 1;
            let right = self.parse_term()?;
            left = Expr::Bin(op, Box::new(left), Box::new(right));
        }
    }

    fn parse_term(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.parse_unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(left),
            };
            self.pos += 1;
            let right = self.parse_unary()?;
            left = Expr::Bin(op, Box::new(left), Box::new(right));
        }
    }

    fn parse_unary(&mut self) -> Result<Expr, SyntaxError> {
        if self.eat(&Tok::Minus) {
            Ok(Expr::Neg(Box::new(self.parse_unary()?)))
        } else {
            self.parse_power()
        }
    }

    fn parse_power(&mut self) -> Result<Expr, SyntaxError> {
        let base = self.parse_apply()?;
        if self.eat(&Tok::Caret) {
            // Right-associative; the exponent may carry its own unary minus.
            let exp = self.parse_unary()?;
            Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    /// One-argument application by juxtaposition: `factorial k`. Only a bare
    /// identifier applies this way, and the argument must open with an
    /// identifier or integer, so `2x` stays a syntax error rather than an
    /// implicit product.
    fn parse_apply(&mut self) -> Result<Expr, SyntaxError> {
        let head = self.parse_primary()?;
        if let Expr::Var(name) = &head {
            if matches!(self.peek(), Some(Tok::Id(_)) | Some(Tok::Int(_))) {
                let arg = self.parse_apply()?;
                return Ok(Expr::Call(name.clone(), vec![arg]));
            }
        }
        Ok(head)
    }

    fn parse_primary(&mut self) -> Result<Expr, SyntaxError> {
        match self.peek() {
            Some(Tok::Int(_)) => match self.advance() {
                Some(Tok::Int(text)) => Ok(Expr::Int(text)),
                _ => unreachable!(),
            },
            Some(Tok::Id(_)) => {
                let name = self.expect_id("identifier")?;
                if self.eat(&Tok::LParen) {
                    let mut args = Vec::new();
                    if !self.eat(&Tok::RParen) {
                        args.push(self.parse_expr()?);
                        while self.eat(&Tok::Comma) {
                            args.push(self.parse_expr()?);
                        }
                        self.expect(&Tok::RParen, "')'")?;
                    }
                    Ok(Expr::Call(name, args))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.parse_expr()?;
                self.expect(&Tok::RParen, "')'")?;
                Ok(e)
            }
            _ => Err(self.fail("an expression")),
        }
    }
}

fn parse_program(text: &str) -> Result<Vec<Stmt>, SyntaxError> {
    let (toks, end) = tokenize(text)?;
    let mut p = Parser { toks, pos: 0, end };
    let mut stmts = Vec::new();
    while p.peek().is_some() {
        stmts.push(p.parse_stmt()?);
        p.expect(&Tok::Semi, "';'")?;
    }
    Ok(stmts)
}

// ---- translation ------------------------------------------------------------------

/// Translates a whole program: one core form per statement, in order,
/// already dialect-adapted.
pub fn program_forms(s: &mut Session, text: &str) -> Result<Vec<Value>, EvalError> {
    let stmts = parse_program(text).map_err(|e| EvalError::new(format!("syntax error: {e}")))?;
    let mut tr = Translator { counter: 0 };
    let mark = s.shadow_mark();
    let mut forms = Vec::with_capacity(stmts.len());
    for stmt in &stmts {
        let form = tr.stmt(s, stmt, true)?;
        s.keep(form);
        let form = dialect_adapt(s, form)?;
        s.keep(form);
        forms.push(form);
    }
    // Caller evaluates immediately; the forms stay reachable from `forms`
    // only via the shadow stack until then.
    let _ = mark;
    Ok(forms)
}

/// True when the text is one or more complete statements, false when it ends
/// mid-statement (the interactive prompt keeps reading), error otherwise.
pub fn is_complete(text: &str) -> Result<bool, SyntaxError> {
    match parse_program(text) {
        Ok(_) => Ok(true),
        Err(e) if e.eof => Ok(false),
        Err(e) => Err(e),
    }
}

struct Translator {
    counter: usize,
}

impl Translator {
    /// Lowers one statement. At top level a bare expression becomes a
    /// `write`, so typing `2+3;` prints; anywhere else it evaluates
    /// silently for its side effects.
    fn stmt(&mut self, s: &mut Session, stmt: &Stmt, top: bool) -> Result<Value, EvalError> {
        let mark = s.shadow_mark();
        let r = match stmt {
            Stmt::Expr(e) => {
                let q = self.quoted_prefix(s, e)?;
                s.keep(q);
                let head = s.intern(if top { "write" } else { "aeval" });
                s.list_from(&[head, q])
            }
            Stmt::Write(items) => {
                let mut parts = Vec::with_capacity(items.len() + 1);
                parts.push(s.intern("write"));
                for e in items {
                    let q = self.quoted_prefix(s, e)?;
                    s.keep(q);
                    parts.push(q);
                }
                s.list_from(&parts)
            }
            Stmt::Assign(name, e) => {
                let q = self.quoted_prefix(s, e)?;
                s.keep(q);
                let aeval = s.intern("aeval");
                let call = s.list_from(&[aeval, q])?;
                s.keep(call);
                let setq = s.wk.setq;
                let var = s.intern(name);
                s.list_from(&[setq, var, call])
            }
            Stmt::Return(e) => {
                let q = self.quoted_prefix(s, e)?;
                s.keep(q);
                let aeval = s.intern("aeval");
                let call = s.list_from(&[aeval, q])?;
                s.keep(call);
                let ret = s.wk.ret;
                s.list_from(&[ret, call])
            }
            Stmt::If(pred, yes, no) => {
                let test = self.predicate(s, pred)?;
                s.keep(test);
                let then_form = self.stmt(s, yes, false)?;
                s.keep(then_form);
                let clause = s.list_from(&[test, then_form])?;
                s.keep(clause);
                let cond = s.wk.cond;
                match no {
                    None => s.list_from(&[cond, clause]),
                    Some(other) => {
                        let else_form = self.stmt(s, other, false)?;
                        s.keep(else_form);
                        let t = s.wk.t;
                        let else_clause = s.list_from(&[t, else_form])?;
                        s.keep(else_clause);
                        s.list_from(&[cond, clause, else_clause])
                    }
                }
            }
            Stmt::Begin(stmts) => {
                let mut parts = vec![s.wk.prog, Value::NIL];
                for st in stmts {
                    let form = self.stmt(s, st, false)?;
                    s.keep(form);
                    parts.push(form);
                }
                s.list_from(&parts)
            }
            Stmt::While(pred, body) => self.while_loop(s, pred, body),
            Stmt::For { var, from, step, until, body } => {
                self.for_loop(s, var, from, step.as_ref(), until, body)
            }
            Stmt::Procedure(name, params, body) => {
                let body_form = self.stmt(s, body, false)?;
                s.keep(body_form);
                let mut param_syms = Vec::with_capacity(params.len());
                for p in params {
                    param_syms.push(s.intern(p));
                }
                let param_list = s.list_from(&param_syms)?;
                s.keep(param_list);
                let de = s.wk.de;
                let f = s.intern(name);
                s.list_from(&[de, f, param_list, body_form])
            }
        };
        let out = r?;
        s.shadow_truncate(mark);
        Ok(out)
    }

    /// `(prog () %loopN (cond ((null PRED) (return nil))) BODY (go %loopN))`
    fn while_loop(&mut self, s: &mut Session, pred: &Expr, body: &Stmt) -> Result<Value, EvalError> {
        self.counter += 1;
        let label = s.intern(&format!("%loop{}", self.counter));
        let mark = s.shadow_mark();
        let test = self.predicate(s, pred)?;
        s.keep(test);
        let null = s.intern("null");
        let negated = s.list_from(&[null, test])?;
        s.keep(negated);
        let ret = s.wk.ret;
        let exit = s.list_from(&[ret, Value::NIL])?;
        s.keep(exit);
        let clause = s.list_from(&[negated, exit])?;
        s.keep(clause);
        let cond = s.wk.cond;
        let guard = s.list_from(&[cond, clause])?;
        s.keep(guard);
        let body_form = self.stmt(s, body, false)?;
        s.keep(body_form);
        let go = s.wk.go;
        let jump = s.list_from(&[go, label])?;
        s.keep(jump);
        let prog = s.wk.prog;
        let out = s.list_from(&[prog, Value::NIL, label, guard, body_form, jump]);
        s.shadow_truncate(mark);
        out
    }

    /// Expands the counted loop. With `B` the limit and `S` the step, the
    /// exit test `S*(v - B) > 0` handles both step signs, and an empty range
    /// yields the accumulator identity (1 for product, 0 for sum) untouched.
    fn for_loop(
        &mut self,
        s: &mut Session,
        var: &str,
        from: &Expr,
        step: Option<&Expr>,
        until: &Expr,
        body: &ForBody,
    ) -> Result<Value, EvalError> {
        self.counter += 1;
        let n = self.counter;
        let v = s.intern(var);
        let lim = s.intern(&format!("%lim{n}"));
        let stp = s.intern(&format!("%stp{n}"));
        let label = s.intern(&format!("%loop{n}"));
        let acc = match body {
            ForBody::Do(_) => None,
            ForBody::Product(_) | ForBody::Sum(_) => Some(s.intern(&format!("%acc{n}"))),
        };
        let mark = s.shadow_mark();

        let mut vars = vec![v, lim, stp];
        vars.extend(acc);
        let var_list = s.list_from(&vars)?;
        s.keep(var_list);

        let init_v = self.assign_aeval(s, v, from)?;
        s.keep(init_v);
        let init_lim = self.assign_aeval(s, lim, until)?;
        s.keep(init_lim);
        let init_stp = match step {
            Some(e) => self.assign_aeval(s, stp, e)?,
            None => {
                let setq = s.wk.setq;
                s.list_from(&[setq, stp, Value::fixnum(1)])?
            }
        };
        s.keep(init_stp);

        // (cond ((greaterp (times %stp (difference v %lim)) 0) (return EXIT)))
        let difference = s.intern("difference");
        let delta = s.list_from(&[difference, v, lim])?;
        s.keep(delta);
        let times = s.intern("times");
        let scaled = s.list_from(&[times, stp, delta])?;
        s.keep(scaled);
        let greaterp = s.intern("greaterp");
        let test = s.list_from(&[greaterp, scaled, Value::fixnum(0)])?;
        s.keep(test);
        let ret = s.wk.ret;
        let exit_value = acc.unwrap_or(Value::NIL);
        let exit = s.list_from(&[ret, exit_value])?;
        s.keep(exit);
        let clause = s.list_from(&[test, exit])?;
        s.keep(clause);
        let cond = s.wk.cond;
        let guard = s.list_from(&[cond, clause])?;
        s.keep(guard);

        // Accumulator update rebuilds the operation form at run time so the
        // current accumulated value (a number or a lowered prefix form) is
        // spliced in: (setq %acc (aeval (list 'OP %acc 'EXPR))).
        let (init_acc, update) = match body {
            ForBody::Do(stmt) => {
                let b = self.stmt(s, stmt, false)?;
                s.keep(b);
                (None, b)
            }
            ForBody::Product(e) | ForBody::Sum(e) => {
                let acc = acc.expect("accumulator symbol");
                let (identity, op) = match body {
                    ForBody::Product(_) => (Value::fixnum(1), "times"),
                    _ => (Value::fixnum(0), "plus"),
                };
                let setq = s.wk.setq;
                let init = s.list_from(&[setq, acc, identity])?;
                s.keep(init);
                let op_sym = s.intern(op);
                let op_quoted = self.quote(s, op_sym)?;
                s.keep(op_quoted);
                let term = self.quoted_prefix(s, e)?;
                s.keep(term);
                let list_sym = s.intern("list");
                let build = s.list_from(&[list_sym, op_quoted, acc, term])?;
                s.keep(build);
                let aeval = s.intern("aeval");
                let eval_call = s.list_from(&[aeval, build])?;
                s.keep(eval_call);
                let upd = s.list_from(&[setq, acc, eval_call])?;
                s.keep(upd);
                (Some(init), upd)
            }
        };

        // (setq v (plus v %stp))
        let plus = s.intern("plus");
        let advance = s.list_from(&[plus, v, stp])?;
        s.keep(advance);
        let setq = s.wk.setq;
        let step_form = s.list_from(&[setq, v, advance])?;
        s.keep(step_form);
        let go = s.wk.go;
        let jump = s.list_from(&[go, label])?;
        s.keep(jump);

        let prog = s.wk.prog;
        let mut parts = vec![prog, var_list, init_v, init_lim, init_stp];
        parts.extend(init_acc);
        parts.push(label);
        parts.push(guard);
        parts.push(update);
        parts.push(step_form);
        parts.push(jump);
        let out = s.list_from(&parts);
        s.shadow_truncate(mark);
        out
    }

    /// `(setq VAR (aeval 'EXPR))`
    fn assign_aeval(&mut self, s: &mut Session, var: Value, e: &Expr) -> Result<Value, EvalError> {
        let mark = s.shadow_mark();
        let q = self.quoted_prefix(s, e)?;
        s.keep(q);
        let aeval = s.intern("aeval");
        let call = s.list_from(&[aeval, q])?;
        s.keep(call);
        let setq = s.wk.setq;
        let out = s.list_from(&[setq, var, call]);
        s.shadow_truncate(mark);
        out
    }

    /// Conditions must compare: algebraic values carry no truthiness, so a
    /// bare expression in `if`/`while` is rejected at translation time.
    fn predicate(&mut self, s: &mut Session, e: &Expr) -> Result<Value, EvalError> {
        let Expr::Cmp(op, a, b) = e else {
            return Err(EvalError::new("condition must be a comparison"));
        };
        let mark = s.shadow_mark();
        let qa = self.quoted_prefix(s, a)?;
        s.keep(qa);
        let aeval = s.intern("aeval");
        let ea = s.list_from(&[aeval, qa])?;
        s.keep(ea);
        let qb = self.quoted_prefix(s, b)?;
        s.keep(qb);
        let eb = s.list_from(&[aeval, qb])?;
        s.keep(eb);
        let (direct, invert) = match op {
            CmpOp::Eq => ("eqn", false),
            CmpOp::Lt => ("lessp", false),
            CmpOp::Gt => ("greaterp", false),
            CmpOp::Le => ("greaterp", true),
            CmpOp::Ge => ("lessp", true),
        };
        let head = s.intern(direct);
        let cmp = s.list_from(&[head, ea, eb])?;
        let out = if invert {
            s.keep(cmp);
            let null = s.intern("null");
            s.list_from(&[null, cmp])
        } else {
            Ok(cmp)
        };
        s.shadow_truncate(mark);
        out
    }

    fn quote(&mut self, s: &mut Session, v: Value) -> Result<Value, EvalError> {
        let q = s.wk.quote;
        s.list_from(&[q, v])
    }

    /// `(quote PREFIX)` for an algebraic expression.
    fn quoted_prefix(&mut self, s: &mut Session, e: &Expr) -> Result<Value, EvalError> {
        let mark = s.shadow_mark();
        let p = self.prefix(s, e)?;
        s.keep(p);
        let out = self.quote(s, p);
        s.shadow_truncate(mark);
        out
    }

    fn prefix(&mut self, s: &mut Session, e: &Expr) -> Result<Value, EvalError> {
        match e {
            Expr::Int(text) => bignum::from_decimal(s, text),
            Expr::Var(name) => Ok(s.intern(name)),
            Expr::Neg(inner) => {
                let mark = s.shadow_mark();
                let p = self.prefix(s, inner)?;
                s.keep(p);
                let minus = s.intern("minus");
                let out = s.list_from(&[minus, p]);
                s.shadow_truncate(mark);
                out
            }
            Expr::Bin(op, a, b) => {
                let mark = s.shadow_mark();
                let pa = self.prefix(s, a)?;
                s.keep(pa);
                let pb = self.prefix(s, b)?;
                s.keep(pb);
                let name = match op {
                    BinOp::Add => "plus",
                    BinOp::Sub => "difference",
                    BinOp::Mul => "times",
                    BinOp::Div => "quotient",
                    BinOp::Pow => "expt",
                };
                let head = s.intern(name);
                let out = s.list_from(&[head, pa, pb]);
                s.shadow_truncate(mark);
                out
            }
            Expr::Call(name, args) => {
                let mark = s.shadow_mark();
                let mut parts = Vec::with_capacity(args.len() + 1);
                parts.push(s.intern(name));
                for a in args {
                    let p = self.prefix(s, a)?;
                    s.keep(p);
                    parts.push(p);
                }
                let out = s.list_from(&parts);
                s.shadow_truncate(mark);
                out
            }
            Expr::Cmp(..) => Err(EvalError::new("comparison in algebraic context")),
        }
    }
}

// ---- dialect adaptation --------------------------------------------------------------

/// Argument permutations, per head, that bring list-first input to the
/// canonical function-first order the builtins expect.
const ADAPT_TABLE: &[(&str, &[usize])] = &[("mapcar", &[1, 0])];

/// Rewrites a translated form per the adaptation table when the session's
/// input dialect is not canonical. The walk descends the whole tree,
/// including quoted subforms, so adapted calls survive the translator's
/// quoting; quoted data that merely resembles such a call is rewritten too,
/// which is the documented cost of the scheme.
pub fn dialect_adapt(s: &mut Session, form: Value) -> Result<Value, EvalError> {
    match s.dialect {
        MapcarOrder::FnFirst => Ok(form),
        MapcarOrder::ListFirst => adapt(s, form),
    }
}

fn adapt(s: &mut Session, form: Value) -> Result<Value, EvalError> {
    if !form.is_cons() {
        return Ok(form);
    }
    let head = s.car(form);
    if head.is_symbol() {
        let swap = ADAPT_TABLE.iter().find(|(name, _)| s.symbol_name(head) == *name);
        if let Some((_, perm)) = swap {
            if let Some(args) = s.proper_list(s.cdr(form)) {
                if args.len() == perm.len() {
                    let mark = s.shadow_mark();
                    let mut parts = Vec::with_capacity(perm.len() + 1);
                    parts.push(head);
                    for &src in perm.iter() {
                        let a = adapt(s, args[src])?;
                        s.keep(a);
                        parts.push(a);
                    }
                    let out = s.list_from(&parts);
                    s.shadow_truncate(mark);
                    return out;
                }
            }
        }
    }
    // Generic descent, rebuilding only when a child changed so untouched
    // structure keeps its identity.
    let (car, cdr) = (s.car(form), s.cdr(form));
    let mark = s.shadow_mark();
    let new_car = adapt(s, car)?;
    s.keep(new_car);
    let new_cdr = adapt(s, cdr)?;
    s.keep(new_cdr);
    let out = if new_car == car && new_cdr == cdr {
        Ok(form)
    } else {
        s.alloc_cons(new_car, new_cdr)
    };
    s.shadow_truncate(mark);
    out
}

/// Parses, translates, evaluates, and collects the printed value of each
/// statement; primarily a test convenience.
pub fn run_rlisp_text(s: &mut Session, text: &str) -> Result<Vec<String>, EvalError> {
    let mark = s.shadow_mark();
    let forms = program_forms(s, text)?;
    let mut results = Vec::with_capacity(forms.len());
    for &form in &forms {
        let v = crate::eval::eval_top(s, form);
        match v {
            Ok(v) => results.push(print(s, v)),
            Err(e) => {
                s.shadow_truncate(mark);
                return Err(e);
            }
        }
    }
    s.shadow_truncate(mark);
    Ok(results)
}
