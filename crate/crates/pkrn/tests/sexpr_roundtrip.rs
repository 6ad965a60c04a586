//! Reader/printer coherence: printed text must read back to the same
//! structure and reprint to the same text, and errors must carry useful
//! positions plus an accurate end-of-input marker.

mod common;

use common::{deep_equal, gen_tree};
use pkrn::session::Session;
use pkrn::sexpr::{print, Reader};
use pkrn::value::Value;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn read_one(s: &mut Session, text: &str) -> Value {
    let mut reader = Reader::new(text);
    reader
        .read(s)
        .unwrap_or_else(|e| panic!("read failed on {text:?}: {e}"))
        .unwrap_or_else(|| panic!("no datum in {text:?}"))
}

#[test]
fn print_read_print_is_stable_on_random_trees() {
    let mut s = common::default_session();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for i in 0..1_000 {
        let mark = s.shadow_mark();
        let tree = gen_tree(&mut s, &mut rng, 6);
        s.keep(tree);
        let text1 = print(&s, tree);
        let back = read_one(&mut s, &text1);
        s.keep(back);
        assert!(deep_equal(&s, tree, back), "tree {i}: reread structure differs\n{text1}");
        let text2 = print(&s, back);
        assert_eq!(text1, text2, "tree {i}: print is not a fixed point");
        s.shadow_truncate(mark);
    }
}

#[test]
fn atom_syntax_round_trips() {
    let mut s = common::default_session();
    let cases = [
        "0",
        "-1",
        "123456789012345678901234567890123456789",
        "-99999999999999999999999999",
        "foo",
        "nil",
        "t",
        "\"\"",
        "\"two words\"",
        "\"say \"\"hi\"\"\"",
        "#\\x41",
        "#\\x00",
        "#\\xff",
        "1.5",
        "-0.25",
        "(a . b)",
        "(1 2 . 3)",
        "(quote x)",
        "((nil) (nil))",
        "(a (b (c (d))) e)",
    ];
    for text in cases {
        let v = read_one(&mut s, text);
        assert_eq!(print(&s, v), text, "case {text:?}");
    }
    // An empty list is the same object as nil, so it prints as nil.
    let v = read_one(&mut s, "((())(()))");
    assert_eq!(print(&s, v), "((nil) (nil))");
}

#[test]
fn quote_sugar_reads_as_quote_form() {
    let mut s = common::default_session();
    let v = read_one(&mut s, "'(a 'b)");
    assert_eq!(print(&s, v), "(quote (a (quote b)))");
}

#[test]
fn comments_and_whitespace_are_skipped() {
    let mut s = common::default_session();
    let v = read_one(&mut s, "; leading note\n  ( 1 ; inline\n 2 )\n");
    assert_eq!(print(&s, v), "(1 2)");
}

#[test]
fn sequential_reads_consume_forms_in_order() {
    let mut s = common::default_session();
    let mut reader = Reader::new("1 (2 3) four");
    let mut seen = Vec::new();
    while let Some(v) = reader.read(&mut s).expect("read") {
        seen.push(print(&s, v));
    }
    assert_eq!(seen, ["1", "(2 3)", "four"]);
}

#[test]
fn end_of_input_is_none_not_error() {
    let mut s = common::default_session();
    for text in ["", "   \n\t ", "; only a comment\n"] {
        let mut reader = Reader::new(text);
        assert!(reader.read(&mut s).expect("clean eof").is_none(), "text {text:?}");
    }
}

#[test]
fn errors_carry_position_and_eof_flag() {
    let mut s = common::default_session();

    // Unterminated list: an end-of-input condition a REPL should detect.
    let err = Reader::new("(1 2").read(&mut s).unwrap_err();
    assert!(err.eof, "unterminated list should flag eof: {err}");

    // Unterminated string literal: also an eof condition.
    let err = Reader::new("\"abc").read(&mut s).unwrap_err();
    assert!(err.eof, "unterminated string should flag eof: {err}");

    // A stray closer is a definite error, not an eof condition.
    let err = Reader::new(")").read(&mut s).unwrap_err();
    assert!(!err.eof, "stray ')' is not eof: {err}");
    assert_eq!(err.line, 1);

    // Positions point at the offending line.
    let err = Reader::new("(ok)\n  )").read_again_err(&mut s);
    assert_eq!(err.line, 2, "error should be on line 2: {err}");
}

trait SecondRead {
    fn read_again_err(&mut self, s: &mut Session) -> pkrn::sexpr::ParseError;
}

impl SecondRead for Reader<'_> {
    fn read_again_err(&mut self, s: &mut Session) -> pkrn::sexpr::ParseError {
        self.read(s).expect("first datum").expect("first datum present");
        self.read(s).unwrap_err()
    }
}

#[test]
fn nesting_depth_is_bounded() {
    let mut s = common::default_session();
    let deep = format!("{}{}{}", "(".repeat(1200), "x", ")".repeat(1200));
    let err = Reader::new(&deep).read(&mut s).unwrap_err();
    assert!(err.message.contains("nest"), "got: {err}");

    // A depth just inside the limit parses fine.
    let ok = format!("{}{}{}", "(".repeat(900), "x", ")".repeat(900));
    assert!(Reader::new(&ok).read(&mut s).is_ok());
}

#[test]
fn printer_marks_cycles_and_shared_tails_stay_textual() {
    let mut s = common::default_session();
    let knot = s.alloc_cons(Value::fixnum(1), Value::NIL).unwrap();
    s.set_cdr(knot, knot);
    let text = print(&s, knot);
    assert!(text.contains("#cycle#"), "got: {text}");

    // Shared (but acyclic) structure prints by value, so it re-reads.
    let shared = s.alloc_cons(Value::fixnum(9), Value::NIL).unwrap();
    let pair = s.alloc_cons(shared, shared).unwrap();
    let text = print(&s, pair);
    let back = read_one(&mut s, &text);
    assert!(deep_equal(&s, pair, back));
}

#[test]
fn fixnum_boundary_literals_read_to_right_representation() {
    let mut s = common::default_session();
    let max_fix = read_one(&mut s, "1152921504606846975");
    assert!(max_fix.is_fixnum());
    let over = read_one(&mut s, "1152921504606846976");
    assert!(!over.is_fixnum());
    assert_eq!(print(&s, over), "1152921504606846976");
    let min_fix = read_one(&mut s, "-1152921504606846976");
    assert!(min_fix.is_fixnum());
    let under = read_one(&mut s, "-1152921504606846977");
    assert!(!under.is_fixnum());
    assert_eq!(print(&s, under), "-1152921504606846977");
}
