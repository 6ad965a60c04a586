//! Compiler, verifier, disassembler, and VM: compiled execution must match
//! the tree walker form for form, the verifier must reject malformed chunks,
//! and jump widening must hold up on branch-heavy code.

mod common;

use common::{run, session};
use pkrn::bytecode::{compile_top, disassemble, execute_chunk, verify_chunk, Compiled};
use pkrn::eval::tree_eval;
use pkrn::session::{ChunkBuild, Engine, Session};
use pkrn::sexpr::{print, Reader};
use pkrn::value::Value;

fn read_form(s: &mut Session, text: &str) -> Value {
    Reader::new(text).read(s).expect("read").expect("datum")
}

/// Compiles a form, runs it on the VM, runs it through the tree walker in
/// a twin session, and demands identical printed results and output bytes.
fn assert_engines_agree(text: &str) {
    let mut vm = session(Engine::Byte);
    let mut tree = session(Engine::Tree);
    let vm_val = {
        let form = read_form(&mut vm, text);
        vm.keep(form);
        match compile_top(&mut vm, form).expect("compile") {
            Compiled::Chunk(chunk) => {
                verify_chunk(&vm, chunk).expect("fresh chunk must verify");
                execute_chunk(&mut vm, chunk, &[]).expect("vm run")
            }
            Compiled::Unsupported(why) => panic!("expected compilable form ({why}): {text}"),
        }
    };
    let tree_val = {
        let form = read_form(&mut tree, text);
        tree.keep(form);
        tree_eval(&mut tree, form).expect("tree run")
    };
    assert_eq!(print(&vm, vm_val), print(&tree, tree_val), "value mismatch on {text}");
    assert_eq!(vm.take_out(), tree.take_out(), "output mismatch on {text}");
}

#[test]
fn compiled_forms_match_tree_walker() {
    for text in [
        "(plus 1 2 3 4)",
        "(times 2 (plus 3 4) 5)",
        "(difference (times 9 9) (quotient 17 4))",
        "(cond ((lessp 5 3) 'low) ((greaterp 5 3) 'high) (t 'equalish))",
        "(and 1 2 (or nil 3))",
        "(progn (setq tmp 5) (times tmp tmp))",
        "(prog (i acc) (setq i 0) (setq acc 1) \
         top (cond ((greaterp i 12) (return acc))) \
         (setq acc (times acc 2)) (setq i (plus i 1)) (go top))",
        "((lambda (a b) (cons a b)) 1 2)",
        "(list (quote x) \"s\" 4.5 (cons 1 nil))",
        "(length (reverse (append '(1 2) '(3 4 5))))",
        "(mapcar '(lambda (n) (times n n)) '(1 2 3 4))",
    ] {
        assert_engines_agree(text);
    }
}

#[test]
fn defined_functions_compile_to_chunks_and_agree() {
    let mut vm = session(Engine::Byte);
    let mut tree = session(Engine::Tree);
    let program = "(de poly (x) (plus (times 3 x x) (times -4 x) 2))
                   (list (poly 0) (poly 1) (poly -2) (poly 100))";
    assert_eq!(run(&mut vm, program).last(), run(&mut tree, program).last());
    // The function cell really holds verified bytecode, and it disassembles.
    let sym = vm.intern("poly");
    if let pkrn::symbol::FunCell::Chunk { chunk, .. } = &vm.syms.get(sym).fun {
        let chunk = *chunk;
        verify_chunk(&vm, chunk).expect("stored chunk verifies");
        let text = disassemble(&vm, chunk);
        assert!(text.starts_with("chunk poly arity=1"), "got header: {text}");
        assert!(text.contains("return"), "disassembly lists instructions: {text}");
    } else {
        panic!("poly should be compiled under the bytecode engine");
    }
}

#[test]
fn recursion_through_compiled_code() {
    let mut s = session(Engine::Byte);
    let program = "(de f (n) (cond ((eqn n 0) 1) (t (times n (f (difference n 1))))))
                   (f 30)";
    assert_eq!(run(&mut s, program).last().unwrap(), "265252859812191058636308480000000");
}

#[test]
fn branch_heavy_code_needs_wide_jumps_and_still_runs() {
    // A cond with many fat arms forces forward jumps past the one-byte
    // operand range, exercising the widening fixpoint.
    let mut arms = String::new();
    for i in 0..400 {
        arms.push_str(&format!(
            "((eqn probe {i}) (list {i} \"padding padding padding\" (quote filler{i}))) "
        ));
    }
    let program =
        format!("(setq probe 397) (car (cond {arms} (t '(fallthrough))))");
    let mut vm = session(Engine::Byte);
    let mut tree = session(Engine::Tree);
    assert_eq!(run(&mut vm, &program).last(), run(&mut tree, &program).last());
    assert_eq!(run(&mut vm, "probe").last().unwrap(), "397");
}

#[test]
fn constants_are_deduplicated() {
    let mut s = session(Engine::Byte);
    let form = read_form(&mut s, "(list 'k 'k 'k 99 99 99 \"s\" \"s\")");
    s.keep(form);
    let Compiled::Chunk(chunk) = compile_top(&mut s, form).expect("compile") else {
        panic!("list of constants must compile");
    };
    // Pooling is by value identity: the repeated symbol and fixnum collapse
    // to one entry each, the two distinct string objects stay distinct, and
    // the callee symbol takes one slot. 3 + 2 string objects = 5.
    assert_eq!(
        s.chunk_nconsts(chunk),
        5,
        "constant pool should deduplicate identical words"
    );
}

#[test]
fn unsupported_forms_fall_back_cleanly() {
    // Whatever the compiler cannot handle must still evaluate correctly
    // under the default engine via the tree-walking fallback.
    let mut s = session(Engine::Byte);
    // A deliberately odd but legal construction: computed function position
    // through apply-style evaluation of a lambda stored in a variable.
    let program = "(setq op '(lambda (n) (plus n 10))) (mapcar op '(1 2 3))";
    assert_eq!(run(&mut s, program).last().unwrap(), "(11 12 13)");
}

#[test]
fn verifier_rejects_truncated_code() {
    let mut s = session(Engine::Byte);
    let form = read_form(&mut s, "(plus 1 2)");
    s.keep(form);
    let Compiled::Chunk(chunk) = compile_top(&mut s, form).expect("compile") else {
        panic!("arithmetic compiles")
    };
    let mut code = s.chunk_code(chunk);
    code.pop();
    let name = s.intern("%hacked");
    let consts: Vec<Value> = (0..s.chunk_nconsts(chunk)).map(|i| s.chunk_const(chunk, i)).collect();
    let bad = s
        .alloc_chunk(&ChunkBuild {
            arity: 0,
            nlocals: s.chunk_nlocals(chunk) as u16,
            consts,
            params: vec![],
            name,
            code,
        })
        .expect("alloc");
    let err = verify_chunk(&s, bad).unwrap_err();
    assert!(!err.message.is_empty());
}

#[test]
fn verifier_rejects_unknown_opcodes_and_empty_code() {
    let mut s = session(Engine::Byte);
    let name = s.intern("%junk");
    let junk = s
        .alloc_chunk(&ChunkBuild {
            arity: 0,
            nlocals: 0,
            consts: vec![],
            params: vec![],
            name,
            code: vec![0xFE],
        })
        .expect("alloc");
    assert!(verify_chunk(&s, junk).is_err(), "opcode 0xFE must be rejected");

    let name = s.intern("%empty");
    let empty = s
        .alloc_chunk(&ChunkBuild {
            arity: 0,
            nlocals: 0,
            consts: vec![],
            params: vec![],
            name,
            code: vec![],
        })
        .expect("alloc");
    assert!(verify_chunk(&s, empty).is_err(), "code must end in an explicit return");
}

#[test]
fn verifier_rejects_bad_constant_indices() {
    let mut s = session(Engine::Byte);
    let form = read_form(&mut s, "(quote marker)");
    s.keep(form);
    let Compiled::Chunk(chunk) = compile_top(&mut s, form).expect("compile") else {
        panic!("quote compiles")
    };
    // Same code, but with the constant pool emptied out from under it.
    let name = s.intern("%nopool");
    let bad = s
        .alloc_chunk(&ChunkBuild {
            arity: 0,
            nlocals: s.chunk_nlocals(chunk) as u16,
            consts: vec![],
            params: vec![],
            name,
            code: s.chunk_code(chunk),
        })
        .expect("alloc");
    assert!(verify_chunk(&s, bad).is_err(), "constant index out of range must be rejected");
}

#[test]
fn vm_errors_unwind_cleanly() {
    let mut s = session(Engine::Byte);
    let err = pkrn::eval::run_text(&mut s, "(de half (n) (quotient n 0)) (half 4)")
        .expect_err("division by zero");
    assert!(err.message.contains("division by zero"), "got: {}", err.message);
    // Stack and frames are fully unwound; the session keeps working.
    assert!(s.vm_stack.is_empty(), "vm stack must unwind");
    assert!(s.vm_frames.is_empty(), "vm frames must unwind");
    assert_eq!(run(&mut s, "(plus 2 2)").last().unwrap(), "4");
}

#[test]
fn disassembly_is_stable_and_decodable() {
    let mut s = session(Engine::Byte);
    run(&mut s, "(de cube (x) (times x x x))");
    let sym = s.intern("cube");
    let pkrn::symbol::FunCell::Chunk { chunk, .. } = &s.syms.get(sym).fun else {
        panic!("cube compiled")
    };
    let chunk = *chunk;
    let text = disassemble(&s, chunk);
    let again = disassemble(&s, chunk);
    assert_eq!(text, again, "disassembly must be deterministic");
    // Every line after the header names a mnemonic at an offset.
    for line in text.lines().skip(1) {
        assert!(
            line.trim_start().chars().next().unwrap().is_ascii_digit(),
            "line lacks offset: {line}"
        );
    }
}
