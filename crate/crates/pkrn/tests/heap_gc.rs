//! Collector soundness: a large allocation churn with a rooted live set
//! must preserve the live structure exactly, reclaim nearly all garbage,
//! and handle cycles, while sessions under allocation-triggered stress
//! collection behave identically to unstressed ones.

mod common;

use pkrn::session::{Engine, Session, SessionConfig};
use pkrn::sexpr::print;
use pkrn::value::Value;

/// Allocates `churn` garbage conses while keeping a `live` element list
/// rooted in a symbol value, then verifies the live list survives and the
/// final collection reclaims at least 90% of what it visits as garbage.
#[test]
fn stress_churn_preserves_live_set() {
    let mut s = common::default_session();
    let live_len = 10_000usize;
    let churn = 1_000_000usize;

    // Build the rooted live list: (0 1 2 ... 9999) held by a symbol.
    let holder = s.intern("live-root");
    let mut acc = Value::NIL;
    for i in (0..live_len).rev() {
        acc = s.alloc_cons(Value::fixnum(i as i64), acc).expect("live alloc");
        s.set_symbol_value(holder, acc);
    }
    let live = s.symbol_value(holder);
    let before_print = print(&s, live);
    let before_items = s.proper_list(live).expect("live list is proper");
    assert_eq!(before_items.len(), live_len);

    // Churn: every cons allocated here is garbage by the next iteration.
    let collections_before = s.heap.stats.collections;
    let mut junk = Value::NIL;
    for i in 0..churn {
        junk = s.alloc_cons(Value::fixnum(i as i64), junk).expect("churn alloc");
        if i % 17 == 0 {
            junk = Value::NIL;
        }
    }
    junk = Value::NIL;
    let _ = junk;
    assert!(
        s.heap.stats.collections > collections_before,
        "a million allocations must trigger automatic collection"
    );

    let used_before = s.heap.used_slots();
    let stats = s.collect();
    assert_eq!(stats.live_slots + stats.reclaimed_slots, used_before);

    // The rooted structure must be untouched, element for element.
    let live_after = s.symbol_value(holder);
    assert_eq!(print(&s, live_after), before_print, "live list must print identically");
    let after_items = s.proper_list(live_after).expect("live list still proper");
    assert_eq!(after_items.len(), live_len);
    for (i, (a, b)) in before_items.iter().zip(&after_items).enumerate() {
        assert_eq!(a.raw(), b.raw(), "live element {i} changed");
    }

    // At least 90% of the garbage (everything used except the live set and
    // the boot residue) must be gone after the sweep.
    let garbage = used_before - stats.live_slots;
    assert!(
        stats.reclaimed_slots * 10 >= garbage * 9,
        "reclaimed {} of {garbage} garbage slots",
        stats.reclaimed_slots
    );
    // And the live remainder can't be much more than the live list itself
    // (3 slots per cons) plus boot-time structures.
    let boot_budget = 60_000;
    assert!(
        stats.live_slots <= live_len * 3 + boot_budget,
        "live slots {} suggest a leak",
        stats.live_slots
    );
}

#[test]
fn cyclic_garbage_is_reclaimed() {
    let mut s = common::default_session();
    s.collect();
    let baseline = s.collect().live_slots;

    // A self-referential pair and a two-cell loop, both unrooted.
    {
        let a = s.alloc_cons(Value::fixnum(1), Value::NIL).unwrap();
        let ticket = s.protect(a);
        let b = s.alloc_cons(Value::fixnum(2), a).unwrap();
        s.set_cdr(a, b);
        s.set_car(a, a);
        s.release(ticket);
    }
    let after = s.collect().live_slots;
    assert_eq!(after, baseline, "cycles with no external roots must be swept");
}

#[test]
fn rooted_cycle_survives_and_prints() {
    let mut s = common::default_session();
    let holder = s.intern("knot");
    let a = s.alloc_cons(Value::fixnum(7), Value::NIL).unwrap();
    s.set_cdr(a, a);
    s.set_symbol_value(holder, a);
    let before = print(&s, a);
    assert!(before.contains("#cycle#") || before.contains("..."), "got: {before}");
    s.collect();
    let v = s.symbol_value(holder);
    assert_eq!(print(&s, v), before);
    assert_eq!(s.car(v).as_fixnum(), 7);
    assert_eq!(s.cdr(v).raw(), v.raw());
}

#[test]
fn protect_tickets_root_temporaries() {
    let mut s = common::default_session();
    let v = s.alloc_string("precious").unwrap();
    let ticket = s.protect(v);
    for _ in 0..5 {
        s.collect();
    }
    assert_eq!(s.string_text(v), "precious");
    s.release(ticket);
}

#[test]
fn heap_cap_gives_clean_out_of_memory() {
    let config = SessionConfig {
        heap_initial: 1 << 16,
        heap_cap: 1 << 16,
        ..SessionConfig::default()
    };
    let mut s = Session::new(&config);
    let holder = s.intern("hoard");
    let mut acc = Value::NIL;
    let mut saw_oom = false;
    for i in 0..100_000 {
        match s.alloc_cons(Value::fixnum(i), acc) {
            Ok(v) => {
                acc = v;
                s.set_symbol_value(holder, acc);
            }
            Err(e) => {
                assert!(e.message.contains("out of memory"), "got: {}", e.message);
                saw_oom = true;
                break;
            }
        }
    }
    assert!(saw_oom, "a 64 KiB cap cannot hold 100k conses");
    // The session stays usable: the rooted prefix is intact.
    assert!(s.proper_list(s.symbol_value(holder)).is_some());
}

/// Forcing a collection on every single allocation must not change any
/// observable result. This is the collector's sharpest differential probe:
/// any missing root shows up as a wrong answer or a crash.
#[test]
fn stress_collection_is_observationally_silent() {
    let programs = [
        "(progn (de fact (n) (cond ((eqn n 0) 1) (t (times n (fact (difference n 1)))))) \
         (fact 25))",
        "(mapcar '(lambda (p) (plus (car p) (length p))) '((1 2 3) (4) (5 6)))",
        "(reverse (append '(a b c) '(1 2 3)))",
        "(prog (i acc) (setq i 0) (setq acc nil) \
         top (cond ((greaterp i 40) (return (length acc)))) \
         (setq acc (cons i acc)) (setq i (plus i 1)) (go top))",
    ];
    for engine in [Engine::Tree, Engine::Byte] {
        for program in programs {
            let plain = {
                let mut s = common::session(engine);
                common::run(&mut s, program).join("\n")
            };
            let stressed = {
                let mut s = Session::new(&SessionConfig {
                    engine,
                    gc_stress: Some(1),
                    ..SessionConfig::default()
                });
                common::run(&mut s, program).join("\n")
            };
            assert_eq!(plain, stressed, "stress GC changed a result for {program}");
        }
    }
}

#[test]
fn rlisp_survives_stress_collection() {
    let program = "procedure ssq n; for k := 1:n sum k^2; write ssq 12;";
    let mut plain = common::default_session();
    pkrn::rlisp::run_rlisp_text(&mut plain, program).expect("plain run");
    let plain_out = common::out_text(&mut plain);
    let mut stressed = Session::new(&SessionConfig {
        gc_stress: Some(1),
        ..SessionConfig::default()
    });
    pkrn::rlisp::run_rlisp_text(&mut stressed, program).expect("stressed run");
    assert_eq!(common::out_text(&mut stressed), plain_out);
    assert_eq!(plain_out, "650\n");
}
