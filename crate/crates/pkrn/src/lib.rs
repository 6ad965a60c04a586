//! A small, portable Lisp kernel with a polynomial algebra layer.
//!
//! The crate stacks up in layers, each usable on its own:
//!
//! * [`value`] packs every datum into one tagged 64-bit word;
//! * [`heap`] is a handle-based arena with precise mark-and-sweep collection;
//! * [`symbol`] and [`session`] hold interned symbols and the whole mutable
//!   interpreter state, including the shadow stack that roots intermediate
//!   values across allocation;
//! * [`bignum`] gives exact integer arithmetic with transparent promotion
//!   between fixnums and heap-allocated big integers;
//! * [`sexpr`] reads and prints s-expressions, printing shared and cyclic
//!   structure safely;
//! * [`eval`] is the tree-walking evaluator and the builtin function table;
//! * [`bytecode`] compiles the same language to a stack machine and runs it,
//!   with a differential mode that cross-checks the two engines;
//! * [`algebra`] layers canonical polynomial arithmetic, differentiation,
//!   and modular arithmetic over the Lisp data;
//! * [`rlisp`] translates an Algol-style surface syntax into core forms;
//! * [`image`] serializes a whole session to a byte image and back;
//! * [`platform`] isolates every host dependency (files, stdio, clock);
//! * [`cli`] is the interactive and batch driver built on all of the above.

pub mod algebra;
pub mod bignum;
pub mod bytecode;
pub mod cli;
pub mod eval;
pub mod heap;
pub mod image;
pub mod platform;
pub mod rlisp;
pub mod session;
pub mod sexpr;
pub mod symbol;
pub mod value;
