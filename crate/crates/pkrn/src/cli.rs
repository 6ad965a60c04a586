//! The interactive and batch driver.
//!
//! Responsibilities: argument handling, choosing the input language per
//! unit of work, the read-translate-evaluate loop, image load/save, and
//! bytecode dumping. All host access is delegated to [`crate::platform`].
//!
//! Exit codes: 0 on success, 1 on any evaluation or I/O failure in batch
//! work, 2 on a usage error. Interactive errors are reported and the
//! session continues; an interactive session exits 0.

use crate::bytecode;
use crate::eval::{self, EvalError};
use crate::image;
use crate::platform;
use crate::rlisp;
use crate::session::{Engine, MapcarOrder, Session, SessionConfig};
use crate::sexpr::{print, Reader};
use crate::symbol::FunCell;
use clap::{Arg, ArgAction, Command};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Rlisp,
    Lisp,
}

struct Unit {
    mode: Mode,
    label: String,
    text: String,
}

fn command() -> Command {
    Command::new("pkrn")
        .about("A small Lisp kernel with a polynomial algebra layer")
        .disable_version_flag(true)
        .arg(
            Arg::new("lisp")
                .long("lisp")
                .action(ArgAction::SetTrue)
                .overrides_with("rlisp")
                .help("Treat all input as core-language S-expressions"),
        )
        .arg(
            Arg::new("rlisp")
                .long("rlisp")
                .action(ArgAction::SetTrue)
                .help("Treat all input as surface-language programs"),
        )
        .arg(
            Arg::new("expr")
                .short('e')
                .value_name("EXPR")
                .action(ArgAction::Append)
                .help("Evaluate EXPR before any files; repeatable"),
        )
        .arg(
            Arg::new("image-load")
                .long("image-load")
                .value_name("PATH")
                .help("Start from a saved image instead of a fresh session"),
        )
        .arg(
            Arg::new("image-save")
                .long("image-save")
                .value_name("PATH")
                .help("Save the session as an image after all work"),
        )
        .arg(
            Arg::new("heap")
                .long("heap")
                .value_name("SIZE")
                .help("Heap cap in bytes, with optional K/M/G suffix (env: PKRN_HEAP_CAP)"),
        )
        .arg(
            Arg::new("engine")
                .long("engine")
                .value_name("ENGINE")
                .value_parser(["tree", "byte", "diff"])
                .default_value("byte")
                .help("Evaluation engine; diff runs both and faults on mismatch"),
        )
        .arg(
            Arg::new("dump-bytecode")
                .long("dump-bytecode")
                .value_name("NAME")
                .action(ArgAction::Append)
                .help("After all work, disassemble the named compiled function"),
        )
        .arg(
            Arg::new("dialect")
                .long("dialect")
                .value_name("ORDER")
                .value_parser(["fn-first", "list-first"])
                .default_value("fn-first")
                .help("mapcar argument order used by the input"),
        )
        .arg(
            Arg::new("files")
                .value_name("FILE")
                .action(ArgAction::Append)
                .help("Programs to run; .lsp is core syntax, anything else surface syntax"),
        )
}

/// Size with an optional K/M/G binary suffix.
fn parse_size(text: &str) -> Option<usize> {
    let (digits, mult) = match text.as_bytes().last()? {
        b'k' | b'K' => (&text[..text.len() - 1], 1usize << 10),
        b'm' | b'M' => (&text[..text.len() - 1], 1 << 20),
        b'g' | b'G' => (&text[..text.len() - 1], 1 << 30),
        _ => (text, 1),
    };
    digits.parse::<usize>().ok()?.checked_mul(mult)
}

fn usage_error(message: &str) -> i32 {
    platform::err_line(&format!("error: {message}"));
    platform::err_line("run with --help for usage");
    2
}

fn fault(message: &str) -> i32 {
    platform::err_line(&format!("error: {message}"));
    1
}

pub fn main() -> i32 {
    let args = platform::args();
    let matches = match command().try_get_matches_from(std::iter::once("pkrn".to_string()).chain(args)) {
        Ok(m) => m,
        Err(e) => {
            // clap renders help to stdout and usage errors to stderr.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };

    let mut config = SessionConfig {
        engine: match matches.get_one::<String>("engine").map(String::as_str) {
            Some("tree") => Engine::Tree,
            Some("diff") => Engine::Diff,
            _ => Engine::Byte,
        },
        dialect: match matches.get_one::<String>("dialect").map(String::as_str) {
            Some("list-first") => MapcarOrder::ListFirst,
            _ => MapcarOrder::FnFirst,
        },
        clock: Some(platform::monotonic),
        ..SessionConfig::default()
    };
    let heap_request = matches
        .get_one::<String>("heap")
        .cloned()
        .or_else(|| platform::env("PKRN_HEAP_CAP"));
    if let Some(text) = heap_request {
        match parse_size(&text) {
            Some(bytes) if bytes > 0 => {
                config.heap_cap = bytes;
                config.heap_initial = config.heap_initial.min(bytes);
            }
            _ => return usage_error(&format!("bad heap size {text:?}")),
        }
    }

    let mut session = match matches.get_one::<String>("image-load") {
        Some(path) => {
            let bytes = match platform::read_bytes(path) {
                Ok(b) => b,
                Err(e) => return fault(&e),
            };
            match image::load_bytes(&config, &bytes) {
                Ok(s) => s,
                Err(e) => return fault(&format!("{path}: {e}")),
            }
        }
        None => Session::new(&config),
    };

    let forced_mode = if matches.get_flag("lisp") {
        Some(Mode::Lisp)
    } else if matches.get_flag("rlisp") {
        Some(Mode::Rlisp)
    } else {
        None
    };
    let default_mode = forced_mode.unwrap_or(Mode::Rlisp);

    let mut units = Vec::new();
    if let Some(exprs) = matches.get_many::<String>("expr") {
        for (i, text) in exprs.enumerate() {
            units.push(Unit {
                mode: default_mode,
                label: format!("-e #{}", i + 1),
                text: text.clone(),
            });
        }
    }
    if let Some(files) = matches.get_many::<String>("files") {
        for path in files {
            let text = match platform::read_text(path) {
                Ok(t) => t,
                Err(e) => return fault(&e),
            };
            let mode = forced_mode.unwrap_or(if path.ends_with(".lsp") {
                Mode::Lisp
            } else {
                Mode::Rlisp
            });
            units.push(Unit { mode, label: path.clone(), text });
        }
    }

    let interactive = units.is_empty();
    for unit in &units {
        if let Err(e) = run_unit(&mut session, unit) {
            return fault(&format!("{}: {}", unit.label, e.message));
        }
    }
    if interactive {
        repl(&mut session, default_mode);
    }

    if let Some(names) = matches.get_many::<String>("dump-bytecode") {
        for name in names {
            let sym = session.intern(name);
            match session.syms.get(sym).fun {
                FunCell::Chunk { chunk, .. } => platform::out(&bytecode::disassemble(&session, chunk)),
                _ => return fault(&format!("{name} is not a compiled function")),
            }
        }
    }
    if let Some(path) = matches.get_one::<String>("image-save") {
        let bytes = image::save_bytes(&session);
        if let Err(e) = platform::write_bytes(path, &bytes) {
            return fault(&e);
        }
    }
    0
}

fn flush_out(s: &mut Session) {
    let bytes = s.take_out();
    if !bytes.is_empty() {
        platform::out(&String::from_utf8_lossy(&bytes));
    }
}

/// Runs one batch unit; evaluation stops at the first error.
fn run_unit(s: &mut Session, unit: &Unit) -> Result<(), EvalError> {
    match unit.mode {
        Mode::Rlisp => {
            let mark = s.shadow_mark();
            let forms = match rlisp::program_forms(s, &unit.text) {
                Ok(f) => f,
                Err(e) => {
                    s.shadow_truncate(mark);
                    return Err(e);
                }
            };
            for &form in &forms {
                let r = eval::eval_top(s, form);
                flush_out(s);
                if let Err(e) = r {
                    s.shadow_truncate(mark);
                    return Err(e);
                }
            }
            s.shadow_truncate(mark);
            Ok(())
        }
        Mode::Lisp => {
            let mut reader = Reader::new(&unit.text);
            loop {
                let mark = s.shadow_mark();
                let form = match reader.read(s) {
                    Ok(None) => return Ok(()),
                    Ok(Some(form)) => form,
                    Err(e) => return Err(EvalError::new(format!("parse error: {e}"))),
                };
                s.keep(form);
                let r = rlisp::dialect_adapt(s, form).and_then(|adapted| {
                    s.keep(adapted);
                    eval::eval_top(s, adapted)
                });
                flush_out(s);
                match r {
                    Ok(v) => {
                        platform::out(&format!("{}\n", print(s, v)));
                        s.shadow_truncate(mark);
                    }
                    Err(e) => {
                        s.shadow_truncate(mark);
                        return Err(e);
                    }
                }
            }
        }
    }
}

enum Readiness {
    Incomplete,
    Bad(String),
    Ready,
}

fn readiness(s: &mut Session, mode: Mode, text: &str) -> Readiness {
    match mode {
        Mode::Rlisp => match rlisp::is_complete(text) {
            Ok(true) => Readiness::Ready,
            Ok(false) => Readiness::Incomplete,
            Err(e) => Readiness::Bad(format!("syntax error: {e}")),
        },
        Mode::Lisp => {
            // A dry read pass; any values built are garbage afterwards.
            let mark = s.shadow_mark();
            let mut reader = Reader::new(text);
            let r = loop {
                match reader.read(s) {
                    Ok(None) => break Readiness::Ready,
                    Ok(Some(_)) => {}
                    Err(e) if e.eof => break Readiness::Incomplete,
                    Err(e) => break Readiness::Bad(format!("parse error: {e}")),
                }
            };
            s.shadow_truncate(mark);
            r
        }
    }
}

/// Reads statements until end of input, reporting errors without exiting.
fn repl(s: &mut Session, mode: Mode) {
    let mut buf = String::new();
    loop {
        platform::out("> ");
        let Some(line) = platform::read_line() else {
            if !buf.trim().is_empty() {
                platform::err_line("error: unfinished statement at end of input");
            }
            platform::out("\n");
            return;
        };
        buf.push_str(&line);
        if buf.trim().is_empty() {
            buf.clear();
            continue;
        }
        match readiness(s, mode, &buf) {
            Readiness::Incomplete => continue,
            Readiness::Bad(message) => {
                platform::err_line(&format!("error: {message}"));
                buf.clear();
            }
            Readiness::Ready => {
                let unit = Unit { mode, label: "input".into(), text: std::mem::take(&mut buf) };
                if let Err(e) = run_unit(s, &unit) {
                    platform::err_line(&format!("error: {}", e.message));
                }
            }
        }
    }
}
