//! The one place the program touches its host: files, standard streams,
//! the clock, environment variables, and the argument list. Every other
//! module is host-independent, so porting means porting this file.
//!
//! Errors are plain strings naming the path and the cause; the driver only
//! ever reports them.

use std::io::{BufRead, Write};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

pub fn args() -> Vec<String> {
    std::env::args().skip(1).collect()
}

pub fn env(name: &str) -> Option<String> {
    std::env::var(name).ok()
}

/// Monotonic time since first use; a plain `fn` so it can sit in a config.
pub fn monotonic() -> Duration {
    static EPOCH: OnceLock<Instant> = OnceLock::new();
    EPOCH.get_or_init(Instant::now).elapsed()
}

pub fn read_text(path: &str) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("cannot read {path}: {e}"))
}

pub fn read_bytes(path: &str) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("cannot read {path}: {e}"))
}

pub fn write_bytes(path: &str, bytes: &[u8]) -> Result<(), String> {
    std::fs::write(path, bytes).map_err(|e| format!("cannot write {path}: {e}"))
}

/// Writes to stdout and flushes, so prompts and partial lines appear
/// immediately. A closed stdout is not an error worth surviving.
pub fn out(text: &str) {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let r = lock.write_all(text.as_bytes()).and_then(|()| lock.flush());
    if r.is_err() {
        std::process::exit(1);
    }
}

pub fn err_line(text: &str) {
    let stderr = std::io::stderr();
    let mut lock = stderr.lock();
    let _ = writeln!(lock, "{text}");
}

/// One line from stdin including its newline; `None` at end of input.
pub fn read_line() -> Option<String> {
    let stdin = std::io::stdin();
    let mut line = String::new();
    match stdin.lock().read_line(&mut line) {
        Ok(0) | Err(_) => None,
        Ok(_) => Some(line),
    }
}
