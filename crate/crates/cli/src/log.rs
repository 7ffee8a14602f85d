//! Minimal stderr logging; colored on terminals unless `NO_COLOR` is set.

use std::io::IsTerminal;

fn colored() -> bool {
    std::env::var_os("NO_COLOR").is_none_or(|v| v.is_empty()) && std::io::stderr().is_terminal()
}

fn emit(tag: &str, color: &str, msg: &str) {
    if colored() {
        eprintln!("\x1b[{color}m{tag}\x1b[0m {msg}");
    } else {
        eprintln!("{tag} {msg}");
    }
}

pub fn info(msg: &str) {
    emit("info:", "1;34", msg);
}

pub fn warn(msg: &str) {
    emit("warning:", "1;33", msg);
}

pub fn error(msg: &str) {
    emit("error:", "1;31", msg);
}
