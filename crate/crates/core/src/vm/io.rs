//! Where `PRINT` output goes and where `Sys.read_line` reads from.

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::sync::mpsc::Receiver;
use std::sync::Arc;

use parking_lot::Mutex;

pub trait OutputSink: Send + Sync {
    fn write_line(&self, line: &str);
}

pub trait InputSource: Send + Sync {
    /// `None` at end of input.
    fn read_line(&self) -> Option<String>;
}

/// Line-buffered standard output, flushed per line so pipes see output promptly.
pub struct Stdout;

impl OutputSink for Stdout {
    fn write_line(&self, line: &str) {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    }
}

/// Collects output in memory. Clones share the same buffer.
#[derive(Clone, Default)]
pub struct Capture(Arc<Mutex<String>>);

impl Capture {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(&self) -> String {
        self.0.lock().clone()
    }

    pub fn lines(&self) -> Vec<String> {
        self.0.lock().lines().map(str::to_string).collect()
    }

    pub fn clear(&self) {
        self.0.lock().clear();
    }
}

impl OutputSink for Capture {
    fn write_line(&self, line: &str) {
        let mut b = self.0.lock();
        b.push_str(line);
        b.push('\n');
    }
}

pub struct Discard;

impl OutputSink for Discard {
    fn write_line(&self, _: &str) {}
}

pub struct Stdin;

impl InputSource for Stdin {
    fn read_line(&self) -> Option<String> {
        let mut s = String::new();
        match std::io::stdin().lock().read_line(&mut s) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(s.trim_end_matches(['\n', '\r']).to_string()),
        }
    }
}

/// Fixed lines, then end of input.
#[derive(Default)]
pub struct Script(Mutex<VecDeque<String>>);

impl Script {
    pub fn new<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Script(Mutex::new(lines.into_iter().map(Into::into).collect()))
    }

    /// Queues more lines behind whatever is left.
    pub fn extend<I, S>(&self, lines: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.0.lock().extend(lines.into_iter().map(Into::into));
    }
}

impl InputSource for Script {
    fn read_line(&self) -> Option<String> {
        self.0.lock().pop_front()
    }
}

/// Blocks until a line arrives; end of input once every sender is dropped.
pub struct Channel(Mutex<Receiver<String>>);

impl Channel {
    pub fn new(rx: Receiver<String>) -> Self {
        Channel(Mutex::new(rx))
    }
}

impl InputSource for Channel {
    fn read_line(&self) -> Option<String> {
        self.0.lock().recv().ok()
    }
}
