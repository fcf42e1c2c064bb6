//! Line-oriented TCP endpoint for inspecting and tuning a running agent.
//!
//! Commands, one per line:
//!
//! ```text
//! GET <key>           -> OK <value>
//! SET <key> <value>   -> OK
//! STATS               -> one "<key> <value>" line per metric, then "."
//! ```
//!
//! Failures answer `ERR <message>`.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControlError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` cannot be changed at runtime")]
    ImmutableKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
}

pub trait ControlTarget: Send + Sync {
    fn get(&self, key: &str) -> Result<String, ControlError>;
    fn set(&self, key: &str, value: &str) -> Result<(), ControlError>;
    fn stats(&self) -> Vec<(String, String)>;
}

/// Answers one command line.
pub fn handle_line(target: &dyn ControlTarget, line: &str) -> String {
    let mut parts = line.trim().splitn(3, char::is_whitespace);
    let command = parts.next().unwrap_or("").to_ascii_uppercase();
    let key = parts.next().unwrap_or("");
    let rest = parts.next().unwrap_or("").trim();
    let reply = match command.as_str() {
        "GET" if !key.is_empty() => target.get(key).map(|v| format!("OK {v}")),
        "SET" if !key.is_empty() && !rest.is_empty() => target.set(key, rest).map(|()| "OK".to_string()),
        "STATS" => {
            let mut out = String::new();
            for (k, v) in target.stats() {
                out.push_str(&format!("{k} {v}\n"));
            }
            out.push('.');
            Ok(out)
        }
        _ => return "ERR usage: GET <key> | SET <key> <value> | STATS".to_string(),
    };
    reply.unwrap_or_else(|e| format!("ERR {e}"))
}

pub struct ControlServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl ControlServer {
    pub fn start(addr: SocketAddr, target: Arc<dyn ControlTarget>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let thread_stop = stop.clone();
        let handle = std::thread::Builder::new().name("control".into()).spawn(move || {
            while !thread_stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let target = target.clone();
                        let _ = std::thread::Builder::new()
                            .name("control-conn".into())
                            .spawn(move || serve(stream, target.as_ref()));
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(50));
                    }
                    Err(_) => std::thread::sleep(Duration::from_millis(50)),
                }
            }
        })?;
        Ok(ControlServer {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ControlServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn serve(stream: TcpStream, target: &dyn ControlTarget) {
    let _ = stream.set_nonblocking(false);
    let Ok(mut writer) = stream.try_clone() else {
        return;
    };
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else {
            return;
        };
        if line.trim().is_empty() {
            continue;
        }
        let reply = handle_line(target, &line);
        if writeln!(writer, "{reply}").is_err() {
            return;
        }
    }
}
