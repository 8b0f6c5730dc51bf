//! Placement-query service.
//!
//! One request per line:
//!
//! ```text
//! Q <tau> <e1>:<p1> <e2>:<p2> ...   ->  A <value> <cost_total>
//! X                                 ->  OK, then the server shuts down
//! anything malformed                ->  E <message>
//! ```
//!
//! Costs `1/τ²` accumulate in one ledger shared by all connections. On
//! shutdown the ledger is written to `--ledger` and the run record is emitted.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use serde_json::json;

use mallows_core::lowerbound::{local_query, LocalQuery, Noise, QueryLedger};
use mallows_core::model::sample_many;
use mallows_core::{PlacementOracle, PlacementQuery, TableOracle};

use crate::commands::{load_mixture, Outcome};

#[derive(Args, Debug, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port; the bound address is printed on stdout.
    #[arg(long, default_value_t = 0)]
    pub port: u16,
    /// Back answers with an empirical table from this many samples.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Write the query ledger here on shutdown.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
}

struct Shared<'a> {
    oracle: &'a dyn PlacementOracle,
    ledger: Mutex<QueryLedger>,
    stop: AtomicBool,
}

/// Answers one request line.
fn answer(shared: &Shared<'_>, line: &str) -> String {
    let line = line.trim();
    let mut parts = line.splitn(3, char::is_whitespace);
    match parts.next() {
        Some("Q") => {}
        Some("X") if parts.next().is_none() => {
            shared.stop.store(true, Ordering::SeqCst);
            return "OK".into();
        }
        _ => return "E expected Q <tau> <e>:<p> ...".into(),
    }
    let tau: f64 = match parts.next().map(str::parse) {
        Some(Ok(t)) => t,
        _ => return "E bad tolerance".into(),
    };
    let rest = parts.next().unwrap_or("");
    let query = match PlacementQuery::parse(rest, shared.oracle.n()) {
        Ok(q) => q,
        Err(e) => return format!("E {}", protocol_message(&e)),
    };
    let lq = match LocalQuery::with_tolerance(query, tau) {
        Ok(q) => q,
        Err(e) => return format!("E {}", protocol_message(&e)),
    };
    let mut ledger = shared.ledger.lock().expect("ledger lock");
    match local_query(shared.oracle, &lq, &mut ledger, Noise::Exact) {
        Ok(v) => format!("A {:?} {:?}", v, ledger.total_cost_f64()),
        Err(e) => format!("E {}", protocol_message(&e)),
    }
}

/// Strips the error-kind prefix so replies read like `E duplicate element`.
fn protocol_message(e: &mallows_core::Error) -> String {
    let s = e.to_string();
    match s.split_once(": ") {
        Some((_, msg)) => msg.to_string(),
        None => s,
    }
}

fn handle(shared: &Shared<'_>, stream: TcpStream) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_millis(100)))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        match reader.read_line(&mut line) {
            Ok(0) => return Ok(()),
            Ok(_) => {
                let reply = answer(shared, &line);
                line.clear();
                writeln!(writer, "{reply}")?;
                writer.flush()?;
                if reply == "OK" {
                    return Ok(());
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if shared.stop.load(Ordering::SeqCst) {
                    return Ok(());
                }
            }
            Err(e) => return Err(e),
        }
    }
}

pub fn serve(a: &ServeArgs, seed: u64) -> Result<Outcome> {
    let mix = load_mixture(&a.config)?;
    let oracle = match a.samples {
        Some(m) => TableOracle::empirical(mix.n(), &sample_many(&mix, m, seed), 0.05)?,
        None => TableOracle::exact(&mix)?,
    };
    let listener = TcpListener::bind((a.host.as_str(), a.port))
        .with_context(|| format!("binding {}:{}", a.host, a.port))?;
    listener.set_nonblocking(true)?;
    println!("listening {}", listener.local_addr()?);
    std::io::stdout().flush()?;

    let shared = Shared {
        oracle: &oracle,
        ledger: Mutex::new(QueryLedger::new()),
        stop: AtomicBool::new(false),
    };
    let mut connections = 0usize;
    std::thread::scope(|s| -> Result<()> {
        while !shared.stop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    connections += 1;
                    let shared = &shared;
                    s.spawn(move || {
                        if let Err(e) = handle(shared, stream) {
                            eprintln!("connection error: {e}");
                        }
                    });
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    })?;

    let ledger = shared.ledger.into_inner().expect("ledger lock");
    let summary = json!({
        "queries": ledger.entries().len(),
        "total_cost": ledger.total_cost().to_string(),
        "total_cost_f64": ledger.total_cost_f64(),
    });
    if let Some(p) = &a.ledger {
        let body = json!({ "entries": ledger.entries(), "summary": summary });
        std::fs::write(p, serde_json::to_string_pretty(&body)?)?;
    }
    let mut out = Outcome::new(
        "oracle-serve",
        a,
        json!({ "connections": connections, "ledger": summary }),
    );
    out.stdout_busy = true;
    Ok(out)
}
