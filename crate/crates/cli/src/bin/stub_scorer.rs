//! Deterministic stand-in for an external re-ranker, speaking the scorer
//! line protocol on stdin/stdout. Pair requests are scored by token overlap
//! (Jaccard over the retrieval tokenizer); list requests are ordered by
//! `--order`.

use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, ValueEnum};
use serde_json::json;
use xdnr::lexical::tokenize;
use xdnr::pipeline::protocol::{self, Handshake, Request};
use xdnr::pipeline::ListCandidate;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Order {
    Identity,
    Reverse,
    Overlap,
}

#[derive(Debug, Parser)]
#[command(name = "xdnr-stub-scorer")]
struct Args {
    #[arg(long, value_enum, default_value = "overlap")]
    order: Order,
    /// Sleep this long before every response.
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
    /// Exit without answering after this many requests.
    #[arg(long)]
    die_after: Option<usize>,
    /// Answer every request with a line that is not JSON.
    #[arg(long)]
    garbage: bool,
}

fn overlap(a: &str, b: &str) -> f64 {
    let a: BTreeSet<String> = tokenize(a).into_iter().collect();
    let b: BTreeSet<String> = tokenize(b).into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

fn order(mode: Order, query: &str, candidates: &[ListCandidate]) -> Vec<String> {
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    match mode {
        Order::Identity => {}
        Order::Reverse => idx.reverse(),
        Order::Overlap => {
            let s: Vec<f64> = candidates.iter().map(|c| overlap(query, &c.text)).collect();
            idx.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
        }
    }
    idx.into_iter().map(|i| candidates[i].id.clone()).collect()
}

fn respond(req: &str, args: &Args) -> String {
    let req: Request = match serde_json::from_str(req) {
        Ok(r) => r,
        Err(e) => return json!({ "error": format!("malformed request: {e}") }).to_string(),
    };
    match req {
        Request::Pair { id, query, doc } => json!({ "id": id, "score": overlap(&query, &doc) }).to_string(),
        Request::List { query, candidates } => json!({ "order": order(args.order, &query, &candidates) }).to_string(),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut lines = stdin.lock().lines();

    let Some(Ok(first)) = lines.next() else {
        return ExitCode::SUCCESS;
    };
    if let Err(e) = protocol::check_handshake(&first) {
        let _ = writeln!(out, "{}", json!({ "error": e.to_string() }));
        return ExitCode::from(2);
    }
    let _ = writeln!(out, "{}", protocol::encode(&Handshake::default()));
    let _ = out.flush();

    for (n, line) in lines.enumerate() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        if args.die_after.is_some_and(|d| n >= d) {
            return ExitCode::from(1);
        }
        if args.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(args.delay_ms));
        }
        let reply = if args.garbage { "not json".to_string() } else { respond(&line, &args) };
        if writeln!(out, "{reply}").and_then(|_| out.flush()).is_err() {
            break;
        }
    }
    ExitCode::SUCCESS
}
