//! Line-JSON predictor that replies with the sum of each window.
//!
//! `ECHO_SUM_MODE` selects a misbehaviour for protocol tests:
//! `malformed`, `sleep`, `bad_id`, `exit_after=N` (exit after N replies,
//! once per `ECHO_SUM_FLAG` file if set), `exit_always`.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Deserialize)]
struct Request {
    id: u64,
    windows: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct Reply {
    id: u64,
    outputs: Vec<f64>,
}

fn main() {
    let mode = std::env::var("ECHO_SUM_MODE").unwrap_or_default();
    let exit_after: Option<usize> = mode.strip_prefix("exit_after=").and_then(|n| n.parse().ok());
    // With a flag file, only the first process to claim it misbehaves.
    let exit_after = exit_after.filter(|_| match std::env::var("ECHO_SUM_FLAG") {
        Ok(flag) => std::fs::OpenOptions::new().write(true).create_new(true).open(flag).is_ok(),
        Err(_) => true,
    });
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    for (served, line) in stdin.lock().lines().enumerate() {
        let Ok(line) = line else { return };
        if mode == "exit_always" || exit_after == Some(served) {
            return;
        }
        let req: Request = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("echo-sum: bad request: {e}");
                return;
            }
        };
        let reply = match mode.as_str() {
            "malformed" => "{not json".to_string(),
            "sleep" => {
                std::thread::sleep(std::time::Duration::from_secs(3600));
                return;
            }
            _ => {
                let id = if mode == "bad_id" { req.id + 1 } else { req.id };
                let outputs = req.windows.iter().map(|w| w.iter().flatten().sum()).collect();
                serde_json::to_string(&Reply { id, outputs }).expect("reply serializes")
            }
        };
        if writeln!(stdout, "{reply}").and_then(|_| stdout.flush()).is_err() {
            return;
        }
    }
}
