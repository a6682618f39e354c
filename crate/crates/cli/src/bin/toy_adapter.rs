//! Linear toy model served over stdin/stdout.
//!
//! `encode(x) = P x`, `decode(z) = Pᵀ z`, `classify(z)` = class of the nearest
//! prototype. `P` is rebuilt from `--seed` and `--input-dim`, so it matches the
//! projection used by `protoscore gen-planted` with the same values.

use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use protoscore::adapter::server::handle_line;
use protoscore::adapter::toy::ToyLinearModel;
use protoscore::data::load_prototypes;

#[derive(Parser, Debug)]
#[command(name = "protoscore-toy-adapter", version)]
struct Args {
    /// Prototype manifest; its labels are the prototype classes.
    #[arg(long, value_name = "MANIFEST")]
    prototypes: PathBuf,
    #[arg(long, default_value_t = 8)]
    input_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exit without answering once this many requests have been served.
    #[arg(long, value_name = "N")]
    crash_after: Option<usize>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let proto = match load_prototypes(&args.prototypes) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("toy adapter: {e}");
            return ExitCode::from(1);
        }
    };
    let Some(classes) = proto.class_hint.clone() else {
        eprintln!("toy adapter: prototype manifest needs labels");
        return ExitCode::from(1);
    };
    let model = match ToyLinearModel::with_random_projection(args.input_dim, proto.prototypes, classes, args.seed) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("toy adapter: {e}");
            return ExitCode::from(1);
        }
    };

    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    let mut served = 0usize;
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        if args.crash_after.is_some_and(|n| served >= n) {
            return ExitCode::from(70);
        }
        let reply = handle_line(&model, &line);
        if writeln!(stdout, "{}", reply.line).and_then(|_| stdout.flush()).is_err() {
            break;
        }
        served += 1;
        if reply.shutdown {
            break;
        }
    }
    ExitCode::SUCCESS
}
