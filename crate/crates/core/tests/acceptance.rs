//! Runs every acceptance check in sequence (the runtime budgets assume the
//! checks do not compete for CPU) and prints one line per criterion.
//!
//! Built without the libtest harness so the lines reach the terminal even
//! when every check passes. Set `MOFO_ACCEPTANCE_ONLY=1,5,9` to run a subset.

use std::process::ExitCode;

use mofo::harness::verify::CHECKS;

fn main() -> ExitCode {
    let only: Option<Vec<u8>> = std::env::var("MOFO_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    let mut ran = 0;
    for (id, _, check) in CHECKS {
        if only.as_ref().is_some_and(|ids| !ids.contains(&id)) {
            continue;
        }
        let outcome = check();
        println!("{outcome}");
        ran += 1;
        if !outcome.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: {ran} of {ran} criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
