//! Full acceptance suite, run without the libtest harness so the per-criterion
//! lines always reach the test log. Criteria listed in `UNATTAINABLE` are
//! expected to report FAIL and are explained there.

use std::process::ExitCode;

use srlab_cli::suite::{run_suite, Suite, UNATTAINABLE};

fn main() -> ExitCode {
    println!("\nrunning acceptance suite (full)");
    let outcomes = run_suite(Suite::Full, |o| {
        println!("{}", o.line());
        for d in &o.detail {
            println!("       {}", d);
        }
    });
    let mut unexpected = Vec::new();
    for o in &outcomes {
        let known = UNATTAINABLE.iter().any(|(id, _)| *id == o.id);
        if !o.pass && !known {
            unexpected.push(o.id);
        }
        if o.pass && known {
            println!("note: criterion {} is listed as unattainable but passed", o.id);
        }
    }
    let passed = outcomes.iter().filter(|o| o.pass).count();
    let known: Vec<u8> = UNATTAINABLE.iter().map(|(id, _)| *id).collect();
    println!(
        "acceptance: {} of {} criteria pass; known unattainable {:?}; unexpected failures {:?}",
        passed,
        outcomes.len(),
        known,
        unexpected
    );
    if outcomes.len() == 11 && unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
