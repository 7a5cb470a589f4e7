//! One pass/fail line per acceptance criterion.
//!
//! Criteria listed in `KNOWN_RED` fail at the default seed for reasons
//! documented in the README; they are still run and reported. Any other
//! failure, or an error inside a known-red check, fails this target.

use tailscope::acceptance::{criteria, DEFAULT_SEED};
use tailscope::tailindex::tolerance_override;

const KNOWN_RED: &[usize] = &[1, 6];

fn main() {
    println!("acceptance suite, seed {DEFAULT_SEED}");
    if let Some(t) = tolerance_override() {
        println!("# TAILSCOPE_TOL={t}");
    }
    let mut regressions = Vec::new();
    let mut passed = 0;
    for c in criteria() {
        let out = c.run(DEFAULT_SEED);
        let known = KNOWN_RED.contains(&out.id);
        let note = match (out.passed, known) {
            (false, true) => "  [known red]",
            (true, true) => "  [known red now passing]",
            _ => "",
        };
        println!("{}{note}", out.line());
        if out.passed {
            passed += 1;
        } else if !known || out.detail.starts_with("error:") {
            regressions.push(out.id);
        }
    }
    println!("{passed}/{} criteria pass", criteria().len());
    if !regressions.is_empty() {
        println!("unexpected failures: {regressions:?}");
        std::process::exit(1);
    }
}
