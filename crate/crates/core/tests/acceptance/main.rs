//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p decseg-core --test acceptance`. Pass criterion
//! numbers as arguments to run a subset, e.g. `-- 1 3 4`.

#[macro_use]
mod util;

mod c1_equations;
mod c2_gradients;
mod c3_invariants;
mod c4_metric_oracle;
mod c5_toy_overfit;
mod c6_semi_supervised;
mod c7_recipe;
mod c8_determinism;

use std::time::Instant;

type Check = fn() -> Result<String, String>;

const CRITERIA: [(u32, &str, Check); 8] = [
    (1, "equation unit suite", c1_equations::run),
    (2, "gradient checks", c2_gradients::run),
    (3, "structural invariants", c3_invariants::run),
    (4, "metric oracle equivalence", c4_metric_oracle::run),
    (5, "toy overfit", c5_toy_overfit::run),
    (6, "semi-supervised benefit trend", c6_semi_supervised::run),
    (7, "recipe fidelity", c7_recipe::run),
    (8, "determinism and resume", c8_determinism::run),
];

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  criterion {id}: {name} ({secs:.1}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {id}: {name} ({secs:.1}s) {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
