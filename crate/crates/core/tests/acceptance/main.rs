//! Acceptance checks. Each criterion prints one `[PASS]` or `[FAIL]` line;
//! the process fails if any criterion does. Positional arguments select
//! criteria by substring.

mod common;
mod oracles;
mod runs;
mod training;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

pub type Outcome = Result<String, String>;

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panicked".into()
    }
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks: [(&str, fn() -> Outcome); 12] = [
        ("01 gradient correctness", oracles::gradients),
        ("02 hungarian optimality", oracles::hungarian),
        ("03 dpp identity", oracles::dpp_identity),
        ("04 kl oracle", oracles::kl_divergence),
        ("05 iou oracle", oracles::iou),
        ("06 metric hand cases", oracles::metric_hand_cases),
        ("07 overfit tracking", training::overfit_tracking),
        ("08 graph depth ablation", training::graph_depth),
        ("09 diverse sampling ablation", training::diverse_sampling),
        ("10 joint training", training::joint_training),
        ("11 parallel forecasting", runs::parallel_forecasting),
        ("12 determinism", runs::determinism),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| Err(panic_message(p)));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
