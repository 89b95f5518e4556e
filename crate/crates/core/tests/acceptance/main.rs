//! End-to-end acceptance run: one line per criterion, nonzero exit if any fails.
//!
//! `ACCEPTANCE_ONLY=4,7` restricts the run to the listed criteria.

mod kernels;
mod learning;
mod persistence;
mod physics;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn(&mut learning::Shared) -> Verdict;

const CRITERIA: [(u32, &str, Check); 12] = [
    (1, "autodiff correctness", kernels::autodiff),
    (2, "physics invariants", physics::invariants),
    (3, "hysteresis suite", physics::hysteresis),
    (4, "training sanity", learning::training_sanity),
    (5, "tactile necessity", learning::tactile_necessity),
    (6, "noise filtering", learning::noise_filtering),
    (7, "lag recovery", learning::lag_recovery),
    (8, "ablation report", learning::ablation_report),
    (9, "scene-conditioned prediction", learning::scene_prediction),
    (10, "segmentation emergence", learning::segmentation),
    (11, "persistence", persistence::round_trips),
    (12, "architecture comparison", learning::comparison),
];

fn main() {
    // libtest flags such as --nocapture or a name filter are accepted and ignored
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    let mut shared = learning::Shared::default();
    let mut failed = Vec::new();
    for (id, name, check) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let started = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(|| check(&mut shared))).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        });
        let status = if verdict.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {status} {name}: {} [{:.1}s]",
            verdict.detail,
            started.elapsed().as_secs_f64()
        );
        if !verdict.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}
