//! Shared fixtures for the benchmarks.

use nnmon_core::scenario::config::MethodChoice;
use nnmon_core::scenario::run::{prepare, PreparedScenario};
use nnmon_core::scenario::ScenarioConfig;
use nnmon_core::IntervalVector;

/// A representative ACC controller input box `[v_set, t_gap, v_e, h, v_rel]`.
pub fn acc_input_box() -> IntervalVector {
    IntervalVector::from_slices(&[30.0, 1.4, 19.0, 28.0, -1.0], &[30.0, 1.4, 21.0, 32.0, 1.0]).expect("valid box")
}

/// The default ACC scenario, shortened to `horizon` steps, with one method.
pub fn acc_scenario(horizon: usize, method: MethodChoice) -> PreparedScenario {
    let text = format!("name = \"bench\"\nseed = 1\nhorizon = {horizon}\nt_s = 0.1\n[output]\nplots = false\n");
    let mut cfg = ScenarioConfig::from_toml(&text).expect("valid config");
    cfg.controller.method = method;
    prepare(&cfg, None).expect("ACC scenario prepares")
}
