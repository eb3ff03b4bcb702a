//! Print the key moments of the bundled drowsy-ramp scenario.

use cabin_core::model::WarningLevel;
use cabin_core::pipeline::{replay_rows, PipelineConfig};
use cabin_core::simulators::{generate, ScenarioScript};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let script = ScenarioScript::mwt_drowsy_ramp(seed);
    let generated = generate(&script).expect("valid script");
    let rows = replay_rows(PipelineConfig::default(), None, generated.all_records()).expect("replay");
    let rel = |ts: i64| (ts - script.epoch_ms) as f64 / 1000.0;
    println!("rows: {}", rows.len());
    let mut last = None;
    for row in &rows {
        if last != Some(row.warning) {
            println!("{:>7.0}s  {:?}  physio={:?} camera={:?}", rel(row.grid_ts.ms()), row.warning, row.drowsiness_physio, row.drowsiness_camera);
            last = Some(row.warning);
        }
    }
    let cam = rows.iter().find(|r| r.drowsiness_camera.is_some_and(|c| c >= 0.6));
    let warn = rows.iter().find(|r| r.warning == WarningLevel::DrowsyWarning);
    println!("first drowsy_warning: {:?}", warn.map(|r| rel(r.grid_ts.ms())));
    println!("camera >= 0.6:        {:?}", cam.map(|r| rel(r.grid_ts.ms())));
    for t in (0..rows.len()).step_by(60) {
        let r = &rows[t];
        println!("{:>6.0}s perclos={:?} blink={:?} long={:?} att={:?} cam={:?} phys={:?} rel={}", rel(r.grid_ts.ms()), r.perclos, r.blink_rate_per_min, r.long_blink_rate_per_min, r.attention, r.drowsiness_camera, r.drowsiness_physio, r.radar_reliable);
    }
}
