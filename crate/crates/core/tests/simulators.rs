use cabin_core::model::SourceId;
use cabin_core::simulators::{generate, ScenarioScript};

#[test]
fn generation_is_a_function_of_the_script() {
    let a = generate(&ScenarioScript::mwt_drowsy_ramp(7)).unwrap();
    let b = generate(&ScenarioScript::mwt_drowsy_ramp(7)).unwrap();
    assert_eq!(a, b);
    let c = generate(&ScenarioScript::mwt_drowsy_ramp(8)).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn generated_records_are_valid_and_sequenced() {
    let g = generate(&ScenarioScript::mwt_drowsy_ramp(3)).unwrap();
    for source in SourceId::SENSORS {
        let records = &g.records[&source];
        assert!(!records.is_empty(), "{source} produced nothing");
        for (i, r) in records.iter().enumerate() {
            r.validate().unwrap();
            assert_eq!(r.source, source);
            assert_eq!(r.seq, i as u64);
        }
    }
    let all = g.all_records();
    assert!(all.windows(2).all(|w| w[0].wall_ts_ms <= w[1].wall_ts_ms));
    assert_eq!(g.radar_bytes.len(), g.records[&SourceId::Radar].len() * cabin_core::radar::FRAME_LEN);
}
