#![allow(dead_code)]

use cabin_core::model::{
    Annotation, AnnotationValue, CameraSample, FusedRow, Payload, RadarSample, SourceId, TimedRecord, Timestamp,
    WarningLevel, WearableSample,
};
use proptest::prelude::*;

pub fn timestamp() -> impl Strategy<Value = Timestamp> {
    (0i64..4_000_000_000_000).prop_map(Timestamp)
}

pub fn radar_sample() -> impl Strategy<Value = RadarSample> {
    (any::<u32>(), 0u16..=3000, 0u16..=600, any::<u16>(), any::<bool>(), any::<bool>()).prop_map(
        |(device_ts, hr, rr, d, motion, presence)| RadarSample {
            device_ts,
            hr_bpm: f64::from(hr) / 10.0,
            rr_bpm: f64::from(rr) / 10.0,
            distance_mm: f64::from(d),
            motion,
            presence,
        },
    )
}

pub fn wearable_sample() -> impl Strategy<Value = WearableSample> {
    (
        timestamp(),
        any::<bool>(),
        proptest::option::of(0.0..=300.0f64),
        proptest::option::of(0.0..=60.0f64),
        proptest::option::of(0.0..=500.0f64),
        proptest::option::of(0.0..=1.0f64),
    )
        .prop_map(|(device_ts, worn, hr, rr, hrv, score)| WearableSample {
            device_ts,
            hr_bpm: hr.filter(|_| worn),
            rr_bpm: rr,
            hrv_rmssd_ms: hrv,
            drowsiness_score: score,
            worn,
        })
}

pub fn camera_sample() -> impl Strategy<Value = CameraSample> {
    (timestamp(), any::<bool>(), 0.0..=1.0f64, proptest::array::uniform5(-90.0..=90.0f64)).prop_map(
        |(device_ts, face, aperture, [gy, gp, hy, hp, hr])| {
            if !face {
                return CameraSample::face_lost(device_ts);
            }
            CameraSample {
                device_ts,
                aperture: Some(aperture),
                gaze_yaw_deg: Some(gy),
                gaze_pitch_deg: Some(gp),
                head_yaw_deg: Some(hy),
                head_pitch_deg: Some(hp),
                head_roll_deg: Some(hr),
                face_detected: true,
            }
        },
    )
}

pub fn annotation() -> impl Strategy<Value = Annotation> {
    let value = prop_oneof![
        (1i64..=9).prop_map(AnnotationValue::Kss),
        (0i64..=24).prop_map(AnnotationValue::Ess),
        "[A-Z0-9 ]{0,24}".prop_map(AnnotationValue::Marker),
    ];
    (timestamp(), value).prop_map(|(ts, value)| Annotation { ts, value })
}

pub fn warning_level() -> impl Strategy<Value = WarningLevel> {
    prop_oneof![
        Just(WarningLevel::Normal),
        Just(WarningLevel::DrowsyWarning),
        Just(WarningLevel::Critical),
        Just(WarningLevel::DistractionWarning),
    ]
}

fn vital_source() -> impl Strategy<Value = SourceId> {
    prop_oneof![Just(SourceId::Radar), Just(SourceId::Wearable)]
}

/// Rows whose reals are arbitrary in-range doubles, or multiples of 1e-4
/// when `quantized` (the CSV's precision).
pub fn fused_row(quantized: bool) -> impl Strategy<Value = FusedRow> {
    let real = move |hi: f64| {
        proptest::option::of((0.0..=hi).prop_map(move |x: f64| if quantized { (x * 10_000.0).round() / 10_000.0 } else { x }))
    };
    (
        timestamp(),
        (real(300.0), vital_source(), real(60.0), vital_source(), real(500.0)),
        (real(1.0), real(1.0), real(60.0), real(20.0), real(1.0), real(1.0)),
        warning_level(),
        any::<(bool, bool, bool)>(),
    )
        .prop_map(|(ts, (hr, hs, rr, rs, hrv), (phys, perclos, blink, long, att, cam), warning, (rel, wf, cf))| FusedRow {
            grid_ts: ts,
            hr_bpm: hr,
            hr_source: hr.map(|_| hs),
            rr_bpm: rr,
            rr_source: rr.map(|_| rs),
            hrv_rmssd_ms: hrv,
            drowsiness_physio: phys,
            perclos,
            blink_rate_per_min: blink,
            long_blink_rate_per_min: long,
            attention: att,
            drowsiness_camera: cam,
            warning,
            radar_reliable: rel,
            wearable_fresh: wf,
            camera_fresh: cf,
        })
}

pub fn payload() -> impl Strategy<Value = Payload> {
    prop_oneof![
        radar_sample().prop_map(Payload::Radar),
        wearable_sample().prop_map(Payload::Wearable),
        camera_sample().prop_map(Payload::Camera),
        annotation().prop_map(Payload::Annotation),
        fused_row(false).prop_map(Payload::Fused),
    ]
}

pub fn session_id() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_-]{1,16}"
}

pub fn record() -> impl Strategy<Value = TimedRecord> {
    (session_id(), any::<u64>(), any::<i64>(), timestamp(), payload())
        .prop_map(|(session, seq, device, wall, payload)| TimedRecord::new(session, seq, device, wall, payload))
}
