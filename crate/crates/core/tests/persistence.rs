mod common;

use cabin_core::model::{SourceId, TimedRecord, Timestamp};
use cabin_core::persistence::{format_real, read_csv, write_csv, DocumentStore, JsonlStore};
use proptest::prelude::*;

fn scan(all: &[TimedRecord], session: &str, source: Option<SourceId>, t0: i64, t1: i64) -> Vec<TimedRecord> {
    let mut hits: Vec<_> = all
        .iter()
        .filter(|r| r.session_id == session && source.is_none_or(|s| s == r.source))
        .filter(|r| (t0..=t1).contains(&r.wall_ts_ms.ms()))
        .cloned()
        .collect();
    hits.sort_by_key(|r| (r.wall_ts_ms, r.source, r.seq));
    hits
}

fn stored_record() -> impl Strategy<Value = TimedRecord> {
    (prop_oneof![Just("a"), Just("b"), Just("c")], 0u64..50, 0i64..10_000, common::payload())
        .prop_map(|(session, seq, wall, payload)| TimedRecord::new(session, seq, 0, Timestamp(wall), payload))
}

fn source() -> impl Strategy<Value = Option<SourceId>> {
    proptest::option::of(proptest::sample::select(SourceId::ALL.to_vec()))
}

proptest! {
    #[test]
    fn reals_have_at_most_four_decimals(x in -1e9..1e9f64) {
        let s = format_real(x);
        prop_assert!(!s.contains(['e', 'E']));
        if let Some((_, frac)) = s.split_once('.') {
            prop_assert!(!frac.is_empty() && frac.len() <= 4 && !frac.ends_with('0'));
        }
        prop_assert!((s.parse::<f64>().unwrap() - x).abs() <= 0.5e-4 + 1e-9 * x.abs());
    }

    #[test]
    fn csv_round_trips(rows in proptest::collection::vec(common::fused_row(true), 0..60)) {
        let mut bytes = Vec::new();
        prop_assert_eq!(write_csv(&rows, &mut bytes).unwrap(), rows.len());
        prop_assert_eq!(read_csv(bytes.as_slice()).unwrap(), rows.clone());
        let mut again = Vec::new();
        write_csv(&rows, &mut again).unwrap();
        prop_assert_eq!(again, bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn store_queries_match_a_linear_scan(
        records in proptest::collection::vec(stored_record(), 0..150),
        queries in proptest::collection::vec(
            (prop_oneof![Just("a"), Just("b"), Just("z")], source(), -100i64..10_100, 0i64..6_000),
            1..20,
        ),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let store = JsonlStore::open(dir.path()).unwrap();
        for r in &records {
            store.append(r).unwrap();
        }
        let check = |store: &JsonlStore| -> Result<(), TestCaseError> {
            for (session, src, t0, len) in &queries {
                let got = store.query(session, *src, Timestamp(*t0), Timestamp(t0 + len)).unwrap();
                prop_assert_eq!(got, scan(&records, session, *src, *t0, t0 + len));
            }
            Ok(())
        };
        check(&store)?;
        drop(store);
        check(&JsonlStore::open(dir.path()).unwrap())?;
    }
}
