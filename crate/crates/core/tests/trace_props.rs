use std::collections::BTreeSet;

use flashcrowd_core::trace::{
    bin_records, read_csv_from, write_csv_to, AccessLogRecord, BinnedTrace, ContentId, ContentInterner,
};
use proptest::prelude::*;

fn trace_strategy() -> impl Strategy<Value = BinnedTrace> {
    (1usize..30, 1u64..5).prop_flat_map(|(horizon, width)| {
        prop::collection::vec((0..horizon, 0u64..10, 0u64..6), 1..60).prop_map(move |cells| {
            let mut trace = BinnedTrace::new(width, horizon);
            for &(t, c, n) in &cells {
                trace.add(t, ContentId(c), n);
            }
            trace.add(horizon - 1, ContentId(cells[0].1), 0);
            trace
        })
    })
}

fn record(ts: i64, path: &str) -> AccessLogRecord {
    AccessLogRecord {
        client_id: "1".into(),
        timestamp: ts,
        method: "GET".into(),
        object_path: path.into(),
        status: 200,
        size: 0,
    }
}

proptest! {
    #[test]
    fn csv_round_trip(trace in trace_strategy()) {
        let mut buf = Vec::new();
        write_csv_to(&trace, &mut buf).unwrap();
        let back = read_csv_from(buf.as_slice(), trace.bin_width).unwrap();
        prop_assert_eq!(back, trace);
    }

    #[test]
    fn binning_keeps_every_record(
        stamps in prop::collection::vec((-5_000i64..5_000, 0usize..8), 0..200),
        width in 1u64..120,
    ) {
        let records: Vec<AccessLogRecord> = stamps.iter().map(|&(ts, p)| record(ts, &format!("/p{p}"))).collect();
        let mut interner = ContentInterner::new();
        let (trace, origin) = bin_records(&records, width, &mut interner).unwrap();
        prop_assert_eq!(trace.total(), records.len() as u64);
        for r in &records {
            let t = ((r.timestamp - origin) / width as i64) as usize;
            prop_assert!(t < trace.horizon());
        }
        let seen: BTreeSet<ContentId> = trace.bins.iter().flat_map(|b| b.keys().copied()).collect();
        prop_assert!(seen.is_subset(&trace.content_catalog));
    }

    #[test]
    fn interning_is_injective(paths in prop::collection::vec("/[a-c]{1,3}", 0..40)) {
        let mut interner = ContentInterner::new();
        let ids: Vec<ContentId> = paths.iter().map(|p| interner.intern(p)).collect();
        for (a, ia) in paths.iter().zip(&ids) {
            for (b, ib) in paths.iter().zip(&ids) {
                prop_assert_eq!(a == b, ia == ib);
            }
            prop_assert_eq!(interner.path(*ia), Some(a.as_str()));
        }
        let distinct: BTreeSet<&String> = paths.iter().collect();
        prop_assert_eq!(interner.len(), distinct.len());
    }
}
