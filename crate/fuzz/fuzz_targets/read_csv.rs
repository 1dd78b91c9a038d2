// CSV ingestion under a fixed column layout, both missing-data policies.
//
//   cargo +nightly fuzz run read_csv
#![no_main]

use geepers::data::{read_csv, ColumnSpec, MissingPolicy};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let spec = ColumnSpec {
        ps_covars: vec!["x1".into(), "x2".into()],
        out_covars: vec!["x1".into()],
        ..ColumnSpec::default()
    };
    for policy in [MissingPolicy::Reject, MissingPolicy::Listwise] {
        if let Ok(d) = read_csv(data, &spec, policy) {
            assert_eq!(d.n(), d.n_treated() + d.n_control());
            assert!(d.y().iter().all(|v| v.is_finite()));
        }
    }
});
