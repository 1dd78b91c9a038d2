// Column-role config parser.
#![no_main]

use geepers::data::ColumnSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = ColumnSpec::parse_config(text) {
        assert!(!spec.outcome.is_empty() && !spec.treatment.is_empty() && !spec.strata.is_empty());
    }
});
