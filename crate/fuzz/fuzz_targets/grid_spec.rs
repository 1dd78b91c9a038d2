// Simulation grid parser. Accepted grids must expand to valid cells.
#![no_main]

use geepers::sim::GridSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = GridSpec::parse(text) {
        let cells = g.cells().expect("parse validated the cells");
        assert!(cells.iter().all(|c| c.validate().is_ok()));
    }
});
