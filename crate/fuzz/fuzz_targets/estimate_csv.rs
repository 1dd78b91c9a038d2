// Parse, then run the closed-form estimators on whatever survives.
// Bytes up to the first NUL are a column config; the rest is CSV.
#![no_main]

use geepers::comparators::fit_psw;
use geepers::data::{read_csv, ColumnSpec, MissingPolicy};
use geepers::geepers::fit_geepers;
use geepers::ols::Mode;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let (head, body) = match data.iter().position(|&b| b == 0) {
        Some(k) => (&data[..k], &data[k + 1..]),
        None => (&[][..], data),
    };
    let spec = std::str::from_utf8(head)
        .ok()
        .and_then(|t| ColumnSpec::parse_config(t).ok())
        .unwrap_or_default();
    let Ok(d) = read_csv(body, &spec, MissingPolicy::Listwise) else { return };
    if d.n() > 400 {
        return;
    }
    for mode in [Mode::Plain, Mode::Interactions] {
        if let Ok(fit) = fit_geepers(&d, mode) {
            let _ = fit_psw(&d, &fit.logistic.fitted);
        }
    }
});
