//! Replays the checked-in fuzz corpus on stable so the seeds stay meaningful.

use std::path::PathBuf;

use geepers::comparators::fit_psw;
use geepers::data::{read_csv, ColumnSpec, MissingPolicy};
use geepers::geepers::fit_geepers;
use geepers::ols::Mode;
use geepers::sim::GridSpec;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn read_csv_seeds() {
    let spec = ColumnSpec { ps_covars: vec!["x1".into(), "x2".into()], out_covars: vec!["x1".into()], ..ColumnSpec::default() };
    let mut accepted = 0;
    for (name, bytes) in seeds("read_csv") {
        for policy in [MissingPolicy::Reject, MissingPolicy::Listwise] {
            if let Ok(d) = read_csv(bytes.as_slice(), &spec, policy) {
                assert_eq!(d.n(), d.n_treated() + d.n_control(), "{name}");
                accepted += 1;
            }
        }
    }
    assert!(accepted > 0);
}

#[test]
fn column_config_seeds() {
    let results: Vec<bool> = seeds("column_config")
        .into_iter()
        .map(|(_, b)| ColumnSpec::parse_config(std::str::from_utf8(&b).unwrap()).is_ok())
        .collect();
    assert!(results.contains(&true) && results.contains(&false));
}

#[test]
fn grid_spec_seeds() {
    for (name, bytes) in seeds("grid_spec") {
        if let Ok(g) = GridSpec::parse(std::str::from_utf8(&bytes).unwrap()) {
            assert!(!g.cells().unwrap().is_empty(), "{name}");
        }
    }
}

#[test]
fn estimate_csv_seeds() {
    let mut fitted = 0;
    for (_, bytes) in seeds("estimate_csv") {
        let (head, body) = match bytes.iter().position(|&b| b == 0) {
            Some(k) => (&bytes[..k], &bytes[k + 1..]),
            None => (&[][..], bytes.as_slice()),
        };
        let spec = std::str::from_utf8(head).ok().and_then(|t| ColumnSpec::parse_config(t).ok()).unwrap_or_default();
        let Ok(d) = read_csv(body, &spec, MissingPolicy::Listwise) else { continue };
        for mode in [Mode::Plain, Mode::Interactions] {
            if let Ok(fit) = fit_geepers(&d, mode) {
                let _ = fit_psw(&d, &fit.logistic.fitted);
                fitted += 1;
            }
        }
    }
    assert!(fitted > 0);
}
