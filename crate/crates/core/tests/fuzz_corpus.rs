//! Replays the checked-in fuzz seeds through the same checks the fuzz
//! targets make, so the corpus stays meaningful on a stable toolchain.

use std::fs;
use std::path::PathBuf;

use orbtrack::cli::{parse_args, parse_config};
use orbtrack::ephemeris_io::{load_ephemeris, write_ephemeris};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.display().to_string(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn ephemeris_seeds() {
    let mut accepted = 0;
    for (name, data) in seeds("ephemeris_csv") {
        let Ok(eph) = load_ephemeris(data.as_slice()) else {
            continue;
        };
        accepted += 1;
        let mut buf = Vec::new();
        write_ephemeris(&mut buf, &eph).unwrap();
        assert_eq!(load_ephemeris(buf.as_slice()).unwrap(), eph, "{name}");
    }
    assert!(accepted >= 1);
}

#[test]
fn config_seeds() {
    let mut valid = 0;
    for (_, data) in seeds("config_parser") {
        let text = String::from_utf8(data).unwrap();
        if let Ok(cfg) = parse_config(&text) {
            valid += cfg.validate().is_ok() as usize;
        }
    }
    assert!(valid >= 2);
}

#[test]
fn cli_seeds() {
    let mut parsed = 0;
    for (name, data) in seeds("cli_args") {
        let text = String::from_utf8_lossy(&data).into_owned();
        let argv = std::iter::once("orbtrack").chain(text.split('\0').filter(|a| !a.is_empty()));
        match parse_args(argv) {
            Ok(_) => parsed += 1,
            Err(e) => assert!(e.exit_code() <= 1, "{name}: {e}"),
        }
    }
    assert!(parsed >= 2);
}
