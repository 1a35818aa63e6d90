#![no_main]

use libfuzzer_sys::fuzz_target;
use orbtrack::ephemeris_io::{load_ephemeris, write_ephemeris};

fuzz_target!(|data: &[u8]| {
    let Ok(eph) = load_ephemeris(data) else {
        return;
    };
    assert!(eph.len() >= 2);
    assert_eq!(eph.grid().n_nodes(), eph.len());
    let mut buf = Vec::new();
    write_ephemeris(&mut buf, &eph).expect("writing to memory succeeds");
    let back = load_ephemeris(buf.as_slice()).expect("written ephemeris reloads");
    assert_eq!(back, eph);
});
