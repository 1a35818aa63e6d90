#![no_main]

use libfuzzer_sys::fuzz_target;
use orbtrack::cli::parse_args;

// One argument per NUL-separated chunk.
fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let argv = std::iter::once("orbtrack").chain(text.split('\0').filter(|a| !a.is_empty()));
    if let Err(e) = parse_args(argv) {
        let code = e.exit_code();
        assert!(code == 0 || code == 1, "argument parsing exit code {code}");
    }
});
