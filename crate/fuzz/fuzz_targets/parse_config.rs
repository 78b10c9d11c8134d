#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = mhsolve::parse_config_str(text) else { return };
    // a config that parses must build a problem or fail cleanly
    for r in spec.reservations() {
        let _ = spec.problem(r);
    }
});
