#![no_main]

use libfuzzer_sys::fuzz_target;
use moral_hazard::contracts::CanonicalContract;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = serde_json::from_slice::<CanonicalContract>(data) {
        let _ = c.validate();
    }
});
