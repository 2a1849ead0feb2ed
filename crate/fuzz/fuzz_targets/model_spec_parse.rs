#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok((name, params)) = coarse_forge_core::models::parse_model_spec(text) {
            // Registry construction on parsed input returns, never panics.
            let _ = coarse_forge_core::models::registry(&name, &params);
        }
    }
});
