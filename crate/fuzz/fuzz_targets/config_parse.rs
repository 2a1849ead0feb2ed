#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // Parsing untrusted config text must never panic; when it parses,
        // building the coarse map must return a Result too.
        if let Ok(cfg) = coarse_forge::ExperimentConfig::from_str(text) {
            let _ = cfg.map.build(2);
        }
    }
});
