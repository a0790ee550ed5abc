#![no_main]

use corrkd::config::SoupManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = SoupManifest::parse(text, "fuzz") {
        assert!(!m.ingredients.is_empty());
    }
});
