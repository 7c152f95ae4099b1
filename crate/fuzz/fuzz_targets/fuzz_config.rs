//! JSON scene configuration parsing and validation must never panic, and
//! every accepted configuration must build a scene and round-trip through
//! its fingerprint without panicking.

#![no_main]

use libfuzzer_sys::fuzz_target;
use risloc::scene::{build_scene, SceneConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = serde_json::from_str::<SceneConfig>(text) else { return };
    if cfg.validate().is_ok() {
        if let Ok(scene) = build_scene(&cfg) {
            let _ = scene.config.fingerprint();
        }
    }
});
