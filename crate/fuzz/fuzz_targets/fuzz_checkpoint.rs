//! Checkpoint decoder must reject arbitrary input without panicking, and
//! accepted bundles must survive an encode/decode round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;
use risloc::neural::checkpoint::{bundle_from_bytes, bundle_to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(bundle) = bundle_from_bytes(data) {
        let bytes = bundle_to_bytes(&bundle).expect("encode");
        let again = bundle_from_bytes(&bytes).expect("re-decode");
        assert_eq!(again.model.param_count(), bundle.model.param_count());
    }
});
