//! Dataset binary decoder must reject arbitrary input without panicking,
//! and accepted input must re-encode losslessly.

#![no_main]

use libfuzzer_sys::fuzz_target;
use risloc::dataset::{dataset_from_bytes, dataset_to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = dataset_from_bytes(data, 0, String::new()) {
        let bytes = dataset_to_bytes(&ds);
        let again = dataset_from_bytes(&bytes, 0, String::new()).expect("re-encode");
        assert_eq!(again.samples.len(), ds.samples.len());
    }
});
