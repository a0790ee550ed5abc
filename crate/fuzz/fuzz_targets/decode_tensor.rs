#![no_main]

use corrkd::linalg::io::{decode, encode, DType};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode(data) {
        // Anything accepted survives an f64 roundtrip bit for bit.
        let back = decode(&encode(&t, DType::F64).unwrap()).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
});
