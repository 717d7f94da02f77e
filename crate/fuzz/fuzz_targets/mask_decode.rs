#![no_main]

use libfuzzer_sys::fuzz_target;
use mcr::mask::BinaryMask;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = BinaryMask::from_pgm_bytes(data) {
        assert_eq!(BinaryMask::from_pgm_bytes(&m.to_pgm_bytes()).unwrap(), m);
        if !m.is_empty() {
            assert!(m.is_subset_of(&m.bounding_rect().unwrap()));
        }
    }
});
