#![no_main]

use libfuzzer_sys::fuzz_target;
use mcr::denoiser::DenoiserParams;
use mcr::train::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Checkpoint::from_bytes(data) {
        let bytes = c.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }
    if let Ok((p, used)) = DenoiserParams::from_bytes(data) {
        assert!(used <= data.len());
        assert_eq!(p.to_bytes(), data[..used]);
    }
});
