#![no_main]

use libfuzzer_sys::fuzz_target;
use mcr::imagio::ImageTensor;
use mcr::pnm;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = pnm::decode(data) {
        let again = pnm::decode(&pnm::encode(&p)).expect("re-encoded image must decode");
        assert_eq!(again, p);
    }
    if let Ok(img) = ImageTensor::from_pnm_bytes(data) {
        let bytes = img.to_pnm_bytes().unwrap();
        assert_eq!(ImageTensor::from_pnm_bytes(&bytes).unwrap(), img);
    }
});
