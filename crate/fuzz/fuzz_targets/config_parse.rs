#![no_main]

use libfuzzer_sys::fuzz_target;
use mcr::train::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = TrainConfig::from_text(text) {
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }
});
