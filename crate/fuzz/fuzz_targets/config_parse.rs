#![no_main]

use enl_cli::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

// Any accepted config must survive its canonical serialization unchanged.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = ExperimentConfig::parse(text) else { return };
    let canonical = cfg.to_ini();
    let again = ExperimentConfig::parse(&canonical).expect("canonical form parses");
    assert_eq!(again.to_ini(), canonical);
});
