#![no_main]

use libfuzzer_sys::fuzz_target;
use trackcast_core::records::{forecasts_to_string, parse_forecasts};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_forecasts(text) {
        assert_eq!(parse_forecasts(&forecasts_to_string(&records)).expect("written forecasts parse"), records);
    }
});
