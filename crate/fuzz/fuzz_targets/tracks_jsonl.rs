#![no_main]

use libfuzzer_sys::fuzz_target;
use trackcast_core::records::{parse_tracks, tracks_to_string};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_tracks(text) {
        assert_eq!(parse_tracks(&tracks_to_string(&records)).expect("written tracks parse"), records);
    }
});
