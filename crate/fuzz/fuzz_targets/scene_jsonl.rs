#![no_main]

use libfuzzer_sys::fuzz_target;
use trackcast_core::Scene;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(scene) = Scene::from_jsonl(text) {
        let again = Scene::from_jsonl(&scene.to_jsonl()).expect("written scene parses");
        assert_eq!(again.num_frames(), scene.num_frames());
        let _ = scene.tracks();
    }
});
