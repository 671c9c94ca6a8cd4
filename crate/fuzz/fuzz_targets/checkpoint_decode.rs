#![no_main]

use libfuzzer_sys::fuzz_target;
use trackcast_autograd::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        // Anything accepted must re-encode to a decodable checkpoint.
        let again = Checkpoint::decode(&ck.encode()).expect("re-encoded checkpoint decodes");
        assert_eq!(again.digest(), ck.digest());
        let _ = trackcast_core::Model::from_checkpoint(&ck);
    }
});
