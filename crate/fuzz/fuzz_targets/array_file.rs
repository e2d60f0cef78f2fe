#![no_main]

use libfuzzer_sys::fuzz_target;
use shapeseg::format::ArrayFile;

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = ArrayFile::decode(data) {
        let bytes = file.encode();
        let again = ArrayFile::decode(&bytes).expect("re-encoded array decodes");
        assert_eq!(again.encode(), bytes);
    }
});
