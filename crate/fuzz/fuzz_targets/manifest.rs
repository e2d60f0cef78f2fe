#![no_main]

use libfuzzer_sys::fuzz_target;
use shapeseg::dataset::Manifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = Manifest::parse(text) {
        let rendered = m.render();
        let again = Manifest::parse(&rendered).expect("rendered manifest parses");
        assert_eq!(again.render(), rendered);
    }
});
