#![no_main]

use cube::request::{parse_time, Bound};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let (Ok(a), Ok(b)) = (parse_time(s, Bound::Start), parse_time(s, Bound::End)) {
        assert!(a <= b);
    }
});
