#![no_main]

use cube::stac::parse_search_page;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_search_page(data);
});
