#![no_main]

use cube::stac::{Predicate, QueryFilter};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(p) = s.parse::<Predicate>() {
        let filter = QueryFilter::from_predicates([p]);
        let _ = filter.to_json().to_string();
        let _ = filter.matches(&serde_json::Map::new());
    }
});
