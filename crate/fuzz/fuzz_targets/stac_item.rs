#![no_main]

use cube::stac::parse_item;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(doc) = serde_json::from_slice::<serde_json::Value>(data) {
        if let Ok(item) = parse_item(&doc) {
            for asset in item.assets.values() {
                assert!(asset.href.starts_with("http://") || asset.href.starts_with("https://"));
            }
        }
    }
});
