#![no_main]

use cube::cog::CogHeader;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(h) = CogHeader::parse(data) {
        for target in [1.0, 100.0, 1e6] {
            assert!(h.select_overview(target) < h.ifds.len());
        }
        for ifd in &h.ifds {
            assert_eq!(ifd.tile_offsets.len(), ifd.tile_byte_counts.len());
        }
    }
});
