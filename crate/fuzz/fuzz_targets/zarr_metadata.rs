#![no_main]

use cube::io::zarr::ArrayMeta;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(meta) = ArrayMeta::parse(data) {
        assert_eq!(meta.shape.len(), meta.chunks.len());
        let _ = meta.dtype();
    }
});
