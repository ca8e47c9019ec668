#![no_main]

use cube::cog::codec::{decode_samples, decompress};
use cube::cog::{ByteOrder, SampleType};
use libfuzzer_sys::fuzz_target;

const TYPES: [SampleType; 8] = [
    SampleType::U8,
    SampleType::I8,
    SampleType::U16,
    SampleType::I16,
    SampleType::U32,
    SampleType::I32,
    SampleType::F32,
    SampleType::F64,
];

// Layout: [codec, sample type, flags, row length, payload...]
fuzz_target!(|data: &[u8]| {
    let [codec, ty, flags, row, payload @ ..] = data else { return };
    let compression = [1u16, 5, 8, 32946][usize::from(*codec) % 4];
    let sample = TYPES[usize::from(*ty) % TYPES.len()];
    let order = if flags & 1 == 0 { ByteOrder::Little } else { ByteOrder::Big };
    let predictor = if flags & 2 == 0 { 1 } else { 2 };
    let row_len = usize::from(*row);
    let expected = row_len * 16 * sample.size();
    if let Ok(bytes) = decompress(compression, payload, expected) {
        assert_eq!(bytes.len(), expected);
        if let Ok(samples) = decode_samples(&bytes, sample, order, predictor, row_len) {
            assert_eq!(samples.len(), expected / sample.size());
        }
    }
});
