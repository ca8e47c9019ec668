//! Tile decompression and sample decoding.

use std::io::Read;

use flate2::read::ZlibDecoder;

use super::tiff::{ByteOrder, SampleType};

pub const COMPRESSION_NONE: u16 = 1;
pub const COMPRESSION_LZW: u16 = 5;
pub const COMPRESSION_DEFLATE: u16 = 8;
pub const COMPRESSION_DEFLATE_OLD: u16 = 32946;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("compression {0} is not supported")]
    Unsupported(u16),
    #[error("predictor {0} is not supported")]
    UnsupportedPredictor(u16),
    #[error("corrupt data: {0}")]
    Corrupt(String),
}

/// Whether `compression` can be decoded by this build.
pub fn supported(compression: u16) -> bool {
    match compression {
        COMPRESSION_NONE | COMPRESSION_DEFLATE | COMPRESSION_DEFLATE_OLD => true,
        COMPRESSION_LZW => cfg!(feature = "lzw"),
        _ => false,
    }
}

/// Decompress `raw` into exactly `expected` bytes. Short output is an error;
/// trailing excess is dropped.
pub fn decompress(compression: u16, raw: &[u8], expected: usize) -> Result<Vec<u8>, CodecError> {
    let mut out = match compression {
        COMPRESSION_NONE => raw.to_vec(),
        COMPRESSION_DEFLATE | COMPRESSION_DEFLATE_OLD => {
            let mut out = Vec::with_capacity(expected);
            ZlibDecoder::new(raw)
                .take(expected as u64)
                .read_to_end(&mut out)
                .map_err(|e| CodecError::Corrupt(e.to_string()))?;
            out
        }
        #[cfg(feature = "lzw")]
        COMPRESSION_LZW => {
            let mut out = Vec::with_capacity(expected);
            let mut decoder = weezl::decode::Decoder::with_tiff_size_switch(weezl::BitOrder::Msb, 8);
            let result = decoder.into_stream(&mut out).decode(raw);
            result.status.map_err(|e| CodecError::Corrupt(e.to_string()))?;
            out
        }
        other => return Err(CodecError::Unsupported(other)),
    };
    if out.len() < expected {
        return Err(CodecError::Corrupt(format!("decoded {} bytes, expected {expected}", out.len())));
    }
    out.truncate(expected);
    Ok(out)
}

/// zlib-compress `data`; the inverse of [`decompress`] for deflate.
pub fn deflate(data: &[u8], level: u32) -> Vec<u8> {
    use std::io::Write;
    let mut enc = flate2::write::ZlibEncoder::new(Vec::new(), flate2::Compression::new(level));
    enc.write_all(data).expect("in-memory write");
    enc.finish().expect("in-memory write")
}

/// Interpret decompressed tile bytes as samples, undoing the horizontal
/// differencing predictor when `predictor == 2`.
pub fn decode_samples(
    bytes: &[u8],
    sample: SampleType,
    order: ByteOrder,
    predictor: u16,
    row_len: usize,
) -> Result<Vec<f64>, CodecError> {
    let size = sample.size();
    let n = bytes.len() / size;
    macro_rules! read {
        ($t:ty) => {{
            let mut v: Vec<$t> = bytes
                .chunks_exact(size)
                .map(|c| {
                    let arr = c.try_into().expect("sample width");
                    match order {
                        ByteOrder::Little => <$t>::from_le_bytes(arr),
                        ByteOrder::Big => <$t>::from_be_bytes(arr),
                    }
                })
                .collect();
            if predictor == 2 {
                undo_horizontal(&mut v, row_len, |a, b| a.wrapping_add(b));
            }
            v.into_iter().map(|x| x as f64).collect::<Vec<f64>>()
        }};
    }
    match predictor {
        1 => {}
        2 if !sample.is_float() => {}
        p => return Err(CodecError::UnsupportedPredictor(p)),
    }
    if row_len == 0 {
        return Err(CodecError::Corrupt("zero-width tile".into()));
    }
    let out = match sample {
        SampleType::U8 => read!(u8),
        SampleType::I8 => read!(i8),
        SampleType::U16 => read!(u16),
        SampleType::I16 => read!(i16),
        SampleType::U32 => read!(u32),
        SampleType::I32 => read!(i32),
        SampleType::F32 => {
            let v: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| {
                    let arr = c.try_into().expect("4 bytes");
                    match order {
                        ByteOrder::Little => f32::from_le_bytes(arr),
                        ByteOrder::Big => f32::from_be_bytes(arr),
                    }
                })
                .collect();
            v.into_iter().map(f64::from).collect()
        }
        SampleType::F64 => bytes
            .chunks_exact(8)
            .map(|c| {
                let arr = c.try_into().expect("8 bytes");
                match order {
                    ByteOrder::Little => f64::from_le_bytes(arr),
                    ByteOrder::Big => f64::from_be_bytes(arr),
                }
            })
            .collect(),
    };
    debug_assert_eq!(out.len(), n);
    Ok(out)
}

fn undo_horizontal<T: Copy>(v: &mut [T], row_len: usize, add: impl Fn(T, T) -> T) {
    for row in v.chunks_mut(row_len) {
        for i in 1..row.len() {
            row[i] = add(row[i], row[i - 1]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn deflate_round_trip(data in proptest::collection::vec(any::<u8>(), 0..4096), level in 0u32..10) {
            let enc = deflate(&data, level);
            prop_assert_eq!(decompress(COMPRESSION_DEFLATE, &enc, data.len()).unwrap(), data);
        }

        #[test]
        fn none_round_trip(data in proptest::collection::vec(any::<u8>(), 0..4096)) {
            prop_assert_eq!(decompress(COMPRESSION_NONE, &data, data.len()).unwrap(), data);
        }

        #[test]
        fn u16_samples_round_trip(vals in proptest::collection::vec(any::<u16>(), 1..512), big in any::<bool>()) {
            let (order, bytes): (_, Vec<u8>) = if big {
                (ByteOrder::Big, vals.iter().flat_map(|v| v.to_be_bytes()).collect())
            } else {
                (ByteOrder::Little, vals.iter().flat_map(|v| v.to_le_bytes()).collect())
            };
            let got = decode_samples(&bytes, SampleType::U16, order, 1, vals.len()).unwrap();
            prop_assert!(got.iter().zip(&vals).all(|(a, &b)| *a == f64::from(b)));
        }
    }

    #[test]
    fn short_output_is_corrupt() {
        let enc = deflate(&[1, 2, 3], 6);
        assert!(matches!(decompress(COMPRESSION_DEFLATE, &enc, 10), Err(CodecError::Corrupt(_))));
        assert!(matches!(decompress(COMPRESSION_DEFLATE, b"garbage", 10), Err(CodecError::Corrupt(_))));
        assert_eq!(decompress(7, b"", 0), Err(CodecError::Unsupported(7)));
    }

    #[test]
    fn horizontal_predictor() {
        // Rows [1, 2, 3] and [10, 10, 10] differenced.
        let diffs: [u8; 6] = [1, 1, 1, 10, 0, 0];
        let got = decode_samples(&diffs, SampleType::U8, ByteOrder::Little, 2, 3).unwrap();
        assert_eq!(got, [1.0, 2.0, 3.0, 10.0, 10.0, 10.0]);
        let wrap: [u8; 2] = [250, 10];
        assert_eq!(decode_samples(&wrap, SampleType::U8, ByteOrder::Little, 2, 2).unwrap(), [250.0, 4.0]);
        assert!(decode_samples(&[0; 4], SampleType::F32, ByteOrder::Little, 3, 1).is_err());
    }

    #[test]
    fn float_samples_big_endian() {
        let bytes: Vec<u8> = [1.5f32, -2.25].iter().flat_map(|v| v.to_be_bytes()).collect();
        assert_eq!(decode_samples(&bytes, SampleType::F32, ByteOrder::Big, 1, 2).unwrap(), [1.5, -2.25]);
    }

    #[cfg(feature = "lzw")]
    #[test]
    fn lzw_round_trip() {
        let data: Vec<u8> = (0..2000u32).map(|i| (i % 37) as u8).collect();
        let mut enc = weezl::encode::Encoder::with_tiff_size_switch(weezl::BitOrder::Msb, 8);
        let packed = enc.encode(&data).unwrap();
        assert_eq!(decompress(COMPRESSION_LZW, &packed, data.len()).unwrap(), data);
    }
}
