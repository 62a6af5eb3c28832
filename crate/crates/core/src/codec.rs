//! Base-64 encoding of little-endian `f32` vectors.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

pub fn encode_f32s(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f32s(s: &str) -> Result<Vec<f32>, String> {
    let bytes = STANDARD
        .decode(s.trim())
        .map_err(|e| format!("bad base64 vector: {e}"))?;
    if bytes.len() % 4 != 0 {
        return Err(format!(
            "vector byte length {} is not a multiple of 4",
            bytes.len()
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_encoding() {
        // 1.0f32 = 0x3f800000 little-endian
        assert_eq!(encode_f32s(&[1.0]), "AACAPw==");
        assert_eq!(decode_f32s("AACAPw==").unwrap(), vec![1.0]);
        assert!(decode_f32s("AACA").is_err());
        assert!(decode_f32s("not base64!").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(v in proptest::collection::vec(any::<f32>(), 0..64)) {
            let back = decode_f32s(&encode_f32s(&v)).unwrap();
            prop_assert_eq!(back.len(), v.len());
            for (a, b) in v.iter().zip(&back) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
