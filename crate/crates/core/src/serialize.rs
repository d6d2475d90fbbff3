//! Flat binary parameter files.
//!
//! Layout (all little-endian): 4-byte magic, `u32` version, `u64` dimension,
//! then `dimension` IEEE-754 `f64` values. Policies use magic `SOTP`, critics
//! use `SOTC`.

use crate::{Error, ParamVector, Result};

pub const POLICY_MAGIC: [u8; 4] = *b"SOTP";
pub const CRITIC_MAGIC: [u8; 4] = *b"SOTC";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 16;

pub fn encode(magic: [u8; 4], params: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for x in params.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode(magic: [u8; 4], bytes: &[u8]) -> Result<ParamVector> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != dim * 8 {
        return Err(Error::Format(format!(
            "dimension {dim} needs {} payload bytes, found {}",
            dim * 8,
            body.len()
        )));
    }
    Ok(ParamVector::from_iterator(
        dim,
        body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(values in proptest::collection::vec(any::<f64>(), 0..64)) {
            let p = ParamVector::from_vec(values.clone());
            let back = decode(POLICY_MAGIC, &encode(POLICY_MAGIC, &p)).unwrap();
            let a: Vec<u64> = values.iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = back.iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(CRITIC_MAGIC, &ParamVector::from_vec(vec![1.5]));
        assert_eq!(&bytes[..4], b"SOTC");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &1u64.to_le_bytes());
        assert_eq!(&bytes[16..], &1.5f64.to_le_bytes());
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let bytes = encode(CRITIC_MAGIC, &ParamVector::from_vec(vec![1.0, 2.0]));
        assert!(decode(POLICY_MAGIC, &bytes).is_err());
        assert!(decode(CRITIC_MAGIC, &bytes[..bytes.len() - 1]).is_err());
        assert!(decode(CRITIC_MAGIC, &bytes[..3]).is_err());
    }
}
