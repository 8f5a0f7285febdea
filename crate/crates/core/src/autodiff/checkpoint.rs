//! Binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"PXRL" | version: u32 | record*
//! record = name_len: u32 | name: [u8; name_len] | rank: u32 | dims: [u32; rank] | values: [f32; prod(dims)]
//! ```
//!
//! Records run to end of file.

use std::fs;
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PXRL";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode<'a>(records: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bad = |detail: &str| Error::Format {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing PXRL magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let mut pos = 8;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(bad("truncated record"));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let mut records = Vec::new();
    loop {
        // peek for end of data
        let Ok(len_bytes) = take(4) else { break };
        let name_len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| bad("record name is not utf-8"))?;
        let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        let n: usize = dims.iter().product();
        let raw = take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push((name, Tensor::new(dims, data)?));
    }
    Ok(records)
}

pub fn save<'a>(
    path: &Path,
    records: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(records)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2], vec![1.0f32, -0.5]).unwrap();
        let bytes = encode([("w", &t)]);
        assert_eq!(&bytes[..4], b"PXRL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1); // name length
        assert_eq!(bytes[12], b'w');
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 1); // rank
        assert_eq!(u32::from_le_bytes(bytes[17..21].try_into().unwrap()), 2); // dim
        assert_eq!(f32::from_le_bytes(bytes[25..29].try_into().unwrap()), -0.5);
        assert_eq!(bytes.len(), 29);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"NOPE\x01\0\0\0", Path::new("x")).is_err());
        let t = Tensor::new(vec![3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let bytes = encode([("abc", &t)]);
        assert!(decode(&bytes[..bytes.len() - 2], Path::new("x")).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(dims in prop::collection::vec(1usize..4, 0..4), name in "[a-z.]{1,12}", seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| ((i as u32 ^ seed) as f32).sin()).collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = decode(&encode([(name.as_str(), &t)]), Path::new("mem")).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0].0, &name);
            prop_assert_eq!(&back[0].1, &t);
        }
    }
}
