//! `.vint` tensor container.
//!
//! Layout: `b"VINT"`, header length as `u32` little-endian, UTF-8 JSON header
//! `{"dims": [F, C, H, W], "dtype": "f32" | "f64", "kind": "video" | "latent" | "mask", "meta": {..}}`,
//! then `F*C*H*W` little-endian values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use vino_core::{BinaryMask, Dims, VideoLatent};

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"VINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Video,
    Latent,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: [usize; 4],
    dtype: Dtype,
    kind: Kind,
    #[serde(default)]
    meta: Value,
}

/// In-memory container. Values are held as f64 whatever the stored dtype.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub dims: Dims,
    pub dtype: Dtype,
    pub kind: Kind,
    pub meta: Value,
    pub data: Vec<f64>,
}

impl Container {
    pub fn new(dims: Dims, dtype: Dtype, kind: Kind, meta: Value, data: Vec<f64>) -> Result<Self> {
        let c = Self {
            dims,
            dtype,
            kind,
            meta,
            data,
        };
        c.check()?;
        Ok(c)
    }

    pub fn video(v: &VideoLatent, meta: Value) -> Self {
        Self::from_latent(v, Kind::Video, meta)
    }

    pub fn from_latent(v: &VideoLatent, kind: Kind, meta: Value) -> Self {
        Self {
            dims: v.dims(),
            dtype: Dtype::F64,
            kind,
            meta,
            data: v.data().to_vec(),
        }
    }

    pub fn mask(m: &BinaryMask, meta: Value) -> Self {
        Self {
            dims: m.dims(),
            dtype: Dtype::F64,
            kind: Kind::Mask,
            meta,
            data: m.data().to_vec(),
        }
    }

    /// Same container stored as f32 (values rounded on write).
    pub fn as_f32(mut self) -> Self {
        self.dtype = Dtype::F32;
        self
    }

    fn check(&self) -> Result<()> {
        self.dims
            .validate()
            .map_err(|e| HarnessError::Format(e.to_string()))?;
        if self.data.len() != self.dims.len() {
            return Err(HarnessError::Format(format!(
                "payload has {} values, dims {} need {}",
                self.data.len(),
                self.dims,
                self.dims.len()
            )));
        }
        if self.kind == Kind::Mask {
            if self.dims.channels != 1 {
                return Err(HarnessError::Format(format!(
                    "mask must have 1 channel, got {}",
                    self.dims
                )));
            }
            if self.data.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(HarnessError::Format(
                    "mask payload contains values other than 0/1".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_latent(&self) -> Result<VideoLatent> {
        Ok(VideoLatent::new(self.dims, self.data.clone())?)
    }

    pub fn to_mask(&self) -> Result<BinaryMask> {
        if self.kind != Kind::Mask {
            return Err(HarnessError::Format(format!(
                "expected a mask container, got {:?}",
                self.kind
            )));
        }
        Ok(BinaryMask::new(
            self.dims.frames,
            self.dims.height,
            self.dims.width,
            self.data.clone(),
        )?)
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        self.check()?;
        let header = Header {
            dims: self.dims.as_array(),
            dtype: self.dtype,
            kind: self.kind,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| HarnessError::Format(e.to_string()))?;
        let len = u32::try_from(json.len())
            .map_err(|_| HarnessError::Format("header too large".into()))?;
        out.write_all(MAGIC)?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(&json)?;
        let mut payload = Vec::with_capacity(self.data.len() * self.dtype.size());
        match self.dtype {
            Dtype::F64 => self
                .data
                .iter()
                .for_each(|v| payload.extend_from_slice(&v.to_le_bytes())),
            Dtype::F32 => self
                .data
                .iter()
                .for_each(|&v| payload.extend_from_slice(&(v as f32).to_le_bytes())),
        }
        out.write_all(&payload)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(HarnessError::Format(format!("bad magic {magic:?}")));
        }
        let mut len = [0u8; 4];
        input.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)
            .map_err(|e| HarnessError::Format(format!("header: {e}")))?;
        let [f, c, h, w] = header.dims;
        let dims = Dims::new(f, c, h, w);
        let mut payload = Vec::new();
        input.read_to_end(&mut payload)?;
        let size = header.dtype.size();
        if payload.len() != dims.len() * size {
            return Err(HarnessError::Format(format!(
                "payload is {} bytes, dims {dims} with {:?} need {}",
                payload.len(),
                header.dtype,
                dims.len() * size
            )));
        }
        let data = match header.dtype {
            Dtype::F64 => payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
                .collect(),
            Dtype::F32 => payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4")) as f64)
                .collect(),
        };
        Self::new(dims, header.dtype, header.kind, header.meta, data)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use vino_core::{gaussian, SeedStream};

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let v = gaussian(Dims::new(2, 3, 4, 5), &SeedStream::new(1, "c")).unwrap();
        let c = Container::video(&v, json!({"note": "x"}));
        let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        let bits: Vec<u64> = back.data.iter().map(|v| v.to_bits()).collect();
        let want: Vec<u64> = v.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, want);
    }

    #[test]
    fn f32_round_trip_within_ulp() {
        let v = gaussian(Dims::new(1, 2, 3, 3), &SeedStream::new(2, "c")).unwrap();
        let c = Container::video(&v, Value::Null).as_f32();
        let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back.dtype, Dtype::F32);
        for (a, b) in back.data.iter().zip(v.data()) {
            let ulp = f32::EPSILON as f64 * b.abs().max(f32::MIN_POSITIVE as f64);
            assert!((a - b).abs() <= ulp, "{a} vs {b}");
        }
    }

    #[test]
    fn layout_is_as_documented() {
        let v = VideoLatent::new(Dims::new(1, 1, 1, 2), vec![1.0, -2.0]).unwrap();
        let bytes = Container::from_latent(&v, Kind::Latent, json!({}))
            .to_bytes()
            .unwrap();
        assert_eq!(&bytes[..4], b"VINT");
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header: Value = serde_json::from_slice(&bytes[8..8 + n]).unwrap();
        assert_eq!(
            header,
            json!({"dims": [1, 1, 1, 2], "dtype": "f64", "kind": "latent", "meta": {}})
        );
        assert_eq!(&bytes[8 + n..8 + n + 8], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 8 + n + 16);
    }

    #[test]
    fn rejects_corrupt_input() {
        let m = BinaryMask::ones(1, 2, 2).unwrap();
        let good = Container::mask(&m, Value::Null).to_bytes().unwrap();
        assert_eq!(Container::from_bytes(&good).unwrap().to_mask().unwrap(), m);

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(Container::from_bytes(&bad_magic).is_err());
        assert!(Container::from_bytes(&good[..good.len() - 1]).is_err());

        let not_binary = Container::new(
            Dims::new(1, 1, 1, 2),
            Dtype::F64,
            Kind::Video,
            Value::Null,
            vec![0.5, 1.0],
        )
        .unwrap();
        let mut as_mask = not_binary.clone();
        as_mask.kind = Kind::Mask;
        assert!(as_mask.to_bytes().is_err());
        assert!(not_binary.to_mask().is_err());
        assert!(Container::new(
            Dims::new(1, 1, 1, 2),
            Dtype::F64,
            Kind::Video,
            Value::Null,
            vec![0.5]
        )
        .is_err());
    }
}
