//! `AXC1` checkpoint files.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "AXC1" | blob count | blob*
//! blob = name length | UTF-8 name | rank | dims[rank] | f32 payload (LE)
//! ```
//!
//! Parameters are stored as `layer.param`; running statistics of norm layers
//! as `layer.running_mean` / `layer.running_var` for single-branch BN and
//! `layer.clean.running_mean`, `layer.adversarial.running_var`, ... for dual
//! branches.

use std::path::Path;

use crate::diffcore::Network;
use crate::error::{Error, Result};
use crate::normlayers::NormRoute;

pub const MAGIC: &[u8; 4] = b"AXC1";

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

fn stat_prefix(layer: &str, route: Option<NormRoute>) -> String {
    match route {
        None => layer.to_string(),
        Some(NormRoute::Clean) => format!("{layer}.clean"),
        Some(NormRoute::Adversarial) => format!("{layer}.adversarial"),
    }
}

/// Every parameter and running statistic of `net` as named blobs.
pub fn blobs(net: &Network) -> Vec<Blob> {
    let mut out: Vec<Blob> = net
        .params()
        .into_iter()
        .map(|(name, t)| Blob {
            name,
            dims: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect();
    for (layer, norm) in net.norm_layers() {
        for (route, stats) in norm.stat_sets() {
            let prefix = stat_prefix(layer, route);
            out.push(Blob {
                name: format!("{prefix}.running_mean"),
                dims: vec![stats.mean.len()],
                data: stats.mean.clone(),
            });
            out.push(Blob {
                name: format!("{prefix}.running_var"),
                dims: vec![stats.var.len()],
                data: stats.var.clone(),
            });
        }
    }
    out
}

pub fn encode(blobs: &[Blob]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for b in blobs {
        buf.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(b.name.as_bytes());
        buf.extend_from_slice(&(b.dims.len() as u32).to_le_bytes());
        for &d in &b.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &b.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::data(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Parses checkpoint bytes; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<Blob>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(Error::data(path, "bad magic bytes, expected AXC1"));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::data(path, "blob name is not UTF-8"))?;
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let payload = r.take(n * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(Blob { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::data(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

/// Overwrites parameters and running statistics of `net` from `blobs`.
/// Every blob the network expects must be present with a matching shape.
pub fn restore(net: &mut Network, blobs: &[Blob], path: &Path) -> Result<()> {
    let find = |name: &str, len: usize| -> Result<&Blob> {
        let b = blobs
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::data(path, format!("missing blob {name}")))?;
        if b.data.len() != len {
            return Err(Error::data(
                path,
                format!("blob {name} has {} values, expected {len}", b.data.len()),
            ));
        }
        Ok(b)
    };
    for (name, t) in net.params_mut() {
        let b = find(&name, t.len())?;
        if b.dims != t.shape() {
            return Err(Error::data(path, format!("blob {name} has dims {:?}, expected {:?}", b.dims, t.shape())));
        }
        t.data_mut().copy_from_slice(&b.data);
    }
    for (layer, norm) in net.norm_layers_mut() {
        let layer = layer.to_string();
        for (route, stats) in norm.stat_sets_mut() {
            let prefix = stat_prefix(&layer, route);
            let mean = find(&format!("{prefix}.running_mean"), stats.mean.len())?;
            stats.mean.copy_from_slice(&mean.data);
            let var = find(&format!("{prefix}.running_var"), stats.var.len())?;
            stats.var.copy_from_slice(&var.data);
        }
    }
    Ok(())
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, encode(&blobs(net))).map_err(|e| Error::io(path, e))
}

pub fn load(net: &mut Network, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let blobs = decode(&bytes, path)?;
    restore(net, &blobs, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn encode_decode_roundtrip(
            names in proptest::collection::vec("[a-z.]{1,12}", 1..4),
            dims in proptest::collection::vec(1usize..5, 0..3),
            seed in any::<u32>(),
        ) {
            let n: usize = dims.iter().product();
            let blobs: Vec<Blob> = names
                .iter()
                .enumerate()
                .map(|(i, name)| Blob {
                    name: name.clone(),
                    dims: dims.clone(),
                    data: (0..n).map(|j| (seed as f32) * 1e-3 + (i * 31 + j) as f32).collect(),
                })
                .collect();
            let bytes = encode(&blobs);
            prop_assert_eq!(decode(&bytes, Path::new("mem")).unwrap(), blobs);
        }
    }

    #[test]
    fn bad_magic_is_data_error() {
        let err = decode(b"AXC0\0\0\0\0", Path::new("x.axc")).unwrap_err();
        assert!(matches!(err, Error::Data { .. }));
        assert!(err.to_string().contains("x.axc"));
    }

    #[test]
    fn layout_is_bit_exact() {
        let b = Blob { name: "ab".into(), dims: vec![2], data: vec![1.0, -2.0] };
        let bytes = encode(&[b]);
        let mut want = b"AXC1".to_vec();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(b"ab");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, want);
    }
}
