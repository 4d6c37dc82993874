//! Checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"ANCK" | u32 version = 1 | u64 header_len | header (UTF-8) | blob
//! ```
//!
//! The header is the network manifest followed by one index line per
//! stored tensor, `tensor <name> <d0>x<d1>...`, in blob order. The blob
//! holds every value as an `f64`, so both precisions round-trip exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{Network, NetworkSpec};
use crate::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 4] = b"ANCK";
const VERSION: u32 = 1;

/// Visits parameter values, then buffers, in a fixed order.
fn visit<T: Scalar>(net: &mut Network<T>, mut f: impl FnMut(&str, &mut Tensor<T>) -> Result<()>) -> Result<()> {
    for (name, p) in net.named_params_mut() {
        f(&name, &mut p.value)?;
    }
    for (name, t) in net.named_buffers_mut() {
        f(&name, t)?;
    }
    Ok(())
}

/// Serialises spec, parameters and normalisation buffers.
pub fn checkpoint_bytes<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let mut copy = net.clone();
    let mut header = copy.manifest();
    let mut blob = Vec::new();
    visit(&mut copy, |name, t| {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("tensor {name} {}\n", dims.join("x")));
        for v in t.data() {
            blob.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        Ok(())
    })
    .expect("serialising cannot fail");
    let mut out = Vec::with_capacity(16 + header.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&blob);
    out
}

/// Rebuilds a network from [`checkpoint_bytes`] output.
pub fn network_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Network<T>> {
    let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header = bytes
        .get(16..16 + len)
        .ok_or_else(|| bad("truncated header"))
        .and_then(|h| std::str::from_utf8(h).map_err(|_| bad("header is not UTF-8")))?;
    let mut net = Network::<T>::build(NetworkSpec::from_manifest(header)?)?;
    let mut blob = &bytes[16 + len..];
    let mut index = header.lines().filter(|l| l.starts_with("tensor "));
    visit(&mut net, |name, slot| {
        let line = index.next().ok_or_else(|| bad(&format!("no stored tensor for {name}")))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        let dims: Vec<usize> = match f.get(2) {
            Some(d) => d.split('x').map(|v| v.parse().map_err(|_| bad(line))).collect::<Result<_>>()?,
            None => return Err(bad(line)),
        };
        if f[1] != name || dims != slot.shape() {
            return Err(bad(&format!("`{line}` does not match {name} {:?}", slot.shape())));
        }
        let n = slot.len() * 8;
        if blob.len() < n {
            return Err(bad("truncated blob"));
        }
        for (dst, chunk) in slot.data_mut().iter_mut().zip(blob[..n].chunks_exact(8)) {
            *dst = T::c(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
        }
        blob = &blob[n..];
        Ok(())
    })?;
    if index.next().is_some() || !blob.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(net)
}

pub fn save_checkpoint<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    // write then rename, so a crash never leaves a half-written file
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, checkpoint_bytes(net)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Network<T>> {
    network_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
