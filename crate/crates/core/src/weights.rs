//! The SRW1 weights file format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SRW1"                      4 magic bytes
//! u32   tensor count
//! per tensor:
//!   u16   name length
//!   ...   UTF-8 name
//!   u8    rank
//!   u32 x rank   dims
//!   f32 x prod(dims)   values
//! ```
//!
//! Tensors are written in parameter order, which makes the file a
//! deterministic function of the trained model.

use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SRW1";

pub fn save_tensors(path: &Path, tensors: &[(String, &Tensor<f32>)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::invalid(format!("tensor name too long: {name}")));
        }
        w.write_all(&(name_bytes.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(name_bytes).map_err(io)?;
        w.write_all(&[tensor.rank() as u8]).map_err(io)?;
        for &d in tensor.dims() {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |message: String| Error::Codec {
        path: path.into(),
        message,
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}, expected \"SRW1\"")));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    let count = u32::from_le_bytes(u32buf) as usize;

    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf).map_err(|e| Error::io(path, e))?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(|e| Error::io(path, e))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| bad(format!("tensor {i}: name is not UTF-8")))?;
        let mut rank_buf = [0u8; 1];
        r.read_exact(&mut rank_buf).map_err(|e| Error::io(path, e))?;
        let rank = rank_buf[0] as usize;
        if rank == 0 || rank > 4 {
            return Err(bad(format!("tensor '{name}': rank {rank} out of range")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
            dims.push(u32::from_le_bytes(u32buf) as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = vec![0f32; len];
        for v in &mut data {
            r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
            *v = f32::from_le_bytes(u32buf);
        }
        out.push((name, Tensor::new(&dims, data).map_err(|e| bad(e.to_string()))?));
    }
    Ok(out)
}

/// Persist a network's parameters in declaration order.
pub fn save_network(path: &Path, net: &Network<f32>) -> Result<()> {
    let tensors: Vec<(String, &Tensor<f32>)> = net
        .params()
        .iter()
        .map(|p| (p.name.clone(), &p.value))
        .collect();
    save_tensors(path, &tensors)
}

/// Load parameters into an already-built network of the same architecture.
/// Every stored tensor must match a parameter by name and dims, and every
/// parameter must be covered.
pub fn load_into_network(path: &Path, net: &mut Network<f32>) -> Result<()> {
    let stored = load_tensors(path)?;
    if stored.len() != net.params().len() {
        return Err(Error::Codec {
            path: path.into(),
            message: format!(
                "file has {} tensors, network has {} parameters",
                stored.len(),
                net.params().len()
            ),
        });
    }
    for (name, tensor) in stored {
        let param = net
            .params_mut()
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Codec {
                path: path.into(),
                message: format!("no parameter named '{name}' in this architecture"),
            })?;
        if param.value.dims() != tensor.dims() {
            return Err(Error::Codec {
                path: path.into(),
                message: format!(
                    "parameter '{name}': stored dims {:?}, expected {:?}",
                    tensor.dims(),
                    param.value.dims()
                ),
            });
        }
        param.value = tensor;
    }
    Ok(())
}

/// Persist a whole model. Cascade stages are stored in the same file with
/// `stage1/` and `stage2/` name prefixes.
pub fn save_model(path: &Path, model: &crate::models::Model<f32>) -> Result<()> {
    let nets = model.networks();
    if nets.len() == 1 {
        return save_network(path, nets[0]);
    }
    let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::new();
    for (i, net) in nets.iter().enumerate() {
        for p in net.params() {
            tensors.push((format!("stage{}/{}", i + 1, p.name), &p.value));
        }
    }
    save_tensors(path, &tensors)
}

/// Load weights saved by [`save_model`] into a freshly built model of the
/// same spec.
pub fn load_model(path: &Path, model: &mut crate::models::Model<f32>) -> Result<()> {
    let mut nets = model.networks_mut();
    if nets.len() == 1 {
        return load_into_network(path, nets[0]);
    }
    let stored = load_tensors(path)?;
    let mut remaining = stored.len();
    for (i, net) in nets.iter_mut().enumerate() {
        let prefix = format!("stage{}/", i + 1);
        for (name, tensor) in &stored {
            if let Some(bare) = name.strip_prefix(&prefix) {
                let param = net
                    .params_mut()
                    .iter_mut()
                    .find(|p| p.name == bare)
                    .ok_or_else(|| Error::Codec {
                        path: path.into(),
                        message: format!("no parameter named '{bare}' in stage {}", i + 1),
                    })?;
                if param.value.dims() != tensor.dims() {
                    return Err(Error::Codec {
                        path: path.into(),
                        message: format!("parameter '{name}': dims mismatch"),
                    });
                }
                param.value = tensor.clone();
                remaining -= 1;
            }
        }
    }
    if remaining != 0 {
        return Err(Error::Codec {
            path: path.into(),
            message: format!("{remaining} stored tensors matched no stage parameter"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetBuilder;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.srw");
        let a = Tensor::<f32>::from_fn(&[2, 1, 3, 3], |i| (i as f32) * 0.125 - 0.7);
        let b = Tensor::<f32>::from_fn(&[2], |i| i as f32 + 0.5);
        save_tensors(&path, &[("conv.weight".into(), &a), ("conv.bias".into(), &b)]).unwrap();
        let loaded = load_tensors(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "conv.weight");
        assert_eq!(loaded[0].1, a);
        assert_eq!(loaded[1].1, b);
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.srw");
        let t = Tensor::<f32>::new(&[2], vec![1.0, -2.0]).unwrap();
        save_tensors(&path, &[("ab".into(), &t)]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut expect = Vec::new();
        expect.extend_from_slice(b"SRW1");
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u16.to_le_bytes());
        expect.extend_from_slice(b"ab");
        expect.push(1u8);
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1f32.to_le_bytes());
        expect.extend_from_slice(&(-2f32).to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn network_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.srw");
        let mut builder = NetBuilder::<f32>::new(5);
        let x = builder.input();
        let c = builder.conv(x, "c", 1, 2, 3, 1, 1);
        let p = builder.prelu(c, "p", 2);
        let net = builder.build(p);
        save_network(&path, &net).unwrap();

        let mut builder2 = NetBuilder::<f32>::new(99);
        let x2 = builder2.input();
        let c2 = builder2.conv(x2, "c", 1, 2, 3, 1, 1);
        let p2 = builder2.prelu(c2, "p", 2);
        let mut net2 = builder2.build(p2);
        load_into_network(&path, &mut net2).unwrap();
        for (a, b) in net.params().iter().zip(net2.params()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn cascade_model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cascade.srw");
        let spec = crate::models::ModelSpec::DbpnCascadeT {
            stages: 1,
            base: 2,
            feat: 4,
        };
        let trained: crate::models::Model<f32> = spec.build(11).unwrap();
        save_model(&path, &trained).unwrap();
        let mut fresh: crate::models::Model<f32> = spec.build(99).unwrap();
        load_model(&path, &mut fresh).unwrap();
        for (a, b) in trained.networks().iter().zip(fresh.networks()) {
            for (pa, pb) in a.params().iter().zip(b.params()) {
                assert_eq!(pa.value.data(), pb.value.data());
            }
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.srw");
        std::fs::write(&path, b"NOPE\x00\x00\x00\x00").unwrap();
        assert!(load_tensors(&path).is_err());
    }
}
