use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::{Error, Result, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DSPDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub h_units: u32,
    pub input_dims: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub blocks: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let blocks: Vec<(String, &Tensor<f64>)> = self.blocks.iter().map(|(n, t)| (n.clone(), t)).collect();
        encode(&self.header, &blocks)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::domain("not a checkpoint file (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::domain(format!("unsupported checkpoint version {version}")));
        }
        let h_units = read_u32(&mut r)?;
        let n_dims = read_u32(&mut r)?;
        let input_dims = (0..n_dims).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let n_blocks = read_u32(&mut r)?;
        let mut blocks = Vec::with_capacity(n_blocks as usize);
        for _ in 0..n_blocks {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::domain("checkpoint block name is not utf-8"))?;
            let rank = read_u32(&mut r)?;
            let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| read_u64(&mut r).map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
            blocks.push((name, Tensor::from_vec(&shape, data)?));
        }
        if !r.is_empty() {
            return Err(Error::domain("trailing bytes after checkpoint blocks"));
        }
        Ok(Checkpoint { header: CheckpointHeader { h_units, input_dims }, blocks })
    }
}

fn encode<T: Scalar>(header: &CheckpointHeader, blocks: &[(String, &Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&header.h_units.to_le_bytes());
    out.extend_from_slice(&(header.input_dims.len() as u32).to_le_bytes());
    for d in &header.input_dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, t) in blocks {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_f64_bytes());
        }
    }
    out
}

/// Writes via a temporary sibling and a rename so readers never see a
/// partial file.
pub fn write_checkpoint<T: Scalar>(path: &Path, header: &CheckpointHeader, blocks: &[(String, &Tensor<T>)]) -> Result<()> {
    let bytes = encode(header, blocks);
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::domain("truncated checkpoint"))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LstmParams, Parameters};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = LstmParams::<f64>::uniform(3, 5, &mut rng);
        let header = CheckpointHeader { h_units: 5, input_dims: vec![3] };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        write_checkpoint(&path, &header, &p.blocks()).unwrap();
        let ck = read_checkpoint(&path).unwrap();
        assert_eq!(ck.header, header);
        let mut q = LstmParams::<f64>::zeros(3, 5);
        q.load_blocks("", &ck.blocks).unwrap();
        for ((_, a), (_, b)) in p.blocks().iter().zip(q.blocks()) {
            let bits_a: Vec<u64> = a.data().iter().map(|x| x.to_bits()).collect();
            let bits_b: Vec<u64> = b.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        assert_eq!(std::fs::read(&path).unwrap(), ck.to_bytes());
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(Checkpoint::from_bytes(b"nonsense").is_err());
        let ck =
            Checkpoint { header: CheckpointHeader { h_units: 1, input_dims: vec![2] }, blocks: vec![("b".into(), Tensor::zeros(&[3]))] };
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
    }

    #[test]
    fn missing_block_is_reported() {
        let mut q = LstmParams::<f64>::zeros(1, 1);
        assert!(q.load_blocks("net.", &[]).is_err());
    }
}
