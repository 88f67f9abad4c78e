use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::params::ParameterSet;
use crate::tensor::Tensor;
use crate::{NdError, Result};

const MAGIC: &[u8; 4] = b"TLAB";
const VERSION: u32 = 1;

/// Write every parameter tensor, sorted by name, to `w`.
///
/// Only the values go to disk. Optimizer moments and the step counter are
/// deliberately left out: a loaded set starts with a fresh optimizer state.
pub fn write_params<W: Write>(ps: &ParameterSet, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for name in ps.names() {
        let t = ps.value(name).expect("name listed by the set");
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u64).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
        for dim in t.shape() {
            w.write_all(&(*dim as u64).to_le_bytes())?;
        }
        for v in t.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_params<P: AsRef<Path>>(ps: &ParameterSet, path: P) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(ps, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_exact_or_bad<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| NdError::BadFile(format!("truncated while reading {what}")))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or_bad(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

/// Read a parameter container back into a fresh set.
pub fn read_params<R: Read>(r: &mut R) -> Result<ParameterSet> {
    let mut magic = [0u8; 4];
    read_exact_or_bad(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(NdError::BadFile(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let mut ver = [0u8; 4];
    read_exact_or_bad(r, &mut ver, "version")?;
    let ver = u32::from_le_bytes(ver);
    if ver != VERSION {
        return Err(NdError::BadFile(format!(
            "unsupported container version {ver}"
        )));
    }

    let mut ps = ParameterSet::new();
    loop {
        // a clean EOF before a name length ends the stream.
        let mut len_buf = [0u8; 8];
        match r.read(&mut len_buf)? {
            0 => break,
            n if n < 8 => {
                read_exact_or_bad(r, &mut len_buf[n..], "name length")?;
            }
            _ => {}
        }
        let name_len = u64::from_le_bytes(len_buf) as usize;
        if name_len == 0 || name_len > 1 << 16 {
            return Err(NdError::BadFile(format!(
                "implausible name length {name_len}"
            )));
        }
        let mut name_bytes = vec![0u8; name_len];
        read_exact_or_bad(r, &mut name_bytes, "name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| NdError::BadFile("parameter name is not UTF-8".into()))?;

        let rank = read_u64(r, "rank")? as usize;
        if rank > 8 {
            return Err(NdError::BadFile(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = read_u64(r, "dimension")? as usize;
            count = count.checked_mul(d).ok_or_else(|| {
                NdError::BadFile("tensor element count overflows".into())
            })?;
            shape.push(d);
        }
        if count > 1 << 28 {
            return Err(NdError::BadFile(format!(
                "implausible element count {count}"
            )));
        }
        let mut values = Vec::with_capacity(count);
        let mut vb = [0u8; 8];
        for _ in 0..count {
            read_exact_or_bad(r, &mut vb, "tensor values")?;
            values.push(f64::from_le_bytes(vb));
        }
        let t = Tensor::from_vec(&shape, values)
            .map_err(|e| NdError::BadFile(format!("bad tensor for {name:?}: {e}")))?;
        ps.insert(&name, t)
            .map_err(|_| NdError::BadFile(format!("duplicate parameter {name:?}")))?;
    }
    Ok(ps)
}

pub fn load_params<P: AsRef<Path>>(path: P) -> Result<ParameterSet> {
    let mut r = BufReader::new(File::open(path)?);
    read_params(&mut r)
}
