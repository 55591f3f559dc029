//! Binary checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "IMARLCKP"
//! 8       4     format version, u32 LE (currently 1)
//! 12      4     descriptor length n, u32 LE
//! 16      n     NetworkSpec as UTF-8 JSON
//! 16+n    8     parameter count p, u64 LE
//! 24+n    4p    parameters, f32 LE, in layout order
//! ```
//!
//! The loader rebuilds the layout from the descriptor and rejects files whose
//! parameter count disagrees with it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::{NetworkSpec, ParamLayout, Parameters};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IMARLCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(out: &mut impl Write, spec: &NetworkSpec, params: &Parameters<f32>) -> Result<()> {
    if params.len() != ParamLayout::new(spec).total {
        return Err(Error::Checkpoint(format!(
            "{} parameters do not match the descriptor",
            params.len()
        )));
    }
    let descriptor = serde_json::to_vec(spec)?;
    let mut bytes = Vec::with_capacity(24 + descriptor.len() + 4 * params.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&descriptor);
    bytes.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes).map_err(|e| Error::io("<checkpoint>", e))
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<(NetworkSpec, Parameters<f32>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
    let mut cursor = Cursor { bytes: &bytes, at: 0 };
    if cursor.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize;
    let spec: NetworkSpec = serde_json::from_slice(cursor.take(len)?)
        .map_err(|e| Error::Checkpoint(format!("descriptor: {e}")))?;
    spec.validate()?;
    let count = u64::from_le_bytes(cursor.take(8)?.try_into().unwrap()) as usize;
    let layout = Arc::new(ParamLayout::new(&spec));
    if count != layout.total {
        return Err(Error::Checkpoint(format!(
            "descriptor needs {} parameters, file holds {count}",
            layout.total
        )));
    }
    let values: Vec<f32> = cursor
        .take(count.checked_mul(4).ok_or_else(|| Error::Checkpoint("count overflow".into()))?)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if cursor.at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok((spec, Parameters::from_values(layout, values)?))
}

pub fn save_checkpoint(path: &Path, spec: &NetworkSpec, params: &Parameters<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_checkpoint(&mut out, spec, params)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkSpec, Parameters<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Head, Network};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> (NetworkSpec, Parameters<f32>) {
        let mut spec = NetworkSpec::new(6, 8, 8, Head::Policy { actions: 4 });
        spec.conv_filters = 2;
        spec.dense_width = 5;
        let params = Network::new(spec).unwrap().init_params(&mut ChaCha8Rng::seed_from_u64(9));
        (spec, params)
    }

    #[test]
    fn round_trip_is_exact() {
        let (spec, params) = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &spec, &params).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let (spec2, params2) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(params.values, params2.values);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (spec, params) = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &spec, &params).unwrap();
        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(&mut &truncated[..]), Err(Error::Checkpoint(_))));
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(read_checkpoint(&mut bad_magic.as_slice()).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(&mut extra.as_slice()).is_err());
    }

    #[test]
    fn count_must_match_descriptor() {
        let (spec, params) = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &spec, &params).unwrap();
        let len = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
        let at = 16 + len;
        let wrong = (params.len() as u64 - 1).to_le_bytes();
        buf[at..at + 8].copy_from_slice(&wrong);
        buf.truncate(buf.len() - 4);
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(Error::Checkpoint(_))));
    }
}
