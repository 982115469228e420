//! Flat little-endian dataset files.
//!
//! Training file (`*.jsnc`):
//!
//! ```text
//! magic        5 bytes  "JSNC1"
//! n_samples    u64
//! dim          u32
//! n_id         u16      number of observable classes
//! n_ood        u16
//! per sample:  id u64, observed_label u16, dim × f32
//! ```
//!
//! Hidden tags sidecar (`*.tags`), written alongside but never read here:
//!
//! ```text
//! magic        5 bytes  "JSNC1"
//! n_samples    u64
//! per sample:  id u64, true_label u16, noise_kind u8 (0 clean, 1 ID, 2 OOD)
//! ```

use std::io::{Read, Write};

use super::{NoisyDataset, TrainSample, TrainSet};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"JSNC1";

fn to_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u16")))
}

pub fn write_training<W: Write>(data: &NoisyDataset, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(data.samples.len() as u64).to_le_bytes())?;
    let dim = u32::try_from(data.dim).map_err(|_| Error::Format("dim does not fit in u32".into()))?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&to_u16(data.n_id_classes, "n_id_classes")?.to_le_bytes())?;
    w.write_all(&to_u16(data.n_ood_classes, "n_ood_classes")?.to_le_bytes())?;
    for s in &data.samples {
        w.write_all(&s.id.to_le_bytes())?;
        w.write_all(&to_u16(s.observed_label, "observed_label")?.to_le_bytes())?;
        for v in &s.x {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_tags<W: Write>(data: &NoisyDataset, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(data.samples.len() as u64).to_le_bytes())?;
    for s in &data.samples {
        w.write_all(&s.id.to_le_bytes())?;
        w.write_all(&to_u16(s.true_label, "true_label")?.to_le_bytes())?;
        w.write_all(&[s.noise_kind.code()])?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_training<R: Read>(mut r: R) -> Result<TrainSet> {
    if &read_array::<5, _>(&mut r)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let n = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let dim = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let n_id = u16::from_le_bytes(read_array(&mut r)?) as usize;
    let _n_ood = u16::from_le_bytes(read_array(&mut r)?);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let id = u64::from_le_bytes(read_array(&mut r)?);
        let observed_label = u16::from_le_bytes(read_array(&mut r)?) as usize;
        if observed_label >= n_id {
            return Err(Error::Format(format!("sample {id}: label {observed_label} outside {n_id} classes")));
        }
        let mut x = Vec::with_capacity(dim);
        for _ in 0..dim {
            x.push(f32::from_le_bytes(read_array(&mut r)?));
        }
        samples.push(TrainSample { id, x, observed_label });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    Ok(TrainSet { samples, dim, num_classes: n_id })
}
