//! Reader for the hidden-tag sidecar. Only the evaluator uses it; the
//! training path in the core crate has no way to load these files.

use std::collections::HashMap;
use std::io::Read;

use josnc_core::datagen::io::MAGIC;
use josnc_core::datagen::{NoiseKind, SampleTags};

use crate::error::HarnessError;

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N], HarnessError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| HarnessError::Format(format!("tags file truncated: {e}")))?;
    Ok(buf)
}

pub fn read_tags(mut r: impl Read) -> Result<Vec<SampleTags>, HarnessError> {
    if &take::<5>(&mut r)? != MAGIC {
        return Err(HarnessError::Format("tags file: bad magic".into()));
    }
    let n = u64::from_le_bytes(take(&mut r)?) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let id = u64::from_le_bytes(take(&mut r)?);
        let true_label = u16::from_le_bytes(take(&mut r)?) as usize;
        let [code] = take::<1>(&mut r)?;
        let noise_kind = NoiseKind::from_code(code)
            .ok_or_else(|| HarnessError::Format(format!("tags file: sample {id} has noise code {code}")))?;
        out.push(SampleTags { id, true_label, noise_kind });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| HarnessError::Format(e.to_string()))? != 0 {
        return Err(HarnessError::Format("tags file: trailing bytes".into()));
    }
    Ok(out)
}

pub fn tag_map(tags: &[SampleTags]) -> HashMap<u64, NoiseKind> {
    tags.iter().map(|t| (t.id, t.noise_kind)).collect()
}
