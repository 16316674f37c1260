//! Teacher feature files, `TFS1`: magic, `u32` width, `u32` count, then per
//! record a `u32`-length-prefixed UTF-8 sample id and `width` f32 values.
//!
//! The format carries no teacher name; [`read`] uses the file stem.

use std::path::Path;

use eventgait_core::static_stream::TeacherFeatureSet;

use super::{put_string, ByteReader};
use crate::error::{read_file, write_file, Error, Result};

pub const MAGIC: &[u8; 4] = b"TFS1";

pub fn encode(set: &TeacherFeatureSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(set.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    for (id, feature) in set.iter() {
        put_string(&mut out, id);
        for &v in feature {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], teacher: &str) -> Result<TeacherFeatureSet> {
    let mut r = ByteReader::new(bytes);
    r.magic(MAGIC)?;
    let dim = r.u32("feature width")? as usize;
    let count = r.u32("record count")?;
    let mut set = TeacherFeatureSet::new(dim, teacher);
    for _ in 0..count {
        let at = r.offset();
        let id = r.string("sample id")?;
        let feature = (0..dim)
            .map(|_| r.f32("feature value").map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        if set.get(&id).is_ok() {
            return Err(Error::format(at, format!("duplicate sample id '{id}'")));
        }
        set.insert(id, feature)?;
    }
    r.finish()?;
    Ok(set)
}

pub fn read(path: &Path) -> Result<TeacherFeatureSet> {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    decode(&read_file(path)?, &name)
}

pub fn write(path: &Path, set: &TeacherFeatureSet) -> Result<()> {
    write_file(path, &encode(set))
}
