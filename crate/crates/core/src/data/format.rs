//! Dataset container.
//!
//! ```text
//! magic "HSTD" | u32 version | u64 instance_count
//! per instance:
//!   u64 n | u64 m | u64 query (u64::MAX when absent)
//!   f64 coords[n][2] | f64 features[n][m] | f64 targets[n]
//! ```
//!
//! Integers and floats are little-endian. The generating configuration, when known, is
//! written next to the file as pretty JSON with a `.json` suffix.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{Instance, SyntheticConfig};
use crate::quadtree::PointSet;
use crate::{HstError, Result};

const MAGIC: &[u8; 4] = b"HSTD";
pub const DATASET_VERSION: u32 = 1;
const NO_QUERY: u64 = u64::MAX;

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => HstError::Format("truncated dataset".into()),
        _ => HstError::Io(e),
    })?;
    Ok(buf)
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    (0..count).map(|_| Ok(f64::from_le_bytes(read_array(r)?))).collect()
}

fn to_usize(v: u64) -> Result<usize> {
    usize::try_from(v).map_err(|_| HstError::Format(format!("size {v} does not fit in memory")))
}

pub fn write_dataset(instances: &[Instance], mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(instances.len() as u64).to_le_bytes())?;
    for inst in instances {
        let p = &inst.points;
        w.write_all(&(p.len() as u64).to_le_bytes())?;
        w.write_all(&(p.feature_dim() as u64).to_le_bytes())?;
        w.write_all(&inst.query.map_or(NO_QUERY, |q| q as u64).to_le_bytes())?;
        for v in p.coords().iter().flatten().chain(p.features()).chain(p.targets()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(mut r: impl Read) -> Result<Vec<Instance>> {
    if &read_array::<4>(&mut r)? != MAGIC {
        return Err(HstError::Format("not a dataset file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != DATASET_VERSION {
        return Err(HstError::Version { found: version, expected: DATASET_VERSION });
    }
    let count = to_usize(read_u64(&mut r)?)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let n = to_usize(read_u64(&mut r)?)?;
        let m = to_usize(read_u64(&mut r)?)?;
        let q = read_u64(&mut r)?;
        let flat = read_f64s(&mut r, n * 2)?;
        let coords = flat.chunks(2).map(|c| [c[0], c[1]]).collect();
        let features = read_f64s(&mut r, n * m)?;
        let targets = read_f64s(&mut r, n)?;
        let points = PointSet::new(coords, features, m, targets)?;
        let query = if q == NO_QUERY { None } else { Some(to_usize(q)?) };
        if let Some(q) = query {
            if q >= n {
                return Err(HstError::Format(format!("query index {q} out of range for {n} points")));
            }
        }
        out.push(Instance { points, query });
    }
    Ok(out)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_dataset(path: impl AsRef<Path>, instances: &[Instance], config: Option<&SyntheticConfig>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path)?;
    write_dataset(instances, std::io::BufWriter::new(file))?;
    if let Some(cfg) = config {
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(cfg)? + "\n")?;
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Instance>> {
    let file = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(file))
}
