//! Dataset file format.
//!
//! Layout (integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  b"CDMDSET\0"
//! version      u32      1
//! preset_len   u32      followed by that many UTF-8 bytes
//! n_q          u32
//! t_w          u32      wrench rows per window
//! n_p          u32      point-set size used during duplication
//! count        u64      record count
//! per record:
//!   scenario_id u64
//!   t_ms        u32
//!   label       u8      0 single, 1 transition-dual, 2 steady-dual
//!   n_contacts  u8      1 or 2
//!   contacts    n_contacts × 3 f64
//!   r_first     3 f64
//!   wrench      t_w × (n_q + 6) f64
//!   q_now       n_q f64
//!   poses       n_q × 7 f64 (position, quaternion wxyz)
//! ```
//!
//! Duplicated point sets are reconstructed from the stored contacts on
//! load, so the round-trip is lossless while the file stays compact.

use super::{ContactState, DataPoint};
use crate::diffusion::ObservationWindow;
use crate::error::{CdmError, Result};
use crate::geom::Vec3;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"CDMDSET\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub preset: String,
    pub n_q: usize,
    pub t_w: usize,
    pub n_p: usize,
    pub count: u64,
}

impl DatasetHeader {
    /// Bytes per record for this header.
    pub fn record_size(&self, n_contacts: usize) -> usize {
        8 + 4 + 1 + 1
            + n_contacts * 24
            + 24
            + self.t_w * (self.n_q + 6) * 8
            + self.n_q * 8
            + self.n_q * 7 * 8
    }
}

pub fn write_dataset(
    points: &[DataPoint],
    preset: &str,
    n_q: usize,
    t_w: usize,
    n_p: usize,
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(preset.len() as u32).to_le_bytes())?;
    w.write_all(preset.as_bytes())?;
    w.write_all(&(n_q as u32).to_le_bytes())?;
    w.write_all(&(t_w as u32).to_le_bytes())?;
    w.write_all(&(n_p as u32).to_le_bytes())?;
    w.write_all(&(points.len() as u64).to_le_bytes())?;
    for p in points {
        if p.obs.t_w() != t_w || p.obs.q_now.len() != n_q {
            return Err(CdmError::InvalidArgument(
                "data point does not match dataset dimensions".into(),
            ));
        }
        w.write_all(&p.scenario_id.to_le_bytes())?;
        w.write_all(&p.t_ms.to_le_bytes())?;
        w.write_all(&[label_code(p.label), p.contacts_world.len() as u8])?;
        for c in &p.contacts_world {
            write_vec3(&mut w, *c)?;
        }
        write_vec3(&mut w, p.r_first)?;
        for row in &p.obs.wrench_rows {
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for v in &p.obs.q_now {
            w.write_all(&v.to_le_bytes())?;
        }
        for (pos, quat) in &p.obs.poses_now {
            for v in pos.iter().chain(quat.iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<DataPoint>)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| CdmError::CorruptHeader("file shorter than the magic".into()))?;
    if &magic != MAGIC {
        return Err(CdmError::CorruptHeader("bad magic".into()));
    }
    let version = read_u32(&mut r).map_err(|_| CdmError::CorruptHeader("missing version".into()))?;
    if version != VERSION {
        return Err(CdmError::VersionMismatch { found: version, expected: VERSION });
    }
    let preset_len =
        read_u32(&mut r).map_err(|_| CdmError::CorruptHeader("missing preset".into()))? as usize;
    if preset_len > 4096 {
        return Err(CdmError::CorruptHeader("preset name implausibly long".into()));
    }
    let mut preset_bytes = vec![0u8; preset_len];
    r.read_exact(&mut preset_bytes)
        .map_err(|_| CdmError::CorruptHeader("truncated preset name".into()))?;
    let preset = String::from_utf8(preset_bytes)
        .map_err(|_| CdmError::CorruptHeader("preset name is not UTF-8".into()))?;
    let n_q = read_u32(&mut r).map_err(|_| CdmError::CorruptHeader("missing n_q".into()))? as usize;
    let t_w = read_u32(&mut r).map_err(|_| CdmError::CorruptHeader("missing t_w".into()))? as usize;
    let n_p = read_u32(&mut r).map_err(|_| CdmError::CorruptHeader("missing n_p".into()))? as usize;
    let count = read_u64(&mut r).map_err(|_| CdmError::CorruptHeader("missing count".into()))?;

    let header = DatasetHeader { preset, n_q, t_w, n_p, count };
    let mut points = Vec::with_capacity(count as usize);
    for rec in 0..count {
        points.push(read_record(&mut r, &header, rec)?);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(CdmError::CorruptHeader("trailing bytes after the last record".into()));
    }
    Ok((header, points))
}

fn read_record(
    r: &mut impl Read,
    header: &DatasetHeader,
    rec: u64,
) -> Result<DataPoint> {
    let trunc = |what: &str| CdmError::TruncatedRecord(format!("record {rec}: {what}"));
    let scenario_id = read_u64(r).map_err(|_| trunc("scenario id"))?;
    let t_ms = read_u32(r).map_err(|_| trunc("window time"))?;
    let mut tag = [0u8; 2];
    r.read_exact(&mut tag).map_err(|_| trunc("label"))?;
    let label = match tag[0] {
        0 => ContactState::Single,
        1 => ContactState::TransitionDual,
        2 => ContactState::SteadyDual,
        other => {
            return Err(CdmError::TruncatedRecord(format!(
                "record {rec}: unknown label code {other}"
            )))
        }
    };
    let n_contacts = tag[1] as usize;
    if !(1..=2).contains(&n_contacts) {
        return Err(CdmError::TruncatedRecord(format!(
            "record {rec}: bad contact count {n_contacts}"
        )));
    }
    let mut contacts_world = Vec::with_capacity(n_contacts);
    for _ in 0..n_contacts {
        contacts_world.push(read_vec3(r).map_err(|_| trunc("contact point"))?);
    }
    let r_first = read_vec3(r).map_err(|_| trunc("first contact"))?;
    let dim = header.n_q + 6;
    let mut wrench_rows = Vec::with_capacity(header.t_w);
    for _ in 0..header.t_w {
        let mut row = vec![0.0f64; dim];
        read_f64s(r, &mut row).map_err(|_| trunc("wrench row"))?;
        wrench_rows.push(row);
    }
    let mut q_now = vec![0.0f64; header.n_q];
    read_f64s(r, &mut q_now).map_err(|_| trunc("joint vector"))?;
    let mut poses_now = Vec::with_capacity(header.n_q);
    for _ in 0..header.n_q {
        let mut buf = [0.0f64; 7];
        read_f64s(r, &mut buf).map_err(|_| trunc("link pose"))?;
        poses_now.push(([buf[0], buf[1], buf[2]], [buf[3], buf[4], buf[5], buf[6]]));
    }
    Ok(DataPoint {
        scenario_id,
        t_ms,
        label,
        contacts_world,
        r_first,
        obs: ObservationWindow { wrench_rows, q_now, poses_now },
    })
}

fn label_code(label: ContactState) -> u8 {
    match label {
        ContactState::Single => 0,
        ContactState::TransitionDual => 1,
        ContactState::SteadyDual => 2,
    }
}

fn write_vec3(w: &mut impl Write, v: Vec3) -> std::io::Result<()> {
    for c in v.to_array() {
        w.write_all(&c.to_le_bytes())?;
    }
    Ok(())
}

fn read_vec3(r: &mut impl Read) -> std::io::Result<Vec3> {
    let mut buf = [0.0f64; 3];
    read_f64s(r, &mut buf)?;
    Ok(Vec3::new(buf[0], buf[1], buf[2]))
}

fn read_f64s(r: &mut impl Read, out: &mut [f64]) -> std::io::Result<()> {
    let mut bytes = vec![0u8; out.len() * 8];
    r.read_exact(&mut bytes)?;
    for (v, c) in out.iter_mut().zip(bytes.chunks_exact(8)) {
        *v = f64::from_le_bytes(c.try_into().unwrap());
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
