//! PTS binary dataset format.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic "PRSTDATA" | version u16 | T u16 | n_groups u16
//! n_groups x (name_len u8 | name | width u8 | kind u8 | temporality u8)
//! record_count u64 | stride u32
//! record_count x record
//! ```
//!
//! A record is `label u32 (u32::MAX = none) | start_month u8 | lat f32 |
//! lon f32 | tg f32 x2 | tg_present u8 | months u8 x T | continuous f32 x 15T |
//! dw u8 x T | presence bitset` where the bitset holds `9T` bits, timestep
//! major, LSB first.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::groups::{ChannelGroup, GroupKind, Temporality, DYNAMIC_CHANNELS, N_DYNAMIC_GROUPS};
use super::sample::{Dataset, PixelSample};
use super::DataError;
use crate::error::FormatError;
use crate::numcore::tensor_file::Cursor;

pub const MAGIC: &[u8; 8] = b"PRSTDATA";
pub const VERSION: u16 = 1;
const NO_LABEL: u32 = u32::MAX;

pub fn record_stride(t: usize) -> usize {
    4 + 1 + 4 + 4 + 8 + 1 + t + 4 * DYNAMIC_CHANNELS * t + t + (N_DYNAMIC_GROUPS * t).div_ceil(8)
}

fn group_table() -> Vec<u8> {
    let mut out = Vec::new();
    for g in ChannelGroup::ALL {
        let s = g.spec();
        out.push(s.name.len() as u8);
        out.extend_from_slice(s.name.as_bytes());
        out.push(s.width() as u8);
        out.push(match s.kind {
            GroupKind::Continuous => 0,
            GroupKind::Categorical => 1,
        });
        out.push(match s.temporality {
            Temporality::Dynamic => 0,
            Temporality::Static => 1,
        });
    }
    out
}

pub fn to_bytes(ds: &Dataset) -> Result<Vec<u8>, DataError> {
    let t = ds.timesteps().unwrap_or(0);
    if t > u16::MAX as usize {
        return Err(DataError::Invalid(format!("{t} timesteps do not fit the header")));
    }
    for (i, s) in ds.samples.iter().enumerate() {
        s.validate(false).map_err(|e| DataError::Invalid(format!("sample {i}: {e}")))?;
    }
    let stride = record_stride(t);
    let mut out = Vec::with_capacity(64 + ds.len() * stride);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u16).to_le_bytes());
    out.extend_from_slice(&(ChannelGroup::ALL.len() as u16).to_le_bytes());
    out.extend_from_slice(&group_table());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.extend_from_slice(&(stride as u32).to_le_bytes());
    for (s, label) in ds.samples.iter().zip(&ds.labels) {
        let start = out.len();
        let label = match label {
            Some(l) if *l == NO_LABEL => return Err(DataError::Invalid("label u32::MAX is reserved".into())),
            Some(l) => *l,
            None => NO_LABEL,
        };
        out.extend_from_slice(&label.to_le_bytes());
        out.push(s.start_month);
        out.extend_from_slice(&s.lat.to_le_bytes());
        out.extend_from_slice(&s.lon.to_le_bytes());
        for v in s.tg {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(s.tg_present as u8);
        out.extend_from_slice(&s.months);
        for row in &s.continuous {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&s.dw);
        let mut bits = vec![0u8; (N_DYNAMIC_GROUPS * t).div_ceil(8)];
        for (ti, p) in s.presence.iter().enumerate() {
            for (g, &on) in p.iter().enumerate() {
                if on {
                    let k = ti * N_DYNAMIC_GROUPS + g;
                    bits[k / 8] |= 1 << (k % 8);
                }
            }
        }
        out.extend_from_slice(&bits);
        debug_assert_eq!(out.len() - start, stride);
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Dataset, DataError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur.take(8, "magic")?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic { expected: *MAGIC, found: magic.to_vec() }.into());
    }
    let version = cur.u16("header")?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion { found: version, supported: VERSION }.into());
    }
    let t = cur.u16("header")? as usize;
    let n_groups = cur.u16("header")? as usize;
    let mut table = Vec::new();
    for _ in 0..n_groups {
        let len = cur.take(1, "group table")?[0] as usize;
        table.push(len as u8);
        table.extend_from_slice(cur.take(len + 3, "group table")?);
    }
    if table != group_table() {
        return Err(DataError::LayoutMismatch("group table differs from the built-in channel groups".into()));
    }
    let count = cur.u64("header")?;
    let stride = cur.u32("header")? as usize;
    if stride != record_stride(t) {
        return Err(FormatError::Corrupt(format!("record stride {stride} but T={t} implies {}", record_stride(t))).into());
    }
    let body = &bytes[cur.pos..];
    let complete = body.len() / stride;
    if (complete as u64) < count {
        return Err(FormatError::Truncated { record: complete as u64 }.into());
    }
    if body.len() as u64 != count * stride as u64 {
        return Err(FormatError::Corrupt(format!("{} trailing bytes", body.len() - count as usize * stride)).into());
    }
    let count = count as usize;
    let mut samples = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for (i, rec) in body.chunks_exact(stride).enumerate() {
        let (s, label) = decode_record(rec, t);
        s.validate(false).map_err(|e| FormatError::Corrupt(format!("record {i}: {e}")))?;
        samples.push(s);
        labels.push(label);
    }
    Dataset::new(samples, labels)
}

fn decode_record(rec: &[u8], t: usize) -> (PixelSample, Option<u32>) {
    let f32_at = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
    let label = u32::from_le_bytes(rec[0..4].try_into().unwrap());
    let start_month = rec[4];
    let lat = f32_at(5);
    let lon = f32_at(9);
    let tg = [f32_at(13), f32_at(17)];
    let tg_present = rec[21] != 0;
    let mut o = 22;
    let months = rec[o..o + t].to_vec();
    o += t;
    let mut continuous = vec![[0f32; DYNAMIC_CHANNELS]; t];
    for row in &mut continuous {
        for v in row.iter_mut() {
            *v = f32_at(o);
            o += 4;
        }
    }
    let dw = rec[o..o + t].to_vec();
    o += t;
    let bits = &rec[o..];
    let presence = (0..t)
        .map(|ti| {
            std::array::from_fn(|g| {
                let k = ti * N_DYNAMIC_GROUPS + g;
                bits[k / 8] >> (k % 8) & 1 == 1
            })
        })
        .collect();
    let sample = PixelSample { continuous, dw, tg, lat, lon, start_month, months, presence, tg_present };
    (sample, (label != NO_LABEL).then_some(label))
}

pub fn write_pts(path: impl AsRef<Path>, ds: &Dataset) -> Result<(), DataError> {
    let bytes = to_bytes(ds)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_pts(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
