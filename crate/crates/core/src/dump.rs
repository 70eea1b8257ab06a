//! Binary serialization of attention dumps.
//!
//! Layout, all integers little-endian:
//!   magic "LVAD" | version u32 | header length u32 | header JSON |
//!   f32 matrix payload in (sample, block, head, scale) order.
//!
//! The header carries the layout (schedule, depth, heads, sample count,
//! dtype), so every matrix shape is derivable and the payload needs no
//! per-matrix framing. Loads reject wrong magic, unknown versions,
//! non-f32 dtypes, and any size mismatch, including trailing bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::calibrate::AttentionDump;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::schedule::ScaleSchedule;

pub const DUMP_MAGIC: &[u8; 4] = b"LVAD";
pub const DUMP_VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct DumpHeader {
    schedule: ScaleSchedule,
    depth: usize,
    heads: usize,
    sample_count: usize,
    dtype: String,
}

/// Number of f32 values in one sample's worth of matrices.
fn sample_elems(schedule: &ScaleSchedule, depth: usize, heads: usize) -> Result<usize> {
    let mut per_lane = 0usize;
    for k in 1..=schedule.len() {
        per_lane += schedule.tokens_at(k)? * schedule.cum_tokens(k)?;
    }
    Ok(per_lane * depth * heads)
}

pub fn write_dump<W: Write>(mut w: W, dump: &AttentionDump) -> Result<()> {
    let header = DumpHeader {
        schedule: dump.schedule().clone(),
        depth: dump.depth(),
        heads: dump.heads(),
        sample_count: dump.sample_count(),
        dtype: "f32".into(),
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(DUMP_MAGIC)?;
    w.write_u32::<LittleEndian>(DUMP_VERSION)?;
    w.write_u32::<LittleEndian>(header_json.len() as u32)?;
    w.write_all(&header_json)?;
    for sample in dump.samples() {
        for block in sample {
            for head in block {
                for mat in head {
                    for &v in mat.data() {
                        w.write_f32::<LittleEndian>(v)?;
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn read_dump<R: Read>(mut r: R) -> Result<AttentionDump> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:02x?}, expected {:02x?}",
            magic, DUMP_MAGIC
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != DUMP_VERSION {
        return Err(Error::Format(format!(
            "dump version {version} unsupported, expected {DUMP_VERSION}"
        )));
    }
    let header_len = r.read_u32::<LittleEndian>()? as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: DumpHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| Error::Format(e.to_string()))?;
    if header.dtype != "f32" {
        return Err(Error::Format(format!("dtype {:?} unsupported", header.dtype)));
    }
    if header.sample_count == 0 {
        return Err(Error::Format("dump header declares zero samples".into()));
    }
    let total = header.sample_count * sample_elems(&header.schedule, header.depth, header.heads)?;
    let mut payload = vec![0f32; total];
    r.read_f32_into::<LittleEndian>(&mut payload)?;
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing)? {
        0 => {}
        _ => return Err(Error::Format("trailing bytes after dump payload".into())),
    }

    let mut off = 0usize;
    let mut mats = Vec::with_capacity(header.sample_count);
    for _ in 0..header.sample_count {
        let mut sample = Vec::with_capacity(header.depth);
        for _ in 0..header.depth {
            let mut block = Vec::with_capacity(header.heads);
            for _ in 0..header.heads {
                let mut head = Vec::with_capacity(header.schedule.len());
                for k in 1..=header.schedule.len() {
                    let rows = header.schedule.tokens_at(k)?;
                    let cols = header.schedule.cum_tokens(k)?;
                    let n = rows * cols;
                    head.push(Mat::from_vec(payload[off..off + n].to_vec(), rows, cols)?);
                    off += n;
                }
                block.push(head);
            }
            sample.push(block);
        }
        mats.push(sample);
    }
    AttentionDump::new(header.schedule, header.depth, header.heads, mats)
}

pub fn save_dump(path: &Path, dump: &AttentionDump) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_dump(&mut w, dump)?;
    w.flush()?;
    Ok(())
}

pub fn load_dump(path: &Path) -> Result<AttentionDump> {
    read_dump(BufReader::new(File::open(path)?))
}
