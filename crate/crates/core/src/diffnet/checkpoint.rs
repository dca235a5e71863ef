//! Binary checkpoint format for parameter stores.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "LFFCKPT1"
//! u32 version (= 1)
//! str config snapshot (u32 length + utf8 bytes)
//! u32 counter count, then per counter: str name, u64 value
//! u32 store count, then per store:
//!   str id, u32 block count, then per block:
//!     str name, u64 rows, u64 cols, rows*cols f64 values, rows*cols f64 moments
//! ```
//!
//! Values and moments are raw f64 bits, so a save/load cycle is bitwise
//! exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::diffnet::param::ParamStore;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LFFCKPT1";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_text: String,
    pub counters: Vec<(String, u64)>,
    pub stores: Vec<ParamStore>,
}

impl Checkpoint {
    pub fn store(&self, id: &str) -> Result<&ParamStore> {
        self.stores
            .iter()
            .find(|s| s.id() == id)
            .ok_or_else(|| Error::Checkpoint(format!("missing store `{id}`")))
    }

    pub fn counter(&self, name: &str) -> Result<u64> {
        self.counters
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Checkpoint(format!("missing counter `{name}`")))
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(format!("bad utf8: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save(
    path: &Path,
    config_text: &str,
    counters: &[(String, u64)],
    stores: &[&ParamStore],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_str(&mut w, config_text)?;
    w.write_all(&(counters.len() as u32).to_le_bytes())?;
    for (name, value) in counters {
        write_str(&mut w, name)?;
        w.write_all(&value.to_le_bytes())?;
    }
    w.write_all(&(stores.len() as u32).to_le_bytes())?;
    for store in stores {
        write_str(&mut w, store.id())?;
        let blocks: Vec<_> = store.blocks().collect();
        w.write_all(&(blocks.len() as u32).to_le_bytes())?;
        for b in blocks {
            write_str(&mut w, &b.name)?;
            w.write_all(&(b.rows as u64).to_le_bytes())?;
            w.write_all(&(b.cols as u64).to_le_bytes())?;
            for v in &b.value {
                w.write_all(&v.to_le_bytes())?;
            }
            for m in &b.moment {
                w.write_all(&m.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".to_string()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config_text = read_str(&mut r)?;
    let n_counters = read_u32(&mut r)? as usize;
    let mut counters = Vec::with_capacity(n_counters);
    for _ in 0..n_counters {
        let name = read_str(&mut r)?;
        let value = read_u64(&mut r)?;
        counters.push((name, value));
    }
    let n_stores = read_u32(&mut r)? as usize;
    let mut stores = Vec::with_capacity(n_stores);
    for _ in 0..n_stores {
        let id = read_str(&mut r)?;
        let mut store = ParamStore::new(id);
        let n_blocks = read_u32(&mut r)? as usize;
        for _ in 0..n_blocks {
            let name = read_str(&mut r)?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let value = read_f64s(&mut r, rows * cols)?;
            let moment = read_f64s(&mut r, rows * cols)?;
            store.add(&name, rows, cols, value)?;
            store.block_mut(&name)?.moment = moment;
        }
        stores.push(store);
    }
    Ok(Checkpoint {
        config_text,
        counters,
        stores,
    })
}
