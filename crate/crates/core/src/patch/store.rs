//! Append-only patch record files.
//!
//! One file per round:
//!
//! ```text
//! header : b"DIALPTCH1" | patch_size: u32 | round: i32
//! record : slide_id [u8; 64] | case_id [u8; 64] | center_x: i64 | center_y: i64
//!          | round: i32 | deformed: u8 | target_len: u32
//!          | img20, img10, img5 (raw RGB, patch_size² · 3 bytes each)
//!          | target (DIALMASK1 bytes, target_len long)
//! ```
//!
//! Ids are NUL-padded UTF-8. Everything up to the target has a fixed size;
//! the run-length target makes records variable, so a JSON sidecar index
//! (`<file>.index.json`) lists every record offset and, per class, the
//! offsets of records whose target contains that class.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PatchRecord;
use crate::class::NUM_CLASSES;
use crate::error::{DialError, Result};
use crate::mask::LabelMask;
use crate::raster::RgbImage;

pub const PATCH_STORE_MAGIC: &[u8; 9] = b"DIALPTCH1";
const ID_LEN: usize = 64;
const HEADER_LEN: usize = 9 + 4 + 4;
const RECORD_META_LEN: usize = ID_LEN * 2 + 8 + 8 + 4 + 1 + 4;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreIndex {
    pub offsets: Vec<u64>,
    pub by_class: BTreeMap<usize, Vec<u64>>,
}

pub struct PatchStore {
    path: PathBuf,
    patch_size: usize,
    round: i32,
    index: StoreIndex,
    len: u64,
}

fn put_id(buf: &mut Vec<u8>, id: &str) -> Result<()> {
    let bytes = id.as_bytes();
    if bytes.len() > ID_LEN {
        return Err(DialError::Format(format!(
            "id `{id}` longer than {ID_LEN} bytes"
        )));
    }
    buf.extend_from_slice(bytes);
    buf.resize(buf.len() + ID_LEN - bytes.len(), 0);
    Ok(())
}

fn get_id(bytes: &[u8]) -> Result<String> {
    let end = bytes.iter().position(|&b| b == 0).unwrap_or(bytes.len());
    String::from_utf8(bytes[..end].to_vec()).map_err(|e| DialError::Format(e.to_string()))
}

fn index_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".index.json");
    path.with_file_name(name)
}

impl PatchStore {
    /// Creates a new store file, or reopens an existing one for appending.
    pub fn open(path: impl Into<PathBuf>, patch_size: usize, round: i32) -> Result<PatchStore> {
        let path = path.into();
        if path.exists() {
            let store = PatchStore::read_header(&path)?;
            if store.patch_size != patch_size || store.round != round {
                return Err(DialError::Format(format!(
                    "{} holds round {} patches of size {}",
                    path.display(),
                    store.round,
                    store.patch_size
                )));
            }
            return Ok(store);
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| DialError::io(parent, e))?;
        }
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(PATCH_STORE_MAGIC);
        header.extend_from_slice(&(patch_size as u32).to_le_bytes());
        header.extend_from_slice(&round.to_le_bytes());
        fs::write(&path, &header).map_err(|e| DialError::io(&path, e))?;
        let store = PatchStore {
            path,
            patch_size,
            round,
            index: StoreIndex::default(),
            len: HEADER_LEN as u64,
        };
        store.write_index()?;
        Ok(store)
    }

    fn read_header(path: &Path) -> Result<PatchStore> {
        let bytes = fs::read(path).map_err(|e| DialError::io(path, e))?;
        if bytes.len() < HEADER_LEN || &bytes[..9] != PATCH_STORE_MAGIC {
            return Err(DialError::Format("missing DIALPTCH1 header".into()));
        }
        let patch_size = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let round = i32::from_le_bytes(bytes[13..17].try_into().unwrap());
        let idx = index_path(path);
        let index = match fs::read(&idx) {
            Ok(b) => serde_json::from_slice(&b)?,
            Err(_) => StoreIndex::default(),
        };
        Ok(PatchStore {
            path: path.to_path_buf(),
            patch_size,
            round,
            index,
            len: bytes.len() as u64,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn index(&self) -> &StoreIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.offsets.is_empty()
    }

    fn encode(&self, p: &PatchRecord) -> Result<Vec<u8>> {
        let n = self.patch_size;
        for img in [&p.img20, &p.img10, &p.img5] {
            if img.dims() != (n, n) {
                return Err(DialError::Shape(format!(
                    "patch image {:?} does not match store size {n}",
                    img.dims()
                )));
            }
        }
        if p.target.dims() != (n, n) {
            return Err(DialError::Shape("target does not match store size".into()));
        }
        let target = LabelMask::from_raster(p.slide_id.clone(), p.round, &p.target).encode();
        let mut buf = Vec::with_capacity(RECORD_META_LEN + 3 * n * n * 3 + target.len());
        put_id(&mut buf, &p.slide_id)?;
        put_id(&mut buf, &p.case_id)?;
        buf.extend_from_slice(&p.center.0.to_le_bytes());
        buf.extend_from_slice(&p.center.1.to_le_bytes());
        buf.extend_from_slice(&p.round.to_le_bytes());
        buf.push(p.deformed as u8);
        buf.extend_from_slice(&(target.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.img20.as_raw());
        buf.extend_from_slice(p.img10.as_raw());
        buf.extend_from_slice(p.img5.as_raw());
        buf.extend_from_slice(&target);
        Ok(buf)
    }

    pub fn append(&mut self, patches: &[PatchRecord]) -> Result<()> {
        let file = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| DialError::io(&self.path, e))?;
        let mut w = BufWriter::new(file);
        for p in patches {
            let rec = self.encode(p)?;
            let offset = self.len;
            w.write_all(&rec)
                .map_err(|e| DialError::io(&self.path, e))?;
            self.len += rec.len() as u64;
            self.index.offsets.push(offset);
            for (c, &n) in p.class_counts().iter().enumerate() {
                if n > 0 {
                    self.index.by_class.entry(c).or_default().push(offset);
                }
            }
        }
        w.flush().map_err(|e| DialError::io(&self.path, e))?;
        w.get_ref()
            .sync_all()
            .map_err(|e| DialError::io(&self.path, e))?;
        self.write_index()
    }

    fn write_index(&self) -> Result<()> {
        let idx = index_path(&self.path);
        fs::write(&idx, serde_json::to_vec(&self.index)?).map_err(|e| DialError::io(&idx, e))
    }

    fn decode_at(&self, bytes: &[u8], offset: usize) -> Result<(PatchRecord, usize)> {
        let n = self.patch_size;
        let img_len = n * n * 3;
        let meta_end = offset + RECORD_META_LEN;
        if bytes.len() < meta_end + 3 * img_len {
            return Err(DialError::Format(format!(
                "truncated record at offset {offset}"
            )));
        }
        let m = &bytes[offset..meta_end];
        let slide_id = get_id(&m[..ID_LEN])?;
        let case_id = get_id(&m[ID_LEN..2 * ID_LEN])?;
        let o = 2 * ID_LEN;
        let cx = i64::from_le_bytes(m[o..o + 8].try_into().unwrap());
        let cy = i64::from_le_bytes(m[o + 8..o + 16].try_into().unwrap());
        let round = i32::from_le_bytes(m[o + 16..o + 20].try_into().unwrap());
        let deformed = m[o + 20] != 0;
        let target_len = u32::from_le_bytes(m[o + 21..o + 25].try_into().unwrap()) as usize;
        let mut pos = meta_end;
        let mut img = || {
            let raw = bytes[pos..pos + img_len].to_vec();
            pos += img_len;
            RgbImage::from_raw(n, n, raw)
        };
        let (img20, img10, img5) = (img()?, img()?, img()?);
        let t_start = meta_end + 3 * img_len;
        if bytes.len() < t_start + target_len {
            return Err(DialError::Format(format!(
                "truncated target at offset {offset}"
            )));
        }
        let target = LabelMask::decode(&bytes[t_start..t_start + target_len], slide_id.clone())?;
        if target.dims() != (n, n) {
            return Err(DialError::Format("stored target has wrong size".into()));
        }
        let record = PatchRecord {
            slide_id,
            case_id,
            center: (cx, cy),
            img20,
            img10,
            img5,
            target: target.to_raster(),
            round,
            deformed,
        };
        Ok((record, t_start + target_len))
    }

    pub fn read_all(&self) -> Result<Vec<PatchRecord>> {
        let bytes = fs::read(&self.path).map_err(|e| DialError::io(&self.path, e))?;
        let mut out = Vec::new();
        let mut pos = HEADER_LEN;
        while pos < bytes.len() {
            let (rec, next) = self.decode_at(&bytes, pos)?;
            out.push(rec);
            pos = next;
        }
        Ok(out)
    }

    pub fn read_class(&self, class: usize) -> Result<Vec<PatchRecord>> {
        if class >= NUM_CLASSES {
            return Err(DialError::InvalidLabel(class as u8));
        }
        let bytes = fs::read(&self.path).map_err(|e| DialError::io(&self.path, e))?;
        self.index
            .by_class
            .get(&class)
            .into_iter()
            .flatten()
            .map(|&off| self.decode_at(&bytes, off as usize).map(|(r, _)| r))
            .collect()
    }

    pub fn open_existing(path: &Path) -> Result<PatchStore> {
        File::open(path).map_err(|e| DialError::io(path, e))?;
        PatchStore::read_header(path)
    }
}
