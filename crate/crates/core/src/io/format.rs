//! `DCLS` scene files. All integers and floats are little-endian:
//!
//! ```text
//! "DCLS" | version u16 | rows u32 | cols u32 | classes u16
//! classes × (name_len u16 | name UTF-8)
//! rows·cols × 9 f64   pixel vectors, row-major
//! rows·cols × u16     labels, row-major, 0xFFFF = unlabeled
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{class_rgb_hex, DataError};
use crate::halpha::min_eigenvalue;
use crate::types::{vector_to_matrix, PixelVector, SceneDataset};

pub const SCENE_MAGIC: &[u8; 4] = b"DCLS";
pub const SCENE_VERSION: u16 = 1;

/// Ingestion tolerance on negative eigenvalues, relative to the trace.
const PSD_TOLERANCE: f64 = 1e-9;

pub fn write_scene<W: Write>(ds: &SceneDataset, mut w: W) -> Result<(), DataError> {
    if ds.rows() > u32::MAX as usize || ds.cols() > u32::MAX as usize {
        return Err(DataError::InvalidSpec("scene dimensions exceed u32".into()));
    }
    if ds.num_classes() >= u16::MAX as usize {
        return Err(DataError::InvalidSpec("too many classes".into()));
    }
    let mut buf = Vec::with_capacity(16 + ds.data().len() * 74);
    buf.extend_from_slice(SCENE_MAGIC);
    buf.extend_from_slice(&SCENE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ds.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.cols() as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.num_classes() as u16).to_le_bytes());
    for name in ds.class_names() {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(DataError::InvalidSpec(format!("class name too long: {name}")));
        }
        buf.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(bytes);
    }
    for t in ds.data() {
        for x in t.to_vector().0 {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    for l in ds.labels() {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn save_scene(ds: &SceneDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut buf = Vec::new();
    write_scene(ds, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneDataset, DataError> {
    read_scene(&fs::read(path)?)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DataError> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.buf.len() => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(DataError::Format {
                offset: self.pos,
                message: format!("truncated file while reading {what}"),
            }),
        }
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], DataError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

/// Parses a complete scene; nothing is returned unless every byte is valid.
pub fn read_scene(bytes: &[u8]) -> Result<SceneDataset, DataError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != SCENE_MAGIC {
        return Err(DataError::Format {
            offset: 0,
            message: format!("bad magic {:?}, expected \"DCLS\"", String::from_utf8_lossy(magic)),
        });
    }
    let version = u16::from_le_bytes(cur.array("version")?);
    if version != SCENE_VERSION {
        return Err(DataError::VersionMismatch { found: version, expected: SCENE_VERSION });
    }
    let rows = u32::from_le_bytes(cur.array("rows")?) as usize;
    let cols = u32::from_le_bytes(cur.array("cols")?) as usize;
    let classes = u16::from_le_bytes(cur.array("class count")?) as usize;
    let mut names = Vec::with_capacity(classes);
    for _ in 0..classes {
        let len = u16::from_le_bytes(cur.array("class name length")?) as usize;
        let at = cur.pos;
        let raw = cur.take(len, "class name")?;
        let name = std::str::from_utf8(raw).map_err(|e| DataError::Format {
            offset: at,
            message: format!("class name is not UTF-8: {e}"),
        })?;
        names.push(name.to_string());
    }
    let cells = rows.checked_mul(cols).ok_or(DataError::Format {
        offset: 6,
        message: "dimensions overflow".into(),
    })?;
    let pixel_bytes = cells.checked_mul(72).ok_or(DataError::Format {
        offset: 6,
        message: "dimensions overflow".into(),
    })?;
    let label_bytes = cells * 2;
    let expected_end = cur.pos + pixel_bytes + label_bytes;
    if bytes.len() < expected_end {
        return Err(DataError::Format {
            offset: bytes.len(),
            message: format!("truncated file: {} bytes, header implies {expected_end}", bytes.len()),
        });
    }
    let mut data = Vec::with_capacity(cells);
    let trace_scale = |t: f64| t.max(f64::MIN_POSITIVE);
    for _ in 0..cells {
        let at = cur.pos;
        let mut v = [0.0; 9];
        for x in v.iter_mut() {
            *x = f64::from_le_bytes(cur.array("pixel")?);
        }
        let t = vector_to_matrix(&PixelVector(v)).map_err(|e| DataError::Format {
            offset: at,
            message: format!("invalid pixel: {e}"),
        })?;
        let es = min_eigenvalue(&t).unwrap_or(f64::NEG_INFINITY);
        if es < -PSD_TOLERANCE * trace_scale(t.trace()) {
            return Err(DataError::Format {
                offset: at,
                message: format!("pixel is not positive semidefinite (min eigenvalue {es:e})"),
            });
        }
        data.push(t);
    }
    let mut labels = Vec::with_capacity(cells);
    for _ in 0..cells {
        let at = cur.pos;
        let l = u16::from_le_bytes(cur.array("label")?);
        if l != crate::types::UNLABELED && l as usize >= classes {
            return Err(DataError::Format {
                offset: at,
                message: format!("label {l} out of range for {classes} classes"),
            });
        }
        labels.push(l);
    }
    if cur.pos != bytes.len() {
        return Err(DataError::Format {
            offset: cur.pos,
            message: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    Ok(SceneDataset::new(rows, cols, data, labels, names)?)
}

/// `class_index,name,rgb_hex` rows.
pub fn write_legend_csv<W: Write>(class_names: &[String], mut w: W) -> std::io::Result<()> {
    writeln!(w, "class_index,name,rgb_hex")?;
    for (i, name) in class_names.iter().enumerate() {
        writeln!(w, "{i},{name},{}", class_rgb_hex(i))?;
    }
    Ok(())
}
