//! Byte-exact file formats.
//!
//! * **TSR1 tensor**: magic `TSR1`, `u32` LE rank (1..=8), `rank × u32` LE
//!   dims, then `f32` LE payload in row-major order. Trailing bytes are an
//!   error.
//! * **Weight container**: `u32` LE entry count, then per entry a `u16` LE
//!   name length, the UTF-8 name and an embedded TSR1 record. Entries are
//!   written in ascending name order so equal models give equal bytes.
//! * **RDM CSV**: `n` lines of `n` comma-separated decimals, each line
//!   terminated by `\n`. Values are written in shortest round-trip form.
//! * **History CSV**: header `epoch,stage,lr,mean_loss,seconds`.
//! * **LR curve CSV**: header `lr,smoothed_loss`.
//!
//! Decoders never trust a length field before checking the bytes are there,
//! so arbitrary input yields a value or a [`FormatError`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, FormatError, Result};
use crate::rsa::Rdm;
use crate::tensor::{Tensor, MAX_RANK};
use crate::train::{LrFindResult, TrainHistory};

pub const TENSOR_MAGIC: [u8; 4] = *b"TSR1";
pub const TENSOR_EXTENSION: &str = "tsr";

pub fn encode_tensor(t: &Tensor<f32>, out: &mut Vec<u8>) {
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated { needed: n, available });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn read_tensor(r: &mut Reader<'_>) -> Result<Tensor<f32>, FormatError> {
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != TENSOR_MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let rank = r.u32()?;
    if rank == 0 || rank as usize > MAX_RANK {
        return Err(FormatError::BadRank(rank));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut numel = 1usize;
    for _ in 0..rank {
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(FormatError::ZeroDim);
        }
        numel = numel.checked_mul(d).ok_or(FormatError::Overflow)?;
        shape.push(d);
    }
    let bytes = numel.checked_mul(4).ok_or(FormatError::Overflow)?;
    let payload = r.take(bytes)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Tensor::new(shape, data).expect("validated shape"))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor<f32>, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let t = read_tensor(&mut r)?;
    match r.remaining() {
        0 => Ok(t),
        n => Err(FormatError::TrailingBytes(n)),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let mut buf = Vec::new();
    encode_tensor(t, &mut buf);
    write_file(path.as_ref(), &buf)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    Ok(decode_tensor(&read_file(path.as_ref())?)?)
}

pub fn encode_weights(params: &BTreeMap<String, Tensor<f32>>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidArgument(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_tensor(t, &mut out);
    }
    Ok(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<BTreeMap<String, Tensor<f32>>, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let count = r.u32()?;
    let mut map = BTreeMap::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| FormatError::BadName)?.to_string();
        let t = read_tensor(&mut r)?;
        if map.contains_key(&name) {
            return Err(FormatError::DuplicateName(name));
        }
        map.insert(name, t);
    }
    match r.remaining() {
        0 => Ok(map),
        n => Err(FormatError::TrailingBytes(n)),
    }
}

pub fn save_weights(path: impl AsRef<Path>, params: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
    write_file(path.as_ref(), &encode_weights(params)?)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor<f32>>> {
    Ok(decode_weights(&read_file(path.as_ref())?)?)
}

/// Parses CSV text into an [`Rdm`] (validation per [`Rdm::from_rows`]).
pub fn parse_rdm_csv(bytes: &[u8]) -> Result<Rdm> {
    let text = std::str::from_utf8(bytes).map_err(|_| FormatError::NotText)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (ci, cell) in line.split(',').enumerate() {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| FormatError::NotNumeric {
                line: ln + 1,
                cell: ci + 1,
                text: cell.chars().take(32).collect(),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(FormatError::Ragged {
                    line: ln + 1,
                    expected: first.len(),
                    found: row.len(),
                }
                .into());
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(FormatError::NoRows.into());
    }
    if rows[0].len() != rows.len() {
        return Err(FormatError::Ragged {
            line: 1,
            expected: rows.len(),
            found: rows[0].len(),
        }
        .into());
    }
    Rdm::from_rows(&rows)
}

pub fn rdm_to_csv(rdm: &Rdm) -> String {
    let mut s = String::new();
    for i in 0..rdm.n() {
        for j in 0..rdm.n() {
            if j > 0 {
                s.push(',');
            }
            write!(s, "{}", rdm.get(i, j)).expect("string write");
        }
        s.push('\n');
    }
    s
}

pub fn load_rdm_csv(path: impl AsRef<Path>) -> Result<Rdm> {
    parse_rdm_csv(&read_file(path.as_ref())?)
}

pub fn write_rdm_csv(path: impl AsRef<Path>, rdm: &Rdm) -> Result<()> {
    write_file(path.as_ref(), rdm_to_csv(rdm).as_bytes())
}

/// With `include_seconds == false` the seconds column is written as `0`,
/// which keeps the file byte-reproducible.
pub fn history_to_csv(history: &TrainHistory, include_seconds: bool) -> String {
    let mut s = String::from("epoch,stage,lr,mean_loss,seconds\n");
    for r in &history.epochs {
        let secs = if include_seconds { r.seconds } else { 0.0 };
        writeln!(s, "{},{},{},{},{:.6}", r.epoch, r.stage, r.lr, r.mean_loss, secs).expect("string write");
    }
    s
}

pub fn write_history_csv(path: impl AsRef<Path>, history: &TrainHistory, include_seconds: bool) -> Result<()> {
    write_file(path.as_ref(), history_to_csv(history, include_seconds).as_bytes())
}

pub fn lr_curve_to_csv(result: &LrFindResult) -> String {
    let mut s = String::from("lr,smoothed_loss\n");
    for (lr, loss) in result.lrs.iter().zip(&result.smoothed_losses) {
        writeln!(s, "{lr},{loss}").expect("string write");
    }
    s
}

pub fn write_lr_curve_csv(path: impl AsRef<Path>, result: &LrFindResult) -> Result<()> {
    write_file(path.as_ref(), lr_curve_to_csv(result).as_bytes())
}

/// Every `*.tsr` file in `dir`, sorted by file name.
pub fn list_tensor_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == TENSOR_EXTENSION) && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads the image directory in file-name order. Images may be stored as
/// `[C, H, W]` or `[1, C, H, W]`; all are returned as `[C, H, W]`.
pub fn load_image_dir(dir: impl AsRef<Path>) -> Result<Vec<Tensor<f32>>> {
    let files = list_tensor_files(&dir)?;
    if files.is_empty() {
        return Err(Error::Empty("image directory has no .tsr files"));
    }
    let mut images = Vec::with_capacity(files.len());
    for f in &files {
        let t = load_tensor(f)?;
        let t = match t.shape() {
            [_, _, _] => t,
            [1, c, h, w] => t.reshape(vec![*c, *h, *w])?,
            s => {
                return Err(Error::shape(
                    "image",
                    format!("{} has shape {s:?}, expected [C, H, W]", f.display()),
                ))
            }
        };
        if let Some(first) = images.first() {
            let first: &Tensor<f32> = first;
            if first.shape() != t.shape() {
                return Err(Error::shape(
                    "image",
                    format!("{} has shape {:?}, others {:?}", f.display(), t.shape(), first.shape()),
                ));
            }
        }
        images.push(t);
    }
    Ok(images)
}

/// Writes images as `img_0000.tsr`, `img_0001.tsr`, ... so that file-name
/// order equals index order.
pub fn save_image_dir(dir: impl AsRef<Path>, images: &[Tensor<f32>]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, img) in images.iter().enumerate() {
        save_tensor(dir.join(format!("img_{i:04}.{TENSOR_EXTENSION}")), img)?;
    }
    Ok(())
}
