//! Binary cube and label containers plus the class-name sidecar.
//!
//! ```text
//! cube:   "HSIC" | version u16 | H u32 | W u32 | C u32 | H·W·C f32     (all LE, BIP)
//! labels: "HSIL" | version u16 | H u32 | W u32 |         H·W u16
//! names:  UTF-8 lines `<class id>=<name>`
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use s2daft_core::data::HsiCube;

use crate::error::{CliError, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"HSIC";
pub const LABEL_MAGIC: &[u8; 4] = b"HSIL";
pub const VERSION: u16 = 1;

/// Little-endian reader that reports the byte offset of every failure.
pub(crate) struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self { path, bytes, pos: 0 }
    }

    pub(crate) fn pos(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn err(&self, detail: impl Into<String>) -> CliError {
        CliError::format(self.path, self.pos as u64, detail)
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos))),
        }
    }

    pub(crate) fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != want {
            self.pos -= 4;
            return Err(self.err(format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(want))));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn version(&mut self) -> Result<()> {
        let v = self.u16("version")?;
        if v != VERSION {
            self.pos -= 2;
            return Err(self.err(format!("unsupported version {v}")));
        }
        Ok(())
    }

    /// `a · b · c`, failing on overflow.
    pub(crate) fn count(&self, dims: &[u32], elem: usize) -> Result<usize> {
        dims.iter()
            .try_fold(elem, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| self.err(format!("dimensions {dims:?} overflow")))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn dim(v: usize, path: &Path) -> Result<u32> {
    u32::try_from(v).map_err(|_| CliError::format(path, 0, format!("dimension {v} does not fit in u32")))
}

pub fn encode_cube(cube: &HsiCube, path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(18 + cube.reflectance().len() * 4);
    out.extend_from_slice(CUBE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [cube.height(), cube.width(), cube.bands()] {
        out.extend_from_slice(&dim(d, path)?.to_le_bytes());
    }
    for &v in cube.reflectance() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Reflectance only; labels come from a separate container.
pub fn decode_cube(bytes: &[u8], path: &Path, name: &str) -> Result<HsiCube> {
    let mut r = Reader::new(path, bytes);
    r.magic(CUBE_MAGIC)?;
    r.version()?;
    let (h, w, c) = (r.u32("height")?, r.u32("width")?, r.u32("bands")?);
    if h == 0 || w == 0 || c == 0 {
        return Err(r.err(format!("zero dimension in {h}x{w}x{c}")));
    }
    let n = r.count(&[h, w, c], 4)?;
    let payload = r.take(n, "reflectance payload")?;
    r.finish()?;
    let data: Vec<f64> = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(CliError::format(path, 18 + 4 * i as u64, "non-finite reflectance"));
    }
    Ok(HsiCube::new(name, h as usize, w as usize, c as usize, data, None)?)
}

pub fn encode_labels(cube: &HsiCube, path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(14 + cube.labels().len() * 2);
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [cube.height(), cube.width()] {
        out.extend_from_slice(&dim(d, path)?.to_le_bytes());
    }
    for &l in cube.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

/// Returns `(height, width, labels)`.
pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let mut r = Reader::new(path, bytes);
    r.magic(LABEL_MAGIC)?;
    r.version()?;
    let (h, w) = (r.u32("height")?, r.u32("width")?);
    let n = r.count(&[h, w], 2)?;
    let payload = r.take(n, "label payload")?;
    r.finish()?;
    let labels = payload.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
    Ok((h as usize, w as usize, labels))
}

pub fn save_cube(cube: &HsiCube, path: &Path) -> Result<()> {
    write(path, &encode_cube(cube, path)?)
}

pub fn save_labels(cube: &HsiCube, path: &Path) -> Result<()> {
    write(path, &encode_labels(cube, path)?)
}

pub fn encode_class_names(names: &[String]) -> String {
    names.iter().enumerate().map(|(i, n)| format!("{}={n}\n", i + 1)).collect()
}

/// Parses `id=name` lines; blank lines and `#` comments are skipped.
pub fn decode_class_names(text: &str, path: &Path) -> Result<Vec<String>> {
    let mut map = BTreeMap::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            let (k, v) = trimmed.split_once('=').ok_or_else(|| CliError::format(path, offset, "expected key=value"))?;
            let id: usize = k.trim().parse().map_err(|_| CliError::format(path, offset, format!("class id {k:?} is not a number")))?;
            if id == 0 {
                return Err(CliError::format(path, offset, "class ids start at 1"));
            }
            if map.insert(id, v.trim().to_string()).is_some() {
                return Err(CliError::format(path, offset, format!("duplicate class id {id}")));
            }
        }
        offset += line.len() as u64;
    }
    let n = map.keys().next_back().copied().unwrap_or(0);
    Ok((1..=n).map(|i| map.get(&i).cloned().unwrap_or_else(|| format!("class{i}"))).collect())
}

pub fn save_class_names(names: &[String], path: &Path) -> Result<()> {
    write(path, encode_class_names(names).as_bytes())
}

/// Loads a cube with optional labels and class-name sidecar. The cube's name
/// is the file stem.
pub fn load_cube(path: &Path, labels: Option<&Path>, names: Option<&Path>) -> Result<HsiCube> {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut cube = decode_cube(&read(path)?, path, &name)?;
    if let Some(lp) = labels {
        let (h, w, l) = decode_labels(&read(lp)?, lp)?;
        if (h, w) != (cube.height(), cube.width()) {
            return Err(CliError::format(lp, 6, format!("labels are {h}x{w}, cube is {}x{}", cube.height(), cube.width())));
        }
        cube = cube.with_labels(l)?;
    }
    if let Some(np) = names {
        let text = fs::read_to_string(np).map_err(|e| CliError::io(np, e))?;
        cube.class_names = decode_class_names(&text, np)?;
    }
    Ok(cube)
}
