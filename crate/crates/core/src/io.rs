//! On-disk formats: EMB1 embeddings, WHT1 transforms, STU1 student heads, labels CSV.
//!
//! All binary formats are little-endian. EMB1 stores 32-bit floats; the others
//! store 64-bit floats.

use std::fs;
use std::path::Path;

use crate::distill::StudentHead;
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::whitening::WhiteningTransform;

const EMB_MAGIC: &[u8; 4] = b"EMB1";
const WHT_MAGIC: &[u8; 4] = b"WHT1";
const STU_MAGIC: &[u8; 4] = b"STU1";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 4], what: &'static str) -> Result<Self> {
        if buf.len() < 4 || &buf[..4] != magic {
            return Err(Error::Format(format!(
                "{what}: expected magic {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(Self { buf, pos: 4, what })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| {
            Error::Format(format!(
                "{}: truncated at byte {} (need {n} more, have {})",
                self.what,
                self.pos,
                self.buf.len() - self.pos
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.overflow())?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.overflow())?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn overflow(&self) -> Error {
        Error::Format(format!("{}: size overflow", self.what))
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn dim_u32(n: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Format(format!("{what} {n} does not fit in u32")))
}

fn matrix(rows: usize, cols: usize, data: Vec<f64>, what: &str) -> Result<Matrix> {
    Matrix::from_vec(rows, cols, data).map_err(|e| Error::Format(format!("{what}: {e}")))
}

pub fn encode_emb(m: &Matrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 4 * m.as_slice().len());
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&dim_u32(m.rows(), "rows")?);
    out.extend_from_slice(&dim_u32(m.cols(), "cols")?);
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_emb(buf: &[u8]) -> Result<Matrix> {
    let mut r = Reader::new(buf, EMB_MAGIC, "EMB1")?;
    let rows = r.u32()?;
    let cols = r.u32()?;
    let n = rows.checked_mul(cols).ok_or_else(|| r.overflow())?;
    let data = r.f32s(n)?;
    r.finish()?;
    matrix(rows, cols, data, "EMB1")
}

pub fn encode_transform(t: &WhiteningTransform) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(WHT_MAGIC);
    out.extend_from_slice(&dim_u32(t.input_dim(), "n_t")?);
    out.extend_from_slice(&dim_u32(t.output_dim(), "n_c")?);
    out.extend_from_slice(&dim_u32(t.significant_count(), "s_sig")?);
    out.push(u8::from(t.warning()));
    let values = t
        .mean()
        .iter()
        .chain(t.projection().as_slice())
        .chain(t.spectrum());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_transform(buf: &[u8]) -> Result<WhiteningTransform> {
    let mut r = Reader::new(buf, WHT_MAGIC, "WHT1")?;
    let n_t = r.u32()?;
    let n_c = r.u32()?;
    let s_sig = r.u32()?;
    let warning = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("WHT1: bad warning flag {other}"))),
    };
    let mean = r.f64s(n_t)?;
    let w = r.f64s(n_c.checked_mul(n_t).ok_or_else(|| r.overflow())?)?;
    let spectrum = r.f64s(n_t)?;
    r.finish()?;
    let w = matrix(n_c, n_t, w, "WHT1")?;
    WhiteningTransform::from_parts(mean, w, spectrum, s_sig, warning)
        .map_err(|e| Error::Format(format!("WHT1: {e}")))
}

pub fn encode_student(h: &StudentHead) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(STU_MAGIC);
    out.extend_from_slice(&dim_u32(h.n_s(), "n_s")?);
    out.extend_from_slice(&dim_u32(h.n_base(), "n_base")?);
    for v in h.b.iter().chain(h.w.as_slice()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_student(buf: &[u8]) -> Result<StudentHead> {
    let mut r = Reader::new(buf, STU_MAGIC, "STU1")?;
    let n_s = r.u32()?;
    let n_base = r.u32()?;
    let b = r.f64s(n_s)?;
    let w = r.f64s(n_s.checked_mul(n_base).ok_or_else(|| r.overflow())?)?;
    r.finish()?;
    StudentHead::new(matrix(n_s, n_base, w, "STU1")?, b).map_err(|e| Error::Format(format!("STU1: {e}")))
}

pub fn encode_labels(labels: &[usize]) -> String {
    let mut out = String::from("id,label\n");
    for (i, l) in labels.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

pub fn decode_labels(text: &str) -> Result<Vec<usize>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("id,label") {
        return Err(Error::Format("labels.csv: expected header `id,label`".into()));
    }
    let mut labels = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("labels.csv: bad row {}: `{line}`", row + 1));
        let (id, label) = line.split_once(',').ok_or_else(bad)?;
        let id: usize = id.trim().parse().map_err(|_| bad())?;
        if id != labels.len() {
            return Err(Error::Format(format!(
                "labels.csv: id {id} out of order, expected {}",
                labels.len()
            )));
        }
        labels.push(label.trim().parse().map_err(|_| bad())?);
    }
    Ok(labels)
}

pub fn write_emb(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    Ok(fs::write(path, encode_emb(m)?)?)
}

pub fn read_emb(path: impl AsRef<Path>) -> Result<Matrix> {
    decode_emb(&fs::read(path)?)
}

pub fn write_transform(path: impl AsRef<Path>, t: &WhiteningTransform) -> Result<()> {
    Ok(fs::write(path, encode_transform(t)?)?)
}

pub fn read_transform(path: impl AsRef<Path>) -> Result<WhiteningTransform> {
    decode_transform(&fs::read(path)?)
}

pub fn write_student(path: impl AsRef<Path>, h: &StudentHead) -> Result<()> {
    Ok(fs::write(path, encode_student(h)?)?)
}

pub fn read_student(path: impl AsRef<Path>) -> Result<StudentHead> {
    decode_student(&fs::read(path)?)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    Ok(fs::write(path, encode_labels(labels))?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    decode_labels(&fs::read_to_string(path)?)
}
