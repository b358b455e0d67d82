//! Binary containers for encoder checkpoints and group embeddings.
//!
//! All integers and floats are little-endian. A group-embedding file is a
//! concatenation of records:
//!
//! ```text
//! "ESGE" | version u8 | float width u8 | layers u32 | M u64 | d u64 | id_len u32 | id | M*d floats
//! ```
//!
//! A checkpoint is a single record:
//!
//! ```text
//! "ESCP" | version u8 | float width u8 | K u64 | d u64 | L u64 | eps | W_e | per layer:
//!     W_Q W_K W_V W_O gamma_q beta_q gamma_k beta_k gamma_v beta_v
//! ```

use std::path::Path;

use super::matrix::Matrix;
use super::{CaleLayer, CaleParams, GroupEmbeddings, LayerNormParams};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::scalar::Scalar;

pub const EMBEDDINGS_VERSION: u8 = 1;
pub const CHECKPOINT_VERSION: u8 = 1;

const EMBEDDINGS_MAGIC: &[u8; 4] = b"ESGE";
const CHECKPOINT_MAGIC: &[u8; 4] = b"ESCP";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::invalid(format!("truncated binary file at byte {} (need {n} more)", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::invalid("dimension does not fit in memory"))
    }

    fn scalar<T: Scalar>(&mut self) -> Result<T> {
        Ok(T::read_le(self.take(T::WIDTH as usize)?))
    }

    fn scalars<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let bytes = n
            .checked_mul(T::WIDTH as usize)
            .ok_or_else(|| Error::invalid("tensor size overflows"))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(T::WIDTH as usize)
            .map(T::read_le)
            .collect())
    }

    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize) -> Result<Matrix<T>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::invalid("tensor size overflows"))?;
        Ok(Matrix::from_vec(rows, cols, self.scalars(n)?))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn header<T: Scalar>(&mut self, magic: &[u8; 4], version: u8, what: &str) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::invalid(format!("not a {what} file (bad magic)")));
        }
        let v = self.u8()?;
        if v != version {
            return Err(Error::invalid(format!("unsupported {what} version {v}")));
        }
        let w = self.u8()?;
        if w != T::WIDTH {
            return Err(Error::invalid(format!(
                "{what} stores {}-byte floats, reader expects {}",
                w,
                T::WIDTH
            )));
        }
        Ok(())
    }
}

fn put_slice<T: Scalar>(out: &mut Vec<u8>, xs: &[T]) {
    for &x in xs {
        x.write_le(out);
    }
}

pub fn encode_group_embeddings<T: Scalar>(records: &[GroupEmbeddings<T>]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend_from_slice(EMBEDDINGS_MAGIC);
        out.push(EMBEDDINGS_VERSION);
        out.push(T::WIDTH);
        out.extend_from_slice(&(r.layers as u32).to_le_bytes());
        out.extend_from_slice(&(r.vectors.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(r.vectors.cols() as u64).to_le_bytes());
        out.extend_from_slice(&(r.id.len() as u32).to_le_bytes());
        out.extend_from_slice(r.id.as_bytes());
        put_slice(&mut out, r.vectors.as_slice());
    }
    out
}

pub fn decode_group_embeddings<T: Scalar>(bytes: &[u8]) -> Result<Vec<GroupEmbeddings<T>>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let mut records = Vec::new();
    while !r.done() {
        r.header::<T>(EMBEDDINGS_MAGIC, EMBEDDINGS_VERSION, "group-embedding")?;
        let layers = r.u32()? as usize;
        let m = r.u64()?;
        let d = r.u64()?;
        let id_len = r.u32()? as usize;
        let id = String::from_utf8(r.take(id_len)?.to_vec()).map_err(|_| Error::invalid("record id is not UTF-8"))?;
        let vectors = r.matrix(m, d)?;
        records.push(GroupEmbeddings { id, layers, vectors });
    }
    Ok(records)
}

pub fn write_group_embeddings<T: Scalar>(records: &[GroupEmbeddings<T>], path: impl AsRef<Path>) -> Result<()> {
    fsutil::atomic_write(path.as_ref(), &encode_group_embeddings(records))
}

pub fn read_group_embeddings<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<GroupEmbeddings<T>>> {
    let path = path.as_ref();
    decode_group_embeddings(&fsutil::read_bytes(path)?).map_err(|e| e.in_file(path))
}

pub fn encode_checkpoint<T: Scalar>(params: &CaleParams<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.push(T::WIDTH);
    for n in [params.vocab_size(), params.dim(), params.num_layers()] {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    params.eps.write_le(&mut out);
    put_slice(&mut out, params.embedding.as_slice());
    for layer in &params.layers {
        for t in layer.tensors() {
            put_slice(&mut out, t);
        }
    }
    out
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<CaleParams<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header::<T>(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
    let k = r.u64()?;
    let d = r.u64()?;
    let l = r.u64()?;
    let eps = r.scalar::<T>()?;
    let embedding = r.matrix(k, d)?;
    let mut layers = Vec::with_capacity(l.min(1024));
    for _ in 0..l {
        let w_q = r.matrix(d, d)?;
        let w_k = r.matrix(d, d)?;
        let w_v = r.matrix(d, d)?;
        let w_o = r.matrix(d, d)?;
        let mut ln = || -> Result<LayerNormParams<T>> {
            Ok(LayerNormParams {
                gamma: r.scalars(d)?,
                beta: r.scalars(d)?,
            })
        };
        let (ln_q, ln_k, ln_v) = (ln()?, ln()?, ln()?);
        layers.push(CaleLayer {
            w_q,
            w_k,
            w_v,
            w_o,
            ln_q,
            ln_k,
            ln_v,
        });
    }
    if !r.done() {
        return Err(Error::invalid("trailing bytes after checkpoint"));
    }
    let params = CaleParams { embedding, layers, eps };
    params.validate()?;
    Ok(params)
}

pub fn write_checkpoint<T: Scalar>(params: &CaleParams<T>, path: impl AsRef<Path>) -> Result<()> {
    fsutil::atomic_write(path.as_ref(), &encode_checkpoint(params))
}

pub fn read_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<CaleParams<T>> {
    let path = path.as_ref();
    decode_checkpoint(&fsutil::read_bytes(path)?).map_err(|e| e.in_file(path))
}
