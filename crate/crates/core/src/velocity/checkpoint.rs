//! Binary checkpoint format. All integers are little-endian `u64`, all reals
//! little-endian IEEE-754 `f64`, so a save/load round trip is bit-exact.
//!
//! ```text
//! magic        16 bytes  "FLOWSTEER-CKPT-1"
//! kind         u64       0 = trained-mlp, 1 = analytic-affine, 2 = analytic-constant
//! dim          u64       latent dimensionality d
//! -- trained-mlp --
//! prompt_dim   u64       (8)
//! time_dim     u64       (16)
//! n_hidden     u64
//! hidden       u64 * n_hidden
//! n_tensors    u64
//! tensor*      rank u64, dims u64 * rank, values f64 * prod(dims)
//! -- analytic-affine --
//! tensor A (d x d), tensor b (d), has_offset u64 (0/1), [tensor offset (d)]
//! -- analytic-constant --
//! tensor u (d)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{AffineField, ConstantField, MlpField, VelocityField, PROMPT_DIM, TIME_DIM};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 16] = b"FLOWSTEER-CKPT-1";

const KIND_MLP: u64 = 0;
const KIND_AFFINE: u64 = 1;
const KIND_CONSTANT: u64 = 2;

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    put_u64(out, t.shape().len() as u64);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> std::result::Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|e| e.to_string())
    }

    fn tensor(&mut self) -> std::result::Result<Tensor, String> {
        let rank = self.usize()?;
        if rank == 0 || rank > 4 {
            return Err(format!("unsupported tensor rank {rank}"));
        }
        let shape = (0..rank)
            .map(|_| self.usize())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= self.buf.len() - self.pos))
            .ok_or("tensor larger than file")?;
        let bytes = self.take(n * 8)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data).map_err(|e| e.to_string())
    }
}

pub fn write_checkpoint(field: &VelocityField, out: &mut impl Write) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    match field {
        VelocityField::Mlp(m) => {
            put_u64(&mut buf, KIND_MLP);
            put_u64(&mut buf, m.dim() as u64);
            put_u64(&mut buf, PROMPT_DIM as u64);
            put_u64(&mut buf, TIME_DIM as u64);
            put_u64(&mut buf, m.hidden().len() as u64);
            for &h in m.hidden() {
                put_u64(&mut buf, h as u64);
            }
            put_u64(&mut buf, m.params().len() as u64);
            for p in m.params() {
                put_tensor(&mut buf, p);
            }
        }
        VelocityField::Affine(f) => {
            put_u64(&mut buf, KIND_AFFINE);
            put_u64(&mut buf, f.b.len() as u64);
            put_tensor(&mut buf, &f.a);
            put_tensor(&mut buf, &f.b);
            match &f.edit_offset {
                Some(off) => {
                    put_u64(&mut buf, 1);
                    put_tensor(&mut buf, off);
                }
                None => put_u64(&mut buf, 0),
            }
        }
        VelocityField::Constant(f) => {
            put_u64(&mut buf, KIND_CONSTANT);
            put_u64(&mut buf, f.u.len() as u64);
            put_tensor(&mut buf, &f.u);
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

fn parse(buf: &[u8]) -> std::result::Result<VelocityField, String> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err("missing FLOWSTEER-CKPT-1 magic".into());
    }
    let kind = r.u64()?;
    let dim = r.usize()?;
    let field = match kind {
        KIND_MLP => {
            let prompt_dim = r.usize()?;
            let time_dim = r.usize()?;
            if prompt_dim != PROMPT_DIM || time_dim != TIME_DIM {
                return Err(format!(
                    "embedding widths {prompt_dim}/{time_dim} differ from {PROMPT_DIM}/{TIME_DIM}"
                ));
            }
            let n_hidden = r.usize()?;
            if n_hidden == 0 || n_hidden > 64 {
                return Err(format!("implausible hidden layer count {n_hidden}"));
            }
            let hidden = (0..n_hidden)
                .map(|_| r.usize())
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let n = r.usize()?;
            if n > 3 * n_hidden + 8 {
                return Err(format!("implausible tensor count {n}"));
            }
            let params = (0..n).map(|_| r.tensor()).collect::<std::result::Result<Vec<_>, _>>()?;
            VelocityField::Mlp(MlpField::from_parts(dim, hidden, params).map_err(|e| e.to_string())?)
        }
        KIND_AFFINE => {
            let a = r.tensor()?;
            let b = r.tensor()?;
            let edit_offset = match r.u64()? {
                0 => None,
                1 => Some(r.tensor()?),
                other => return Err(format!("bad offset flag {other}")),
            };
            if a.shape() != [dim, dim] || b.shape() != [dim] {
                return Err("affine tensor shapes disagree with dim".into());
            }
            if edit_offset.as_ref().is_some_and(|o| o.shape() != [dim]) {
                return Err("edit offset shape disagrees with dim".into());
            }
            VelocityField::Affine(AffineField { a, b, edit_offset })
        }
        KIND_CONSTANT => {
            let u = r.tensor()?;
            if u.shape() != [dim] {
                return Err("constant field shape disagrees with dim".into());
            }
            VelocityField::Constant(ConstantField { u })
        }
        other => return Err(format!("unknown field kind {other}")),
    };
    if r.pos != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - r.pos));
    }
    Ok(field)
}

pub fn read_checkpoint(input: &mut impl Read, origin: &Path) -> Result<VelocityField> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    parse(&buf).map_err(|reason| Error::Checkpoint {
        path: origin.to_path_buf(),
        reason,
    })
}

pub fn save_checkpoint(field: &VelocityField, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(field, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<VelocityField> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    read_checkpoint(&mut bytes.as_slice(), path)
}
