//! Dense row-major `f64` tensors.
//!
//! Only rank 1 and rank 2 shapes are needed by the rest of the crate, but the
//! type carries an arbitrary shape so that flattened images and batches can
//! share one representation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim("tensor", format!("zero-sized axis in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    /// Rank-1 tensor owning `data`.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        assert!(n > 0, "zero-sized tensor");
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rows and columns of a rank-2 tensor. Rank-1 tensors read as a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => panic!("expected rank <= 2, got shape {other:?}"),
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Single row of a rank-2 tensor as a rank-1 tensor.
    pub fn row(&self, r: usize) -> Tensor {
        let (rows, cols) = self.dims2();
        assert!(r < rows, "row {r} out of {rows}");
        Tensor::vector(self.data[r * cols..(r + 1) * cols].to_vec())
    }

    /// Stacks equal-length vectors into a `rows x d` matrix.
    pub fn stack_rows(rows: &[&Tensor]) -> Result<Tensor> {
        let first = rows.first().ok_or_else(|| Error::dim("stack_rows", "no rows"))?;
        let d = first.len();
        let mut data = Vec::with_capacity(d * rows.len());
        for r in rows {
            if r.len() != d {
                return Err(Error::dim("stack_rows", format!("row length {} != {d}", r.len())));
            }
            data.extend_from_slice(&r.data);
        }
        Tensor::matrix(rows.len(), d, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn check_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same(other, "zip_map")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|a| a * k)
    }

    /// `self + k * other`
    pub fn axpy(&self, k: f64, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + k * b)
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.check_same(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = self.dims2();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data: out,
        }
    }
}

/// How an operand of [`gemm`] is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Layout {
    Normal,
    Transposed,
}

/// `op(a) * op(b)` for rank-2 (or rank-1 as a row) operands.
pub(crate) fn gemm(a: &Tensor, la: Layout, b: &Tensor, lb: Layout) -> Result<Tensor> {
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    let (m, k, rsa, csa) = match la {
        Layout::Normal => (ar, ac, ac as isize, 1),
        Layout::Transposed => (ac, ar, 1, ac as isize),
    };
    let (k2, n, rsb, csb) = match lb {
        Layout::Normal => (br, bc, bc as isize, 1),
        Layout::Transposed => (bc, br, 1, bc as isize),
    };
    if k != k2 {
        return Err(Error::dim("matmul", format!("inner dimensions {k} and {k2} differ")));
    }
    let mut out = vec![0.0; m * n];
    // SAFETY: the pointers and strides describe the live buffers above; the
    // output buffer holds exactly m*n elements in row-major order.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Tensor::matrix(m, n, out)
}

/// Standard matrix product of an `m x k` and a `k x n` tensor.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(Error::dim(
            "matmul",
            format!("expected rank-2 operands, got {:?} and {:?}", a.shape, b.shape),
        ));
    }
    gemm(a, Layout::Normal, b, Layout::Normal)
}

/// `a * v` for a square or rectangular matrix and a vector.
pub fn matvec(a: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (_, c) = a.dims2();
    if v.len() != c {
        return Err(Error::dim("matvec", format!("{c} columns vs {} entries", v.len())));
    }
    let col = Tensor::matrix(c, 1, v.data.clone())?;
    let out = gemm(a, Layout::Normal, &col, Layout::Normal)?;
    Ok(Tensor::vector(out.data))
}

/// `a^T * v`
pub fn matvec_t(a: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (r, _) = a.dims2();
    if v.len() != r {
        return Err(Error::dim("matvec_t", format!("{r} rows vs {} entries", v.len())));
    }
    let col = Tensor::matrix(r, 1, v.data.clone())?;
    let out = gemm(a, Layout::Transposed, &col, Layout::Normal)?;
    Ok(Tensor::vector(out.data))
}
