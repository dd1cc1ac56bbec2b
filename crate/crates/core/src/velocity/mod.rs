//! Conditional velocity fields `v(z, t, c, x_in)`.
//!
//! The trained MLP stands in for a pretrained editor. The analytic affine and
//! constant fields have closed-form Jacobians and are what the exact algebraic
//! tests run against.

mod checkpoint;
mod mlp;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matvec, matvec_t, Tensor};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};
pub use mlp::{MlpField, PROMPT_DIM, TIME_DIM};
pub use train::{train_flow_matching, TrainConfig, TrainReport, TrainingPair};

/// Prompt identifiers understood by the toy editor. `Empty` is the no-edit
/// prompt used for reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptId {
    Empty,
    EditTextRemoval,
    EditScreentone,
}

impl PromptId {
    pub const ALL: [PromptId; 3] = [PromptId::Empty, PromptId::EditTextRemoval, PromptId::EditScreentone];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            PromptId::Empty => 0,
            PromptId::EditTextRemoval => 1,
            PromptId::EditScreentone => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptId::Empty => "empty",
            PromptId::EditTextRemoval => "edit-text-removal",
            PromptId::EditScreentone => "edit-screentone",
        }
    }

    pub fn one_hot(self) -> Tensor {
        let mut t = Tensor::zeros(&[Self::COUNT]);
        t.data_mut()[self.index()] = 1.0;
        t
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown prompt {s:?}")))
    }
}

/// `v = A z + b`, plus `edit_offset` whenever the prompt is not empty.
/// Ignores `t` and `x_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineField {
    pub a: Tensor,
    pub b: Tensor,
    pub edit_offset: Option<Tensor>,
}

/// `v = u` everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantField {
    pub u: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum VelocityField {
    Mlp(MlpField),
    Affine(AffineField),
    Constant(ConstantField),
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

impl VelocityField {
    pub fn constant(u: Tensor) -> Self {
        VelocityField::Constant(ConstantField { u })
    }

    pub fn affine(a: Tensor, b: Tensor) -> Result<Self> {
        let d = b.len();
        if a.shape() != [d, d] {
            return Err(Error::dim(
                "affine field",
                format!("A is {:?}, b has {d} entries", a.shape()),
            ));
        }
        Ok(VelocityField::Affine(AffineField {
            a,
            b: Tensor::vector(b.into_data()),
            edit_offset: None,
        }))
    }

    /// Affine field whose non-empty prompts add `offset` to the velocity.
    pub fn affine_with_edit_offset(a: Tensor, b: Tensor, offset: Tensor) -> Result<Self> {
        let mut field = Self::affine(a, b)?;
        if let VelocityField::Affine(f) = &mut field {
            if offset.len() != f.b.len() {
                return Err(Error::dim("affine field", "edit offset length"));
            }
            f.edit_offset = Some(Tensor::vector(offset.into_data()));
        }
        Ok(field)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            VelocityField::Mlp(_) => "trained-mlp",
            VelocityField::Affine(_) => "analytic-affine",
            VelocityField::Constant(_) => "analytic-constant",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            VelocityField::Mlp(m) => m.dim(),
            VelocityField::Affine(a) => a.b.len(),
            VelocityField::Constant(c) => c.u.len(),
        }
    }

    fn check_inputs(&self, z: &Tensor, t: f64, x_in: &Tensor) -> Result<()> {
        check_time(t)?;
        let d = self.dim();
        if z.len() != d || x_in.len() != d {
            return Err(Error::dim(
                "evaluate",
                format!("field dim {d}, z {}, x_in {}", z.len(), x_in.len()),
            ));
        }
        Ok(())
    }

    pub fn evaluate(&self, z: &Tensor, t: f64, c: PromptId, x_in: &Tensor) -> Result<Tensor> {
        self.check_inputs(z, t, x_in)?;
        let v = match self {
            VelocityField::Mlp(m) => m.forward_batch(&[z], &[t], &[c], &[x_in])?.remove(0),
            VelocityField::Affine(f) => {
                let mut v = matvec(&f.a, z)?.add(&f.b)?;
                if let (Some(off), true) = (&f.edit_offset, c != PromptId::Empty) {
                    v = v.add(off)?;
                }
                v
            }
            VelocityField::Constant(f) => f.u.clone(),
        };
        Tensor::new(z.shape().to_vec(), v.into_data())
    }

    /// Prompt-conditioned and empty-prompt velocities from one batched call.
    pub fn evaluate_pair(&self, z: &Tensor, t: f64, c: PromptId, x_in: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_inputs(z, t, x_in)?;
        match self {
            VelocityField::Mlp(m) => {
                let mut out = m.forward_batch(&[z, z], &[t, t], &[c, PromptId::Empty], &[x_in, x_in])?;
                let v_empty = out.pop().expect("two rows");
                let v_c = out.pop().expect("two rows");
                Ok((
                    Tensor::new(z.shape().to_vec(), v_c.into_data())?,
                    Tensor::new(z.shape().to_vec(), v_empty.into_data())?,
                ))
            }
            _ => Ok((
                self.evaluate(z, t, c, x_in)?,
                self.evaluate(z, t, PromptId::Empty, x_in)?,
            )),
        }
    }

    /// `J w` where `J = dv/dz` at `(z, t, c, x_in)`.
    pub fn jvp_z(&self, z: &Tensor, t: f64, c: PromptId, x_in: &Tensor, w: &Tensor) -> Result<Tensor> {
        self.check_inputs(z, t, x_in)?;
        if w.len() != z.len() {
            return Err(Error::dim("jvp_z", "direction length"));
        }
        match self {
            VelocityField::Mlp(m) => m.jvp_z(z, t, c, x_in, w),
            VelocityField::Affine(f) => matvec(&f.a, w),
            VelocityField::Constant(_) => Ok(Tensor::zeros(z.shape())),
        }
    }

    /// `J^T w`
    pub fn vjp_z(&self, z: &Tensor, t: f64, c: PromptId, x_in: &Tensor, w: &Tensor) -> Result<Tensor> {
        self.check_inputs(z, t, x_in)?;
        if w.len() != z.len() {
            return Err(Error::dim("vjp_z", "cotangent length"));
        }
        match self {
            VelocityField::Mlp(m) => m.vjp_z(z, t, c, x_in, w),
            VelocityField::Affine(f) => matvec_t(&f.a, w),
            VelocityField::Constant(_) => Ok(Tensor::zeros(z.shape())),
        }
    }
}
