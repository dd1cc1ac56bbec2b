use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::PromptId;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Width of the learned per-prompt embedding.
pub const PROMPT_DIM: usize = 8;
/// Width of the sinusoidal time embedding (sin and cos of 8 frequencies).
pub const TIME_DIM: usize = 16;

/// MLP velocity field.
///
/// The first layer sees `[z | x_in | prompt embedding | time embedding]`,
/// realised as four matrix products summed into one pre-activation. Hidden
/// layers use SiLU; the output layer is linear with width `dim`. Two
/// time-dependent scalar gates, linear in the time embedding, add
/// `g_z(t) z + g_x(t) x_in` to the output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpField {
    dim: usize,
    hidden: Vec<usize>,
    /// Parameter tensors in [`MlpField::param_names`] order.
    params: Vec<Tensor>,
}

pub(crate) fn time_embedding(t: f64) -> [f64; TIME_DIM] {
    let mut out = [0.0; TIME_DIM];
    for k in 0..TIME_DIM / 2 {
        let w = std::f64::consts::PI * f64::from(1u32 << k);
        out[2 * k] = (w * t).sin();
        out[2 * k + 1] = (w * t).cos();
    }
    out
}

impl MlpField {
    /// Fresh parameters drawn with LeCun-normal scaling.
    pub fn init(dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config(format!(
                "invalid MLP shape: dim {dim}, hidden {hidden:?}"
            )));
        }
        let mut draw = |rows: usize, cols: usize, fan_in: usize| -> Tensor {
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
            let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
            Tensor::matrix(rows, cols, data).expect("shape")
        };
        let h0 = hidden[0];
        let fan_in = 2 * dim + PROMPT_DIM + TIME_DIM;
        let mut params = vec![
            draw(PromptId::COUNT, PROMPT_DIM, 1),
            draw(dim, h0, fan_in),
            draw(dim, h0, fan_in),
            draw(PROMPT_DIM, h0, fan_in),
            draw(TIME_DIM, h0, fan_in),
            Tensor::zeros(&[h0]),
        ];
        for pair in hidden.windows(2) {
            params.push(draw(pair[0], pair[1], pair[0]));
            params.push(Tensor::zeros(&[pair[1]]));
        }
        let last = *hidden.last().expect("nonempty");
        params.push(draw(last, dim, last));
        params.push(Tensor::zeros(&[dim]));
        params.push(Tensor::zeros(&[TIME_DIM, 2]));
        params.push(Tensor::zeros(&[2]));
        Ok(Self {
            dim,
            hidden: hidden.to_vec(),
            params,
        })
    }

    pub(crate) fn from_parts(dim: usize, hidden: Vec<usize>, params: Vec<Tensor>) -> Result<Self> {
        let shapes = Self::param_shapes(dim, &hidden);
        if shapes.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (want, got)) in shapes.iter().zip(&params).enumerate() {
            if want.as_slice() != got.shape() {
                return Err(Error::Config(format!(
                    "parameter {i}: expected shape {want:?}, got {:?}",
                    got.shape()
                )));
            }
        }
        Ok(Self { dim, hidden, params })
    }

    fn param_shapes(dim: usize, hidden: &[usize]) -> Vec<Vec<usize>> {
        let h0 = hidden[0];
        let mut shapes = vec![
            vec![PromptId::COUNT, PROMPT_DIM],
            vec![dim, h0],
            vec![dim, h0],
            vec![PROMPT_DIM, h0],
            vec![TIME_DIM, h0],
            vec![h0],
        ];
        for pair in hidden.windows(2) {
            shapes.push(vec![pair[0], pair[1]]);
            shapes.push(vec![pair[1]]);
        }
        shapes.push(vec![*hidden.last().expect("nonempty"), dim]);
        shapes.push(vec![dim]);
        shapes.push(vec![TIME_DIM, 2]);
        shapes.push(vec![2]);
        shapes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// The learned embedding vector of prompt `c`.
    pub fn prompt_embedding(&self, c: PromptId) -> Tensor {
        self.params[0].row(c.index())
    }

    /// Records the forward pass of a batch on `tape`, with `params` already
    /// placed on the tape (as leaves when training, constants otherwise).
    pub(crate) fn forward_vars<'t>(
        &self,
        params: &[Var<'t>],
        z: Var<'t>,
        x_in: Var<'t>,
        prompts: Var<'t>,
        times: Var<'t>,
    ) -> Result<Var<'t>> {
        let embed = prompts.matmul(&params[0])?;
        let mut h = z
            .matmul(&params[1])?
            .add(&x_in.matmul(&params[2])?)?
            .add(&embed.matmul(&params[3])?)?
            .add(&times.matmul(&params[4])?)?
            .add_row(&params[5])?
            .silu()?;
        let n_hidden = self.hidden.len() - 1;
        for layer in 0..n_hidden {
            let w = &params[6 + 2 * layer];
            let b = &params[7 + 2 * layer];
            h = h.matmul(w)?.add_row(b)?.silu()?;
        }
        let k = 6 + 2 * n_hidden;
        let out = h.matmul(&params[k])?.add_row(&params[k + 1])?;
        let gates = times.matmul(&params[k + 2])?.add_row(&params[k + 3])?;
        let tape = z.tape();
        let pick = |col: usize| -> Result<Var<'t>> {
            let mut sel = Tensor::zeros(&[2, self.dim]);
            sel.data_mut()[col * self.dim..(col + 1) * self.dim].fill(1.0);
            gates.matmul(&tape.constant(sel))
        };
        out.add(&pick(0)?.mul(&z)?)?.add(&pick(1)?.mul(&x_in)?)
    }

    /// Batch inputs as `(z, x_in, prompt one-hots, time embeddings)` matrices.
    pub(crate) fn batch_inputs(
        &self,
        z: &[&Tensor],
        t: &[f64],
        c: &[PromptId],
        x_in: &[&Tensor],
    ) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
        let n = z.len();
        if t.len() != n || c.len() != n || x_in.len() != n {
            return Err(Error::dim("mlp batch", "ragged batch"));
        }
        let zs = Tensor::stack_rows(z)?;
        let xs = Tensor::stack_rows(x_in)?;
        if zs.dims2().1 != self.dim || xs.dims2().1 != self.dim {
            return Err(Error::dim("mlp batch", format!("expected width {}", self.dim)));
        }
        let onehot: Vec<f64> = c.iter().flat_map(|p| p.one_hot().into_data()).collect();
        let temb: Vec<f64> = t.iter().flat_map(|&t| time_embedding(t)).collect();
        Ok((
            zs,
            xs,
            Tensor::matrix(n, PromptId::COUNT, onehot)?,
            Tensor::matrix(n, TIME_DIM, temb)?,
        ))
    }

    fn constants<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|p| tape.constant(p.clone())).collect()
    }

    /// One velocity per batch row.
    pub fn forward_batch(&self, z: &[&Tensor], t: &[f64], c: &[PromptId], x_in: &[&Tensor]) -> Result<Vec<Tensor>> {
        let (zs, xs, ps, ts) = self.batch_inputs(z, t, c, x_in)?;
        let tape = Tape::new();
        let params = self.constants(&tape);
        let out = self.forward_vars(
            &params,
            tape.constant(zs),
            tape.constant(xs),
            tape.constant(ps),
            tape.constant(ts),
        )?;
        let out = out.value();
        Ok((0..z.len()).map(|r| out.row(r)).collect())
    }

    fn single_on_tape<'t>(
        &self,
        tape: &'t Tape,
        z: &Tensor,
        t: f64,
        c: PromptId,
        x_in: &Tensor,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let (zs, xs, ps, ts) = self.batch_inputs(&[z], &[t], &[c], &[x_in])?;
        let params = self.constants(tape);
        let zv = tape.leaf(zs);
        let out = self.forward_vars(&params, zv, tape.constant(xs), tape.constant(ps), tape.constant(ts))?;
        Ok((zv, out))
    }

    pub fn jvp_z(&self, z: &Tensor, t: f64, c: PromptId, x_in: &Tensor, w: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let (zv, out) = self.single_on_tape(&tape, z, t, c, x_in)?;
        let dir = Tensor::matrix(1, self.dim, w.data().to_vec())?;
        let jw = tape.tangent(&[(zv, &dir)], out)?;
        Tensor::new(z.shape().to_vec(), jw.into_data())
    }

    pub fn vjp_z(&self, z: &Tensor, t: f64, c: PromptId, x_in: &Tensor, w: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let (zv, out) = self.single_on_tape(&tape, z, t, c, x_in)?;
        let seed = Tensor::matrix(1, self.dim, w.data().to_vec())?;
        let g = tape.backward(out, seed)?.wrt(zv);
        Tensor::new(z.shape().to_vec(), g.into_data())
    }
}
