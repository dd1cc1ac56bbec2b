use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{MlpField, PromptId, VelocityField};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::rng::{standard_normal, stream, Stream};
use crate::tensor::Tensor;

/// One supervised editing pair: the editor should map `x_in` to `x_target`
/// when prompted with `prompt`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub x_in: Tensor,
    pub x_target: Tensor,
    pub prompt: PromptId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            hidden: vec![256, 256],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("bad hidden widths {:?}", self.hidden)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Minibatch loss before each update.
    pub losses: Vec<f64>,
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    fn new(lr: f64, params: &[Tensor]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((p, &g), (m, v)) in it {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Trains a fresh MLP field by rectified-flow matching: for random
/// `t ~ U[0,1)` and `z0 ~ N(0, I)` it regresses `v(z_t, t, c, x_in)` onto
/// `x_target - z0` at `z_t = (1 - t) z0 + t x_target`. The minibatch loss is
/// the squared error summed over pixels and averaged over the batch.
pub fn train_flow_matching(pairs: &[TrainingPair], cfg: &TrainConfig) -> Result<(VelocityField, TrainReport)> {
    cfg.validate()?;
    let first = pairs
        .first()
        .ok_or_else(|| Error::Config("training set is empty".into()))?;
    let dim = first.x_in.len();
    if pairs.iter().any(|p| p.x_in.len() != dim || p.x_target.len() != dim) {
        return Err(Error::dim("train_flow_matching", "inconsistent image sizes"));
    }

    let mut model = MlpField::init(dim, &cfg.hidden, &mut stream(cfg.seed, Stream::Init))?;
    let mut rng = stream(cfg.seed, Stream::Train);
    let mut adam = Adam::new(cfg.learning_rate, model.params());
    let mut losses = Vec::with_capacity(cfg.steps);
    let b = cfg.batch_size;

    for step in 0..cfg.steps {
        let mut z_rows = Vec::with_capacity(b);
        let mut x_rows = Vec::with_capacity(b);
        let mut targets = Vec::with_capacity(b * dim);
        let mut times = Vec::with_capacity(b);
        let mut prompts = Vec::with_capacity(b);
        for _ in 0..b {
            let pair = &pairs[rng.gen_range(0..pairs.len())];
            let t: f64 = rng.gen();
            let z0 = standard_normal(&mut rng, pair.x_target.shape());
            let zt = z0.scale(1.0 - t).axpy(t, &pair.x_target)?;
            targets.extend(pair.x_target.sub(&z0)?.into_data());
            z_rows.push(zt);
            x_rows.push(&pair.x_in);
            times.push(t);
            prompts.push(pair.prompt);
        }
        let z_refs: Vec<&Tensor> = z_rows.iter().collect();
        let (zs, xs, ps, ts) = model.batch_inputs(&z_refs, &times, &prompts, &x_rows)?;

        let tape = Tape::new();
        let params: Vec<_> = model.params().iter().map(|p| tape.leaf(p.clone())).collect();
        let pred = model.forward_vars(
            &params,
            tape.constant(zs),
            tape.constant(xs),
            tape.constant(ps),
            tape.constant(ts),
        )?;
        let target = tape.constant(Tensor::matrix(b, dim, targets)?);
        let loss = pred.sub(&target)?.square()?.sum()?.scale(1.0 / b as f64)?;
        let value = loss.value().data()[0];
        if !value.is_finite() {
            return Err(Error::Divergence { step, loss: value });
        }
        losses.push(value);

        let grads = tape.backward(loss, Tensor::scalar(1.0))?;
        let grads: Vec<Tensor> = params.iter().map(|&p| grads.wrt(p)).collect();
        adam.update(model.params_mut(), &grads);
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { step, loss: f64::NAN });
        }
    }

    Ok((VelocityField::Mlp(model), TrainReport { losses }))
}
