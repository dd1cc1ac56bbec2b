//! A small define-by-run tape.
//!
//! Every operation on a [`Var`] is evaluated eagerly and recorded. Reverse
//! sweeps give gradients and vector-Jacobian products; a forward sweep over
//! the same records pushes tangents through for exact Jacobian-vector
//! products.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Layout, Tensor};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// matrix plus a row vector broadcast over rows
    AddRow(usize, usize),
    Scale(usize, f64),
    Silu(usize),
    Tanh(usize),
    Sum(usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn add_row(m: &Tensor, row: &Tensor) -> Result<Tensor> {
    let (r, c) = m.dims2();
    if row.len() != c {
        return Err(Error::dim("add_row", format!("{c} columns vs bias of {}", row.len())));
    }
    let mut out = m.clone();
    for chunk in out.data_mut().chunks_mut(c) {
        for (o, b) in chunk.iter_mut().zip(row.data()) {
            *o += b;
        }
    }
    debug_assert_eq!(out.len(), r * c);
    Ok(out)
}

/// Sums the rows of `m`, shaped like `like`.
fn sum_rows(m: &Tensor, like: &Tensor) -> Tensor {
    let (_, c) = m.dims2();
    let mut acc = vec![0.0; c];
    for chunk in m.data().chunks(c) {
        for (a, x) in acc.iter_mut().zip(chunk) {
            *a += x;
        }
    }
    Tensor::new(like.shape().to_vec(), acc).expect("bias shape")
}

fn compute<'a>(op: &Op, v: impl Fn(usize) -> &'a Tensor) -> Result<Tensor> {
    match *op {
        Op::Leaf => unreachable!("leaves are not recomputed"),
        Op::MatMul(a, b) => gemm(v(a), Layout::Normal, v(b), Layout::Normal),
        Op::Add(a, b) => v(a).add(v(b)),
        Op::Sub(a, b) => v(a).sub(v(b)),
        Op::Mul(a, b) => v(a).mul(v(b)),
        Op::AddRow(a, b) => add_row(v(a), v(b)),
        Op::Scale(a, k) => Ok(v(a).scale(k)),
        Op::Silu(a) => Ok(v(a).map(|x| x * sigmoid(x))),
        Op::Tanh(a) => Ok(v(a).map(f64::tanh)),
        Op::Sum(a) => Ok(Tensor::scalar(v(a).sum())),
    }
}

fn operands(op: &Op) -> Vec<usize> {
    match *op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
            vec![a, b]
        }
        Op::Scale(a, _) | Op::Silu(a) | Op::Tanh(a) | Op::Sum(a) => vec![a],
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true)
    }

    /// Input that never receives an adjoint; reverse sweeps skip work for it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Tensor, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: Op::Leaf,
            value,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, op: Op) -> Result<Var<'_>> {
        let (value, needs_grad) = {
            let nodes = self.nodes.borrow();
            let needs = operands(&op).iter().any(|&i| nodes[i].needs_grad);
            (compute(&op, |i| &nodes[i].value)?, needs)
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value, needs_grad });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Recomputes every non-leaf node from the recorded leaves and returns all
    /// node values in recording order.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let nodes = self.nodes.borrow();
        let mut values: Vec<Tensor> = Vec::with_capacity(nodes.len());
        for node in nodes.iter() {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => compute(op, |i| &values[i])?,
            };
            values.push(value);
        }
        Ok(values)
    }

    pub fn recorded_values(&self) -> Vec<Tensor> {
        self.nodes.borrow().iter().map(|n| n.value.clone()).collect()
    }

    /// Reverse sweep from `output` seeded with `seed` (same shape as output).
    pub fn backward(&self, output: Var<'_>, seed: Tensor) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[output.id].value.shape() != seed.shape() {
            return Err(Error::dim(
                "backward",
                format!("seed {:?} vs output {:?}", seed.shape(), nodes[output.id].value.shape()),
            ));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.id + 1];
        adj[output.id] = Some(seed);

        let wants = |i: usize| nodes[i].needs_grad;
        fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
            match slot {
                Some(acc) => {
                    for (a, x) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += x;
                    }
                }
                None => *slot = Some(g),
            }
        }

        for id in (0..=output.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !nodes[id].needs_grad {
                continue;
            }
            let val = |i: usize| &nodes[i].value;
            match nodes[id].op {
                Op::Leaf => {
                    adj[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if wants(a) {
                        let ga = gemm(&g, Layout::Normal, val(b), Layout::Transposed)?;
                        accumulate(&mut adj[a], ga.reshape(val(a).shape().to_vec())?);
                    }
                    if wants(b) {
                        let gb = gemm(val(a), Layout::Transposed, &g, Layout::Normal)?;
                        accumulate(&mut adj[b], gb.reshape(val(b).shape().to_vec())?);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[a], g.clone());
                    accumulate(&mut adj[b], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj[b], g.scale(-1.0));
                    accumulate(&mut adj[a], g);
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(val(b))?;
                    let gb = g.mul(val(a))?;
                    accumulate(&mut adj[a], ga);
                    accumulate(&mut adj[b], gb);
                }
                Op::AddRow(a, b) => {
                    accumulate(&mut adj[b], sum_rows(&g, val(b)));
                    accumulate(&mut adj[a], g);
                }
                Op::Scale(a, k) => accumulate(&mut adj[a], g.scale(k)),
                Op::Silu(a) => {
                    let ga = g.zip_map(val(a), |g, x| g * silu_grad(x))?;
                    accumulate(&mut adj[a], ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&nodes[id].value, |g, y| g * (1.0 - y * y))?;
                    accumulate(&mut adj[a], ga);
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    accumulate(&mut adj[a], Tensor::full(val(a).shape(), s));
                }
            }
        }
        Ok(Gradients { adjoints: adj })
    }

    /// Forward sweep of tangents. `seeds` gives the tangent of selected
    /// leaves; every other leaf has zero tangent.
    pub fn tangent(&self, seeds: &[(Var<'_>, &Tensor)], output: Var<'_>) -> Result<Tensor> {
        let nodes = self.nodes.borrow();
        let mut tan: Vec<Option<Tensor>> = vec![None; output.id + 1];
        for (var, t) in seeds {
            if nodes[var.id].value.shape() != t.shape() {
                return Err(Error::dim(
                    "tangent",
                    format!("{:?} vs {:?}", t.shape(), nodes[var.id].value.shape()),
                ));
            }
            if var.id <= output.id {
                tan[var.id] = Some((*t).clone());
            }
        }
        for id in 0..=output.id {
            if tan[id].is_some() {
                continue;
            }
            let val = |i: usize| &nodes[i].value;
            let t = match nodes[id].op {
                Op::Leaf => None,
                Op::MatMul(a, b) => {
                    let left = match &tan[a] {
                        Some(ta) => Some(gemm(ta, Layout::Normal, val(b), Layout::Normal)?),
                        None => None,
                    };
                    let right = match &tan[b] {
                        Some(tb) => Some(gemm(val(a), Layout::Normal, tb, Layout::Normal)?),
                        None => None,
                    };
                    sum_opt(left, right)?
                }
                Op::Add(a, b) => sum_opt(tan[a].clone(), tan[b].clone())?,
                Op::Sub(a, b) => sum_opt(tan[a].clone(), tan[b].as_ref().map(|t| t.scale(-1.0)))?,
                Op::Mul(a, b) => {
                    let left = tan[a].as_ref().map(|ta| ta.mul(val(b))).transpose()?;
                    let right = tan[b].as_ref().map(|tb| val(a).mul(tb)).transpose()?;
                    sum_opt(left, right)?
                }
                Op::AddRow(a, b) => {
                    let from_b = tan[b]
                        .as_ref()
                        .map(|tb| add_row(&Tensor::zeros(val(a).shape()), tb))
                        .transpose()?;
                    sum_opt(tan[a].clone(), from_b)?
                }
                Op::Scale(a, k) => tan[a].as_ref().map(|t| t.scale(k)),
                Op::Silu(a) => tan[a]
                    .as_ref()
                    .map(|t| t.zip_map(val(a), |t, x| t * silu_grad(x)))
                    .transpose()?,
                Op::Tanh(a) => tan[a]
                    .as_ref()
                    .map(|t| t.zip_map(val(id), |t, y| t * (1.0 - y * y)))
                    .transpose()?,
                Op::Sum(a) => tan[a].as_ref().map(|t| Tensor::scalar(t.sum())),
            };
            tan[id] = t;
        }
        Ok(tan[output.id]
            .take()
            .unwrap_or_else(|| Tensor::zeros(nodes[output.id].value.shape())))
    }
}

fn sum_opt(a: Option<Tensor>, b: Option<Tensor>) -> Result<Option<Tensor>> {
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(a.add(&b)?),
        (a, None) => a,
        (None, b) => b,
    })
}

/// Adjoints from one reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `var`, zero-filled if `var` did not influence
    /// the output.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.adjoints.get(var.id).and_then(|a| a.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(var.value().shape()),
        }
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        self.tape.push(Op::MatMul(self.id, other.id))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        self.tape.push(Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        self.tape.push(Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        self.tape.push(Op::Mul(self.id, other.id))
    }

    pub fn add_row(&self, bias: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(bias);
        self.tape.push(Op::AddRow(self.id, bias.id))
    }

    pub fn scale(&self, k: f64) -> Result<Var<'t>> {
        self.tape.push(Op::Scale(self.id, k))
    }

    pub fn silu(&self) -> Result<Var<'t>> {
        self.tape.push(Op::Silu(self.id))
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.tape.push(Op::Tanh(self.id))
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        self.tape.push(Op::Sum(self.id))
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.mul(self)
    }
}

/// Gradient of a scalar-valued `f` at `x`.
pub fn grad<F>(f: F, x: &Tensor) -> Result<Tensor>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let input = tape.leaf(x.clone());
    let out = f(input)?;
    if out.value().len() != 1 {
        return Err(Error::Contract(format!(
            "grad needs a scalar output, got shape {:?}",
            out.shape()
        )));
    }
    let seed = Tensor::full(&out.shape(), 1.0);
    Ok(tape.backward(out, seed)?.wrt(input))
}

/// `(dg/dx) v`, exact, via a forward tangent sweep.
pub fn jvp<F>(g: F, x: &Tensor, v: &Tensor) -> Result<Tensor>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    if x.shape() != v.shape() {
        return Err(Error::dim("jvp", format!("{:?} vs {:?}", x.shape(), v.shape())));
    }
    let tape = Tape::new();
    let input = tape.leaf(x.clone());
    let out = g(input)?;
    tape.tangent(&[(input, v)], out)
}

/// `(dg/dx)^T w`
pub fn vjp<F>(g: F, x: &Tensor, w: &Tensor) -> Result<Tensor>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let input = tape.leaf(x.clone());
    let out = g(input)?;
    if out.shape() != w.shape() {
        return Err(Error::dim("vjp", format!("{:?} vs {:?}", w.shape(), out.shape())));
    }
    Ok(tape.backward(out, w.clone())?.wrt(input))
}
