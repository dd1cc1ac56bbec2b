//! The local reconstruction objective behind the correction step and the
//! checks that relate it to the blend, the true one-step objective and the
//! prompt-conditioned target.
//!
//! With `Delta_i = t_N - t_i` and the empty-prompt velocity `u_i` held fixed,
//! the surrogate is `L(z) = ||X_in - (z + Delta_i u_i)||^2`. Its unique
//! minimiser is the correction target, the blend with strength `alpha` is a
//! gradient step of size `alpha / 2`, and one blend scales the loss by
//! exactly `(1 - alpha)^2`.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::standard_normal;
use crate::sampler::{blend, correction_target, LatentState, TimeGrid};
use crate::tensor::Tensor;
use crate::velocity::{PromptId, VelocityField};

/// Tolerances used by [`PropositionReport::passed`].
pub const MINIMIZER_TOL: f64 = 1e-18;
pub const UPDATE_TOL: f64 = 1e-10;
pub const CONTRACTION_TOL: f64 = 1e-9;
/// Relative tolerance on the quadratic-expansion identity around the minimiser.
pub const EXPANSION_TOL: f64 = 1e-9;
/// Additive slack on the Jacobian bound for the true gradient.
pub const BOUND_SLACK: f64 = 1e-4;
/// Power iterations used to estimate the Jacobian spectral norm.
pub const POWER_ITERATIONS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateEval {
    pub value: f64,
    pub gradient: Tensor,
    /// `t_N - t_i`
    pub remaining: f64,
    pub u: Tensor,
}

fn check_step(grid: &TimeGrid, i: usize) -> Result<()> {
    if i >= grid.steps() {
        return Err(Error::EndOfGrid { index: i });
    }
    Ok(())
}

/// Residual `z + Delta_i u - X_in`.
fn residual(z: &Tensor, x_in: &Tensor, grid: &TimeGrid, i: usize, u: &Tensor) -> Result<Tensor> {
    check_step(grid, i)?;
    z.axpy(grid.remaining(i), u)?.sub(x_in)
}

pub fn surrogate_value(z: &Tensor, x_in: &Tensor, grid: &TimeGrid, i: usize, u: &Tensor) -> Result<f64> {
    Ok(residual(z, x_in, grid, i, u)?.norm_sq())
}

pub fn surrogate_loss(z: &Tensor, x_in: &Tensor, grid: &TimeGrid, i: usize, u: &Tensor) -> Result<SurrogateEval> {
    let r = residual(z, x_in, grid, i, u)?;
    Ok(SurrogateEval {
        value: r.norm_sq(),
        gradient: r.scale(2.0),
        remaining: grid.remaining(i),
        u: u.clone(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrueObjectiveEval {
    pub value: f64,
    /// Gradient through the field, `2 (I + Delta_i J)^T r`.
    pub gradient: Tensor,
    pub surrogate: SurrogateEval,
}

/// `||X_in - (z + Delta_i v(z, t_i, empty, X_in))||^2` and its gradient with
/// the Jacobian term included.
pub fn true_loss(
    field: &VelocityField,
    z: &Tensor,
    x_in: &Tensor,
    grid: &TimeGrid,
    i: usize,
) -> Result<TrueObjectiveEval> {
    check_step(grid, i)?;
    let t = grid.t(i);
    let u = field.evaluate(z, t, PromptId::Empty, x_in)?;
    let surrogate = surrogate_loss(z, x_in, grid, i, &u)?;
    let jt_g = field.vjp_z(z, t, PromptId::Empty, x_in, &surrogate.gradient)?;
    let gradient = surrogate.gradient.axpy(grid.remaining(i), &jt_g)?;
    Ok(TrueObjectiveEval {
        value: surrogate.value,
        gradient,
        surrogate,
    })
}

/// Spectral norm of `dv/dz` under the empty prompt, by power iteration on
/// `J^T J` with Jacobian-vector and vector-Jacobian probes.
pub fn jacobian_spectral_norm(
    field: &VelocityField,
    z: &Tensor,
    t: f64,
    x_in: &Tensor,
    iterations: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut v = standard_normal(rng, z.shape());
    v = v.scale(1.0 / v.norm());
    let mut sigma = 0.0;
    for _ in 0..iterations.max(1) {
        let jv = field.jvp_z(z, t, PromptId::Empty, x_in, &v)?;
        sigma = jv.norm();
        let jtjv = field.vjp_z(z, t, PromptId::Empty, x_in, &jv)?;
        let n = jtjv.norm();
        if n == 0.0 {
            return Ok(0.0);
        }
        v = jtjv.scale(1.0 / n);
    }
    let jv = field.jvp_z(z, t, PromptId::Empty, x_in, &v)?;
    Ok(sigma.max(jv.norm()))
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientRelation {
    /// `||grad L_true - grad L_surrogate||`
    pub gap: f64,
    /// `Delta_i ||J_i|| ||grad L_surrogate||`
    pub bound: f64,
    pub jacobian_norm: f64,
    pub remaining: f64,
    pub holds: bool,
}

pub fn gradient_relation(
    field: &VelocityField,
    z: &Tensor,
    x_in: &Tensor,
    grid: &TimeGrid,
    i: usize,
    rng: &mut impl Rng,
) -> Result<GradientRelation> {
    let eval = true_loss(field, z, x_in, grid, i)?;
    let g_sur = &eval.surrogate.gradient;
    let gap = eval.gradient.sub(g_sur)?.norm();
    let jacobian_norm = jacobian_spectral_norm(field, z, grid.t(i), x_in, POWER_ITERATIONS, rng)?;
    let remaining = grid.remaining(i);
    let bound = remaining * jacobian_norm * g_sur.norm();
    Ok(GradientRelation {
        gap,
        bound,
        jacobian_norm,
        remaining,
        holds: gap <= bound + BOUND_SLACK,
    })
}

/// `v(z, t_i, c, X_in) - v(z, t_i, empty, X_in)`
pub fn prompt_delta(
    field: &VelocityField,
    z: &Tensor,
    grid: &TimeGrid,
    i: usize,
    c: PromptId,
    x_in: &Tensor,
) -> Result<Tensor> {
    check_step(grid, i)?;
    let (v_c, u) = field.evaluate_pair(z, grid.t(i), c, x_in)?;
    v_c.sub(&u)
}

#[derive(Clone, Debug, Serialize)]
pub struct DecompositionCheck {
    /// max |X_in - Delta v_c - (Z* - Delta delta)|
    pub residual: f64,
    pub delta_norm: f64,
}

/// Compares the prompt-conditioned target built directly with the empty
/// target shifted by the prompt delta.
pub fn decomposition_check(
    field: &VelocityField,
    z: &Tensor,
    grid: &TimeGrid,
    i: usize,
    c: PromptId,
    x_in: &Tensor,
) -> Result<DecompositionCheck> {
    check_step(grid, i)?;
    let (v_c, u) = field.evaluate_pair(z, grid.t(i), c, x_in)?;
    let direct = correction_target(x_in, grid, i, &v_c)?;
    let delta = v_c.sub(&u)?;
    let z_star = correction_target(x_in, grid, i, &u)?;
    let decomposed = z_star.axpy(-grid.remaining(i), &delta)?;
    Ok(DecompositionCheck {
        residual: direct.max_abs_diff(&decomposed)?,
        delta_norm: delta.norm(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PropositionReport {
    /// Surrogate value at the correction target.
    pub minimizer_value: f64,
    /// Smallest surrogate value seen at random perturbations of the target.
    pub perturbed_min_value: f64,
    /// Worst relative deviation of `L(Z* + e) - L(Z*)` from `||e||^2`.
    pub expansion_residual: f64,
    /// max |blend - (z - alpha/2 grad L(z))|
    pub update_residual: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    /// |L(after) / L(before) - (1 - alpha)^2|
    pub contraction_residual: f64,
    pub minimizer_ok: bool,
    pub update_ok: bool,
    pub contraction_ok: bool,
}

impl PropositionReport {
    pub fn passed(&self) -> bool {
        self.minimizer_ok && self.update_ok && self.contraction_ok
    }
}

/// Checks, at one state, that the correction target minimises the surrogate
/// uniquely, that the blend equals a gradient step of size `alpha / 2`, and
/// that one blend scales the surrogate by `(1 - alpha)^2`.
pub fn verify_propositions(
    field: &VelocityField,
    z: &Tensor,
    x_in: &Tensor,
    grid: &TimeGrid,
    i: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<PropositionReport> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    check_step(grid, i)?;
    let u = field.evaluate(z, grid.t(i), PromptId::Empty, x_in)?;
    let z_star = correction_target(x_in, grid, i, &u)?;
    let minimizer_value = surrogate_value(&z_star, x_in, grid, i, &u)?;

    let mut perturbed_min_value = f64::INFINITY;
    let mut expansion_residual: f64 = 0.0;
    for _ in 0..4 {
        let eps = standard_normal(rng, z.shape()).scale(1e-3);
        let value = surrogate_value(&z_star.add(&eps)?, x_in, grid, i, &u)?;
        perturbed_min_value = perturbed_min_value.min(value);
        let e2 = eps.norm_sq();
        expansion_residual = expansion_residual.max(((value - minimizer_value) - e2).abs() / e2);
    }

    let before = surrogate_loss(z, x_in, grid, i, &u)?;
    let blended = blend(&LatentState::new(z.clone(), i), &z_star, alpha)?.z;
    let step = z.axpy(-alpha / 2.0, &before.gradient)?;
    let update_residual = blended.max_abs_diff(&step)?;
    let loss_after = surrogate_value(&blended, x_in, grid, i, &u)?;
    let factor = (1.0 - alpha) * (1.0 - alpha);
    let contraction_residual = if before.value > 0.0 {
        (loss_after / before.value - factor).abs()
    } else {
        loss_after
    };

    Ok(PropositionReport {
        minimizer_value,
        perturbed_min_value,
        expansion_residual,
        update_residual,
        loss_before: before.value,
        loss_after,
        contraction_residual,
        minimizer_ok: minimizer_value < MINIMIZER_TOL
            && perturbed_min_value > minimizer_value
            && expansion_residual < EXPANSION_TOL,
        update_ok: update_residual < UPDATE_TOL,
        contraction_ok: contraction_residual < CONTRACTION_TOL,
    })
}
