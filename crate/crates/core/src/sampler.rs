//! Euler sampling with inference-time trajectory correction.
//!
//! For the first `M` steps the state is pulled toward a correction target
//! `Z*` before the Euler update:
//!
//! ```text
//! v  = v(Z_i, t_i, c, X_in)
//! u  = v(Z_i, t_i, empty, X_in)          (same minibatch as v)
//! Z* = X_in - (t_N - t_i) u
//! Z_i <- (1 - alpha) Z_i + alpha Z*
//! Z_{i+1} = Z_i + (t_{i+1} - t_i) v      (v from the unblended state)
//! ```
//!
//! The other corrector kinds swap the target (edit-prompt velocity, straight
//! noise-to-input path) or replace the blend by a steering term.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::surrogate;
use crate::tensor::Tensor;
use crate::velocity::{PromptId, VelocityField};

/// Discretisation `0 = t_0 < t_1 < ... < t_N = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        Ok(Self {
            times: (0..=n).map(|i| i as f64 / n as f64).collect(),
        })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 || *times.last().expect("nonempty") != 1.0 {
            return Err(Error::Config("time grid must start at 0 and end at 1".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("time grid must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn t(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `t_{i+1} - t_i`
    pub fn dt(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    /// `t_N - t_i`
    pub fn remaining(&self, i: usize) -> f64 {
        self.times[self.steps()] - self.times[i]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub z: Tensor,
    pub t_index: usize,
}

impl LatentState {
    pub fn new(z: Tensor, t_index: usize) -> Self {
        Self { z, t_index }
    }
}

/// Conditioning image, checked finite and within `[0, 1]` on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionImage(Tensor);

impl ConditionImage {
    pub fn new(x_in: Tensor) -> Result<Self> {
        if x_in.data().iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Domain("condition image must lie in [0, 1]".into()));
        }
        Ok(Self(x_in))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectorKind {
    None,
    EmptyPrompt,
    EditPrompt,
    StraightPath,
    FlowchefSteer,
}

impl CorrectorKind {
    pub const ALL: [CorrectorKind; 5] = [
        CorrectorKind::None,
        CorrectorKind::EmptyPrompt,
        CorrectorKind::EditPrompt,
        CorrectorKind::StraightPath,
        CorrectorKind::FlowchefSteer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorrectorKind::None => "none",
            CorrectorKind::EmptyPrompt => "empty-prompt",
            CorrectorKind::EditPrompt => "edit-prompt",
            CorrectorKind::StraightPath => "straight-path",
            CorrectorKind::FlowchefSteer => "flowchef",
        }
    }

    fn blends(self) -> bool {
        matches!(
            self,
            CorrectorKind::EmptyPrompt | CorrectorKind::EditPrompt | CorrectorKind::StraightPath
        )
    }
}

impl fmt::Display for CorrectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorrectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown corrector kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectorConfig {
    pub kind: CorrectorKind,
    /// Number of corrected steps.
    pub m: usize,
    /// Blend strength.
    pub alpha: f64,
    /// Steering step of the flowchef kind.
    pub s: f64,
    /// Start index on the straight noise-to-input path; 0 starts from noise.
    pub noise_inversion_i: usize,
    /// Re-evaluate the edit velocity after blending instead of reusing the
    /// pre-blend one.
    pub reevaluate_v: bool,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        Self {
            kind: CorrectorKind::EmptyPrompt,
            m: 3,
            alpha: 0.01,
            s: 0.005,
            noise_inversion_i: 0,
            reevaluate_v: false,
        }
    }
}

impl CorrectorConfig {
    pub fn baseline() -> Self {
        Self {
            kind: CorrectorKind::None,
            m: 0,
            ..Self::default()
        }
    }

    pub fn with_kind(kind: CorrectorKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        let n = grid.steps();
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Domain(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.m >= n {
            return Err(Error::Config(format!("M = {} must be below N = {n}", self.m)));
        }
        if self.noise_inversion_i >= n {
            return Err(Error::Config(format!(
                "noise inversion index {} must be below N = {n}",
                self.noise_inversion_i
            )));
        }
        if !self.s.is_finite() {
            return Err(Error::Config("steering step must be finite".into()));
        }
        Ok(())
    }
}

pub fn euler_step(state: &LatentState, grid: &TimeGrid, v: &Tensor) -> Result<LatentState> {
    let i = state.t_index;
    if i >= grid.steps() {
        return Err(Error::EndOfGrid { index: i });
    }
    Ok(LatentState {
        z: state.z.axpy(grid.dt(i), v)?,
        t_index: i + 1,
    })
}

/// One-step endpoint extrapolation `z + (t_N - t_i) u`.
pub fn endpoint_prediction(state: &LatentState, grid: &TimeGrid, u: &Tensor) -> Result<Tensor> {
    if state.t_index > grid.steps() {
        return Err(Error::EndOfGrid { index: state.t_index });
    }
    state.z.axpy(grid.remaining(state.t_index), u)
}

/// `X_in - (t_N - t_i) u`, the state whose endpoint extrapolation under `u`
/// lands exactly on `X_in`.
pub fn correction_target(x_in: &Tensor, grid: &TimeGrid, i: usize, u: &Tensor) -> Result<Tensor> {
    if i >= grid.steps() {
        return Err(Error::EndOfGrid { index: i });
    }
    x_in.axpy(-grid.remaining(i), u)
}

/// `(1 - alpha) z + alpha z*`
pub fn blend(state: &LatentState, z_star: &Tensor, alpha: f64) -> Result<LatentState> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(LatentState {
        z: state.z.zip_map(z_star, |z, s| (1.0 - alpha) * z + alpha * s)?,
        t_index: state.t_index,
    })
}

/// Euler step plus a steering term: `z + dt v_c - s * grad`, where `grad` is
/// the gradient of `||X_in - Z1_hat||^2` with respect to the endpoint
/// prediction.
pub fn flowchef_steer_step(
    state: &LatentState,
    grid: &TimeGrid,
    v_c: &Tensor,
    grad_endpoint_loss: &Tensor,
    s: f64,
) -> Result<LatentState> {
    let stepped = euler_step(state, grid, v_c)?;
    Ok(LatentState {
        z: stepped.z.axpy(-s, grad_endpoint_loss)?,
        t_index: stepped.t_index,
    })
}

/// Network and arithmetic work done by one call to [`sample`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleStats {
    /// Batched network calls.
    pub network_calls: usize,
    /// Of those, calls carrying both the edit and the empty prompt.
    pub dual_calls: usize,
    /// Batch rows evaluated with the sampling prompt.
    pub prompt_slots: usize,
    /// Batch rows evaluated with the empty prompt for correction.
    pub empty_slots: usize,
    pub blends: usize,
    /// Two multiplies and one add per element per blend.
    pub blend_flops: usize,
}

impl SampleStats {
    pub fn forward_slots(&self) -> usize {
        self.prompt_slots + self.empty_slots
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub index: usize,
    pub t: f64,
    pub z_before: Tensor,
    pub z_star: Option<Tensor>,
    /// State after correction, before the Euler update.
    pub z_after: Tensor,
    pub v: Tensor,
    /// Velocity used to build the target (empty prompt for the proposed
    /// corrector, the edit velocity for the edit-prompt ablation).
    pub u: Option<Tensor>,
    pub loss_before: Option<f64>,
    pub loss_after: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub steps: Vec<StepRecord>,
    pub final_state: Tensor,
    pub stats: SampleStats,
}

impl TrajectoryRecord {
    /// States `Z_{t_s}, ..., Z_{t_N}` where `s` is the start index
    /// (pre-correction at each step, then the output).
    pub fn states(&self) -> Vec<&Tensor> {
        self.steps
            .iter()
            .map(|s| &s.z_before)
            .chain(std::iter::once(&self.final_state))
            .collect()
    }

    /// JSON summary with per-step scalars; full state vectors only when
    /// `include_states` is set.
    pub fn to_json(&self, include_states: bool) -> Value {
        let steps: Vec<Value> = self
            .steps
            .iter()
            .map(|s| {
                let mut o = json!({
                    "index": s.index,
                    "t": s.t,
                    "corrected": s.z_star.is_some(),
                    "norm_z": s.z_before.norm(),
                    "norm_v": s.v.norm(),
                    "norm_u": s.u.as_ref().map(Tensor::norm),
                    "surrogate_before": s.loss_before,
                    "surrogate_after": s.loss_after,
                });
                if include_states {
                    o["z_before"] = json!(s.z_before.data());
                    o["z_after"] = json!(s.z_after.data());
                    o["z_star"] = json!(s.z_star.as_ref().map(Tensor::data));
                }
                o
            })
            .collect();
        let mut doc = json!({
            "steps": steps,
            "norm_final": self.final_state.norm(),
            "stats": self.stats,
        });
        if include_states {
            doc["final_state"] = json!(self.final_state.data());
        }
        doc
    }
}

fn ensure_finite(t: &Tensor, step: usize) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Trajectory { step })
    }
}

/// Runs the corrected Euler sampler from `z0` and returns `Z_{t_N}` with the
/// full trajectory record.
pub fn sample(
    field: &VelocityField,
    x_in: &ConditionImage,
    c: PromptId,
    grid: &TimeGrid,
    corr: &CorrectorConfig,
    z0: &Tensor,
) -> Result<(Tensor, TrajectoryRecord)> {
    corr.validate(grid)?;
    let x = x_in.tensor();
    if z0.shape() != x.shape() || z0.len() != field.dim() {
        return Err(Error::dim(
            "sample",
            format!("z0 {:?}, x_in {:?}, field dim {}", z0.shape(), x.shape(), field.dim()),
        ));
    }
    let n = grid.steps();
    let start = corr.noise_inversion_i;
    let mut state = if start > 0 {
        let ts = grid.t(start);
        LatentState::new(z0.scale(1.0 - ts).axpy(ts, x)?, start)
    } else {
        LatentState::new(z0.clone(), 0)
    };
    let mut stats = SampleStats::default();
    let mut steps = Vec::with_capacity(n - start);

    for i in start..n {
        let t = grid.t(i);
        let correcting = i < corr.m && corr.kind != CorrectorKind::None;
        let (mut v, u_empty) = if correcting && corr.kind == CorrectorKind::EmptyPrompt {
            let (v, u) = field.evaluate_pair(&state.z, t, c, x)?;
            stats.dual_calls += 1;
            stats.empty_slots += 1;
            (v, Some(u))
        } else {
            (field.evaluate(&state.z, t, c, x)?, None)
        };
        stats.network_calls += 1;
        stats.prompt_slots += 1;
        ensure_finite(&v, i)?;

        let z_before = state.z.clone();
        let mut record = StepRecord {
            index: i,
            t,
            z_before: z_before.clone(),
            z_star: None,
            z_after: z_before,
            v: v.clone(),
            u: None,
            loss_before: None,
            loss_after: None,
        };

        if correcting && corr.kind.blends() {
            let (z_star, u_ref) = match corr.kind {
                CorrectorKind::EmptyPrompt => {
                    let u = u_empty.expect("paired evaluation");
                    (correction_target(x, grid, i, &u)?, Some(u))
                }
                CorrectorKind::EditPrompt => (correction_target(x, grid, i, &v)?, Some(v.clone())),
                CorrectorKind::StraightPath => (z0.scale(1.0 - t).axpy(t, x)?, None),
                _ => unreachable!("blending kinds only"),
            };
            if let Some(u) = &u_ref {
                record.loss_before = Some(surrogate::surrogate_value(&state.z, x, grid, i, u)?);
            }
            state = blend(&state, &z_star, corr.alpha)?;
            stats.blends += 1;
            stats.blend_flops += 3 * state.z.len();
            if let Some(u) = &u_ref {
                record.loss_after = Some(surrogate::surrogate_value(&state.z, x, grid, i, u)?);
            }
            ensure_finite(&state.z, i)?;
            if corr.reevaluate_v {
                v = field.evaluate(&state.z, t, c, x)?;
                stats.network_calls += 1;
                stats.prompt_slots += 1;
                ensure_finite(&v, i)?;
            }
            record.z_star = Some(z_star);
            record.u = u_ref;
            record.z_after = state.z.clone();
        }

        state = if correcting && corr.kind == CorrectorKind::FlowchefSteer {
            let endpoint = endpoint_prediction(&state, grid, &v)?;
            let grad = endpoint.sub(x)?.scale(2.0);
            record.loss_before = Some(endpoint.sub(x)?.norm_sq());
            flowchef_steer_step(&state, grid, &v, &grad, corr.s)?
        } else {
            euler_step(&state, grid, &v)?
        };
        ensure_finite(&state.z, i)?;
        steps.push(record);
    }

    let out = state.z.clone();
    Ok((
        out.clone(),
        TrajectoryRecord {
            steps,
            final_state: out,
            stats,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, stream, Stream};

    fn v(xs: &[f64]) -> Tensor {
        Tensor::vector(xs.to_vec())
    }

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::uniform(n).unwrap()
    }

    #[test]
    fn grid_invariants() {
        let g = grid(20);
        assert_eq!(g.t(0), 0.0);
        assert_eq!(g.t(20), 1.0);
        assert_eq!(g.remaining(20), 0.0);
        assert!(g.times().windows(2).all(|w| w[1] > w[0]));
        assert!(TimeGrid::from_times(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::from_times(vec![0.1, 1.0]).is_err());
        assert!(TimeGrid::uniform(0).is_err());
    }

    #[test]
    fn euler_with_zero_velocity() {
        let s = LatentState::new(v(&[1.0, -2.0]), 3);
        let next = euler_step(&s, &grid(10), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(next.z, s.z);
        assert_eq!(next.t_index, 4);
    }

    #[test]
    fn euler_arithmetic() {
        let s = LatentState::new(v(&[0.0]), 0);
        let next = euler_step(&s, &grid(2), &v(&[2.0])).unwrap();
        assert_eq!(next.z.data(), &[1.0]);
    }

    #[test]
    fn euler_past_the_end() {
        let s = LatentState::new(v(&[0.0]), 4);
        assert!(matches!(
            euler_step(&s, &grid(4), &v(&[1.0])),
            Err(Error::EndOfGrid { index: 4 })
        ));
    }

    #[test]
    fn euler_telescopes_for_constant_velocity() {
        let g = grid(20);
        let u = v(&[0.3, -1.7, 2.5]);
        let mut s = LatentState::new(v(&[1.0, 2.0, 3.0]), 0);
        while s.t_index < g.steps() {
            s = euler_step(&s, &g, &u).unwrap();
        }
        let want = v(&[1.3, 0.3, 5.5]);
        assert!(s.z.max_abs_diff(&want).unwrap() < 1e-14);
    }

    #[test]
    fn endpoint_at_final_time_is_identity() {
        let s = LatentState::new(v(&[0.4, 0.6]), 5);
        assert_eq!(endpoint_prediction(&s, &grid(5), &v(&[9.0, 9.0])).unwrap(), s.z);
    }

    #[test]
    fn endpoint_arithmetic() {
        let s = LatentState::new(v(&[1.0, 2.0]), 0);
        assert_eq!(
            endpoint_prediction(&s, &grid(4), &v(&[1.0, -1.0])).unwrap().data(),
            &[2.0, 1.0]
        );
    }

    #[test]
    fn target_examples() {
        let g = grid(2);
        let x = v(&[1.0, 2.0]);
        assert_eq!(correction_target(&x, &g, 0, &v(&[0.0, 0.0])).unwrap(), x);
        // t_1 = 0.5 so the remaining time is 0.5
        assert_eq!(
            correction_target(&x, &g, 1, &v(&[2.0, 2.0])).unwrap().data(),
            &[0.0, 1.0]
        );
        assert!(correction_target(&x, &g, 2, &v(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn target_extrapolates_back_to_input() {
        let g = grid(8);
        let x = v(&[0.25, 0.5, 0.75]);
        let u = v(&[0.5, -0.25, 0.125]);
        let z_star = correction_target(&x, &g, 2, &u).unwrap();
        let back = endpoint_prediction(&LatentState::new(z_star, 2), &g, &u).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn blend_examples() {
        let s = LatentState::new(v(&[1.0]), 2);
        let star = v(&[0.0]);
        assert_eq!(blend(&s, &star, 0.0).unwrap().z, s.z);
        assert_eq!(blend(&s, &star, 1.0).unwrap().z, star);
        let b = blend(&s, &star, 0.01).unwrap();
        assert_eq!(b.z.data(), &[0.99]);
        assert_eq!(b.t_index, 2);
        assert!(matches!(blend(&s, &star, 1.5), Err(Error::Domain(_))));
        assert!(matches!(blend(&s, &star, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn steering_examples() {
        let g = grid(4);
        let s = LatentState::new(v(&[0.5, -0.5]), 1);
        let vel = v(&[1.0, 2.0]);
        let plain = euler_step(&s, &g, &vel).unwrap();
        assert_eq!(flowchef_steer_step(&s, &g, &vel, &v(&[3.0, 3.0]), 0.0).unwrap(), plain);
        assert_eq!(flowchef_steer_step(&s, &g, &vel, &v(&[0.0, 0.0]), 0.7).unwrap(), plain);

        // endpoint 2, input 1: gradient 2 * (2 - 1) = 2, step 0.25 moves z by -0.5
        let s = LatentState::new(v(&[3.0]), 0);
        let grad = v(&[2.0]).sub(&v(&[1.0])).unwrap().scale(2.0);
        let out = flowchef_steer_step(&s, &g, &v(&[0.0]), &grad, 0.25).unwrap();
        assert_eq!(out.z.data(), &[2.5]);
    }

    fn image(seed: u64, d: usize) -> ConditionImage {
        let n = standard_normal(&mut stream(seed, Stream::Data), &[d]);
        ConditionImage::new(n.map(|x| 0.5 + 0.1 * x.tanh())).unwrap()
    }

    #[test]
    fn baseline_reaches_input_under_matching_constant_field() {
        let x = image(1, 6);
        let z0 = standard_normal(&mut stream(2, Stream::Noise), &[6]);
        let field = VelocityField::constant(x.tensor().sub(&z0).unwrap());
        let (out, rec) = sample(
            &field,
            &x,
            PromptId::Empty,
            &grid(20),
            &CorrectorConfig::baseline(),
            &z0,
        )
        .unwrap();
        assert!(out.max_abs_diff(x.tensor()).unwrap() < 1e-14);
        assert_eq!(rec.states().len(), 21);
    }

    #[test]
    fn full_strength_correction_lands_on_input() {
        let x = image(3, 5);
        let z0 = standard_normal(&mut stream(4, Stream::Noise), &[5]);
        let field = VelocityField::constant(v(&[0.3, -0.2, 0.9, 0.0, -1.1]));
        let g = grid(20);
        let corr = CorrectorConfig {
            alpha: 1.0,
            m: 19,
            ..CorrectorConfig::default()
        };
        let (out, rec) = sample(&field, &x, PromptId::EditTextRemoval, &g, &corr, &z0).unwrap();
        assert!(out.max_abs_diff(x.tensor()).unwrap() < 1e-12);
        for s in &rec.steps[..19] {
            assert!(s.loss_after.unwrap() < 1e-28);
        }
    }

    #[test]
    fn zero_alpha_matches_baseline_bitwise() {
        let x = image(5, 4);
        let z0 = standard_normal(&mut stream(6, Stream::Noise), &[4]);
        let a = Tensor::matrix(4, 4, (0..16).map(|k| (k as f64 * 0.37).sin() * 0.3).collect()).unwrap();
        let field = VelocityField::affine_with_edit_offset(a, v(&[0.1, 0.2, -0.1, 0.0]), v(&[0.5; 4])).unwrap();
        let g = grid(10);
        let (base, _) = sample(
            &field,
            &x,
            PromptId::EditTextRemoval,
            &g,
            &CorrectorConfig::baseline(),
            &z0,
        )
        .unwrap();
        for kind in CorrectorKind::ALL {
            let corr = CorrectorConfig {
                kind,
                alpha: 0.0,
                s: 0.0,
                m: 5,
                ..CorrectorConfig::default()
            };
            let (out, _) = sample(&field, &x, PromptId::EditTextRemoval, &g, &corr, &z0).unwrap();
            assert_eq!(out, base, "kind {kind}");
        }
        let corr = CorrectorConfig {
            m: 0,
            alpha: 0.7,
            ..CorrectorConfig::default()
        };
        assert_eq!(
            sample(&field, &x, PromptId::EditTextRemoval, &g, &corr, &z0).unwrap().0,
            base
        );
    }

    #[test]
    fn overhead_counts() {
        let x = image(7, 3);
        let z0 = standard_normal(&mut stream(8, Stream::Noise), &[3]);
        let field = VelocityField::constant(v(&[0.1, 0.2, 0.3]));
        let g = grid(20);
        let (_, base) = sample(
            &field,
            &x,
            PromptId::EditTextRemoval,
            &g,
            &CorrectorConfig::baseline(),
            &z0,
        )
        .unwrap();
        let (_, ours) = sample(
            &field,
            &x,
            PromptId::EditTextRemoval,
            &g,
            &CorrectorConfig::default(),
            &z0,
        )
        .unwrap();
        assert_eq!(base.stats.forward_slots(), 20);
        assert_eq!(base.stats.network_calls, 20);
        assert_eq!(ours.stats.prompt_slots, 20);
        assert_eq!(ours.stats.empty_slots, 3);
        assert_eq!(ours.stats.forward_slots(), 23);
        assert_eq!(ours.stats.network_calls, 20);
        assert_eq!(ours.stats.dual_calls, 3);
        assert_eq!(ours.stats.blend_flops, 3 * 3 * 3);
    }

    #[test]
    fn noise_inversion_starts_on_the_straight_path() {
        let x = image(9, 4);
        let z0 = standard_normal(&mut stream(10, Stream::Noise), &[4]);
        let field = VelocityField::constant(Tensor::zeros(&[4]));
        let g = grid(10);
        let corr = CorrectorConfig {
            noise_inversion_i: 3,
            ..CorrectorConfig::baseline()
        };
        let (out, rec) = sample(&field, &x, PromptId::EditTextRemoval, &g, &corr, &z0).unwrap();
        let want = z0.scale(0.7).axpy(0.3, x.tensor()).unwrap();
        assert!(out.max_abs_diff(&want).unwrap() < 1e-15);
        assert_eq!(rec.steps.len(), 7);
        assert_eq!(rec.stats.network_calls, 7);
    }

    #[test]
    fn invalid_configs() {
        let g = grid(5);
        let bad = [
            CorrectorConfig {
                m: 5,
                ..CorrectorConfig::default()
            },
            CorrectorConfig {
                alpha: 1.01,
                ..CorrectorConfig::default()
            },
            CorrectorConfig {
                noise_inversion_i: 5,
                ..CorrectorConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate(&g).is_err());
        }
        assert!("sideways".parse::<CorrectorKind>().is_err());
        assert_eq!(
            "flowchef".parse::<CorrectorKind>().unwrap(),
            CorrectorKind::FlowchefSteer
        );
    }

    #[test]
    fn nan_aborts_with_step_index() {
        let x = image(11, 2);
        let z0 = Tensor::vector(vec![0.0, 0.0]);
        let a = Tensor::matrix(2, 2, vec![1e200, 0.0, 0.0, 1e200]).unwrap();
        let field = VelocityField::affine(a, v(&[1.0, 1.0])).unwrap();
        let err = sample(
            &field,
            &x,
            PromptId::Empty,
            &grid(10),
            &CorrectorConfig::baseline(),
            &z0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Trajectory { step } if step > 0), "{err:?}");
    }

    #[test]
    fn condition_image_range() {
        assert!(ConditionImage::new(v(&[0.0, 1.0])).is_ok());
        assert!(ConditionImage::new(v(&[1.2])).is_err());
        assert!(ConditionImage::new(v(&[f64::NAN])).is_err());
    }
}
