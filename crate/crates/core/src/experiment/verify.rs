use rand::Rng;
use serde::Serialize;

use super::ExperimentConfig;
use crate::error::Result;
use crate::rng::{derive, standard_normal, stream, Stream};
use crate::sampler::TimeGrid;
use crate::surrogate::{
    decomposition_check, gradient_relation, true_loss, verify_propositions, DecompositionCheck, GradientRelation,
    PropositionReport,
};
use crate::tensor::{matvec, Tensor};
use crate::velocity::{PromptId, VelocityField};

pub const DECOMPOSITION_TOL: f64 = 1e-12;
pub const EXACT_GRADIENT_TOL: f64 = 1e-10;
/// Latent size of the analytic fields used when no checkpoint is given.
pub const ANALYTIC_DIM: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct VerifySettings {
    pub seed: u64,
    pub instances: usize,
    pub grid_n: usize,
    pub prompt: PromptId,
}

impl VerifySettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            seed: cfg.seed,
            instances: cfg.instances,
            grid_n: cfg.grid_n,
            prompt: cfg.task.prompt(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyEntry {
    pub index: usize,
    pub instance_seed: u64,
    pub field: String,
    pub step: usize,
    pub alpha: f64,
    pub propositions: PropositionReport,
    pub gradient: GradientRelation,
    /// `max |grad L_true - (I + Delta A)^T grad L_surrogate|`, affine fields only.
    pub exact_gradient_residual: Option<f64>,
    pub decomposition: DecompositionCheck,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub field: String,
    pub instances: usize,
    pub passed: bool,
    pub max_minimizer_value: f64,
    pub max_update_residual: f64,
    pub max_contraction_residual: f64,
    pub max_decomposition_residual: f64,
    pub gradient_bound_violations: usize,
    pub entries: Vec<VerifyEntry>,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &VerifyEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

fn analytic_field(k: usize, rng: &mut impl Rng) -> Result<VelocityField> {
    let d = ANALYTIC_DIM;
    if k.is_multiple_of(2) {
        let a = standard_normal(rng, &[d, d]).scale(0.5 / (d as f64).sqrt());
        let b = standard_normal(rng, &[d]);
        let offset = standard_normal(rng, &[d]).scale(0.3);
        VelocityField::affine_with_edit_offset(a, b, offset)
    } else {
        Ok(VelocityField::constant(standard_normal(rng, &[d])))
    }
}

fn exact_gradient_residual(
    field: &VelocityField,
    z: &Tensor,
    x_in: &Tensor,
    grid: &TimeGrid,
    i: usize,
) -> Result<Option<f64>> {
    let VelocityField::Affine(f) = field else {
        return Ok(None);
    };
    let eval = true_loss(field, z, x_in, grid, i)?;
    let g = &eval.surrogate.gradient;
    let expected = g.axpy(grid.remaining(i), &matvec(&f.a.transpose(), g)?)?;
    Ok(Some(eval.gradient.max_abs_diff(&expected)?))
}

/// Runs the proposition suite, the gradient relation and the prompt-delta
/// decomposition on `settings.instances` random instances. Without a field,
/// instances alternate between random affine and constant fields.
pub fn run_verification(field: Option<&VelocityField>, settings: &VerifySettings) -> Result<VerifyReport> {
    let grid = TimeGrid::uniform(settings.grid_n)?;
    let mut entries = Vec::with_capacity(settings.instances);
    for k in 0..settings.instances {
        let instance_seed = derive(settings.seed, Stream::Verify, k as u64);
        let mut rng = stream(instance_seed, Stream::Verify);
        let owned;
        let f = match field {
            Some(f) => f,
            None => {
                owned = analytic_field(k, &mut rng)?;
                &owned
            }
        };
        let d = f.dim();
        let z = standard_normal(&mut rng, &[d]);
        let x_in = Tensor::vector((0..d).map(|_| rng.gen::<f64>()).collect());
        let step = rng.gen_range(0..grid.steps());
        let alpha: f64 = rng.gen();

        let propositions = verify_propositions(f, &z, &x_in, &grid, step, alpha, &mut rng)?;
        let gradient = gradient_relation(f, &z, &x_in, &grid, step, &mut rng)?;
        let exact = exact_gradient_residual(f, &z, &x_in, &grid, step)?;
        let decomposition = decomposition_check(f, &z, &grid, step, settings.prompt, &x_in)?;
        let passed = propositions.passed()
            && gradient.holds
            && exact.is_none_or(|r| r < EXACT_GRADIENT_TOL)
            && decomposition.residual < DECOMPOSITION_TOL;
        entries.push(VerifyEntry {
            index: k,
            instance_seed,
            field: f.kind().into(),
            step,
            alpha,
            propositions,
            gradient,
            exact_gradient_residual: exact,
            decomposition,
            passed,
        });
    }
    let max = |g: fn(&VerifyEntry) -> f64| entries.iter().map(g).fold(0.0, f64::max);
    Ok(VerifyReport {
        field: field.map_or("analytic", |f| f.kind()).into(),
        instances: entries.len(),
        passed: entries.iter().all(|e| e.passed),
        max_minimizer_value: max(|e| e.propositions.minimizer_value),
        max_update_residual: max(|e| e.propositions.update_residual),
        max_contraction_residual: max(|e| e.propositions.contraction_residual),
        max_decomposition_residual: max(|e| e.decomposition.residual),
        gradient_bound_violations: entries.iter().filter(|e| !e.gradient.holds).count(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(instances: usize) -> VerifySettings {
        VerifySettings {
            seed: 3,
            instances,
            grid_n: 20,
            prompt: PromptId::EditTextRemoval,
        }
    }

    #[test]
    fn analytic_instances_pass() {
        let report = run_verification(None, &settings(100)).unwrap();
        assert_eq!(report.entries.len(), 100);
        assert!(report.passed, "{:?}", report.failures().next());
        for e in report.entries.iter().filter(|e| e.field == "analytic-constant") {
            let p = &e.propositions;
            assert!(p.minimizer_value < 1e-12 && p.update_residual < 1e-12 && p.contraction_residual < 1e-12);
            assert!(e.decomposition.residual < 1e-12);
            assert!(e.gradient.gap < 1e-12);
        }
        assert!(report.entries.iter().filter_map(|e| e.exact_gradient_residual).count() == 50);
    }

    #[test]
    fn deterministic() {
        let a = serde_json::to_string(&run_verification(None, &settings(6)).unwrap()).unwrap();
        let b = serde_json::to_string(&run_verification(None, &settings(6)).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
