//! Outer ADMM loop coupling the generator with a (weighted) total-variation prior.
//!
//! With splitting `D f(θ) = t`, each outer iteration `k` performs
//!
//! 1. θ-step: inexact Adam solve of `½‖H f − g‖² + (β/2)‖D f − (tᵏ − λᵏ/β)‖²`;
//! 2. weights (adaptive mode only): `μᵢ = (1/2n)·‖H f − g‖² / max(‖(D f)ᵢ‖, ε)`;
//! 3. t-step: per-pixel group shrinkage of `D f + λᵏ/β` by `μᵢ/β`;
//! 4. dual ascent: `λᵏ⁺¹ = λᵏ + β(D f − tᵏ⁺¹)`.
//!
//! The fixed-μ variant is the same loop with a constant weight field, and the
//! plain deep-image-prior baseline skips steps 2–4.

use std::io::Write;

use ndarray::{s, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{build_generator, sample_input, Generator, GeneratorConfig, GeneratorParams, SeedInput};
use crate::imaging::{psnr, ssim, Image, SSIM_WINDOW};
use crate::inner::{solve_theta_subproblem, AdamConfig, AdamState, ThetaLossSpec};
use crate::operators::{grad, pointwise_magnitude, ForwardOperator, GradientField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    Dip,
    DipTv,
    DipWtv,
}

impl SolverMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverMode::Dip => "dip",
            SolverMode::DipTv => "dip_tv",
            SolverMode::DipWtv => "dip_wtv",
        }
    }
}

impl std::fmt::Display for SolverMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const DEFAULT_EPS_GRAD: f64 = 1e-8;
pub const DEFAULT_EPS_MU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub mode: SolverMode,
    /// Penalty `β` of the augmented Lagrangian.
    pub beta_t: f64,
    /// Fixed regularization weight; required for [`SolverMode::DipTv`].
    pub mu: Option<f64>,
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// Floor on gradient magnitudes in the adaptive weight rule.
    pub eps_grad: f64,
    /// Floor on the adaptive weights themselves.
    pub eps_mu: f64,
    /// Observer checkpoint period in outer iterations; 0 disables.
    pub checkpoint_every: usize,
    pub adam: AdamConfig,
}

impl AdmmConfig {
    pub fn new(mode: SolverMode, outer_iters: usize, inner_iters: usize) -> Self {
        AdmmConfig {
            mode,
            beta_t: 1.0,
            mu: None,
            outer_iters,
            inner_iters,
            eps_grad: DEFAULT_EPS_GRAD,
            eps_mu: DEFAULT_EPS_MU,
            checkpoint_every: 0,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be a positive number, got {v}")))
            }
        };
        positive("method.beta_t", self.beta_t)?;
        positive("method.eps_grad", self.eps_grad)?;
        positive("method.eps_mu", self.eps_mu)?;
        match (self.mode, self.mu) {
            (SolverMode::DipTv, None) => return Err(Error::config("method.mu", "required when mode is dip_tv")),
            (_, Some(mu)) => positive("method.mu", mu)?,
            _ => {}
        }
        if self.outer_iters == 0 {
            return Err(Error::config("method.outer_iters", "must be at least 1"));
        }
        if self.inner_iters == 0 {
            return Err(Error::config("method.inner_iters", "must be at least 1"));
        }
        let lr = self.adam.learning_rate;
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::config(
                "method.learning_rate",
                format!("must be non-negative, got {lr}"),
            ));
        }
        for (key, b) in [
            ("method.adam_beta1", self.adam.beta1),
            ("method.adam_beta2", self.adam.beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(key, format!("must lie in [0, 1), got {b}")));
            }
        }
        positive("method.adam_eps", self.adam.eps)
    }
}

/// How the per-pixel weights of the t-step are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum MuPolicy {
    /// The same `μ` at every pixel (isotropic TV).
    Constant(f64),
    /// A caller-supplied weight map held fixed for the whole run.
    Frozen(Array2<f64>),
    /// Recomputed every outer iteration from residual and gradient magnitudes.
    Adaptive,
}

/// Proximal map of `τ‖·‖₂`: `max(‖v‖ − τ, 0)·v/‖v‖`, zero for `v = 0`.
pub fn group_shrink(v: &[f64], tau: f64) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || norm <= tau {
        return vec![0.0; v.len()];
    }
    let factor = (norm - tau) / norm;
    v.iter().map(|x| x * factor).collect()
}

/// t-step: shrink the `2·C` components of every pixel of `w` by `μᵢ/β`.
pub fn update_t(w: &GradientField, mu: &Array2<f64>, beta: f64) -> Result<GradientField> {
    if mu.dim() != (w.height(), w.width()) {
        return Err(Error::dim(format!(
            "weight map {:?} does not match field {:?}",
            mu.dim(),
            (w.height(), w.width())
        )));
    }
    let mut out = w.clone();
    let data = out.data_mut();
    for ((r, c), &m) in mu.indexed_iter() {
        let mut px = data.slice_mut(s![r, c, .., ..]);
        let flat: Vec<f64> = px.iter().copied().collect();
        let shrunk = group_shrink(&flat, m / beta);
        px.iter_mut().zip(shrunk).for_each(|(d, v)| *d = v);
    }
    Ok(out)
}

/// Adaptive weights `μᵢ = (1/2n)·residual_sq / max(‖(D f)ᵢ‖, eps_grad)`, floored at `eps_mu`.
///
/// `n` is the pixel count of the field; `residual_sq` sums over all channels.
pub fn update_mu(residual_sq: f64, gradfield: &GradientField, eps_grad: f64, eps_mu: f64) -> Array2<f64> {
    let n = gradfield.pixel_count() as f64;
    let scale = residual_sq / (2.0 * n);
    pointwise_magnitude(gradfield).mapv(|m| (scale / m.max(eps_grad)).max(eps_mu))
}

/// Dual ascent `λ + β(D f − t)`.
pub fn update_dual(
    lambda: &GradientField,
    beta: f64,
    gradfield: &GradientField,
    t_new: &GradientField,
) -> Result<GradientField> {
    lambda.check_same_shape(gradfield, "dual update")?;
    gradfield.check_same_shape(t_new, "dual update")?;
    let mut out = lambda.clone();
    Zip::from(out.data_mut())
        .and(gradfield.data())
        .and(t_new.data())
        .for_each(|l, &d, &t| *l += beta * (d - t));
    Ok(out)
}

/// One row of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub primal_residual: Option<f64>,
    pub dual_step_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn psnr_series(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.psnr).collect()
    }

    /// Writes `iteration,loss,psnr,ssim,primal_residual,dual_step_norm`; absent values are empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "loss", "psnr", "ssim", "primal_residual", "dual_step_norm"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                format!("{:.17e}", r.loss),
                opt(r.psnr),
                opt(r.ssim),
                opt(r.primal_residual),
                opt(r.dual_step_norm),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Best iterate by PSNR against the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub image: Image,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub iteration: usize,
}

/// Everything the outer loop carries between iterations.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub theta: GeneratorParams,
    pub t: GradientField,
    pub lambda_t: GradientField,
    pub mu_field: Array2<f64>,
    pub k: usize,
    pub adam: AdamState,
    pub best: Option<Snapshot>,
}

/// The data side of a restoration problem.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub observed: &'a Image,
    pub operator: &'a ForwardOperator,
    pub ground_truth: Option<&'a Image>,
}

/// Hook called after every completed outer iteration.
pub trait RunObserver {
    fn on_iteration(&mut self, record: &IterationRecord, output: &Image, params: &GeneratorParams) -> Result<()>;
}

/// Observer that ignores everything.
pub struct NoObserver;

impl RunObserver for NoObserver {
    fn on_iteration(&mut self, _: &IterationRecord, _: &Image, _: &GeneratorParams) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Network output at the final iterate.
    pub output: Image,
    pub trace: RunTrace,
    pub best: Option<Snapshot>,
    pub state: AdmmState,
}

/// Runs the solver selected by `cfg.mode` with no observer.
pub fn run(
    cfg: &AdmmConfig,
    observed: &Image,
    operator: &ForwardOperator,
    gen_cfg: &GeneratorConfig,
    input_seed: u64,
    ground_truth: Option<&Image>,
) -> Result<RunOutcome> {
    let problem = Problem {
        observed,
        operator,
        ground_truth,
    };
    run_observed(cfg, problem, gen_cfg, input_seed, &mut NoObserver)
}

/// Weight policy implied by the solver mode.
pub fn default_policy(cfg: &AdmmConfig) -> Result<MuPolicy> {
    match cfg.mode {
        SolverMode::DipTv => cfg
            .mu
            .map(MuPolicy::Constant)
            .ok_or_else(|| Error::config("method.mu", "required when mode is dip_tv")),
        SolverMode::Dip | SolverMode::DipWtv => Ok(MuPolicy::Adaptive),
    }
}

pub fn run_observed(
    cfg: &AdmmConfig,
    problem: Problem<'_>,
    gen_cfg: &GeneratorConfig,
    input_seed: u64,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome> {
    let policy = default_policy(cfg)?;
    run_with_policy(cfg, problem, gen_cfg, input_seed, policy, observer)
}

/// Full solver with an explicit weight policy (ignored in [`SolverMode::Dip`]).
pub fn run_with_policy(
    cfg: &AdmmConfig,
    problem: Problem<'_>,
    gen_cfg: &GeneratorConfig,
    input_seed: u64,
    policy: MuPolicy,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let g = problem.observed;
    if gen_cfg.output_channels != g.channels() {
        return Err(Error::dim(format!(
            "generator emits {} channels, observation has {}",
            gen_cfg.output_channels,
            g.channels()
        )));
    }
    if let Some(gt) = problem.ground_truth {
        gt.check_same_shape(g, "ground truth")?;
    }
    let (generator, theta) = build_generator(gen_cfg)?;
    let z = sample_input(gen_cfg, g.height(), g.width(), input_seed)?;
    let f0 = generator.forward(&theta, &z, crate::generator::BnMode::Train)?;

    let (h, w) = (g.height(), g.width());
    let t0 = grad(&f0);
    let mu0 = match &policy {
        MuPolicy::Constant(mu) => Array2::from_elem((h, w), *mu),
        MuPolicy::Frozen(map) => {
            if map.dim() != (h, w) {
                return Err(Error::dim(format!("frozen weight map {:?} is not {h}x{w}", map.dim())));
            }
            map.clone()
        }
        MuPolicy::Adaptive => {
            let resid = problem.operator.apply(&f0)?.distance_sq(g)?;
            update_mu(resid, &t0, cfg.eps_grad, cfg.eps_mu)
        }
    };
    let n_params = theta.len();
    let mut state = AdmmState {
        theta,
        lambda_t: GradientField::zeros(h, w, g.channels()),
        t: t0,
        mu_field: mu0,
        k: 0,
        adam: AdamState::new(cfg.adam, n_params),
        best: None,
    };
    let mut trace = RunTrace::default();
    let mut output = f0;

    let dip_spec = ThetaLossSpec::dip(problem.operator.clone(), g.clone());
    let adaptive = matches!(policy, MuPolicy::Adaptive);
    let can_ssim = h.min(w) >= SSIM_WINDOW;

    for k in 1..=cfg.outer_iters {
        let record = match cfg.mode {
            SolverMode::Dip => {
                let out = solve_theta_subproblem(
                    &generator,
                    &mut state.theta,
                    &z,
                    &dip_spec,
                    cfg.inner_iters,
                    &mut state.adam,
                    k,
                )?;
                output = out.output;
                IterationRecord {
                    iteration: k,
                    loss: out.loss,
                    psnr: None,
                    ssim: None,
                    primal_residual: None,
                    dual_step_norm: None,
                }
            }
            SolverMode::DipTv | SolverMode::DipWtv => {
                let (record, out) = admm_iteration(cfg, problem, &generator, &z, &mut state, adaptive, k)?;
                output = out;
                record
            }
        };
        let mut record = record;
        state.k = k;
        if let Some(gt) = problem.ground_truth {
            let p = psnr(&output, gt)?;
            let q = if can_ssim { Some(ssim(&output, gt)?) } else { None };
            record.psnr = Some(p);
            record.ssim = q;
            if state.best.as_ref().is_none_or(|b| p > b.psnr) {
                state.best = Some(Snapshot {
                    image: output.clone(),
                    psnr: p,
                    ssim: q,
                    iteration: k,
                });
            }
        }
        log::debug!(
            "[{}] k={k} loss={:.6e} psnr={}",
            cfg.mode,
            record.loss,
            record.psnr.map_or("-".to_string(), |p| format!("{p:.3}"))
        );
        observer.on_iteration(&record, &output, &state.theta)?;
        trace.records.push(record);
    }

    Ok(RunOutcome {
        output,
        trace,
        best: state.best.clone(),
        state,
    })
}

fn admm_iteration(
    cfg: &AdmmConfig,
    problem: Problem<'_>,
    generator: &Generator,
    z: &SeedInput,
    state: &mut AdmmState,
    adaptive: bool,
    k: usize,
) -> Result<(IterationRecord, Image)> {
    let beta = cfg.beta_t;
    let target = state.t.axpy(-1.0 / beta, &state.lambda_t)?;
    let spec = ThetaLossSpec::admm(problem.operator.clone(), problem.observed.clone(), beta, target);
    let out = solve_theta_subproblem(
        generator,
        &mut state.theta,
        z,
        &spec,
        cfg.inner_iters,
        &mut state.adam,
        k,
    )?;

    let df = grad(&out.output);
    if adaptive {
        let resid = problem.operator.apply(&out.output)?.distance_sq(problem.observed)?;
        state.mu_field = update_mu(resid, &df, cfg.eps_grad, cfg.eps_mu);
    }
    let w = df.axpy(1.0 / beta, &state.lambda_t)?;
    let t_new = update_t(&w, &state.mu_field, beta)?;
    let lambda_new = update_dual(&state.lambda_t, beta, &df, &t_new)?;

    let primal = df.axpy(-1.0, &t_new)?.norm();
    let dual_step = lambda_new.axpy(-1.0, &state.lambda_t)?.norm();
    state.t = t_new;
    state.lambda_t = lambda_new;

    let record = IterationRecord {
        iteration: k,
        loss: out.loss,
        psnr: None,
        ssim: None,
        primal_residual: Some(primal),
        dual_step_norm: Some(dual_step),
    };
    Ok((record, out.output))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn objective(t: &[f64], w: &[f64], tau: f64) -> f64 {
        let norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dist: f64 = t.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum();
        tau * norm + 0.5 * dist
    }

    #[test]
    fn shrink_examples() {
        assert_eq!(group_shrink(&[3.0, 4.0], 5.0), vec![0.0, 0.0]);
        let v = group_shrink(&[3.0, 4.0], 2.5);
        assert!((v[0] - 1.5).abs() < 1e-15 && (v[1] - 2.0).abs() < 1e-15);
        assert_eq!(group_shrink(&[3.0, 4.0], 0.0), vec![3.0, 4.0]);
        assert_eq!(group_shrink(&[0.0; 6], 1.0), vec![0.0; 6]);
    }

    #[test]
    fn shrink_beats_local_perturbations() {
        let w = [0.7, -1.3];
        let tau = 0.4;
        let t = group_shrink(&w, tau);
        let best = objective(&t, &w, tau);
        for dx in [-1e-3, 0.0, 1e-3] {
            for dy in [-1e-3, 0.0, 1e-3] {
                assert!(objective(&[t[0] + dx, t[1] + dy], &w, tau) >= best - 1e-12);
            }
        }
    }

    fn single_pixel(v: [f64; 2]) -> GradientField {
        GradientField::new(Array4::from_shape_vec((1, 1, 1, 2), v.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn t_step_examples() {
        let zero = GradientField::zeros(3, 3, 1);
        assert_eq!(update_t(&zero, &Array2::from_elem((3, 3), 1.0), 2.0).unwrap(), zero);

        let w = GradientField::new(Array4::from_shape_fn((4, 4, 3, 2), |(a, b, c, d)| {
            (a + 2 * b) as f64 - (c + d) as f64
        }))
        .unwrap();
        assert_eq!(update_t(&w, &Array2::zeros((4, 4)), 1.0).unwrap(), w);

        let t = update_t(&single_pixel([3.0, 4.0]), &Array2::from_elem((1, 1), 5.0), 2.0).unwrap();
        assert!((t.data()[[0, 0, 0, 0]] - 1.5).abs() < 1e-15);
        assert!((t.data()[[0, 0, 0, 1]] - 2.0).abs() < 1e-15);

        assert!(update_t(&w, &Array2::zeros((3, 4)), 1.0).is_err());
    }

    #[test]
    fn weight_rule_worked_example() {
        let field = GradientField::new(Array4::from_shape_fn(
            (2, 2, 1, 2),
            |(_, _, _, d)| if d == 0 { 2.0 } else { 0.0 },
        ))
        .unwrap();
        let mu = update_mu(8.0, &field, DEFAULT_EPS_GRAD, DEFAULT_EPS_MU);
        assert!(mu.iter().all(|&m| m == 0.5));
    }

    #[test]
    fn weight_rule_zero_residual_hits_floor() {
        let field = GradientField::new(Array4::from_elem((3, 3, 1, 2), 0.2)).unwrap();
        let mu = update_mu(0.0, &field, DEFAULT_EPS_GRAD, DEFAULT_EPS_MU);
        assert!(mu.iter().all(|&m| m == DEFAULT_EPS_MU));
    }

    #[test]
    fn weight_rule_orders_inversely_to_magnitude() {
        let field = GradientField::new(Array4::from_shape_fn(
            (1, 2, 1, 2),
            |(_, c, _, _)| if c == 0 { 0.1 } else { 0.3 },
        ))
        .unwrap();
        let mu = update_mu(1.0, &field, DEFAULT_EPS_GRAD, DEFAULT_EPS_MU);
        assert!(mu[[0, 0]] > mu[[0, 1]]);
        // Flat pixels are guarded by eps_grad rather than dividing by zero.
        let flat = GradientField::zeros(2, 2, 1);
        assert!(update_mu(1.0, &flat, DEFAULT_EPS_GRAD, DEFAULT_EPS_MU)
            .iter()
            .all(|m| m.is_finite() && *m > 0.0));
    }

    #[test]
    fn dual_examples() {
        let d = GradientField::new(Array4::from_elem((2, 2, 1, 2), 0.9)).unwrap();
        let lambda = GradientField::new(Array4::from_elem((2, 2, 1, 2), 0.3)).unwrap();
        assert_eq!(update_dual(&lambda, 4.0, &d, &d).unwrap(), lambda);

        let t = GradientField::new(Array4::from_elem((2, 2, 1, 2), 0.4)).unwrap();
        let zero = GradientField::zeros(2, 2, 1);
        let one = update_dual(&zero, 1.0, &d, &t).unwrap();
        assert!(one.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let two = update_dual(&zero, 2.0, &d, &t).unwrap();
        assert!(two
            .data()
            .iter()
            .zip(one.data())
            .all(|(a, b)| (a - 2.0 * b).abs() < 1e-15));
    }

    #[test]
    fn config_validation() {
        let mut cfg = AdmmConfig::new(SolverMode::DipTv, 10, 5);
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "method.mu"),
            other => panic!("{other:?}"),
        }
        cfg.mu = Some(0.1);
        assert!(cfg.validate().is_ok());
        cfg.beta_t = 0.0;
        assert!(cfg.validate().is_err());
        assert!(AdmmConfig::new(SolverMode::DipWtv, 0, 5).validate().is_err());
    }

    #[test]
    fn trace_csv_has_header_and_blank_optionals() {
        let trace = RunTrace {
            records: vec![IterationRecord {
                iteration: 1,
                loss: 0.5,
                psnr: Some(20.0),
                ssim: None,
                primal_residual: None,
                dual_step_norm: None,
            }],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iteration,loss,psnr,ssim,primal_residual,dual_step_norm"
        );
        assert!(lines.next().unwrap().ends_with(",,,"));
    }
}
