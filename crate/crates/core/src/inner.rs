//! Inexact θ-subproblem: a fixed number of Adam steps on
//! `½‖H f(θ) − g‖² + (β/2)‖D f(θ) − T‖²` (or the fidelity term alone).

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorParams, SeedInput};
use crate::imaging::Image;
use crate::operators::{div, grad, ForwardOperator, GradientField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators and step counter, persisted across outer iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        AdamState {
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// A non-finite gradient leaves `params` and `state` untouched and reports divergence.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::dim(format!(
            "adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            iteration: state.step as usize,
            message: format!("non-finite gradient at parameter {i}"),
        });
    }
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        eps,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Which objective the θ-step minimizes.
#[derive(Debug, Clone, PartialEq)]
pub enum LossMode {
    /// `½‖H f − g‖²`.
    DipOnly,
    /// Adds `(β/2)‖D f − T‖²` with the precombined target `T = t − λ/β`.
    Admm { beta: f64, target: GradientField },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaLossSpec {
    pub operator: ForwardOperator,
    pub observed: Image,
    pub mode: LossMode,
}

impl ThetaLossSpec {
    pub fn dip(operator: ForwardOperator, observed: Image) -> Self {
        ThetaLossSpec {
            operator,
            observed,
            mode: LossMode::DipOnly,
        }
    }

    pub fn admm(operator: ForwardOperator, observed: Image, beta: f64, target: GradientField) -> Self {
        ThetaLossSpec {
            operator,
            observed,
            mode: LossMode::Admm { beta, target },
        }
    }

    /// Loss value and its gradient with respect to the network output `f`:
    /// `Hᵀ(H f − g) − β·div(D f − T)`.
    pub fn value_and_grad(&self, f: &Image) -> Result<(f64, Array3<f64>)> {
        f.check_same_shape(&self.observed, "theta loss")?;
        let hf = self.operator.apply(f)?;
        let resid = hf.sub(&self.observed)?;
        let mut loss = 0.5 * resid.data().iter().map(|r| r * r).sum::<f64>();
        let mut grad_f = self.operator.apply_adjoint(&resid)?.into_data();

        if let LossMode::Admm { beta, target } = &self.mode {
            if beta.is_nan() || *beta <= 0.0 {
                return Err(Error::InvalidValue(format!("penalty must be positive, got {beta}")));
            }
            let df = grad(f);
            let field_resid = df.axpy(-1.0, target)?;
            loss += 0.5 * beta * field_resid.data().iter().map(|r| r * r).sum::<f64>();
            // Dᵀ = −div.
            grad_f.scaled_add(-beta, &div(&field_resid));
        }
        Ok((loss, grad_f))
    }

    pub fn value(&self, f: &Image) -> Result<f64> {
        Ok(self.value_and_grad(f)?.0)
    }
}

/// `theta_loss` evaluated at the generator output (training-mode batch statistics).
pub fn theta_loss(generator: &Generator, params: &GeneratorParams, z: &SeedInput, spec: &ThetaLossSpec) -> Result<f64> {
    let f = generator.forward(params, z, crate::generator::BnMode::Train)?;
    spec.value(&f)
}

/// Loss and its gradient with respect to every trainable parameter.
pub fn theta_loss_and_grad(
    generator: &Generator,
    params: &GeneratorParams,
    z: &SeedInput,
    spec: &ThetaLossSpec,
) -> Result<(f64, Vec<f64>, crate::generator::ForwardCache)> {
    let (f, cache) = generator.forward_train(params, z)?;
    let (loss, grad_f) = spec.value_and_grad(&f)?;
    let grads = generator.backward(params, &cache, &grad_f)?;
    Ok((loss, grads, cache))
}

/// Result of one inexact θ-solve.
#[derive(Debug, Clone)]
pub struct SubproblemOutcome {
    /// Loss at the updated parameters.
    pub loss: f64,
    /// Network output at the updated parameters.
    pub output: Image,
}

/// Runs exactly `n_inner` Adam steps and evaluates the loss once more at the result.
///
/// `iteration` only labels divergence errors.
pub fn solve_theta_subproblem(
    generator: &Generator,
    params: &mut GeneratorParams,
    z: &SeedInput,
    spec: &ThetaLossSpec,
    n_inner: usize,
    adam: &mut AdamState,
    iteration: usize,
) -> Result<SubproblemOutcome> {
    if n_inner == 0 {
        return Err(Error::InvalidValue("inner iteration count must be at least 1".into()));
    }
    let relabel = |e: Error| match e {
        Error::Divergence { message, .. } => Error::Divergence { iteration, message },
        other => other,
    };
    for _ in 0..n_inner {
        let (loss, grads, cache) = theta_loss_and_grad(generator, params, z, spec).map_err(relabel)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration,
                message: format!("non-finite loss {loss}"),
            });
        }
        generator.update_running_stats(params, &cache);
        adam_step(&mut params.values, &grads, adam).map_err(relabel)?;
    }
    let output = generator
        .forward(params, z, crate::generator::BnMode::Train)
        .map_err(relabel)?;
    let loss = spec.value(&output)?;
    if !loss.is_finite() {
        return Err(Error::Divergence {
            iteration,
            message: format!("non-finite loss {loss}"),
        });
    }
    Ok(SubproblemOutcome { loss, output })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{build_generator, sample_input, GeneratorConfig};
    use ndarray::Array4;

    fn ramp() -> Image {
        Image::from_fn(8, 8, 1, |(r, c, _)| (r * 8 + c) as f64 / 64.0).unwrap()
    }

    #[test]
    fn exact_fit_has_zero_loss() {
        let g = ramp();
        let spec = ThetaLossSpec::admm(ForwardOperator::Identity, g.clone(), 3.0, grad(&g));
        assert_eq!(spec.value(&g).unwrap(), 0.0);
    }

    #[test]
    fn dip_loss_of_constant_offset() {
        let g = ramp();
        let f = g.map(|v| v + 0.1).unwrap();
        let spec = ThetaLossSpec::dip(ForwardOperator::Identity, g);
        assert!((spec.value(&f).unwrap() - 0.005 * 64.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_term_with_unit_residual() {
        let g = ramp();
        let ones = GradientField::new(Array4::ones((8, 8, 1, 2))).unwrap();
        let target = grad(&g).axpy(-1.0, &ones).unwrap();
        let spec = ThetaLossSpec::admm(ForwardOperator::Identity, g.clone(), 2.0, target);
        // Fidelity vanishes; the field residual is all ones over 128 entries.
        assert!((spec.value(&g).unwrap() - 128.0).abs() < 1e-12);
    }

    #[test]
    fn output_gradient_matches_finite_differences() {
        let g = ramp();
        let f = Image::from_fn(8, 8, 1, |(r, c, _)| ((r * 3 + c * 5) % 7) as f64 / 7.0).unwrap();
        let target = GradientField::new(Array4::from_shape_fn((8, 8, 1, 2), |(r, c, _, d)| {
            0.01 * (r as f64 - c as f64) + 0.02 * d as f64
        }))
        .unwrap();
        let kernel = crate::operators::Kernel::box_blur(3).unwrap();
        let spec = ThetaLossSpec::admm(ForwardOperator::Convolution(kernel), g, 1.5, target);
        let (_, analytic) = spec.value_and_grad(&f).unwrap();
        let h = 1e-6;
        for (r, c) in [(0, 0), (3, 4), (7, 7), (5, 0)] {
            let bump = |d: f64| {
                let mut a = f.data().clone();
                a[[r, c, 0]] += d;
                spec.value(&Image::new(a).unwrap()).unwrap()
            };
            let numeric = (bump(h) - bump(-h)) / (2.0 * h);
            assert!((numeric - analytic[[r, c, 0]]).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(AdamConfig::default(), 3);
        adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert!(s.first_moment().iter().chain(s.second_moment()).all(|&m| m == 0.0));
    }

    #[test]
    fn adam_first_step_closed_form() {
        let g0 = [0.5, -2.0, 1e-3];
        let mut p = vec![0.0; 3];
        let cfg = AdamConfig::default();
        let mut s = AdamState::new(cfg, 3);
        adam_step(&mut p, &g0, &mut s).unwrap();
        for (pi, gi) in p.iter().zip(g0) {
            let expected = -cfg.learning_rate * gi / (gi.abs() + cfg.eps);
            assert!((pi - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_converges_on_scalar_quadratic() {
        let mut x = vec![0.0];
        let mut s = AdamState::new(
            AdamConfig {
                learning_rate: 0.1,
                ..Default::default()
            },
            1,
        );
        for _ in 0..200 {
            let g = 2.0 * (x[0] - 3.0);
            adam_step(&mut x, &[g], &mut s).unwrap();
        }
        assert!((x[0] - 3.0).abs() < 0.05, "x = {}", x[0]);
    }

    #[test]
    fn adam_zero_learning_rate_is_identity() {
        let mut p = vec![0.3, 0.7];
        let mut s = AdamState::new(
            AdamConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            2,
        );
        adam_step(&mut p, &[1.0, -4.0], &mut s).unwrap();
        assert_eq!(p, vec![0.3, 0.7]);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(AdamConfig::default(), 2);
        assert!(matches!(
            adam_step(&mut p, &[1.0, f64::NAN], &mut s),
            Err(Error::Divergence { .. })
        ));
        assert_eq!(s.step, 0);
    }

    #[test]
    fn subproblem_runs_and_rejects_zero_inner() {
        let cfg = GeneratorConfig::tiny(4, 3, 1, 1);
        let (gen, mut params) = build_generator(&cfg).unwrap();
        let z = sample_input(&cfg, 8, 8, 2).unwrap();
        let spec = ThetaLossSpec::dip(ForwardOperator::Identity, ramp());
        let mut adam = AdamState::new(AdamConfig::default(), params.len());
        assert!(solve_theta_subproblem(&gen, &mut params, &z, &spec, 0, &mut adam, 0).is_err());
        let before = theta_loss(&gen, &params, &z, &spec).unwrap();
        let out = solve_theta_subproblem(&gen, &mut params, &z, &spec, 5, &mut adam, 0).unwrap();
        assert_eq!(adam.step, 5);
        assert!(out.loss < before);
        assert_eq!(out.loss, theta_loss(&gen, &params, &z, &spec).unwrap());
    }
}
