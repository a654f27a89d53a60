//! Training objectives and the dropout-equivalent regularizer for CP weights.

use crate::decomp::Decomposition;
use crate::error::{shape_err, Result, TrlError};
use crate::sketch::SketchDraw;
use crate::tensor::{DenseTensor, Matrix};

use super::{forward, forward_srr, kruskal_coefficients, kruskal_output, kruskal_projections, TrlModel};

/// Largest CP rank accepted by mask enumeration (`2^R` forwards).
pub const ENUMERATION_LIMIT: usize = 20;

/// Which objective a loss or gradient refers to.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Mean squared error of the sketched forward under one fixed draw.
    Stochastic(&'a SketchDraw),
    /// Eval-mode mean squared error plus the CP dropout regularizer at keep
    /// probability `theta`. `theta = 1` is the plain, unregularized loss.
    Deterministic { theta: f64 },
}

impl Objective<'_> {
    pub fn mse() -> Self {
        Objective::Deterministic { theta: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectationMethod {
    /// Weighted sum over all `2^R` Bernoulli masks.
    Enumerate,
    /// Mean plus per-component variance, in closed form.
    ClosedForm,
}

/// `Σ (y_pred − y_true)² / B` over a `B × O` batch.
pub fn mse_loss(y_pred: &Matrix, y_true: &Matrix) -> Result<f64> {
    if (y_pred.rows(), y_pred.cols()) != (y_true.rows(), y_true.cols()) {
        return shape_err(format!(
            "prediction is {}x{}, target is {}x{}",
            y_pred.rows(),
            y_pred.cols(),
            y_true.rows(),
            y_true.cols()
        ));
    }
    let sse: f64 = y_pred
        .data()
        .iter()
        .zip(y_true.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sse / y_pred.rows() as f64)
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta <= 1.0 {
        Ok(())
    } else {
        Err(TrlError::Config(format!("keep probability must lie in (0, 1], got {theta}")))
    }
}

/// `((1 − θ)/θ) · Σ_r λ_r² Π_{i=0}^{N} ‖U^(i)_{:,r}‖²`, with λ = 1 by default.
pub fn cp_dropout_regularizer(model: &TrlModel, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    let Decomposition::Kruskal(k) = &model.weight else {
        return Err(TrlError::UnsupportedDecomposition("tucker"));
    };
    let lambda = k.weights_or_ones();
    let sum: f64 = k
        .column_norm_products()
        .iter()
        .zip(&lambda)
        .map(|(p, l)| l * l * p)
        .sum();
    Ok((1.0 - theta) / theta * sum)
}

/// Value of `objective` on one batch.
pub fn objective_value(model: &TrlModel, x: &DenseTensor, y: &Matrix, objective: Objective<'_>) -> Result<f64> {
    match objective {
        Objective::Stochastic(draw) => mse_loss(&forward_srr(model, x, draw)?, y),
        Objective::Deterministic { theta } => {
            check_theta(theta)?;
            let fit = mse_loss(&forward(model, x)?, y)?;
            if theta == 1.0 {
                Ok(fit)
            } else {
                Ok(fit + cp_dropout_regularizer(model, theta)?)
            }
        }
    }
}

/// Exact expectation, over i.i.d. Bernoulli(θ) masks shared by all modes, of the
/// stochastic batch loss `mse_loss(forward_srr(model, x, mask), y)`.
///
/// The output scale follows the model's [`ScaleMode`](super::ScaleMode) with keep
/// probability `theta`. Only CP weights are supported.
pub fn expected_stochastic_loss(
    model: &TrlModel,
    x: &DenseTensor,
    y: &Matrix,
    theta: f64,
    method: ExpectationMethod,
) -> Result<f64> {
    check_theta(theta)?;
    model.check_input(x)?;
    let Decomposition::Kruskal(k) = &model.weight else {
        return Err(TrlError::UnsupportedDecomposition("tucker"));
    };
    let rank = k.rank();
    let scale = match model.scale_mode {
        super::ScaleMode::Inverted => 1.0 / theta,
        super::ScaleMode::None => 1.0,
    };
    let z = kruskal_projections(k, x);
    let out_factor = k.factors().last().expect("order >= 2");
    let lambda = k.weights_or_ones();
    match method {
        ExpectationMethod::Enumerate => {
            if rank > ENUMERATION_LIMIT {
                return Err(TrlError::EnumerationLimit {
                    rank,
                    limit: ENUMERATION_LIMIT,
                });
            }
            let mut total = 0.0;
            let mut mask = vec![false; rank];
            for bits in 0u64..(1u64 << rank) {
                let kept = bits.count_ones() as i32;
                let weight = theta.powi(kept) * (1.0 - theta).powi(rank as i32 - kept);
                if weight == 0.0 {
                    continue;
                }
                for (r, m) in mask.iter_mut().enumerate() {
                    *m = bits >> r & 1 == 1;
                }
                let coef = kruskal_coefficients(k, Some(&SketchDraw::tied_mask(&mask)), scale)?;
                let pred = kruskal_output(&z, out_factor, &coef, &model.bias);
                total += weight * mse_loss(&pred, y)?;
            }
            Ok(total)
        }
        ExpectationMethod::ClosedForm => {
            // E[y] uses coefficients scale·θ·λ; each component adds variance
            // scale²·θ(1−θ)·λ_r² z_{s,r}² ‖U^(N)_{:,r}‖².
            let mean_coef: Vec<f64> = lambda.iter().map(|&l| scale * theta * l).collect();
            let mean = kruskal_output(&z, out_factor, &mean_coef, &model.bias);
            let fit = mse_loss(&mean, y)?;
            let out_norms = out_factor.column_norms_sq();
            let var_scale = scale * scale * theta * (1.0 - theta);
            let mut var = 0.0;
            for zs in z.data().chunks_exact(rank) {
                for ((&zr, &l), &n) in zs.iter().zip(&lambda).zip(&out_norms) {
                    var += l * l * zr * zr * n;
                }
            }
            Ok(fit + var_scale * var / z.rows() as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::KruskalTensor;
    use crate::rng::seeded;
    use crate::sketch::SketchSpec;
    use crate::trl::ScaleMode;

    fn model(seed: u64, rank: usize) -> (TrlModel, DenseTensor, Matrix) {
        let mut g = seeded(seed);
        let mut m = TrlModel::init_kruskal(&[3, 2], 2, rank, SketchSpec::bernoulli(0.4, true), ScaleMode::Inverted, &mut g).unwrap();
        m.bias = vec![0.3, -0.2];
        let x = DenseTensor::random_normal(&[4, 3, 2], 1.0, &mut g);
        let y = Matrix::random_normal(4, 2, 1.0, &mut g);
        (m, x, y)
    }

    #[test]
    fn mse_examples() {
        let a = Matrix::new(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        let b = Matrix::new(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(mse_loss(&a, &b).unwrap(), 1.0);
        assert!(mse_loss(&a, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn regularizer_examples() {
        let (m, _, _) = model(1, 3);
        assert_eq!(cp_dropout_regularizer(&m, 1.0).unwrap(), 0.0);
        let unit = |d: usize| {
            let mut v = vec![0.0; d];
            v[0] = 1.0;
            Matrix::column_vector(&v).unwrap()
        };
        let k = KruskalTensor::new(None, vec![unit(3), unit(2), unit(2)]).unwrap();
        let m1 = TrlModel::new(Decomposition::Kruskal(k), vec![0.0; 2], SketchSpec::none(), ScaleMode::Inverted).unwrap();
        assert_eq!(cp_dropout_regularizer(&m1, 0.5).unwrap(), 1.0);
        assert!(cp_dropout_regularizer(&m1, 0.0).is_err());
    }

    #[test]
    fn theta_one_expectation_is_plain_loss() {
        let (m, x, y) = model(2, 3);
        let plain = mse_loss(&forward(&m, &x).unwrap(), &y).unwrap();
        for method in [ExpectationMethod::Enumerate, ExpectationMethod::ClosedForm] {
            assert_eq!(expected_stochastic_loss(&m, &x, &y, 1.0, method).unwrap(), plain);
        }
    }

    #[test]
    fn enumeration_matches_closed_form() {
        for seed in 0..5 {
            let (m, x, y) = model(10 + seed, 4);
            let e = expected_stochastic_loss(&m, &x, &y, 0.4, ExpectationMethod::Enumerate).unwrap();
            let c = expected_stochastic_loss(&m, &x, &y, 0.4, ExpectationMethod::ClosedForm).unwrap();
            assert!((e - c).abs() <= 1e-10 * c.abs(), "{e} vs {c}");
        }
    }

    #[test]
    fn enumeration_guard() {
        let mut g = seeded(3);
        let m = TrlModel::init_kruskal(&[2], 1, 21, SketchSpec::none(), ScaleMode::Inverted, &mut g).unwrap();
        let x = DenseTensor::zeros(&[1, 2]);
        let y = Matrix::zeros(1, 1);
        assert_eq!(
            expected_stochastic_loss(&m, &x, &y, 0.5, ExpectationMethod::Enumerate),
            Err(TrlError::EnumerationLimit { rank: 21, limit: 20 })
        );
        assert!(expected_stochastic_loss(&m, &x, &y, 0.5, ExpectationMethod::ClosedForm).is_ok());
    }
}
