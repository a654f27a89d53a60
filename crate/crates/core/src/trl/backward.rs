//! Hand-derived gradients of the batch objectives.
//!
//! With residual `E = Ŷ − Y` the loss is `‖E‖²/B`, so `∂L/∂Ŷ = (2/B) E`. For a CP
//! weight with effective coefficients `c` and projections `z`:
//!
//! * `∂L/∂b = Σ_s (2/B) E_s`
//! * `∂L/∂U^(N)(o, r) = Σ_s (2/B) E_s(o) c_r z_{s,r}`
//! * `∂L/∂U^(k)(i, r) = Σ_s g_{s,r} ∂z_{s,r}/∂U^(k)(i, r)` with
//!   `g_{s,r} = c_r Σ_o (2/B) E_s(o) U^(N)(o, r)`; the partial is the sample
//!   contracted with every input factor except the k-th.
//!
//! Sketch draws are held fixed. Gradients are taken with respect to the sketched
//! parameters and pulled back through the selection (the adjoint of `M`).

use std::borrow::Cow;

use crate::decomp::{Decomposition, KruskalTensor, TuckerTensor};
use crate::error::{Result, TrlError};
use crate::sketch::{apply_sketch_tucker, SketchDraw};
use crate::tensor::{matmul, transpose, unfold, DenseTensor, Matrix};

use super::objective::{cp_dropout_regularizer, mse_loss, Objective};
use super::{
    contract_rank_one, kruskal_coefficients, kruskal_output, kruskal_projections, tucker_forward_parts,
    tucker_project, TrlModel,
};

/// Gradients with the same shapes as the trainable parameters of a [`TrlModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub factors: Vec<Matrix>,
    /// Present for Tucker weights only.
    pub core: Option<DenseTensor>,
    pub bias: Vec<f64>,
}

impl Gradients {
    /// Flat views in the order of [`TrlModel::parameter_blocks_mut`].
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.factors.iter().map(Matrix::data).collect();
        if let Some(c) = &self.core {
            out.push(c.data());
        }
        out.push(&self.bias);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.factors.iter_mut().map(Matrix::data_mut).collect();
        if let Some(c) = &mut self.core {
            out.push(c.data_mut());
        }
        out.push(&mut self.bias);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Gradients of `objective` on one batch.
pub fn backward(model: &TrlModel, x: &DenseTensor, y: &Matrix, objective: Objective<'_>) -> Result<Gradients> {
    Ok(loss_and_gradients(model, x, y, objective)?.1)
}

/// Objective value and its gradients, sharing the forward pass.
pub fn loss_and_gradients(
    model: &TrlModel,
    x: &DenseTensor,
    y: &Matrix,
    objective: Objective<'_>,
) -> Result<(f64, Gradients)> {
    model.check_input(x)?;
    match &model.weight {
        Decomposition::Kruskal(k) => kruskal_grads(model, k, x, y, objective),
        Decomposition::Tucker(t) => tucker_grads(model, t, x, y, objective),
    }
}

fn output_grad(pred: &Matrix, y: &Matrix) -> Result<(f64, Matrix, Vec<f64>)> {
    let loss = mse_loss(pred, y)?;
    let b = pred.rows();
    let scale = 2.0 / b as f64;
    let data: Vec<f64> = pred
        .data()
        .iter()
        .zip(y.data())
        .map(|(p, t)| scale * (p - t))
        .collect();
    let g = Matrix::new(b, pred.cols(), data)?;
    let mut db = vec![0.0; pred.cols()];
    for s in 0..b {
        for (d, &v) in db.iter_mut().zip(g.row(s)) {
            *d += v;
        }
    }
    Ok((loss, g, db))
}

fn kruskal_grads(
    model: &TrlModel,
    k: &KruskalTensor,
    x: &DenseTensor,
    y: &Matrix,
    objective: Objective<'_>,
) -> Result<(f64, Gradients)> {
    let coef = match objective {
        Objective::Stochastic(draw) => kruskal_coefficients(k, Some(draw), model.train_scale())?,
        Objective::Deterministic { .. } => kruskal_coefficients(k, None, 1.0)?,
    };
    let n_in = k.order() - 1;
    let rank = k.rank();
    let out_factor = &k.factors()[n_in];
    let z = kruskal_projections(k, x);
    let pred = kruskal_output(&z, out_factor, &coef, &model.bias);
    let (mut loss, g, bias) = output_grad(&pred, y)?;

    // dU^(N) = Gᵀ (Z diag(c)); gz = (G U^(N)) diag(c).
    let mut zc = z.clone();
    for row in zc.data_mut().chunks_exact_mut(rank) {
        for (v, &c) in row.iter_mut().zip(&coef) {
            *v *= c;
        }
    }
    let d_out = matmul(&transpose(&g), &zc)?;
    let mut gz = matmul(&g, out_factor)?;
    for row in gz.data_mut().chunks_exact_mut(rank) {
        for (v, &c) in row.iter_mut().zip(&coef) {
            *v *= c;
        }
    }

    let dims = &x.shape()[1..];
    let sample = x.len() / x.shape()[0];
    let in_factors = &k.factors()[..n_in];
    let mut factors: Vec<Matrix> = in_factors.iter().map(|f| Matrix::zeros(f.rows(), rank)).collect();
    if coef.iter().any(|&c| c != 0.0) {
        for (s, xs) in x.data().chunks_exact(sample).enumerate() {
            let gs = gz.row(s);
            if gs.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (m, df) in factors.iter_mut().enumerate() {
                let partial = contract_rank_one(xs, dims, in_factors, Some(m));
                for (drow, prow) in df.data_mut().chunks_exact_mut(rank).zip(partial.chunks_exact(rank)) {
                    for ((d, &p), &gv) in drow.iter_mut().zip(prow).zip(gs) {
                        *d += gv * p;
                    }
                }
            }
        }
    }
    factors.push(d_out);

    if let Objective::Deterministic { theta } = objective {
        if theta < 1.0 {
            loss += cp_dropout_regularizer(model, theta)?;
            add_regularizer_grads(k, theta, &mut factors);
        }
    }
    Ok((
        loss,
        Gradients {
            factors,
            core: None,
            bias,
        },
    ))
}

// ∂/∂U^(i)_{:,r} of the regularizer: 2 ((1−θ)/θ) λ_r² Π_{j≠i} ‖U^(j)_{:,r}‖² U^(i)_{:,r}.
fn add_regularizer_grads(k: &KruskalTensor, theta: f64, grads: &mut [Matrix]) {
    let alpha = 2.0 * (1.0 - theta) / theta;
    let lambda = k.weights_or_ones();
    let norms: Vec<Vec<f64>> = k.factors().iter().map(Matrix::column_norms_sq).collect();
    let rank = k.rank();
    for (i, (f, df)) in k.factors().iter().zip(grads.iter_mut()).enumerate() {
        let others: Vec<f64> = (0..rank)
            .map(|r| {
                let p: f64 = norms
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, n)| n[r])
                    .product();
                alpha * lambda[r] * lambda[r] * p
            })
            .collect();
        for (drow, urow) in df.data_mut().chunks_exact_mut(rank).zip(f.data().chunks_exact(rank)) {
            for ((d, &u), &o) in drow.iter_mut().zip(urow).zip(&others) {
                *d += o * u;
            }
        }
    }
}

fn tucker_grads(
    model: &TrlModel,
    t: &TuckerTensor,
    x: &DenseTensor,
    y: &Matrix,
    objective: Objective<'_>,
) -> Result<(f64, Gradients)> {
    let (sketched, draw, scale): (Cow<'_, TuckerTensor>, Option<&SketchDraw>, f64) = match objective {
        Objective::Stochastic(draw) => (
            Cow::Owned(apply_sketch_tucker(t, draw)?),
            Some(draw),
            model.train_scale(),
        ),
        Objective::Deterministic { theta } if theta == 1.0 => (Cow::Borrowed(t), None, 1.0),
        Objective::Deterministic { .. } => return Err(TrlError::UnsupportedDecomposition("tucker")),
    };
    let st = sketched.as_ref();
    let n_in = st.order() - 1;
    let ranks = st.ranks().to_vec();
    let r_out = ranks[n_in];
    let r_in: usize = ranks[..n_in].iter().product();
    let b = x.shape()[0];

    let (pred, p, h) = tucker_forward_parts(st, x, &model.bias, scale)?;
    let (loss, mut dy, bias) = output_grad(&pred, y)?;
    dy.scale(scale);

    let u_out = &st.factors()[n_in];
    let d_out = matmul(&transpose(&dy), &h)?;
    let dh = matmul(&dy, u_out)?;
    let core_mat = Matrix::new(r_in, r_out, st.core().data().to_vec())?;
    let d_core = DenseTensor::new(ranks.clone(), matmul(&transpose(&p), &dh)?.into_data())?;
    let dp = matmul(&dh, &transpose(&core_mat))?;
    let mut dp_shape = vec![b];
    dp_shape.extend_from_slice(&ranks[..n_in]);
    let dp = DenseTensor::new(dp_shape, dp.into_data())?;

    let mut factors = Vec::with_capacity(n_in + 1);
    for k in 0..n_in {
        let q = tucker_project(st, x, Some(k))?;
        factors.push(matmul(&unfold(&q, k + 1)?, &transpose(&unfold(&dp, k + 1)?))?);
    }
    factors.push(d_out);

    let mut core = d_core;
    if let Some(draw) = draw {
        for (k, (f, &rank)) in factors.iter_mut().zip(t.ranks()).enumerate() {
            *f = draw.mode(k).pull_back_columns(f, rank);
            core = draw.mode(k).pull_back_mode(&core, k, rank);
        }
    }
    Ok((
        loss,
        Gradients {
            factors,
            core: Some(core),
            bias,
        },
    ))
}
