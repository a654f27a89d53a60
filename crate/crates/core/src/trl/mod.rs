//! Tensor regression layer: `y = ⟨X, W⟩ + b` with `W` held in CP or Tucker form.
//!
//! Inputs are batched with the batch on mode 0, `(B, I_0, …, I_{N-1})`; the weight
//! has shape `(I_0, …, I_{N-1}, O)` with the output mode last. Every activation
//! mode is contracted.
//!
//! The CP path never materializes `W`. For each sample it computes the rank-wise
//! projections `z_s = (U^(0) ⊙ ⋯ ⊙ U^(N-1))ᵀ vec(X_s)` and then
//! `y_s = U^(N) (c ⊙ z_s) + b`, where the per-component coefficients `c` carry λ,
//! the sketch (mask or selection multiplicity) and the train-time `1/θ` scale.

mod backward;
mod checkpoint;
mod objective;

pub use backward::{backward, loss_and_gradients, Gradients};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use objective::{
    cp_dropout_regularizer, expected_stochastic_loss, mse_loss, objective_value,
    ExpectationMethod, Objective,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decomp::{Decomposition, KruskalTensor, TuckerTensor};
use crate::error::{shape_err, Result, TrlError};
use crate::sketch::{apply_sketch_tucker, ModeSketch, SketchDraw, SketchSpec};
use crate::tensor::{gemm, mode_dot, transpose, DenseTensor, Matrix};

/// How sketched outputs are rescaled at train time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    /// Multiply the sketched output by `1/θ` during training; no scaling at eval.
    Inverted,
    None,
}

impl ScaleMode {
    pub fn name(&self) -> &'static str {
        match self {
            ScaleMode::Inverted => "inverted",
            ScaleMode::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrlModel {
    pub weight: Decomposition,
    pub bias: Vec<f64>,
    pub sketch: SketchSpec,
    pub scale_mode: ScaleMode,
}

impl TrlModel {
    pub fn new(weight: Decomposition, bias: Vec<f64>, sketch: SketchSpec, scale_mode: ScaleMode) -> Result<Self> {
        let shape = weight.shape();
        if shape.len() < 2 {
            return shape_err("the weight needs at least one input mode and the output mode");
        }
        if shape[shape.len() - 1] != bias.len() {
            return shape_err(format!(
                "output dimension {} but bias of length {}",
                shape[shape.len() - 1],
                bias.len()
            ));
        }
        sketch.validate()?;
        if matches!(weight, Decomposition::Kruskal(_)) && !sketch.tie_modes {
            return Err(TrlError::Contract("CP weights need tied sketch draws".into()));
        }
        Ok(Self {
            weight,
            bias,
            sketch,
            scale_mode,
        })
    }

    /// CP weight with i.i.d. Gaussian factors of standard deviation
    /// `(R · Π_k I_k)^(-1/(2(N+1)))`, so each reconstructed entry has variance
    /// `1 / Π_k I_k`. λ is all-ones and the bias is zero.
    pub fn init_kruskal<G: Rng + ?Sized>(
        input_shape: &[usize],
        output_dim: usize,
        rank: usize,
        sketch: SketchSpec,
        scale_mode: ScaleMode,
        rng: &mut G,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(TrlError::Config("rank must be positive".into()));
        }
        let dims = full_dims(input_shape, output_dim);
        let size: f64 = dims.iter().map(|&d| d as f64).product();
        let std = (rank as f64 * size).powf(-1.0 / (2.0 * dims.len() as f64));
        let factors = dims
            .iter()
            .map(|&d| Matrix::random_normal(d, rank, std, rng))
            .collect();
        let weight = Decomposition::Kruskal(KruskalTensor::new(None, factors)?);
        Self::new(weight, vec![0.0; output_dim], sketch, scale_mode)
    }

    /// Tucker weight with factor `k` drawn with standard deviation `1/√I_k` and the
    /// core with `1/√(Π R_k)`.
    pub fn init_tucker<G: Rng + ?Sized>(
        input_shape: &[usize],
        output_dim: usize,
        ranks: &[usize],
        sketch: SketchSpec,
        scale_mode: ScaleMode,
        rng: &mut G,
    ) -> Result<Self> {
        let dims = full_dims(input_shape, output_dim);
        if ranks.len() != dims.len() || ranks.contains(&0) {
            return Err(TrlError::Config(format!(
                "need {} positive ranks, got {ranks:?}",
                dims.len()
            )));
        }
        let core_size: f64 = ranks.iter().map(|&r| r as f64).product();
        let core = DenseTensor::random_normal(ranks, core_size.sqrt().recip(), rng);
        let factors = dims
            .iter()
            .zip(ranks)
            .map(|(&d, &r)| Matrix::random_normal(d, r, (d as f64).sqrt().recip(), rng))
            .collect();
        let weight = Decomposition::Tucker(TuckerTensor::new(core, factors)?);
        Self::new(weight, vec![0.0; output_dim], sketch, scale_mode)
    }

    pub fn input_shape(&self) -> Vec<usize> {
        let mut s = self.weight.shape();
        s.pop();
        s
    }

    pub fn output_dim(&self) -> usize {
        self.bias.len()
    }

    /// Decomposition ranks: `[R]` for CP, `(R_0, …, R_N)` for Tucker.
    pub fn ranks(&self) -> Vec<usize> {
        match &self.weight {
            Decomposition::Kruskal(k) => vec![k.rank()],
            Decomposition::Tucker(t) => t.ranks().to_vec(),
        }
    }

    /// Output multiplier applied to sketched forwards.
    pub fn train_scale(&self) -> f64 {
        match self.scale_mode {
            ScaleMode::Inverted => 1.0 / self.sketch.theta(),
            ScaleMode::None => 1.0,
        }
    }

    /// Mutable views of every trainable parameter, in the order of
    /// [`Gradients::blocks`]: factors, then the Tucker core, then the bias.
    /// CP weights λ are fixed and not included.
    pub fn parameter_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        match &mut self.weight {
            Decomposition::Kruskal(k) => {
                out.extend(k.factors_mut().iter_mut().map(|f| f.data_mut()));
            }
            Decomposition::Tucker(t) => {
                let (core, factors) = t.split_mut();
                out.extend(factors.iter_mut().map(|f| f.data_mut()));
                out.push(core.data_mut());
            }
        }
        out.push(&mut self.bias);
        out
    }

    fn check_input(&self, x: &DenseTensor) -> Result<usize> {
        let expected = self.input_shape();
        if x.order() != expected.len() + 1 || x.shape()[1..] != expected[..] {
            return shape_err(format!(
                "input of shape {:?} does not match (B, {expected:?})",
                x.shape()
            ));
        }
        Ok(x.shape()[0])
    }
}

fn full_dims(input_shape: &[usize], output_dim: usize) -> Vec<usize> {
    let mut dims = input_shape.to_vec();
    dims.push(output_dim);
    dims
}

/// Contracts one sample against rank-one profiles of the input factors.
///
/// With `skip = None` returns `z_r = Σ_i x(i_0, …) Π_k U^(k)(i_k, r)` (length R).
/// With `skip = Some(k)` mode `k` is left free and the result is `I_k × R`, row-major.
pub(crate) fn contract_rank_one(x: &[f64], dims: &[usize], factors: &[Matrix], skip: Option<usize>) -> Vec<f64> {
    let r = factors[0].cols();
    // `state` is laid out (lead, tail, R) after the first contraction; before it,
    // the raw sample serves as (lead, tail) with no rank axis.
    let mut state: Option<Vec<f64>> = None;
    let mut tail = 1usize;
    for m in (0..dims.len()).rev() {
        let dim = dims[m];
        if skip == Some(m) {
            tail = dim;
            continue;
        }
        let lead: usize = dims[..m].iter().product();
        let u = &factors[m];
        let mut next = vec![0.0; lead * tail * r];
        match &state {
            None => {
                for l in 0..lead {
                    for i in 0..dim {
                        let urow = u.row(i);
                        for t in 0..tail {
                            let xv = x[(l * dim + i) * tail + t];
                            let dst = &mut next[(l * tail + t) * r..(l * tail + t + 1) * r];
                            for (d, &uv) in dst.iter_mut().zip(urow) {
                                *d += xv * uv;
                            }
                        }
                    }
                }
            }
            Some(s) => {
                for l in 0..lead {
                    for i in 0..dim {
                        let urow = u.row(i);
                        for t in 0..tail {
                            let src = &s[((l * dim + i) * tail + t) * r..][..r];
                            let dst = &mut next[(l * tail + t) * r..][..r];
                            for ((d, &sv), &uv) in dst.iter_mut().zip(src).zip(urow) {
                                *d += sv * uv;
                            }
                        }
                    }
                }
            }
        }
        state = Some(next);
    }
    state.unwrap_or_else(|| x.iter().flat_map(|&v| std::iter::repeat_n(v, r)).collect())
}

/// `z` for every sample of a batch: `B × R`.
pub(crate) fn kruskal_projections(k: &KruskalTensor, x: &DenseTensor) -> Matrix {
    let n_in = k.order() - 1;
    let dims = &x.shape()[1..];
    let b = x.shape()[0];
    let sample = x.len() / b;
    let r = k.rank();
    let factors = &k.factors()[..n_in];
    let mut z = Vec::with_capacity(b * r);
    for s in x.data().chunks_exact(sample) {
        z.extend(contract_rank_one(s, dims, factors, None));
    }
    Matrix::new(b, r, z).expect("B x R")
}

/// `y_s = U^(N) (coef ⊙ z_s) + b`.
pub(crate) fn kruskal_output(z: &Matrix, out_factor: &Matrix, coef: &[f64], bias: &[f64]) -> Matrix {
    let (b, r) = (z.rows(), z.cols());
    let o = out_factor.rows();
    let mut scaled = z.data().to_vec();
    for row in scaled.chunks_exact_mut(r) {
        for (v, &c) in row.iter_mut().zip(coef) {
            *v *= c;
        }
    }
    let mut y: Vec<f64> = bias.iter().copied().cycle().take(b * o).collect();
    let ut = transpose(out_factor);
    gemm(&scaled, ut.data(), &mut y, b, r, o);
    Matrix::new(b, o, y).expect("B x O")
}

/// Per-component multiplicity of a tied CP sketch: the 0/1 mask, or how many times
/// each component was selected.
pub(crate) fn component_multiplicity(s: &ModeSketch, rank: usize) -> Result<Vec<f64>> {
    match s {
        ModeSketch::Identity => Ok(vec![1.0; rank]),
        ModeSketch::Mask(m) if m.len() == rank => Ok(m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()),
        ModeSketch::Mask(m) => shape_err(format!("mask of length {} for rank {rank}", m.len())),
        ModeSketch::Select(idx) => {
            let mut counts = vec![0.0; rank];
            for &i in idx {
                if i >= rank {
                    return shape_err(format!("selected component {i} out of range for rank {rank}"));
                }
                counts[i] += 1.0;
            }
            Ok(counts)
        }
    }
}

/// Effective CP coefficients `scale · λ ⊙ multiplicity` for an optional draw.
pub(crate) fn kruskal_coefficients(k: &KruskalTensor, draw: Option<&SketchDraw>, scale: f64) -> Result<Vec<f64>> {
    let lambda = k.weights_or_ones();
    let Some(draw) = draw else {
        return Ok(lambda);
    };
    let SketchDraw::Tied(s) = draw else {
        return Err(TrlError::Contract(
            "CP sketching needs a single draw shared by all modes".into(),
        ));
    };
    let mult = component_multiplicity(s, k.rank())?;
    Ok(lambda
        .iter()
        .zip(&mult)
        .map(|(&l, &m)| scale * l * m)
        .collect())
}

/// Projection of a batch onto the Tucker input factors: `X ×_1 U^(0)ᵀ ⋯ ×_N U^(N-1)ᵀ`,
/// optionally leaving one input mode unprojected.
pub(crate) fn tucker_project(t: &TuckerTensor, x: &DenseTensor, skip: Option<usize>) -> Result<DenseTensor> {
    let n_in = t.order() - 1;
    let mut p = x.clone();
    for k in 0..n_in {
        if skip != Some(k) {
            p = mode_dot(&p, &transpose(&t.factors()[k]), k + 1)?;
        }
    }
    Ok(p)
}

/// Tucker forward on an already-sketched weight: returns `(Y, P, H)` with
/// `H = P_flat · G_[in×out]` and `Y = scale · H U^(N)ᵀ + b`.
pub(crate) fn tucker_forward_parts(t: &TuckerTensor, x: &DenseTensor, bias: &[f64], scale: f64) -> Result<(Matrix, Matrix, Matrix)> {
    let b = x.shape()[0];
    let ranks = t.ranks();
    let r_out = ranks[ranks.len() - 1];
    let r_in: usize = ranks[..ranks.len() - 1].iter().product();
    let p = Matrix::new(b, r_in, tucker_project(t, x, None)?.into_data())?;
    let mut h = vec![0.0; b * r_out];
    gemm(p.data(), t.core().data(), &mut h, b, r_in, r_out);
    let h = Matrix::new(b, r_out, h)?;
    let u_out = &t.factors()[t.order() - 1];
    let o = u_out.rows();
    let mut hs = h.data().to_vec();
    hs.iter_mut().for_each(|v| *v *= scale);
    let mut y: Vec<f64> = bias.iter().copied().cycle().take(b * o).collect();
    gemm(&hs, transpose(u_out).data(), &mut y, b, r_out, o);
    Ok((Matrix::new(b, o, y)?, p, h))
}

/// Eval-mode forward: unsketched weight, no scaling. Returns `B × O`.
pub fn forward(model: &TrlModel, x: &DenseTensor) -> Result<Matrix> {
    model.check_input(x)?;
    match &model.weight {
        Decomposition::Kruskal(k) => {
            let z = kruskal_projections(k, x);
            let coef = kruskal_coefficients(k, None, 1.0)?;
            Ok(kruskal_output(&z, k.factors().last().expect("order >= 2"), &coef, &model.bias))
        }
        Decomposition::Tucker(t) => Ok(tucker_forward_parts(t, x, &model.bias, 1.0)?.0),
    }
}

/// Train-mode forward under a fixed sketch draw, including the `1/θ` output scale
/// when the model uses inverted scaling. The bias is not scaled.
pub fn forward_srr(model: &TrlModel, x: &DenseTensor, draw: &SketchDraw) -> Result<Matrix> {
    model.check_input(x)?;
    let scale = model.train_scale();
    match &model.weight {
        Decomposition::Kruskal(k) => {
            let z = kruskal_projections(k, x);
            let coef = kruskal_coefficients(k, Some(draw), scale)?;
            Ok(kruskal_output(&z, k.factors().last().expect("order >= 2"), &coef, &model.bias))
        }
        Decomposition::Tucker(t) => {
            let sketched = apply_sketch_tucker(t, draw)?;
            Ok(tucker_forward_parts(&sketched, x, &model.bias, scale)?.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::kruskal_to_full;
    use crate::rng::seeded;
    use crate::tensor::inner_contract;

    fn col(v: &[f64]) -> Matrix {
        Matrix::column_vector(v).unwrap()
    }

    #[test]
    fn zero_weight_outputs_bias() {
        let mut g = seeded(1);
        let k = KruskalTensor::new(None, vec![Matrix::zeros(3, 2), Matrix::zeros(2, 2), Matrix::zeros(2, 2)]).unwrap();
        let m = TrlModel::new(Decomposition::Kruskal(k), vec![0.5, -1.0], SketchSpec::none(), ScaleMode::Inverted).unwrap();
        let x = DenseTensor::random_normal(&[4, 3, 2], 1.0, &mut g);
        let y = forward(&m, &x).unwrap();
        for s in 0..4 {
            assert_eq!(y.row(s), &[0.5, -1.0]);
        }
    }

    #[test]
    fn rank_one_closed_form() {
        let a = [1.0, -2.0, 0.5];
        let b = [3.0, 1.0];
        let c = [2.0, -1.0];
        let k = KruskalTensor::new(None, vec![col(&a), col(&b), col(&c)]).unwrap();
        let m = TrlModel::new(Decomposition::Kruskal(k), vec![0.25, 0.75], SketchSpec::none(), ScaleMode::Inverted).unwrap();
        let xk = KruskalTensor::new(None, vec![col(&[1.0]), col(&a), col(&b)]).unwrap();
        let x = kruskal_to_full(&xk);
        let y = forward(&m, &x).unwrap();
        // ‖a‖² = 5.25, ‖b‖² = 10.
        let s = 5.25 * 10.0;
        assert!((y.get(0, 0) - (s * 2.0 + 0.25)).abs() < 1e-12);
        assert!((y.get(0, 1) - (-s + 0.75)).abs() < 1e-12);
    }

    #[test]
    fn factored_matches_materialized() {
        let mut g = seeded(2);
        let m = TrlModel::init_kruskal(&[3, 2], 2, 2, SketchSpec::none(), ScaleMode::Inverted, &mut g).unwrap();
        let x = DenseTensor::random_normal(&[5, 3, 2], 1.0, &mut g);
        let y = forward(&m, &x).unwrap();
        let w = m.weight.to_full();
        let y_ref = inner_contract(&x, &w, 2).unwrap();
        for (a, b) in y.data().iter().zip(y_ref.data()) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn contract_rank_one_leave_one_out() {
        let mut g = seeded(3);
        let dims = [3, 4, 2];
        let f: Vec<Matrix> = dims.iter().map(|&d| Matrix::random_normal(d, 2, 1.0, &mut g)).collect();
        let x = DenseTensor::random_normal(&dims, 1.0, &mut g);
        for skip in 0..3 {
            let got = contract_rank_one(x.data(), &dims, &f, Some(skip));
            for i in 0..dims[skip] {
                for r in 0..2 {
                    let mut want = 0.0;
                    for a in 0..3 {
                        for b in 0..4 {
                            for c in 0..2 {
                                let idx = [a, b, c];
                                if idx[skip] != i {
                                    continue;
                                }
                                let mut p = x.get(&idx);
                                for k in 0..3 {
                                    if k != skip {
                                        p *= f[k].get(idx[k], r);
                                    }
                                }
                                want += p;
                            }
                        }
                    }
                    assert!((got[i * 2 + r] - want).abs() < 1e-12);
                }
            }
        }
        let single = contract_rank_one(&[1.0, 2.0], &[2], &f[..1], Some(0));
        assert_eq!(single, vec![1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut g = seeded(4);
        let m = TrlModel::init_kruskal(&[3, 2], 2, 2, SketchSpec::none(), ScaleMode::Inverted, &mut g).unwrap();
        assert!(forward(&m, &DenseTensor::zeros(&[1, 2, 3])).is_err());
        let k = KruskalTensor::new(None, vec![Matrix::zeros(3, 2), Matrix::zeros(2, 2)]).unwrap();
        assert!(TrlModel::new(Decomposition::Kruskal(k.clone()), vec![0.0; 3], SketchSpec::none(), ScaleMode::Inverted).is_err());
        assert!(TrlModel::new(Decomposition::Kruskal(k), vec![0.0; 2], SketchSpec::bernoulli(0.5, false), ScaleMode::Inverted).is_err());
    }
}
