#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trl_core::trl::{backward, objective_value, Objective, ScaleMode, TrlModel};
use trl_core::{Decomposition, DenseTensor, KruskalTensor, Matrix, SketchSpec, TuckerTensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// CP model with standard normal factors, weights and bias.
pub fn cp_model(input: &[usize], out: usize, rank: usize, sketch: SketchSpec, weighted: bool, g: &mut ChaCha8Rng) -> TrlModel {
    let mut factors: Vec<Matrix> = input.iter().map(|&d| Matrix::random_normal(d, rank, 1.0, g)).collect();
    factors.push(Matrix::random_normal(out, rank, 1.0, g));
    let weights = weighted.then(|| Matrix::random_normal(1, rank, 1.0, g).into_data());
    let k = KruskalTensor::new(weights, factors).unwrap();
    let bias = Matrix::random_normal(1, out, 1.0, g).into_data();
    TrlModel::new(Decomposition::Kruskal(k), bias, sketch, ScaleMode::Inverted).unwrap()
}

pub fn tucker_model(input: &[usize], out: usize, ranks: &[usize], sketch: SketchSpec, g: &mut ChaCha8Rng) -> TrlModel {
    let mut dims = input.to_vec();
    dims.push(out);
    let core = DenseTensor::random_normal(ranks, 1.0, g);
    let factors = dims.iter().zip(ranks).map(|(&d, &r)| Matrix::random_normal(d, r, 1.0, g)).collect();
    let bias = Matrix::random_normal(1, out, 1.0, g).into_data();
    TrlModel::new(Decomposition::Tucker(TuckerTensor::new(core, factors).unwrap()), bias, sketch, ScaleMode::Inverted).unwrap()
}

pub fn batch(input: &[usize], out: usize, b: usize, g: &mut ChaCha8Rng) -> (DenseTensor, Matrix) {
    let mut shape = vec![b];
    shape.extend_from_slice(input);
    (DenseTensor::random_normal(&shape, 1.0, g), Matrix::random_normal(b, out, 1.0, g))
}

pub const FD_STEP: f64 = 1e-5;

/// Largest relative error between the analytic gradient and central differences
/// of the objective, with denominators floored at `floor`.
pub fn max_fd_error(model: &TrlModel, x: &DenseTensor, y: &Matrix, obj: Objective<'_>, floor: f64) -> f64 {
    let grads = backward(model, x, y, obj).unwrap();
    let analytic: Vec<Vec<f64>> = grads.blocks().iter().map(|b| b.to_vec()).collect();
    let mut probe = model.clone();
    assert_eq!(probe.parameter_blocks_mut().len(), analytic.len());
    let mut worst: f64 = 0.0;
    for (bi, block) in analytic.iter().enumerate() {
        assert_eq!(probe.parameter_blocks_mut()[bi].len(), block.len());
        for (j, &a) in block.iter().enumerate() {
            let orig = probe.parameter_blocks_mut()[bi][j];
            probe.parameter_blocks_mut()[bi][j] = orig + FD_STEP;
            let plus = objective_value(&probe, x, y, obj).unwrap();
            probe.parameter_blocks_mut()[bi][j] = orig - FD_STEP;
            let minus = objective_value(&probe, x, y, obj).unwrap();
            probe.parameter_blocks_mut()[bi][j] = orig;
            let n = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(floor));
        }
    }
    worst
}

pub fn bernoulli_weight(mask: &[bool], theta: f64) -> f64 {
    let kept = mask.iter().filter(|&&b| b).count() as i32;
    theta.powi(kept) * (1.0 - theta).powi(mask.len() as i32 - kept)
}

pub fn all_masks(rank: usize) -> Vec<Vec<bool>> {
    (0u32..1 << rank).map(|b| (0..rank).map(|r| b >> r & 1 == 1).collect()).collect()
}

pub fn moving_average(v: &[f64], window: usize) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            v[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}
