//! Self-checks that compare the library against brute-force oracles.
//!
//! Each check is named `group/name`. The gradient checks call the backward function
//! held by the [`Verifier`], so a deliberately broken one can be injected to confirm
//! that the checks catch it.

use std::time::Instant;

use crate::decomp::{kruskal_to_full, tucker_to_full, Decomposition, KruskalTensor, TuckerTensor};
use crate::error::Result;
use crate::rng::{seeded, Rng};
use crate::sketch::{apply_sketch_kruskal, apply_sketch_tucker, draw_sketch, ModeSketch, SketchDraw, SketchSpec};
use crate::tensor::{fold, inner_contract, khatri_rao, matmul, mode_dot, transpose, unfold, DenseTensor, Matrix};
use crate::trl::{
    backward, expected_stochastic_loss, forward, forward_srr, mse_loss, objective_value, ExpectationMethod, Gradients,
    Objective, ScaleMode, TrlModel,
};

pub type BackwardFn = fn(&TrlModel, &DenseTensor, &Matrix, Objective<'_>) -> Result<Gradients>;

type Outcome = std::result::Result<(), String>;

/// Finite-difference step and tolerance for the gradient checks.
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-5;
/// Denominator floor of the relative error, for entries whose gradient is near zero.
pub const FD_FLOOR: f64 = 1e-3;

pub struct Check {
    pub group: &'static str,
    pub name: &'static str,
    run: fn(&Verifier) -> Outcome,
}

impl Check {
    pub fn full_name(&self) -> String {
        format!("{}/{}", self.group, self.name)
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub outcome: Outcome,
    pub seconds: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.outcome.is_ok()
    }
}

pub struct Verifier {
    backward: BackwardFn,
}

impl Default for Verifier {
    fn default() -> Self {
        Self { backward }
    }
}

impl Verifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_backward(backward: BackwardFn) -> Self {
        Self { backward }
    }

    pub fn checks() -> &'static [Check] {
        CHECKS
    }

    /// Runs every check whose `group/name` contains `filter`.
    pub fn run(&self, filter: Option<&str>) -> Vec<CheckReport> {
        CHECKS
            .iter()
            .filter(|c| filter.is_none_or(|f| c.full_name().contains(f)))
            .map(|c| {
                let start = Instant::now();
                let outcome = (c.run)(self);
                CheckReport {
                    name: c.full_name(),
                    outcome,
                    seconds: start.elapsed().as_secs_f64(),
                }
            })
            .collect()
    }
}

const CHECKS: &[Check] = &[
    Check { group: "unfold", name: "roundtrip", run: unfold_roundtrip },
    Check { group: "unfold", name: "fiber_layout", run: unfold_layout },
    Check { group: "mode_dot", name: "brute_force", run: mode_dot_brute_force },
    Check { group: "mode_dot", name: "commute", run: mode_dot_commute },
    Check { group: "contract", name: "inner", run: contract_inner },
    Check { group: "khatri_rao", name: "kron_columns", run: khatri_rao_columns },
    Check { group: "cp_as_tucker", name: "super_diagonal", run: cp_as_tucker },
    Check { group: "forward", name: "unfolded_form", run: forward_unfolded_form },
    Check { group: "sketch", name: "explicit_matrix", run: sketch_explicit_matrix },
    Check { group: "sketch", name: "element_equivalence", run: sketch_element_equivalence },
    Check { group: "unbiased", name: "inverted_scaling", run: unbiased_inverted_scaling },
    Check { group: "enum", name: "closed_form", run: enum_closed_form },
    Check { group: "enum", name: "direct_masks", run: enum_direct_masks },
    Check { group: "grad", name: "cp_stochastic", run: grad_cp_stochastic },
    Check { group: "grad", name: "cp_deterministic", run: grad_cp_deterministic },
    Check { group: "grad", name: "tucker_bernoulli", run: grad_tucker_bernoulli },
    Check { group: "grad", name: "tucker_replacement", run: grad_tucker_replacement },
    Check { group: "grad", name: "bias_residual_sums", run: grad_bias },
];

trait OrFail<T> {
    fn or_fail(self) -> std::result::Result<T, String>;
}

impl<T> OrFail<T> for Result<T> {
    fn or_fail(self) -> std::result::Result<T, String> {
        self.map_err(|e| e.to_string())
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// `|a − b| ≤ tol · max(1, |a|, |b|)` elementwise.
fn close(a: &[f64], b: &[f64], tol: f64, what: &str) -> Outcome {
    ensure(a.len() == b.len(), || format!("{what}: lengths {} and {}", a.len(), b.len()))?;
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        let scale = x.abs().max(y.abs()).max(1.0);
        ensure((x - y).abs() <= tol * scale, || format!("{what}: entry {i} is {x}, expected {y}"))?;
    }
    Ok(())
}

fn rel_close(a: f64, b: f64, tol: f64, what: &str) -> Outcome {
    ensure((a - b).abs() <= tol * a.abs().max(b.abs()), || format!("{what}: {a} vs {b}"))
}

/// Every multi-index of `shape`, last index fastest.
fn multi_indices(shape: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &d in shape {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..d).map(move |i| {
                    let mut q = p.clone();
                    q.push(i);
                    q
                })
            })
            .collect();
    }
    out
}

const SHAPES: &[&[usize]] = &[&[4], &[3, 5], &[2, 3, 4], &[3, 1, 2, 2]];

fn unfold_roundtrip(_: &Verifier) -> Outcome {
    let mut g = seeded(11);
    for &shape in SHAPES {
        let t = DenseTensor::random_normal(shape, 1.0, &mut g);
        for mode in 0..shape.len() {
            let back = fold(&unfold(&t, mode).or_fail()?, mode, shape).or_fail()?;
            ensure(back == t, || format!("fold(unfold(t, {mode})) != t for shape {shape:?}"))?;
        }
    }
    Ok(())
}

fn unfold_layout(_: &Verifier) -> Outcome {
    let mut g = seeded(12);
    for &shape in SHAPES {
        let t = DenseTensor::random_normal(shape, 1.0, &mut g);
        for mode in 0..shape.len() {
            let m = unfold(&t, mode).or_fail()?;
            for idx in multi_indices(shape) {
                let mut col = 0;
                for (k, (&i, &d)) in idx.iter().zip(shape).enumerate() {
                    if k != mode {
                        col = col * d + i;
                    }
                }
                ensure(m.get(idx[mode], col) == t.get(&idx), || {
                    format!("mode-{mode} unfolding misplaces {idx:?} of shape {shape:?}")
                })?;
            }
        }
    }
    Ok(())
}

fn brute_mode_dot(t: &DenseTensor, m: &Matrix, mode: usize) -> DenseTensor {
    let mut shape = t.shape().to_vec();
    shape[mode] = m.rows();
    let mut out = DenseTensor::zeros(&shape);
    for idx in multi_indices(&shape) {
        let mut src = idx.clone();
        let mut acc = 0.0;
        for i in 0..t.shape()[mode] {
            src[mode] = i;
            acc += m.get(idx[mode], i) * t.get(&src);
        }
        out.set(&idx, acc);
    }
    out
}

fn mode_dot_brute_force(_: &Verifier) -> Outcome {
    let mut g = seeded(13);
    for &shape in SHAPES {
        let t = DenseTensor::random_normal(shape, 1.0, &mut g);
        for mode in 0..shape.len() {
            let m = Matrix::random_normal(3, shape[mode], 1.0, &mut g);
            let got = mode_dot(&t, &m, mode).or_fail()?;
            let want = brute_mode_dot(&t, &m, mode);
            ensure(got.shape() == want.shape(), || format!("mode-{mode} product shape {:?}", got.shape()))?;
            close(got.data(), want.data(), 1e-12, &format!("mode-{mode} product of {shape:?}"))?;
        }
    }
    Ok(())
}

fn mode_dot_commute(_: &Verifier) -> Outcome {
    let mut g = seeded(14);
    let shape = [3, 4, 2];
    let t = DenseTensor::random_normal(&shape, 1.0, &mut g);
    for a in 0..3 {
        for b in a + 1..3 {
            let ma = Matrix::random_normal(2, shape[a], 1.0, &mut g);
            let mb = Matrix::random_normal(5, shape[b], 1.0, &mut g);
            let ab = mode_dot(&mode_dot(&t, &ma, a).or_fail()?, &mb, b).or_fail()?;
            let ba = mode_dot(&mode_dot(&t, &mb, b).or_fail()?, &ma, a).or_fail()?;
            close(ab.data(), ba.data(), 1e-12, &format!("modes {a} and {b}"))?;
        }
    }
    Ok(())
}

fn contract_inner(_: &Verifier) -> Outcome {
    let mut g = seeded(15);
    let x = DenseTensor::random_normal(&[4, 3, 2], 1.0, &mut g);
    let w = DenseTensor::random_normal(&[3, 2, 5], 1.0, &mut g);
    let got = inner_contract(&x, &w, 2).or_fail()?;
    ensure(got.shape() == [4, 5], || format!("contraction shape {:?}", got.shape()))?;
    for s in 0..4 {
        for o in 0..5 {
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..2 {
                    acc += x.get(&[s, i, j]) * w.get(&[i, j, o]);
                }
            }
            close(&[got.get(&[s, o])], &[acc], 1e-12, "inner contraction")?;
        }
    }
    let full = inner_contract(&w, &w, 3).or_fail()?;
    let norm: f64 = w.data().iter().map(|v| v * v).sum();
    ensure(full.order() == 0, || "full contraction is not a scalar".into())?;
    close(full.data(), &[norm], 1e-12, "full contraction")
}

fn khatri_rao_columns(_: &Verifier) -> Outcome {
    let mut g = seeded(16);
    let fs: Vec<Matrix> = [3, 2, 4].iter().map(|&d| Matrix::random_normal(d, 3, 1.0, &mut g)).collect();
    let kr = khatri_rao(&fs.iter().collect::<Vec<_>>()).or_fail()?;
    ensure((kr.rows(), kr.cols()) == (24, 3), || format!("Khatri-Rao is {}x{}", kr.rows(), kr.cols()))?;
    for r in 0..3 {
        for idx in multi_indices(&[3, 2, 4]) {
            let row = (idx[0] * 2 + idx[1]) * 4 + idx[2];
            let want = fs[0].get(idx[0], r) * fs[1].get(idx[1], r) * fs[2].get(idx[2], r);
            close(&[kr.get(row, r)], &[want], 1e-12, "Khatri-Rao column")?;
        }
    }
    Ok(())
}

fn brute_kruskal(k: &KruskalTensor) -> DenseTensor {
    let shape = k.shape();
    let lambda = k.weights_or_ones();
    let mut out = DenseTensor::zeros(&shape);
    for idx in multi_indices(&shape) {
        let v: f64 = (0..k.rank())
            .map(|r| lambda[r] * idx.iter().zip(k.factors()).map(|(&i, f)| f.get(i, r)).product::<f64>())
            .sum();
        out.set(&idx, v);
    }
    out
}

fn brute_tucker(t: &TuckerTensor) -> DenseTensor {
    let shape = t.shape();
    let mut out = DenseTensor::zeros(&shape);
    let core_idx = multi_indices(t.ranks());
    for idx in multi_indices(&shape) {
        let v: f64 = core_idx
            .iter()
            .map(|c| t.core().get(c) * idx.iter().zip(c).zip(t.factors()).map(|((&i, &r), f)| f.get(i, r)).product::<f64>())
            .sum();
        out.set(&idx, v);
    }
    out
}

fn random_kruskal(shape: &[usize], rank: usize, weighted: bool, g: &mut Rng) -> KruskalTensor {
    let factors = shape.iter().map(|&d| Matrix::random_normal(d, rank, 1.0, g)).collect();
    let weights = weighted.then(|| Matrix::random_normal(1, rank, 1.0, g).into_data());
    KruskalTensor::new(weights, factors).expect("consistent factors")
}

fn cp_as_tucker(_: &Verifier) -> Outcome {
    let mut g = seeded(17);
    for (shape, rank) in [(&[3, 4][..], 2), (&[2, 3, 2][..], 3), (&[2, 2, 3, 2][..], 4)] {
        let k = random_kruskal(shape, rank, true, &mut g);
        let cp = kruskal_to_full(&k);
        let tucker = tucker_to_full(&TuckerTensor::from(&k));
        let brute = brute_kruskal(&k);
        close(cp.data(), brute.data(), 1e-12, "CP reconstruction")?;
        close(tucker.data(), brute.data(), 1e-12, "CP as super-diagonal Tucker")?;
    }
    Ok(())
}

fn random_model(input: &[usize], out: usize, rank: usize, theta: f64, g: &mut Rng) -> TrlModel {
    let mut m = TrlModel::init_kruskal(input, out, rank, SketchSpec::bernoulli(theta, true), ScaleMode::Inverted, g)
        .expect("valid model");
    let Decomposition::Kruskal(k) = &mut m.weight else { unreachable!() };
    for f in k.factors_mut() {
        *f = Matrix::random_normal(f.rows(), f.cols(), 1.0, g);
    }
    m.bias = Matrix::random_normal(1, out, 1.0, g).into_data();
    m
}

fn forward_unfolded_form(_: &Verifier) -> Outcome {
    let mut g = seeded(18);
    let input = [3, 2, 2];
    let mut m = random_model(&input, 2, 3, 1.0, &mut g);
    let Decomposition::Kruskal(k) = &m.weight else { unreachable!() };
    let lambda = vec![0.5, -1.5, 2.0];
    m.weight = Decomposition::Kruskal(KruskalTensor::new(Some(lambda.clone()), k.factors().to_vec()).or_fail()?);
    let Decomposition::Kruskal(k) = &m.weight else { unreachable!() };
    let x = DenseTensor::random_normal(&[5, 3, 2, 2], 1.0, &mut g);
    let got = forward(&m, &x).or_fail()?;

    let (inputs, out) = k.factors().split_at(3);
    let kr = khatri_rao(&inputs.iter().collect::<Vec<_>>()).or_fail()?;
    let out = &out[0];
    for s in 0..5 {
        let xs = &x.data()[s * 12..(s + 1) * 12];
        for o in 0..2 {
            let mut want = m.bias[o];
            for r in 0..3 {
                let z: f64 = (0..12).map(|i| kr.get(i, r) * xs[i]).sum();
                want += out.get(o, r) * lambda[r] * z;
            }
            let have = got.get(s, o);
            ensure((have - want).abs() <= 1e-10 * want.abs().max(1.0), || {
                format!("sample {s} output {o}: {have} vs {want}")
            })?;
        }
    }
    Ok(())
}

fn all_masks(rank: usize) -> impl Iterator<Item = Vec<bool>> {
    (0u32..1 << rank).map(move |bits| (0..rank).map(|r| bits >> r & 1 == 1).collect())
}

// Tucker sketch built from the explicit matrices: core ×_k M_k, factors U_k M_kᵀ.
fn explicit_tucker_sketch(t: &TuckerTensor, mats: &[Matrix]) -> Result<DenseTensor> {
    let mut core = t.core().clone();
    let mut factors = Vec::new();
    for (k, (u, m)) in t.factors().iter().zip(mats).enumerate() {
        core = mode_dot(&core, m, k)?;
        factors.push(matmul(u, &transpose(m))?);
    }
    Ok(brute_tucker(&TuckerTensor::new(core, factors)?))
}

fn sketch_explicit_matrix(_: &Verifier) -> Outcome {
    let mut g = seeded(19);
    for rank in 1..=6 {
        let k = random_kruskal(&[2, 3, 2], rank, true, &mut g);
        let as_tucker = TuckerTensor::from(&k);
        for mask in all_masks(rank) {
            let s = ModeSketch::Mask(mask.clone());
            let m = s.matrix(rank);
            let want = explicit_tucker_sketch(&as_tucker, &[m.clone(), m.clone(), m])
                .or_fail()?;
            let draw = SketchDraw::Tied(s);
            let cp = kruskal_to_full(&apply_sketch_kruskal(&k, &draw).or_fail()?);
            close(cp.data(), want.data(), 1e-12, &format!("CP mask {mask:?}"))?;
            let tucker = tucker_to_full(&apply_sketch_tucker(&as_tucker, &draw).or_fail()?);
            close(tucker.data(), want.data(), 1e-12, &format!("Tucker mask {mask:?}"))?;
        }
    }
    let core = DenseTensor::random_normal(&[3, 2, 4], 1.0, &mut g);
    let factors = vec![
        Matrix::random_normal(2, 3, 1.0, &mut g),
        Matrix::random_normal(3, 2, 1.0, &mut g),
        Matrix::random_normal(2, 4, 1.0, &mut g),
    ];
    let t = TuckerTensor::new(core, factors).or_fail()?;
    for spec in [SketchSpec::bernoulli(0.5, false), SketchSpec::replacement(0.6, false)] {
        for _ in 0..20 {
            let draw = draw_sketch(&spec, t.ranks(), &mut g).or_fail()?;
            let mats: Vec<Matrix> = (0..3).map(|k| draw.mode(k).matrix(t.ranks()[k])).collect();
            let want = explicit_tucker_sketch(&t, &mats).or_fail()?;
            let got = tucker_to_full(&apply_sketch_tucker(&t, &draw).or_fail()?);
            close(got.data(), want.data(), 1e-12, &format!("Tucker draw {draw:?}"))?;
        }
    }
    for _ in 0..20 {
        let k = random_kruskal(&[2, 3], 5, true, &mut g);
        let draw = draw_sketch(&SketchSpec::replacement(0.6, true), &[5], &mut g).or_fail()?;
        let m = draw.mode(0).matrix(5);
        let mt = transpose(&m);
        let lambda = Matrix::column_vector(&k.weights_or_ones()).or_fail()?;
        let weights = matmul(&m, &lambda).or_fail()?.into_data();
        let factors = k.factors().iter().map(|u| matmul(u, &mt)).collect::<Result<Vec<_>>>().or_fail()?;
        let want = brute_kruskal(&KruskalTensor::new(Some(weights), factors).or_fail()?);
        let got = kruskal_to_full(&apply_sketch_kruskal(&k, &draw).or_fail()?);
        close(got.data(), want.data(), 1e-12, &format!("CP selection {draw:?}"))?;
    }
    Ok(())
}

fn sketch_element_equivalence(_: &Verifier) -> Outcome {
    let mut g = seeded(20);
    for rank in 1..=5 {
        let theta = 0.7;
        let m = random_model(&[3, 2], 2, rank, theta, &mut g);
        let x = DenseTensor::random_normal(&[4, 3, 2], 1.0, &mut g);
        let Decomposition::Kruskal(k) = &m.weight else { unreachable!() };
        for mask in all_masks(rank) {
            let got = forward_srr(&m, &x, &SketchDraw::tied_mask(&mask)).or_fail()?;
            let reduced = apply_sketch_kruskal(k, &SketchDraw::tied_mask(&mask)).or_fail()?;
            let w = kruskal_to_full(&reduced);
            let lin = inner_contract(&x, &w, 2).or_fail()?;
            let want: Vec<f64> = lin
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v / theta + m.bias[i % 2])
                .collect();
            close(got.data(), &want, 1e-12, &format!("mask {mask:?}"))?;
        }
    }
    Ok(())
}

fn unbiased_inverted_scaling(_: &Verifier) -> Outcome {
    let mut g = seeded(21);
    for theta in [0.5f64, 0.3, 0.9] {
        for rank in 1..=5 {
            let k = random_kruskal(&[2, 3, 2], rank, true, &mut g);
            let full = brute_kruskal(&k);
            let mut mean = DenseTensor::zeros(full.shape());
            for mask in all_masks(rank) {
                let kept = mask.iter().filter(|&&b| b).count() as i32;
                let p = theta.powi(kept) * (1.0 - theta).powi(rank as i32 - kept);
                let sk = apply_sketch_kruskal(&k, &SketchDraw::tied_mask(&mask)).or_fail()?;
                for (acc, v) in mean.data_mut().iter_mut().zip(kruskal_to_full(&sk).data()) {
                    *acc += p * v / theta;
                }
            }
            close(mean.data(), full.data(), 1e-10, &format!("theta {theta} rank {rank}"))?;
        }
    }
    Ok(())
}

fn enum_closed_form(_: &Verifier) -> Outcome {
    let mut g = seeded(22);
    for (i, theta) in [0.3f64, 0.5, 0.9].into_iter().cycle().take(9).enumerate() {
        let rank = 1 + i % 8;
        let m = random_model(&[3, 2], 2, rank, theta, &mut g);
        let x = DenseTensor::random_normal(&[6, 3, 2], 1.0, &mut g);
        let y = Matrix::random_normal(6, 2, 1.0, &mut g);
        let e = expected_stochastic_loss(&m, &x, &y, theta, ExpectationMethod::Enumerate).or_fail()?;
        let c = expected_stochastic_loss(&m, &x, &y, theta, ExpectationMethod::ClosedForm).or_fail()?;
        rel_close(e, c, 1e-10, &format!("rank {rank} theta {theta}"))?;
    }
    Ok(())
}

fn enum_direct_masks(_: &Verifier) -> Outcome {
    let mut g = seeded(23);
    for rank in [1, 3, 5] {
        let theta = 0.4;
        let m = random_model(&[2, 3], 1, rank, theta, &mut g);
        let x = DenseTensor::random_normal(&[5, 2, 3], 1.0, &mut g);
        let y = Matrix::random_normal(5, 1, 1.0, &mut g);
        let mut want = 0.0;
        for mask in all_masks(rank) {
            let kept = mask.iter().filter(|&&b| b).count() as i32;
            let p = theta.powi(kept) * (1.0 - theta).powi(rank as i32 - kept);
            want += p * mse_loss(&forward_srr(&m, &x, &SketchDraw::tied_mask(&mask)).or_fail()?, &y).or_fail()?;
        }
        let got = expected_stochastic_loss(&m, &x, &y, theta, ExpectationMethod::Enumerate).or_fail()?;
        rel_close(got, want, 1e-12, &format!("rank {rank}"))?;
    }
    Ok(())
}

/// Compares `v.backward` against central differences of [`objective_value`].
pub fn finite_difference_check(
    v: &Verifier,
    model: &TrlModel,
    x: &DenseTensor,
    y: &Matrix,
    objective: Objective<'_>,
) -> Outcome {
    let grads = (v.backward)(model, x, y, objective).or_fail()?;
    let blocks: Vec<Vec<f64>> = grads.blocks().iter().map(|b| b.to_vec()).collect();
    let mut probe = model.clone();
    let n_blocks = probe.parameter_blocks_mut().len();
    ensure(n_blocks == blocks.len(), || format!("{} gradient blocks for {n_blocks} parameters", blocks.len()))?;
    for (bi, block) in blocks.iter().enumerate() {
        ensure(probe.parameter_blocks_mut()[bi].len() == block.len(), || format!("block {bi} has the wrong length"))?;
        for (j, &analytic) in block.iter().enumerate() {
            let orig = probe.parameter_blocks_mut()[bi][j];
            probe.parameter_blocks_mut()[bi][j] = orig + FD_STEP;
            let plus = objective_value(&probe, x, y, objective).or_fail()?;
            probe.parameter_blocks_mut()[bi][j] = orig - FD_STEP;
            let minus = objective_value(&probe, x, y, objective).or_fail()?;
            probe.parameter_blocks_mut()[bi][j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR);
            ensure(err < FD_TOLERANCE, || {
                format!("block {bi} entry {j}: analytic {analytic}, numeric {numeric}")
            })?;
        }
    }
    Ok(())
}

fn fd_instances(seed: u64) -> impl Iterator<Item = (Rng, usize)> {
    (0..5u64).map(move |i| (seeded(seed * 100 + i), 1 + i as usize))
}

fn grad_cp_stochastic(v: &Verifier) -> Outcome {
    for (mut g, rank) in fd_instances(24) {
        let m = random_model(&[3, 2], 2, rank, 0.6, &mut g);
        let x = DenseTensor::random_normal(&[4, 3, 2], 1.0, &mut g);
        let y = Matrix::random_normal(4, 2, 1.0, &mut g);
        let draw = draw_sketch(&m.sketch, &m.ranks(), &mut g).or_fail()?;
        finite_difference_check(v, &m, &x, &y, Objective::Stochastic(&draw))?;
    }
    Ok(())
}

fn grad_cp_deterministic(v: &Verifier) -> Outcome {
    for (mut g, rank) in fd_instances(25) {
        let m = random_model(&[2, 3], 1, rank, 0.6, &mut g);
        let x = DenseTensor::random_normal(&[4, 2, 3], 1.0, &mut g);
        let y = Matrix::random_normal(4, 1, 1.0, &mut g);
        finite_difference_check(v, &m, &x, &y, Objective::Deterministic { theta: 0.6 })?;
        finite_difference_check(v, &m, &x, &y, Objective::mse())?;
    }
    Ok(())
}

fn tucker_instance(spec: SketchSpec, g: &mut Rng, ranks: &[usize]) -> Result<(TrlModel, DenseTensor, Matrix)> {
    let mut m = TrlModel::init_tucker(&[3, 2], 2, ranks, spec, ScaleMode::Inverted, g)?;
    m.bias = vec![0.2, -0.4];
    let x = DenseTensor::random_normal(&[3, 3, 2], 1.0, g);
    let y = Matrix::random_normal(3, 2, 1.0, g);
    Ok((m, x, y))
}

fn grad_tucker_bernoulli(v: &Verifier) -> Outcome {
    for (mut g, i) in fd_instances(26) {
        let tied = i % 2 == 0;
        let ranks = if tied { vec![2, 2, 2] } else { vec![3, 2, 2] };
        let (m, x, y) = tucker_instance(SketchSpec::bernoulli(0.6, tied), &mut g, &ranks).or_fail()?;
        let draw = draw_sketch(&m.sketch, &m.ranks(), &mut g).or_fail()?;
        finite_difference_check(v, &m, &x, &y, Objective::Stochastic(&draw))?;
    }
    Ok(())
}

fn grad_tucker_replacement(v: &Verifier) -> Outcome {
    for (mut g, _) in fd_instances(27) {
        let (m, x, y) = tucker_instance(SketchSpec::replacement(0.7, false), &mut g, &[3, 2, 2]).or_fail()?;
        let draw = draw_sketch(&m.sketch, &m.ranks(), &mut g).or_fail()?;
        finite_difference_check(v, &m, &x, &y, Objective::Stochastic(&draw))?;
        finite_difference_check(v, &m, &x, &y, Objective::mse())?;
    }
    Ok(())
}

fn grad_bias(v: &Verifier) -> Outcome {
    let mut g = seeded(28);
    let m = random_model(&[3, 2], 3, 2, 0.5, &mut g);
    let x = DenseTensor::random_normal(&[5, 3, 2], 1.0, &mut g);
    let y = Matrix::random_normal(5, 3, 1.0, &mut g);
    let pred = forward(&m, &x).or_fail()?;
    let grads = (v.backward)(&m, &x, &y, Objective::mse()).or_fail()?;
    let want: Vec<f64> = (0..3)
        .map(|o| (0..5).map(|s| pred.get(s, o) - y.get(s, o)).sum::<f64>() * 2.0 / 5.0)
        .collect();
    close(&grads.bias, &want, 1e-12, "bias gradient")
}
