//! Rank sketching of decomposed tensors.
//!
//! A sketch matrix `M^(k)` acts on the rank dimension of mode `k`: the factor becomes
//! `U^(k) (M^(k))ᵀ` and the core `G ×_k M^(k)`. Two families are supported, both
//! applied by selection rather than by forming `M^(k)`:
//!
//! * Bernoulli: `M = diag(λ)` with `λ_r ~ Bernoulli(θ)`, which zeroes dropped columns
//!   and core slices;
//! * with replacement: `M` has `K` rows, each a row of the identity chosen uniformly
//!   at random, which gathers `K` (possibly repeated) columns and slices.
//!
//! For CP one draw is shared by every mode; Tucker draws each mode independently.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decomp::{KruskalTensor, TuckerTensor};
use crate::error::{shape_err, Result, TrlError};
use crate::tensor::{DenseTensor, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SketchScheme {
    None,
    Bernoulli { theta: f64 },
    /// `keep_rate` is the fraction of the rank kept: `K = max(1, round(keep_rate · R))`.
    Replacement { keep_rate: f64 },
}

impl SketchScheme {
    /// Keep probability (or keep rate); 1 for no sketching.
    pub fn theta(&self) -> f64 {
        match *self {
            SketchScheme::None => 1.0,
            SketchScheme::Bernoulli { theta } => theta,
            SketchScheme::Replacement { keep_rate } => keep_rate,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SketchScheme::None => "none",
            SketchScheme::Bernoulli { .. } => "bernoulli",
            SketchScheme::Replacement { .. } => "replacement",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SketchSpec {
    pub scheme: SketchScheme,
    /// Share one draw across all modes. Required for CP weights.
    pub tie_modes: bool,
}

impl SketchSpec {
    pub fn none() -> Self {
        Self {
            scheme: SketchScheme::None,
            tie_modes: true,
        }
    }

    pub fn bernoulli(theta: f64, tie_modes: bool) -> Self {
        Self {
            scheme: SketchScheme::Bernoulli { theta },
            tie_modes,
        }
    }

    pub fn replacement(keep_rate: f64, tie_modes: bool) -> Self {
        Self {
            scheme: SketchScheme::Replacement { keep_rate },
            tie_modes,
        }
    }

    pub fn theta(&self) -> f64 {
        self.scheme.theta()
    }

    pub fn validate(&self) -> Result<()> {
        let theta = self.theta();
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(TrlError::Config(format!(
                "keep rate must lie in (0, 1], got {theta}"
            )));
        }
        Ok(())
    }
}

/// Realized sketch of one mode's rank dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModeSketch {
    Identity,
    Mask(Vec<bool>),
    Select(Vec<usize>),
}

impl ModeSketch {
    fn check(&self, rank: usize) -> Result<()> {
        match self {
            ModeSketch::Identity => Ok(()),
            ModeSketch::Mask(m) if m.len() != rank => {
                shape_err(format!("mask of length {} for rank {rank}", m.len()))
            }
            ModeSketch::Select(idx) if idx.iter().any(|&i| i >= rank) => {
                shape_err(format!("selection {idx:?} out of range for rank {rank}"))
            }
            _ => Ok(()),
        }
    }

    /// Rank after sketching.
    pub fn sketched_rank(&self, rank: usize) -> usize {
        match self {
            ModeSketch::Select(idx) => idx.len(),
            _ => rank,
        }
    }

    /// The explicit sketch matrix `M` (sketched rank × rank).
    pub fn matrix(&self, rank: usize) -> Matrix {
        match self {
            ModeSketch::Identity => Matrix::identity(rank),
            ModeSketch::Mask(m) => {
                Matrix::diag(&m.iter().map(|&b| f64::from(u8::from(b))).collect::<Vec<_>>())
            }
            ModeSketch::Select(idx) => {
                let mut out = Matrix::zeros(idx.len(), rank);
                for (j, &i) in idx.iter().enumerate() {
                    out.set(j, i, 1.0);
                }
                out
            }
        }
    }

    /// `U Mᵀ`.
    pub fn apply_columns(&self, u: &Matrix) -> Matrix {
        match self {
            ModeSketch::Identity => u.clone(),
            ModeSketch::Mask(mask) => {
                let mut out = u.clone();
                let cols = out.cols();
                for row in out.data_mut().chunks_exact_mut(cols) {
                    for (v, &keep) in row.iter_mut().zip(mask) {
                        if !keep {
                            *v = 0.0;
                        }
                    }
                }
                out
            }
            ModeSketch::Select(idx) => u.select_columns(idx),
        }
    }

    /// Adjoint of [`apply_columns`](Self::apply_columns): `dŨ M`.
    pub fn pull_back_columns(&self, du: &Matrix, rank: usize) -> Matrix {
        match self {
            ModeSketch::Select(idx) => {
                let mut out = Matrix::zeros(du.rows(), rank);
                for r in 0..du.rows() {
                    for (j, &i) in idx.iter().enumerate() {
                        let v = out.get(r, i) + du.get(r, j);
                        out.set(r, i, v);
                    }
                }
                out
            }
            // diag(mask) is symmetric and idempotent.
            _ => self.apply_columns(du),
        }
    }

    /// `T ×_mode M`.
    pub fn apply_mode(&self, t: &DenseTensor, mode: usize) -> DenseTensor {
        let (lead, dim, tail) = split_at_mode(t.shape(), mode);
        match self {
            ModeSketch::Identity => t.clone(),
            ModeSketch::Mask(mask) => {
                let mut out = t.clone();
                let data = out.data_mut();
                for l in 0..lead {
                    for (i, &keep) in mask.iter().enumerate() {
                        if !keep {
                            let start = (l * dim + i) * tail;
                            data[start..start + tail].iter_mut().for_each(|v| *v = 0.0);
                        }
                    }
                }
                out
            }
            ModeSketch::Select(idx) => {
                let k = idx.len();
                let mut data = Vec::with_capacity(lead * k * tail);
                for l in 0..lead {
                    for &i in idx {
                        let start = (l * dim + i) * tail;
                        data.extend_from_slice(&t.data()[start..start + tail]);
                    }
                }
                let mut shape = t.shape().to_vec();
                shape[mode] = k;
                DenseTensor::new(shape, data).expect("gathered shape is consistent")
            }
        }
    }

    /// Adjoint of [`apply_mode`](Self::apply_mode): `dG̃ ×_mode Mᵀ`.
    pub fn pull_back_mode(&self, dt: &DenseTensor, mode: usize, rank: usize) -> DenseTensor {
        match self {
            ModeSketch::Select(idx) => {
                let (lead, k, tail) = split_at_mode(dt.shape(), mode);
                let mut shape = dt.shape().to_vec();
                shape[mode] = rank;
                let mut out = DenseTensor::zeros(&shape);
                let data = out.data_mut();
                for l in 0..lead {
                    for (j, &i) in idx.iter().enumerate() {
                        let src = &dt.data()[(l * k + j) * tail..(l * k + j + 1) * tail];
                        let dst = &mut data[(l * rank + i) * tail..(l * rank + i + 1) * tail];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                out
            }
            _ => self.apply_mode(dt, mode),
        }
    }
}

fn split_at_mode(shape: &[usize], mode: usize) -> (usize, usize, usize) {
    (
        shape[..mode].iter().product(),
        shape[mode],
        shape[mode + 1..].iter().product(),
    )
}

/// One realization of a [`SketchSpec`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SketchDraw {
    /// A single draw shared by every mode.
    Tied(ModeSketch),
    PerMode(Vec<ModeSketch>),
}

impl SketchDraw {
    pub fn identity() -> Self {
        SketchDraw::Tied(ModeSketch::Identity)
    }

    pub fn tied_mask(mask: &[bool]) -> Self {
        SketchDraw::Tied(ModeSketch::Mask(mask.to_vec()))
    }

    pub fn mode(&self, k: usize) -> &ModeSketch {
        match self {
            SketchDraw::Tied(m) => m,
            SketchDraw::PerMode(ms) => &ms[k],
        }
    }

    fn check_modes(&self, n_modes: usize) -> Result<()> {
        match self {
            SketchDraw::PerMode(ms) if ms.len() != n_modes => {
                shape_err(format!("draw has {} modes, tensor has {n_modes}", ms.len()))
            }
            _ => Ok(()),
        }
    }
}

fn draw_mode<R: Rng + ?Sized>(scheme: &SketchScheme, rank: usize, rng: &mut R) -> ModeSketch {
    match *scheme {
        SketchScheme::None => ModeSketch::Identity,
        SketchScheme::Bernoulli { theta } => {
            ModeSketch::Mask((0..rank).map(|_| rng.random::<f64>() < theta).collect())
        }
        SketchScheme::Replacement { keep_rate } => {
            let k = replacement_count(keep_rate, rank);
            ModeSketch::Select((0..k).map(|_| rng.random_range(0..rank)).collect())
        }
    }
}

/// Number of fibers drawn by the with-replacement scheme: `max(1, round(keep_rate · R))`.
pub fn replacement_count(keep_rate: f64, rank: usize) -> usize {
    ((keep_rate * rank as f64).round() as usize).max(1)
}

/// Draws a sketch for a decomposition with the given per-mode ranks.
///
/// With `tie_modes` a single draw is made; every rank must then be equal (CP passes
/// its single rank).
pub fn draw_sketch<R: Rng + ?Sized>(spec: &SketchSpec, ranks: &[usize], rng: &mut R) -> Result<SketchDraw> {
    spec.validate()?;
    let Some(&first) = ranks.first() else {
        return shape_err("draw_sketch needs at least one rank");
    };
    if spec.tie_modes {
        if ranks.iter().any(|&r| r != first) {
            return Err(TrlError::Contract(format!(
                "a tied draw needs equal ranks, got {ranks:?}"
            )));
        }
        Ok(SketchDraw::Tied(draw_mode(&spec.scheme, first, rng)))
    } else {
        Ok(SketchDraw::PerMode(
            ranks.iter().map(|&r| draw_mode(&spec.scheme, r, rng)).collect(),
        ))
    }
}

/// `⟦G ×_0 M^(0) ⋯ ×_N M^(N); U^(0)(M^(0))ᵀ, …, U^(N)(M^(N))ᵀ⟧`.
pub fn apply_sketch_tucker(t: &TuckerTensor, d: &SketchDraw) -> Result<TuckerTensor> {
    d.check_modes(t.order())?;
    let mut core = t.core().clone();
    let mut factors = Vec::with_capacity(t.order());
    for (k, (u, &rank)) in t.factors().iter().zip(t.ranks()).enumerate() {
        let s = d.mode(k);
        s.check(rank)?;
        core = s.apply_mode(&core, k);
        factors.push(s.apply_columns(u));
    }
    TuckerTensor::new(core, factors)
}

/// CP sketch with the shared matrix `M`: Bernoulli masks multiply λ, selections keep
/// the chosen components (with repeats).
pub fn apply_sketch_kruskal(k: &KruskalTensor, d: &SketchDraw) -> Result<KruskalTensor> {
    let SketchDraw::Tied(s) = d else {
        return Err(TrlError::Contract(
            "CP sketching needs a single draw shared by all modes".into(),
        ));
    };
    s.check(k.rank())?;
    match s {
        ModeSketch::Identity => Ok(k.clone()),
        ModeSketch::Mask(mask) => {
            let weights = k
                .weights_or_ones()
                .iter()
                .zip(mask)
                .map(|(&l, &keep)| if keep { l } else { 0.0 })
                .collect();
            KruskalTensor::new(Some(weights), k.factors().to_vec())
        }
        ModeSketch::Select(idx) => {
            let weights = k.weights().map(|w| idx.iter().map(|&i| w[i]).collect());
            let factors = k.factors().iter().map(|f| f.select_columns(idx)).collect();
            KruskalTensor::new(weights, factors)
        }
    }
}
