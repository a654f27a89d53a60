//! CP (Kruskal) and Tucker factorized tensors.

use std::fmt::Write as _;

use crate::error::{shape_err, Result};
use crate::tensor::{mode_dot, DenseTensor, Matrix};
use crate::textio::{write_matrix, write_tensor, LineReader};

/// `⟦λ; U^(0), …, U^(N)⟧ = Σ_r λ_r u^(0)_r ∘ ⋯ ∘ u^(N)_r`.
///
/// Absent weights mean `λ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalTensor {
    weights: Option<Vec<f64>>,
    factors: Vec<Matrix>,
}

impl KruskalTensor {
    pub fn new(weights: Option<Vec<f64>>, factors: Vec<Matrix>) -> Result<Self> {
        let Some(first) = factors.first() else {
            return shape_err("a Kruskal tensor needs at least one factor");
        };
        let rank = first.cols();
        if let Some(f) = factors.iter().find(|f| f.cols() != rank) {
            return shape_err(format!(
                "Kruskal factors disagree on rank: {rank} vs {}",
                f.cols()
            ));
        }
        if let Some(w) = &weights {
            if w.len() != rank {
                return shape_err(format!("{} weights for rank {rank}", w.len()));
            }
        }
        Ok(Self { weights, factors })
    }

    pub fn rank(&self) -> usize {
        self.factors[0].cols()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut [Matrix] {
        &mut self.factors
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// λ with the implicit all-ones default filled in.
    pub fn weights_or_ones(&self) -> Vec<f64> {
        self.weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.rank()])
    }

    /// Per-component product of squared column norms, `Π_i ‖U^(i)_{:,r}‖²`.
    pub fn column_norm_products(&self) -> Vec<f64> {
        let mut prod = vec![1.0; self.rank()];
        for f in &self.factors {
            for (p, n) in prod.iter_mut().zip(f.column_norms_sq()) {
                *p *= n;
            }
        }
        prod
    }
}

/// `⟦G; U^(0), …, U^(N)⟧ = G ×_0 U^(0) ⋯ ×_N U^(N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerTensor {
    core: DenseTensor,
    factors: Vec<Matrix>,
}

impl TuckerTensor {
    pub fn new(core: DenseTensor, factors: Vec<Matrix>) -> Result<Self> {
        if core.order() != factors.len() || factors.is_empty() {
            return shape_err(format!(
                "core of order {} with {} factors",
                core.order(),
                factors.len()
            ));
        }
        for (k, (f, &r)) in factors.iter().zip(core.shape()).enumerate() {
            if f.cols() != r {
                return shape_err(format!(
                    "factor {k} has {} columns but the core has rank {r} on that mode",
                    f.cols()
                ));
            }
        }
        Ok(Self { core, factors })
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut DenseTensor {
        &mut self.core
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut [Matrix] {
        &mut self.factors
    }

    pub(crate) fn split_mut(&mut self) -> (&mut DenseTensor, &mut [Matrix]) {
        (&mut self.core, &mut self.factors)
    }

    pub fn ranks(&self) -> &[usize] {
        self.core.shape()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }
}

/// Dense reconstruction of a Kruskal tensor.
pub fn kruskal_to_full(k: &KruskalTensor) -> DenseTensor {
    let shape = k.shape();
    let size: usize = shape.iter().product();
    let lambda = k.weights_or_ones();
    let mut out = vec![0.0; size];
    let mut term = Vec::with_capacity(size);
    let mut next = Vec::with_capacity(size);
    for (r, &l) in lambda.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        // Build λ_r u^(0)_r ∘ ⋯ by successive outer expansion.
        term.clear();
        term.push(l);
        for f in k.factors() {
            next.clear();
            for &t in &term {
                next.extend((0..f.rows()).map(|i| t * f.get(i, r)));
            }
            std::mem::swap(&mut term, &mut next);
        }
        for (o, &t) in out.iter_mut().zip(&term) {
            *o += t;
        }
    }
    DenseTensor::new(shape, out).expect("factor shapes are valid")
}

/// Dense reconstruction of a Tucker tensor by successive mode products.
pub fn tucker_to_full(t: &TuckerTensor) -> DenseTensor {
    t.factors
        .iter()
        .enumerate()
        .fold(t.core.clone(), |acc, (k, f)| {
            mode_dot(&acc, f, k).expect("factor shapes are valid")
        })
}

/// Order-`n_modes` core of shape `(R, …, R)` with `λ` on the super-diagonal.
pub fn super_diagonal_core(lambda: &[f64], n_modes: usize) -> Result<DenseTensor> {
    let r = lambda.len();
    if r == 0 || n_modes == 0 {
        return shape_err("super-diagonal core needs R >= 1 and at least one mode");
    }
    let mut g = DenseTensor::zeros(&vec![r; n_modes]);
    for (i, &l) in lambda.iter().enumerate() {
        g.set(&vec![i; n_modes], l);
    }
    Ok(g)
}

impl From<&KruskalTensor> for TuckerTensor {
    fn from(k: &KruskalTensor) -> Self {
        let core = super_diagonal_core(&k.weights_or_ones(), k.order()).expect("rank >= 1");
        TuckerTensor::new(core, k.factors.clone()).expect("consistent by construction")
    }
}

/// Either decomposition.
#[derive(Debug, Clone, PartialEq)]
pub enum Decomposition {
    Kruskal(KruskalTensor),
    Tucker(TuckerTensor),
}

impl Decomposition {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Decomposition::Kruskal(k) => k.shape(),
            Decomposition::Tucker(t) => t.shape(),
        }
    }

    pub fn factors(&self) -> &[Matrix] {
        match self {
            Decomposition::Kruskal(k) => k.factors(),
            Decomposition::Tucker(t) => t.factors(),
        }
    }

    pub fn to_full(&self) -> DenseTensor {
        match self {
            Decomposition::Kruskal(k) => kruskal_to_full(k),
            Decomposition::Tucker(t) => tucker_to_full(t),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Decomposition::Kruskal(_) => "cp",
            Decomposition::Tucker(_) => "tucker",
        }
    }

    /// Text form: a `cp <n>` or `tucker <n>` tag line, then λ (or `none`) or the
    /// core, then every factor in the tensor format.
    pub fn write_text(&self, out: &mut String) {
        let _ = writeln!(out, "{} {}", self.kind(), self.factors().len());
        match self {
            Decomposition::Kruskal(k) => match k.weights() {
                Some(w) => write_tensor(
                    out,
                    &DenseTensor::new(vec![w.len()], w.to_vec()).expect("non-empty"),
                ),
                None => out.push_str("none\n"),
            },
            Decomposition::Tucker(t) => write_tensor(out, t.core()),
        }
        for f in self.factors() {
            write_matrix(out, f);
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        self.write_text(&mut s);
        s
    }

    pub fn read_text(r: &mut LineReader<'_>) -> Result<Self> {
        let tag = r.next_line()?;
        let mut parts = tag.split_whitespace();
        let kind = parts.next().unwrap_or_default();
        let n: usize = match parts.next().map(str::parse) {
            Some(Ok(n)) if n > 0 => n,
            _ => return r.error(format!("bad decomposition tag {tag:?}")),
        };
        match kind {
            "cp" => {
                let weights = if r.take_if("none") {
                    None
                } else {
                    Some(r.tensor()?.into_data())
                };
                let factors = (0..n).map(|_| r.matrix()).collect::<Result<Vec<_>>>()?;
                KruskalTensor::new(weights, factors)
                    .map(Decomposition::Kruskal)
                    .or_else(|e| r.error(e.to_string()))
            }
            "tucker" => {
                let core = r.tensor()?;
                let factors = (0..n).map(|_| r.matrix()).collect::<Result<Vec<_>>>()?;
                TuckerTensor::new(core, factors)
                    .map(Decomposition::Tucker)
                    .or_else(|e| r.error(e.to_string()))
            }
            other => r.error(format!("unknown decomposition kind {other:?}")),
        }
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let mut r = LineReader::new(s);
        let d = Self::read_text(&mut r)?;
        r.finish()?;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> Matrix {
        Matrix::column_vector(v).unwrap()
    }

    #[test]
    fn rank_one_outer_product() {
        let k = KruskalTensor::new(Some(vec![1.0]), vec![col(&[1.0, 2.0]), col(&[3.0, 4.0])]).unwrap();
        assert_eq!(kruskal_to_full(&k).data(), &[3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn zero_weights_give_zero_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f: Vec<Matrix> = (0..3).map(|_| Matrix::random_normal(2, 3, 1.0, &mut rng)).collect();
        let k = KruskalTensor::new(Some(vec![0.0; 3]), f.clone()).unwrap();
        assert_eq!(kruskal_to_full(&k), DenseTensor::zeros(&[2, 2, 2]));
        let ones = KruskalTensor::new(Some(vec![1.0; 3]), f.clone()).unwrap();
        let none = KruskalTensor::new(None, f).unwrap();
        assert_eq!(kruskal_to_full(&ones), kruskal_to_full(&none));
    }

    #[test]
    fn kruskal_validates_rank() {
        assert!(KruskalTensor::new(None, vec![Matrix::zeros(2, 2), Matrix::zeros(2, 3)]).is_err());
        assert!(KruskalTensor::new(Some(vec![1.0]), vec![Matrix::zeros(2, 2)]).is_err());
        assert!(TuckerTensor::new(DenseTensor::zeros(&[2, 2]), vec![Matrix::zeros(3, 2), Matrix::zeros(3, 3)]).is_err());
    }

    #[test]
    fn rank_one_tucker() {
        let core = DenseTensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let t = TuckerTensor::new(
            core,
            vec![col(&[1.0, 2.0]), col(&[3.0]), col(&[1.0, -1.0])],
        )
        .unwrap();
        assert_eq!(tucker_to_full(&t).data(), &[6.0, -6.0, 12.0, -12.0]);
    }

    #[test]
    fn identity_factors_return_core() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let core = DenseTensor::random_normal(&[2, 3, 2], 1.0, &mut rng);
        let t = TuckerTensor::new(
            core.clone(),
            vec![Matrix::identity(2), Matrix::identity(3), Matrix::identity(2)],
        )
        .unwrap();
        assert_eq!(tucker_to_full(&t), core);
    }

    #[test]
    fn super_diagonal_examples() {
        let g = super_diagonal_core(&[1.0, 1.0], 2).unwrap();
        assert_eq!(g.data(), Matrix::identity(2).data());
        let g = super_diagonal_core(&[2.0, 3.0], 3).unwrap();
        let nonzero: Vec<(usize, f64)> = g
            .data()
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, v)| v != 0.0)
            .collect();
        assert_eq!(nonzero, vec![(0, 2.0), (7, 3.0)]);
    }

    #[test]
    fn text_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f: Vec<Matrix> = (0..3).map(|_| Matrix::random_normal(2, 2, 1.0, &mut rng)).collect();
        for d in [
            Decomposition::Kruskal(KruskalTensor::new(None, f.clone()).unwrap()),
            Decomposition::Kruskal(KruskalTensor::new(Some(vec![0.5, 2.0]), f.clone()).unwrap()),
            Decomposition::Tucker(TuckerTensor::new(DenseTensor::random_normal(&[2, 2, 2], 1.0, &mut rng), f).unwrap()),
        ] {
            assert_eq!(Decomposition::from_text(&d.to_text()).unwrap(), d);
        }
        assert!(Decomposition::from_text("cp 2\nnone\n2 1\n1 2\n").is_err());
        assert!(Decomposition::from_text("blob 1\n").is_err());
    }
}
