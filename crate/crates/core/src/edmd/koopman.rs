use std::cmp::Ordering;

use faer::complex_native::c64;
use faer::linalg::matmul::matmul;
use faer::{Mat, MatRef, Parallelism};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MonomialDictionary;
use crate::dynamics::SnapshotDataset;
use crate::error::{Error, Result};
use crate::linalg::{all_finite, from_rows, pinv, to_rows};

const GRAM_CHUNK: usize = 2048;
const REAL_TOL: f64 = 1e-12;
const PHASE_TOL: f64 = 1e-8;

/// Gram matrices `G = (1/M) Σ H(x)H(x)ᵀ` and `A = (1/M) Σ H(x)H(y)ᵀ`.
///
/// Samples are split into fixed chunks whose partial sums are added in
/// chunk order, so the result does not depend on the thread count.
pub fn build_gram(data: &SnapshotDataset, dict: &MonomialDictionary) -> Result<(Mat<f64>, Mat<f64>)> {
    if data.dim() != dict.n() {
        return Err(Error::Validation(format!(
            "dataset has dimension {}, dictionary expects {}",
            data.dim(),
            dict.n()
        )));
    }
    let m = data.len();
    let nb = dict.len();
    let chunks: Vec<(usize, usize)> = (0..m)
        .step_by(GRAM_CHUNK)
        .map(|s| (s, (s + GRAM_CHUNK).min(m)))
        .collect();
    let partials: Vec<(Mat<f64>, Mat<f64>)> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let rows = end - start;
            let mut hx = Mat::<f64>::zeros(rows, nb);
            let mut hy = Mat::<f64>::zeros(rows, nb);
            let mut buf = vec![0.0; nb];
            for r in 0..rows {
                dict.eval_into(data.x(start + r), &mut buf);
                for (k, v) in buf.iter().enumerate() {
                    hx[(r, k)] = *v;
                }
                dict.eval_into(data.y(start + r), &mut buf);
                for (k, v) in buf.iter().enumerate() {
                    hy[(r, k)] = *v;
                }
            }
            let mut g = Mat::<f64>::zeros(nb, nb);
            let mut a = Mat::<f64>::zeros(nb, nb);
            matmul(g.as_mut(), hx.transpose(), hx.as_ref(), None, 1.0, Parallelism::None);
            matmul(a.as_mut(), hx.transpose(), hy.as_ref(), None, 1.0, Parallelism::None);
            (g, a)
        })
        .collect();
    let mut g = Mat::<f64>::zeros(nb, nb);
    let mut a = Mat::<f64>::zeros(nb, nb);
    for (pg, pa) in &partials {
        g += pg;
        a += pa;
    }
    let inv_m = 1.0 / m as f64;
    for i in 0..nb {
        for j in 0..nb {
            a[(i, j)] *= inv_m;
        }
        for j in i..nb {
            let v = g[(i, j)] * inv_m;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok((g, a))
}

/// `K = G†A` with singular values below `svd_threshold · σ_max` discarded.
/// Returns `K` and the retained rank.
pub fn fit_koopman(g: MatRef<'_, f64>, a: MatRef<'_, f64>, svd_threshold: f64) -> Result<(Mat<f64>, usize)> {
    if g.nrows() != g.ncols() || a.nrows() != g.nrows() || a.ncols() != g.ncols() {
        return Err(Error::Validation("G and A must be square and of equal size".into()));
    }
    if !(all_finite(g) && all_finite(a)) {
        return Err(Error::Numerical("Gram matrices contain non-finite entries".into()));
    }
    if (0..g.nrows()).all(|i| (0..g.ncols()).all(|j| g.read(i, j) == 0.0)) {
        return Err(Error::DegenerateData("Gram matrix G is identically zero".into()));
    }
    let (gp, rank) = pinv(g, svd_threshold);
    let mut k = Mat::<f64>::zeros(g.nrows(), g.ncols());
    matmul(k.as_mut(), gp.as_ref(), a, None, 1.0, Parallelism::None);
    Ok((k, rank))
}

/// Eigenvalues and unit right eigenvectors of `K`.
///
/// Sorted by descending modulus, then descending real part, then positive
/// imaginary part first. Conjugate pairs are stored adjacently and are exact
/// conjugates of each other. Each vector's first component above `1e-8` of
/// its largest entry is made real and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: Vec<Complex64>,
    pub vectors: Vec<Vec<Complex64>>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest `‖K v − μ v‖`.
    pub fn max_residual(&self, k: MatRef<'_, f64>) -> f64 {
        self.values
            .iter()
            .zip(&self.vectors)
            .map(|(mu, v)| {
                (0..k.nrows())
                    .map(|i| {
                        let kv: Complex64 = (0..k.ncols()).map(|j| v[j] * k.read(i, j)).sum();
                        (kv - mu * v[i]).norm_sqr()
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

fn normalize(v: &mut [Complex64]) {
    let nrm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if nrm == 0.0 {
        return;
    }
    for c in v.iter_mut() {
        *c /= nrm;
    }
    let big = v.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if let Some(lead) = v.iter().find(|c| c.norm() > PHASE_TOL * big).copied() {
        let phase = lead.conj() / lead.norm();
        for c in v.iter_mut() {
            *c *= phase;
        }
    }
}

fn order(a: &Complex64, b: &Complex64) -> Ordering {
    b.norm()
        .total_cmp(&a.norm())
        .then(b.re.total_cmp(&a.re))
        .then(b.im.total_cmp(&a.im))
}

pub fn spectrum(k: MatRef<'_, f64>) -> Result<Spectrum> {
    let n = k.nrows();
    if n != k.ncols() {
        return Err(Error::Validation("Koopman matrix must be square".into()));
    }
    if !all_finite(k) {
        return Err(Error::Numerical("Koopman matrix contains non-finite entries".into()));
    }
    let eig = k.eigendecomposition::<c64>();
    let s = eig.s().column_vector();
    let u = eig.u();
    let mut pairs: Vec<(Complex64, Vec<Complex64>)> = Vec::with_capacity(n);
    let (mut upper, mut lower) = (0usize, 0usize);
    for j in 0..n {
        let z = s.read(j);
        let mu = Complex64::new(z.re, z.im);
        if !(mu.re.is_finite() && mu.im.is_finite()) {
            return Err(Error::Numerical("eigensolver returned non-finite eigenvalues".into()));
        }
        let mut v: Vec<Complex64> = (0..n)
            .map(|i| {
                let c = u.read(i, j);
                Complex64::new(c.re, c.im)
            })
            .collect();
        if mu.im.abs() <= REAL_TOL * mu.norm().max(1.0) {
            normalize(&mut v);
            let v = v.into_iter().map(|c| Complex64::new(c.re, 0.0)).collect::<Vec<_>>();
            pairs.push((Complex64::new(mu.re, 0.0), v));
        } else if mu.im > 0.0 {
            upper += 1;
            pairs.push((mu, v));
        } else {
            lower += 1;
        }
    }
    if upper != lower {
        return Err(Error::Numerical(format!(
            "unpaired complex eigenvalues ({upper} upper, {lower} lower half-plane)"
        )));
    }
    let mut out: Vec<(Complex64, Vec<Complex64>)> = Vec::with_capacity(n);
    for (mu, mut v) in pairs {
        if mu.im == 0.0 {
            let nrm = v.iter().map(|c| c.re * c.re).sum::<f64>().sqrt();
            for c in v.iter_mut() {
                *c /= nrm;
            }
            out.push((mu, v));
        } else {
            normalize(&mut v);
            let conj: Vec<Complex64> = v.iter().map(|c| c.conj()).collect();
            out.push((mu, v));
            out.push((mu.conj(), conj));
        }
    }
    out.sort_by(|a, b| order(&a.0, &b.0));
    let (values, vectors) = out.into_iter().unzip();
    Ok(Spectrum { values, vectors })
}

/// Fitted Koopman matrix with its spectrum.
#[derive(Debug, Clone)]
pub struct KoopmanModel {
    pub k: Mat<f64>,
    pub dt: f64,
    pub spectrum: Spectrum,
    pub dictionary: MonomialDictionary,
    pub rank: usize,
    /// `‖G K − A‖_F`.
    pub residual: f64,
    pub samples: usize,
}

impl KoopmanModel {
    pub fn fit(data: &SnapshotDataset, dict: &MonomialDictionary, svd_threshold: f64) -> Result<Self> {
        let (g, a) = build_gram(data, dict)?;
        let (k, rank) = fit_koopman(g.as_ref(), a.as_ref(), svd_threshold)?;
        let residual = (&g * &k - &a).norm_l2();
        let spectrum = spectrum(k.as_ref())?;
        Ok(Self {
            k,
            dt: data.dt(),
            spectrum,
            dictionary: dict.clone(),
            rank,
            residual,
            samples: data.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.spectrum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectrum.is_empty()
    }

    /// `ψ_j(x) = H(x)ᵀ v_j`.
    pub fn eval_eigenfunction(&self, j: usize, x: &[f64]) -> Result<Complex64> {
        let v = self.spectrum.vectors.get(j).ok_or(Error::IndexOutOfRange {
            index: j,
            len: self.len(),
        })?;
        if x.len() != self.dictionary.n() {
            return Err(Error::Validation(format!(
                "state has {} entries, dictionary expects {}",
                x.len(),
                self.dictionary.n()
            )));
        }
        let h = self.dictionary.eval(x);
        Ok(h.iter().zip(v).map(|(a, b)| b * *a).sum())
    }

    pub fn to_file(&self) -> KoopmanFile {
        KoopmanFile {
            k: to_rows(self.k.as_ref()),
            dt: self.dt,
            dictionary: self.dictionary.clone(),
            eigenvalues: self.spectrum.values.iter().map(|c| [c.re, c.im]).collect(),
            eigenvectors: self
                .spectrum
                .vectors
                .iter()
                .map(|v| v.iter().map(|c| [c.re, c.im]).collect())
                .collect(),
            rank: self.rank,
            residual: self.residual,
            samples: self.samples,
        }
    }

    pub fn from_file(f: KoopmanFile) -> Result<Self> {
        let k = from_rows(&f.k)?;
        let n = f.dictionary.len();
        if k.nrows() != n || k.ncols() != n {
            return Err(Error::Validation(format!("K must be {n}×{n} for this dictionary")));
        }
        if f.eigenvalues.len() != f.eigenvectors.len() || f.eigenvectors.iter().any(|v| v.len() != n) {
            return Err(Error::Validation("eigenpair arrays have inconsistent sizes".into()));
        }
        let c = |p: &[f64; 2]| Complex64::new(p[0], p[1]);
        Ok(Self {
            k,
            dt: f.dt,
            spectrum: Spectrum {
                values: f.eigenvalues.iter().map(c).collect(),
                vectors: f.eigenvectors.iter().map(|v| v.iter().map(c).collect()).collect(),
            },
            dictionary: f.dictionary,
            rank: f.rank,
            residual: f.residual,
            samples: f.samples,
        })
    }
}

/// JSON layout of a [`KoopmanModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KoopmanFile {
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    pub dt: f64,
    pub dictionary: MonomialDictionary,
    pub eigenvalues: Vec<[f64; 2]>,
    pub eigenvectors: Vec<Vec<[f64; 2]>>,
    pub rank: usize,
    pub residual: f64,
    pub samples: usize,
}
