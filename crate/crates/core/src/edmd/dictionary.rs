use std::collections::HashMap;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::Polynomial;

/// Monomials of total degree at most `D` in `n` variables, in graded-lex order.
///
/// With a scale vector `s`, entry `k` is `∏ (x_i / s_i)^α_ki`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DictionaryFile", into = "DictionaryFile")]
pub struct MonomialDictionary {
    n: usize,
    degree: u32,
    exponents: Vec<Vec<u32>>,
    scale: Option<Vec<f64>>,
    index: HashMap<Vec<u32>, usize>,
}

impl PartialEq for MonomialDictionary {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.degree == other.degree && self.scale == other.scale
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DictionaryFile {
    n: usize,
    #[serde(rename = "D")]
    degree: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<Vec<f64>>,
}

impl TryFrom<DictionaryFile> for MonomialDictionary {
    type Error = Error;

    fn try_from(f: DictionaryFile) -> Result<Self> {
        let d = Self::new(f.n, f.degree)?;
        match f.scale {
            Some(s) => d.with_scale(s),
            None => Ok(d),
        }
    }
}

impl From<MonomialDictionary> for DictionaryFile {
    fn from(d: MonomialDictionary) -> Self {
        Self {
            n: d.n,
            degree: d.degree,
            scale: d.scale,
        }
    }
}

fn compositions(total: u32, parts: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if parts == 1 {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in (0..=total).rev() {
        prefix.push(first);
        compositions(total - first, parts - 1, prefix, out);
        prefix.pop();
    }
}

impl MonomialDictionary {
    pub fn new(n: usize, degree: u32) -> Result<Self> {
        if n == 0 || degree == 0 {
            return Err(Error::Validation(format!(
                "dictionary needs n ≥ 1 and D ≥ 1, got n = {n}, D = {degree}"
            )));
        }
        let mut exponents = Vec::new();
        for d in 0..=degree {
            compositions(d, n, &mut Vec::with_capacity(n), &mut exponents);
        }
        let index = exponents.iter().enumerate().map(|(k, a)| (a.clone(), k)).collect();
        Ok(Self {
            n,
            degree,
            exponents,
            scale: None,
            index,
        })
    }

    /// Evaluates monomials of `x_i / scale_i`.
    pub fn with_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        if scale.len() != self.n || scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Validation(
                "dictionary scale must hold one positive finite entry per variable".into(),
            ));
        }
        self.scale = Some(scale);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    pub fn scale(&self) -> Option<&[f64]> {
        self.scale.as_deref()
    }

    pub fn index_of(&self, alpha: &[u32]) -> Option<usize> {
        self.index.get(alpha).copied()
    }

    /// Coefficient `c_k` with `h_k(x) = c_k x^α_k`.
    pub fn coefficient(&self, k: usize) -> f64 {
        match &self.scale {
            None => 1.0,
            Some(s) => self.exponents[k]
                .iter()
                .zip(s)
                .map(|(&a, si)| si.powi(-(a as i32)))
                .product(),
        }
    }

    /// `h_k` as a polynomial in the raw state.
    pub fn polynomial(&self, k: usize) -> Polynomial {
        Polynomial::monomial(self.exponents[k].clone(), self.coefficient(k))
    }

    fn scaled(&self, x: &[f64]) -> Vec<f64> {
        match &self.scale {
            None => x.to_vec(),
            Some(s) => x.iter().zip(s).map(|(a, b)| a / b).collect(),
        }
    }

    fn power_table(&self, y: &[f64]) -> Vec<f64> {
        let d = self.degree as usize + 1;
        let mut table = vec![1.0; self.n * d];
        for (i, &v) in y.iter().enumerate() {
            for p in 1..d {
                table[i * d + p] = table[i * d + p - 1] * v;
            }
        }
        table
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        let d = self.degree as usize + 1;
        let table = self.power_table(&self.scaled(x));
        for (o, alpha) in out.iter_mut().zip(&self.exponents) {
            *o = alpha
                .iter()
                .enumerate()
                .map(|(i, &a)| table[i * d + a as usize])
                .product();
        }
    }

    /// `H(x)`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }

    /// `∂H/∂x` as an `N × n` matrix, by the exponent-decrement rule.
    pub fn jacobian(&self, x: &[f64]) -> Mat<f64> {
        let d = self.degree as usize + 1;
        let table = self.power_table(&self.scaled(x));
        let inv_scale: Vec<f64> = match &self.scale {
            None => vec![1.0; self.n],
            Some(s) => s.iter().map(|v| 1.0 / v).collect(),
        };
        Mat::from_fn(self.len(), self.n, |k, var| {
            let alpha = &self.exponents[k];
            if alpha[var] == 0 {
                return 0.0;
            }
            let mut v = alpha[var] as f64 * inv_scale[var];
            for (i, &a) in alpha.iter().enumerate() {
                let p = if i == var { a - 1 } else { a };
                v *= table[i * d + p as usize];
            }
            v
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: usize, k: usize) -> usize {
        (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
    }

    #[test]
    fn sizes() {
        assert_eq!(MonomialDictionary::new(2, 5).unwrap().len(), 21);
        assert_eq!(MonomialDictionary::new(1, 1).unwrap().len(), 2);
        assert_eq!(MonomialDictionary::new(3, 5).unwrap().len(), 56);
        for n in 1..5 {
            for d in 1..6 {
                assert_eq!(
                    MonomialDictionary::new(n, d).unwrap().len(),
                    binom(n + d as usize, d as usize)
                );
            }
        }
    }

    #[test]
    fn graded_lex_order() {
        let d = MonomialDictionary::new(2, 2).unwrap();
        let expected: Vec<Vec<u32>> = vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]];
        assert_eq!(d.exponents(), &expected[..]);
        assert_eq!(d.eval(&[2.0, 3.0]), vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn eval_at_origin_and_minus_one() {
        let d = MonomialDictionary::new(3, 3).unwrap();
        let h = d.eval(&[0.0; 3]);
        assert_eq!(h[0], 1.0);
        assert!(h[1..].iter().all(|v| *v == 0.0));
        let d = MonomialDictionary::new(1, 3).unwrap();
        assert_eq!(d.eval(&[-1.0]), vec![1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn jacobian_power_rule() {
        let d = MonomialDictionary::new(1, 2).unwrap();
        let j = d.jacobian(&[3.0]);
        assert_eq!(j[(0, 0)], 0.0);
        assert_eq!(j[(2, 0)], 6.0);
    }

    #[test]
    fn scaled_dictionary_matches_polynomials() {
        let d = MonomialDictionary::new(2, 3)
            .unwrap()
            .with_scale(vec![2.0, 0.5])
            .unwrap();
        let x = [0.7, -0.3];
        let h = d.eval(&x);
        for k in 0..d.len() {
            assert!((h[k] - d.polynomial(k).eval(&x)).abs() < 1e-14);
        }
        let j = d.jacobian(&x);
        for k in 0..d.len() {
            for v in 0..2 {
                assert!((j[(k, v)] - d.polynomial(k).derivative(v).eval(&x)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let d = MonomialDictionary::new(3, 2).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"{"n":3,"D":2}"#);
        let back: MonomialDictionary = serde_json::from_str(&s).unwrap();
        assert_eq!(back.exponents(), d.exponents());
        assert!(serde_json::from_str::<MonomialDictionary>(r#"{"n":0,"D":2}"#).is_err());
    }

    #[test]
    fn rejects_zero_sizes() {
        assert!(MonomialDictionary::new(0, 2).is_err());
        assert!(MonomialDictionary::new(2, 0).is_err());
    }
}
