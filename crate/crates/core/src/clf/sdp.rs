//! Primal-dual interior-point solver for the quadratic CLF search
//!
//! ```text
//! minimize    t − γ tr(P B)
//! subject to  t I − (P A + Aᵀ P) ⪰ 0,   c_max I − P ⪰ 0,   P − c_min I ⪰ 0
//! ```
//!
//! The decision vector is `y = (upper triangle of P, t)` and the three blocks
//! form the slack `S(y) = C₀ + Σ yᵢ Fᵢ`. Every `Fᵢ` is a short sum of outer
//! products of unit vectors `e_k` and rows `a_k` of `A`, so the Schur
//! complement is assembled from a handful of precomputed products instead of
//! dense matrix traces.

use faer::prelude::*;
use faer::{Mat, MatRef, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lambda_max, sym_eigen, sym_eigenvalues, symmetrize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdpOptions {
    /// Relative duality-gap and residual target.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations of the projected-subgradient fallback.
    pub fallback_iter: usize,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 120,
            fallback_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpDiagnostics {
    pub solver: String,
    pub iterations: usize,
    #[serde(with = "crate::json")]
    pub gap: f64,
    #[serde(with = "crate::json")]
    pub primal_residual: f64,
    /// Largest violation over the three LMIs at the returned point.
    pub lmi_violation: f64,
    pub objective: f64,
    pub converged: bool,
}

/// `V(z) = zᵀ P z` with the data of the program that produced it.
#[derive(Debug, Clone)]
pub struct QuadraticClf {
    pub p: Mat<f64>,
    pub c_min: f64,
    pub c_max: f64,
    pub gamma: f64,
    pub t_opt: f64,
    pub diagnostics: SdpDiagnostics,
}

impl QuadraticClf {
    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        crate::linalg::quad_form(self.p.as_ref(), z)
    }
}

#[derive(Clone, Copy, Debug)]
enum Vt {
    E(usize),
    A(usize),
}

#[derive(Clone, Copy, Debug)]
struct Term {
    c: f64,
    u: Vt,
    v: Vt,
}

/// Outer-product expansion `Σ c u vᵀ` of one constraint matrix per block.
/// Blocks 2 and 3 are `∓E` and share the `e`-only part of the expansion.
struct Var {
    first: Vec<Term>,
    box_terms: Vec<(usize, usize)>,
    is_t: bool,
}

fn variables(n: usize) -> Vec<Var> {
    let mut vars = Vec::with_capacity(n * (n + 1) / 2 + 1);
    for k in 0..n {
        for l in k..n {
            let (first, box_terms) = if k == l {
                (
                    vec![
                        Term {
                            c: -1.0,
                            u: Vt::E(k),
                            v: Vt::A(k),
                        },
                        Term {
                            c: -1.0,
                            u: Vt::A(k),
                            v: Vt::E(k),
                        },
                    ],
                    vec![(k, k)],
                )
            } else {
                (
                    vec![
                        Term {
                            c: -1.0,
                            u: Vt::E(k),
                            v: Vt::A(l),
                        },
                        Term {
                            c: -1.0,
                            u: Vt::A(k),
                            v: Vt::E(l),
                        },
                        Term {
                            c: -1.0,
                            u: Vt::E(l),
                            v: Vt::A(k),
                        },
                        Term {
                            c: -1.0,
                            u: Vt::A(l),
                            v: Vt::E(k),
                        },
                    ],
                    vec![(k, l), (l, k)],
                )
            };
            vars.push(Var {
                first,
                box_terms,
                is_t: false,
            });
        }
    }
    vars.push(Var {
        first: Vec::new(),
        box_terms: Vec::new(),
        is_t: true,
    });
    vars
}

/// `uᵀ Q v` lookups for `u, v ∈ {e_k, a_k}`.
struct Quad {
    ee: Mat<f64>,
    ea: Mat<f64>,
    ae: Mat<f64>,
    aa: Mat<f64>,
}

impl Quad {
    fn new(q: MatRef<'_, f64>, a: MatRef<'_, f64>) -> Self {
        let ea = q * a.transpose();
        let ae = a * q;
        let aa = &ae * a.transpose();
        Self {
            ee: q.to_owned(),
            ea,
            ae,
            aa,
        }
    }

    #[inline]
    fn get(&self, u: Vt, v: Vt) -> f64 {
        match (u, v) {
            (Vt::E(i), Vt::E(j)) => self.ee[(i, j)],
            (Vt::E(i), Vt::A(j)) => self.ea[(i, j)],
            (Vt::A(i), Vt::E(j)) => self.ae[(i, j)],
            (Vt::A(i), Vt::A(j)) => self.aa[(i, j)],
        }
    }

    fn trace(&self) -> f64 {
        (0..self.ee.nrows()).map(|i| self.ee[(i, i)]).sum()
    }
}

struct Problem<'a> {
    n: usize,
    a: MatRef<'a, f64>,
    c: Vec<f64>,
    c_min: f64,
    c_max: f64,
    vars: Vec<Var>,
}

impl<'a> Problem<'a> {
    fn p_of(&self, y: &[f64]) -> Mat<f64> {
        let n = self.n;
        let mut p = Mat::<f64>::zeros(n, n);
        let mut idx = 0;
        for k in 0..n {
            for l in k..n {
                p[(k, l)] = y[idx];
                p[(l, k)] = y[idx];
                idx += 1;
            }
        }
        p
    }

    fn y_of(&self, p: MatRef<'_, f64>, t: f64) -> Vec<f64> {
        let n = self.n;
        let mut y = Vec::with_capacity(self.vars.len());
        for k in 0..n {
            for l in k..n {
                y.push(p.read(k, l));
            }
        }
        y.push(t);
        y
    }

    fn lyap(&self, p: MatRef<'_, f64>) -> Mat<f64> {
        let pa = p * self.a;
        symmetrize(&(&pa + pa.transpose()))
    }

    /// Slack blocks at `y`. With `affine = false` the constant `C₀` is left out,
    /// which gives the linear map used for search directions.
    fn slack(&self, y: &[f64], affine: bool) -> [Mat<f64>; 3] {
        let n = self.n;
        let p = self.p_of(y);
        let t = y[y.len() - 1];
        let l = self.lyap(p.as_ref());
        let s1 = Mat::from_fn(n, n, |i, j| if i == j { t } else { 0.0 } - l[(i, j)]);
        let (cmax, cmin) = if affine { (self.c_max, self.c_min) } else { (0.0, 0.0) };
        let s2 = Mat::from_fn(n, n, |i, j| if i == j { cmax } else { 0.0 } - p[(i, j)]);
        let s3 = Mat::from_fn(n, n, |i, j| p[(i, j)] - if i == j { cmin } else { 0.0 });
        [s1, s2, s3]
    }

    /// `⟨F_i, Q⟩` for every variable, given lookups of `Q` on each block.
    fn traces(&self, q1: &Quad, q2: MatRef<'_, f64>, q3: MatRef<'_, f64>) -> Vec<f64> {
        self.vars
            .iter()
            .map(|var| {
                if var.is_t {
                    return q1.trace();
                }
                let mut s: f64 = var.first.iter().map(|t| t.c * q1.get(t.v, t.u)).sum();
                for &(k, l) in &var.box_terms {
                    s += q3.read(l, k) - q2.read(l, k);
                }
                s
            })
            .collect()
    }

    /// Schur complement `M_ij = Σ_b tr(F_i S_b⁻¹ F_j X_b)`.
    fn schur(
        &self,
        si: &[Quad; 1],
        x: &[Quad; 1],
        si2: &Mat<f64>,
        x2: &Mat<f64>,
        si3: &Mat<f64>,
        x3: &Mat<f64>,
    ) -> Mat<f64> {
        let m = self.vars.len();
        let (si1, x1) = (&si[0], &x[0]);
        // Y = X₁ S₁⁻¹ for the t row
        let y1 = Quad::new((&x1.ee * &si1.ee).as_ref(), self.a);
        let mut mat = Mat::<f64>::zeros(m, m);
        for i in 0..m {
            let vi = &self.vars[i];
            for j in i..m {
                let vj = &self.vars[j];
                let val = match (vi.is_t, vj.is_t) {
                    (true, true) => (0..self.n)
                        .map(|r| (0..self.n).map(|s| si1.ee[(r, s)] * x1.ee[(s, r)]).sum::<f64>())
                        .sum(),
                    (true, false) | (false, true) => {
                        let v = if vi.is_t { vj } else { vi };
                        v.first.iter().map(|t| t.c * y1.get(t.v, t.u)).sum()
                    }
                    (false, false) => {
                        let mut acc = 0.0;
                        for s in &vi.first {
                            for r in &vj.first {
                                acc += s.c * r.c * si1.get(s.v, r.u) * x1.get(r.v, s.u);
                            }
                        }
                        for &(sk, sl) in &vi.box_terms {
                            for &(rk, rl) in &vj.box_terms {
                                // u = e_sk, v = e_sl; u' = e_rk, v' = e_rl
                                acc += si2[(sl, rk)] * x2[(rl, sk)] + si3[(sl, rk)] * x3[(rl, sk)];
                            }
                        }
                        acc
                    }
                };
                mat[(i, j)] = val;
                mat[(j, i)] = val;
            }
        }
        mat
    }
}

fn inverse_spd(m: &Mat<f64>) -> Option<Mat<f64>> {
    let ch = m.cholesky(Side::Lower).ok()?;
    let inv = ch.inverse();
    Some(symmetrize(&inv))
}

/// Largest `α ≤ 1` keeping `M + α D ⪰ 0`, for `M ≻ 0`.
fn max_step(m: &Mat<f64>, d: &Mat<f64>) -> f64 {
    let Ok(ch) = m.cholesky(Side::Lower) else {
        return 0.0;
    };
    let l = ch.compute_l();
    let n = m.nrows();
    // L⁻¹ D L⁻ᵀ
    let tmp = l.as_ref().solve_lower_triangular(d);
    let w = l.as_ref().solve_lower_triangular(tmp.transpose());
    let w = symmetrize(&w.transpose().to_owned());
    let lmin = sym_eigenvalues(w.as_ref()).first().copied().unwrap_or(0.0);
    let _ = n;
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn inner(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)] * b[(i, j)];
        }
    }
    s
}

fn lmi_violation(a: MatRef<'_, f64>, p: MatRef<'_, f64>, t: f64, c_min: f64, c_max: f64) -> f64 {
    let pa = p * a;
    let l = symmetrize(&(&pa + pa.transpose()));
    let ev = sym_eigenvalues(p);
    let lo = ev.first().copied().unwrap_or(0.0);
    let hi = ev.last().copied().unwrap_or(0.0);
    [lambda_max(l.as_ref()) - t, c_min - lo, hi - c_max]
        .into_iter()
        .fold(0.0, f64::max)
}

/// Solves the CLF program. Falls back to projected subgradient descent on
/// `λ_max(PA + AᵀP) − γ tr(PB)` if the interior-point iteration stalls.
pub fn solve_clf_sdp(
    a: MatRef<'_, f64>,
    b: MatRef<'_, f64>,
    gamma: f64,
    c_min: f64,
    c_max: f64,
    options: &SdpOptions,
) -> Result<QuadraticClf> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::Validation("A and B must be square and of equal size".into()));
    }
    if !(0.0 < c_min && c_min < c_max && c_max.is_finite()) {
        return Err(Error::Validation(format!(
            "need 0 < c_min < c_max, got c_min = {c_min}, c_max = {c_max}"
        )));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Validation(format!("gamma must be non-negative, got {gamma}")));
    }
    if !(crate::linalg::all_finite(a) && crate::linalg::all_finite(b)) {
        return Err(Error::Validation("A or B has non-finite entries".into()));
    }
    match interior_point(a, b, gamma, c_min, c_max, options) {
        Ok(clf) => Ok(clf),
        Err(ip_err) => subgradient(a, b, gamma, c_min, c_max, options)
            .map_err(|e| Error::Numerical(format!("interior point failed ({ip_err}); fallback failed ({e})"))),
    }
}

fn interior_point(
    a: MatRef<'_, f64>,
    b: MatRef<'_, f64>,
    gamma: f64,
    c_min: f64,
    c_max: f64,
    options: &SdpOptions,
) -> Result<QuadraticClf> {
    let n = a.nrows();
    let mut c = Vec::with_capacity(n * (n + 1) / 2 + 1);
    for k in 0..n {
        for l in k..n {
            c.push(if k == l {
                -gamma * b.read(k, k)
            } else {
                -gamma * (b.read(k, l) + b.read(l, k))
            });
        }
    }
    c.push(1.0);
    let prob = Problem {
        n,
        a,
        c,
        c_min,
        c_max,
        vars: variables(n),
    };
    let m = prob.vars.len();
    let cnorm = prob.c.iter().map(|v| v * v).sum::<f64>().sqrt();

    let p0 = Mat::from_fn(n, n, |i, j| if i == j { 0.5 * (c_min + c_max) } else { 0.0 });
    let t0 = lambda_max(prob.lyap(p0.as_ref()).as_ref()) + 1.0;
    let mut y = prob.y_of(p0.as_ref(), t0);
    let mut s = prob.slack(&y, true);
    let mut x: [Mat<f64>; 3] = std::array::from_fn(|_| Mat::<f64>::identity(n, n));
    let total = 3 * n;

    let mut last = (f64::NAN, f64::NAN);
    for iter in 0..options.max_iter {
        let si: Vec<Mat<f64>> = s
            .iter()
            .map(inverse_spd)
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Numerical("slack lost definiteness".into()))?;
        let gap: f64 = (0..3).map(|b| inner(&x[b], &s[b])).sum();
        let mu = gap / total as f64;
        let obj: f64 = prob.c.iter().zip(&y).map(|(c, y)| c * y).sum();
        let xq = Quad::new(x[0].as_ref(), a);
        let fx = prob.traces(&xq, x[1].as_ref(), x[2].as_ref());
        let resid: Vec<f64> = prob.c.iter().zip(&fx).map(|(c, f)| c - f).collect();
        let rnorm = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
        last = (gap, rnorm);
        if gap <= options.tol * (1.0 + obj.abs()) && rnorm <= options.tol * (1.0 + cnorm) {
            let p = symmetrize(&prob.p_of(&y));
            let t = y[m - 1];
            let viol = lmi_violation(a, p.as_ref(), t, c_min, c_max);
            return Ok(QuadraticClf {
                p,
                c_min,
                c_max,
                gamma,
                t_opt: t,
                diagnostics: SdpDiagnostics {
                    solver: "interior_point".into(),
                    iterations: iter,
                    gap,
                    primal_residual: rnorm,
                    lmi_violation: viol,
                    objective: obj,
                    converged: true,
                },
            });
        }

        let siq = Quad::new(si[0].as_ref(), a);
        let schur = prob.schur(
            std::slice::from_ref(&siq).try_into().unwrap(),
            std::slice::from_ref(&xq).try_into().unwrap(),
            &si[1],
            &x[1],
            &si[2],
            &x[2],
        );
        let lu = schur.partial_piv_lu();
        let trs = prob.traces(&siq, si[1].as_ref(), si[2].as_ref());

        let direction =
            |sigma_mu: f64, corr: Option<&[Mat<f64>; 3]>| -> Result<(Vec<f64>, [Mat<f64>; 3], [Mat<f64>; 3])> {
                let mut rhs: Vec<f64> = (0..m).map(|i| sigma_mu * trs[i] - prob.c[i]).collect();
                if let Some(z) = corr {
                    let zq = Quad::new(z[0].as_ref(), a);
                    let tz = prob.traces(&zq, z[1].as_ref(), z[2].as_ref());
                    for (r, t) in rhs.iter_mut().zip(tz) {
                        *r -= t;
                    }
                }
                let rv = Mat::from_fn(m, 1, |i, _| rhs[i]);
                let dy_m = lu.solve(&rv);
                let dy: Vec<f64> = (0..m).map(|i| dy_m[(i, 0)]).collect();
                if dy.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical("singular Schur complement".into()));
                }
                let ds = prob.slack(&dy, false);
                let dx: [Mat<f64>; 3] = std::array::from_fn(|bk| {
                    let mut r = &si[bk] * faer::scale(sigma_mu) - &x[bk] - &si[bk] * &ds[bk] * &x[bk];
                    if let Some(z) = corr {
                        r -= &z[bk];
                    }
                    symmetrize(&r)
                });
                Ok((dy, ds, dx))
            };

        // predictor
        let (_, ds_a, dx_a) = direction(0.0, None)?;
        let ap = (0..3).map(|bk| max_step(&x[bk], &dx_a[bk])).fold(1.0, f64::min);
        let ad = (0..3).map(|bk| max_step(&s[bk], &ds_a[bk])).fold(1.0, f64::min);
        let gap_a: f64 = (0..3)
            .map(|bk| {
                inner(
                    &(&x[bk] + &dx_a[bk] * faer::scale(ap)),
                    &(&s[bk] + &ds_a[bk] * faer::scale(ad)),
                )
            })
            .sum();
        let sigma = (gap_a / gap).clamp(0.0, 1.0).powi(3);
        let corr: [Mat<f64>; 3] = std::array::from_fn(|bk| &si[bk] * &ds_a[bk] * &dx_a[bk]);
        let (dy, ds, dx) = direction(sigma * mu, Some(&corr))?;

        let ap = (0..3).map(|bk| 0.98 * max_step(&x[bk], &dx[bk])).fold(1.0, f64::min);
        let mut ad = (0..3).map(|bk| 0.98 * max_step(&s[bk], &ds[bk])).fold(1.0, f64::min);
        if ap <= 1e-12 || ad <= 1e-12 {
            return Err(Error::Numerical(format!("step length collapsed at iteration {iter}")));
        }
        for bk in 0..3 {
            x[bk] = symmetrize(&(&x[bk] + &dx[bk] * faer::scale(ap)));
        }
        loop {
            let cand: Vec<f64> = y.iter().zip(&dy).map(|(y, d)| y + ad * d).collect();
            let sc = prob.slack(&cand, true);
            if sc.iter().all(|m| m.cholesky(Side::Lower).is_ok()) {
                y = cand;
                s = sc;
                break;
            }
            ad *= 0.5;
            if ad < 1e-14 {
                return Err(Error::Numerical("dual step failed to stay interior".into()));
            }
        }
    }
    Err(Error::Numerical(format!(
        "interior point did not converge in {} iterations (gap {:.3e}, residual {:.3e})",
        options.max_iter, last.0, last.1
    )))
}

fn project_box(p: &Mat<f64>, c_min: f64, c_max: f64) -> Mat<f64> {
    let (ev, u) = sym_eigen(p.as_ref());
    let n = p.nrows();
    let d = Mat::from_fn(n, n, |i, j| if i == j { ev[i].clamp(c_min, c_max) } else { 0.0 });
    symmetrize(&(&u * &d * u.transpose()))
}

fn subgradient(
    a: MatRef<'_, f64>,
    b: MatRef<'_, f64>,
    gamma: f64,
    c_min: f64,
    c_max: f64,
    options: &SdpOptions,
) -> Result<QuadraticClf> {
    let n = a.nrows();
    let bs = symmetrize(&b.to_owned());
    let f = |p: &Mat<f64>| -> (f64, f64, Mat<f64>) {
        let pa = p * a;
        let l = symmetrize(&(&pa + pa.transpose()));
        let (ev, u) = sym_eigen(l.as_ref());
        let t = *ev.last().unwrap();
        let v: Vec<f64> = (0..n).map(|i| u[(i, n - 1)]).collect();
        let av: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a.read(i, j) * v[j]).sum()).collect();
        let g = Mat::from_fn(n, n, |i, j| v[i] * av[j] + av[i] * v[j] - gamma * bs[(i, j)]);
        let tr: f64 = (0..n)
            .map(|i| (0..n).map(|j| p[(i, j)] * b.read(j, i)).sum::<f64>())
            .sum();
        (t - gamma * tr, t, g)
    };
    let mut p = Mat::from_fn(n, n, |i, j| if i == j { 0.5 * (c_min + c_max) } else { 0.0 });
    let (mut best_val, mut best_t, _) = f(&p);
    let mut best = p.clone();
    let radius = (c_max - c_min) * (n as f64).sqrt();
    for k in 0..options.fallback_iter {
        let (_, _, g) = f(&p);
        let gn = g.norm_l2();
        if gn == 0.0 {
            break;
        }
        let step = radius / (gn * ((k + 1) as f64).sqrt());
        p = project_box(&(&p - &g * faer::scale(step)), c_min, c_max);
        let (val, t, _) = f(&p);
        if val < best_val {
            best_val = val;
            best_t = t;
            best = p.clone();
        }
    }
    if !best_val.is_finite() {
        return Err(Error::Numerical("subgradient iterates became non-finite".into()));
    }
    let viol = lmi_violation(a, best.as_ref(), best_t, c_min, c_max);
    Ok(QuadraticClf {
        p: best,
        c_min,
        c_max,
        gamma,
        t_opt: best_t,
        diagnostics: SdpDiagnostics {
            solver: "subgradient".into(),
            iterations: options.fallback_iter,
            gap: f64::NAN,
            primal_residual: f64::NAN,
            lmi_violation: viol,
            objective: best_val,
            converged: false,
        },
    })
}
