use serde::{Deserialize, Serialize};

use super::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::linalg::norm;

/// Sampled closed-loop trajectory on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    inputs: Vec<f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>, inputs: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Validation("trajectory is empty".into()));
        }
        if times.len() != states.len() {
            return Err(Error::Validation(format!(
                "{} times but {} states",
                times.len(),
                states.len()
            )));
        }
        if inputs.len() + 1 < times.len() {
            return Err(Error::Validation(format!(
                "{} inputs for {} samples",
                inputs.len(),
                times.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("trajectory times must be strictly increasing".into()));
        }
        let n = states[0].len();
        if states.iter().any(|s| s.len() != n) {
            return Err(Error::Validation("trajectory states have mixed dimensions".into()));
        }
        let finite = times.iter().all(|v| v.is_finite())
            && states.iter().flatten().all(|v| v.is_finite())
            && inputs.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("trajectory contains non-finite entries".into()));
        }
        Ok(Self { times, states, inputs })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("non-empty")
    }

    /// State at the last grid time not after `t`.
    pub fn state_at(&self, t: f64) -> &[f64] {
        let tol = 1e-9 * (1.0 + t.abs());
        let idx = self.times.partition_point(|&s| s <= t + tol);
        &self.states[idx.saturating_sub(1)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegrationMethod {
    Rk4,
    #[default]
    Rk45,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationOptions {
    pub blowup: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self {
            blowup: 1e6,
            rtol: 1e-6,
            atol: 1e-9,
            max_steps: 5_000_000,
        }
    }
}

/// Integrates `ẋ = f(x) + g(x) k(x)` and samples it on `{0, dt, …, T}`.
///
/// `rk4` takes one fixed step per grid interval. `rk45` is Dormand–Prince
/// 5(4) with adaptive steps and dense output at the grid points.
pub fn integrate<F>(
    system: &ControlAffineSystem,
    x0: &[f64],
    controller: F,
    dt: f64,
    t_final: f64,
    method: IntegrationMethod,
    options: &IntegrationOptions,
) -> Result<Trajectory>
where
    F: Fn(&[f64]) -> f64,
{
    let n = system.dim();
    if x0.len() != n {
        return Err(Error::Validation(format!(
            "initial state has {} entries, system has {n}",
            x0.len()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("initial state is not finite".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Validation(format!("dt must be positive, got {dt}")));
    }
    if !(t_final >= dt && t_final.is_finite()) {
        return Err(Error::Validation(format!("T = {t_final} must be at least dt = {dt}")));
    }
    let steps = (t_final / dt).round() as usize;
    let mut rec = Recorder::new(steps, dt, options.blowup);
    let rhs = |x: &[f64], out: &mut [f64]| system.rhs_into(x, controller(x), out);
    rec.push(x0.to_vec(), controller(x0))?;
    match method {
        IntegrationMethod::Rk4 => rk4(&rhs, x0, dt, steps, &mut rec, &controller)?,
        IntegrationMethod::Rk45 => dopri5(&rhs, x0, dt, steps, options, &mut rec, &controller)?,
    }
    rec.finish()
}

struct Recorder {
    steps: usize,
    dt: f64,
    blowup: f64,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    inputs: Vec<f64>,
}

impl Recorder {
    fn new(steps: usize, dt: f64, blowup: f64) -> Self {
        Self {
            steps,
            dt,
            blowup,
            times: Vec::with_capacity(steps + 1),
            states: Vec::with_capacity(steps + 1),
            inputs: Vec::with_capacity(steps + 1),
        }
    }

    fn next_time(&self) -> f64 {
        self.times.len() as f64 * self.dt
    }

    fn done(&self) -> bool {
        self.times.len() > self.steps
    }

    fn push(&mut self, x: Vec<f64>, u: f64) -> Result<()> {
        let t = self.next_time();
        self.check(t, &x)?;
        let u = if u.is_finite() {
            u
        } else {
            return Err(self.diverged(t, f64::NAN));
        };
        self.times.push(t);
        self.states.push(x);
        self.inputs.push(u);
        Ok(())
    }

    fn check(&self, t: f64, x: &[f64]) -> Result<()> {
        let r = norm(x);
        if !r.is_finite() || r > self.blowup {
            return Err(self.diverged(t, r));
        }
        Ok(())
    }

    fn diverged(&self, time: f64, norm: f64) -> Error {
        let partial = if self.times.is_empty() {
            None
        } else {
            Trajectory::new(self.times.clone(), self.states.clone(), self.inputs.clone()).ok()
        };
        match partial {
            Some(p) => Error::Divergence {
                time,
                norm,
                partial: Box::new(p),
            },
            None => Error::Validation(format!("initial state norm {norm:.3e} exceeds blow-up bound")),
        }
    }

    fn stalled(&self, time: f64, reason: String) -> Error {
        let partial = Trajectory::new(self.times.clone(), self.states.clone(), self.inputs.clone())
            .ok()
            .map(Box::new);
        Error::Stalled { time, reason, partial }
    }

    fn finish(self) -> Result<Trajectory> {
        Trajectory::new(self.times, self.states, self.inputs)
    }
}

fn rk4<R, F>(rhs: &R, x0: &[f64], dt: f64, steps: usize, rec: &mut Recorder, ctrl: &F) -> Result<()>
where
    R: Fn(&[f64], &mut [f64]),
    F: Fn(&[f64]) -> f64,
{
    let mut x = x0.to_vec();
    let mut stepper = Rk4::new(x.len());
    for _ in 0..steps {
        stepper.step(rhs, &mut x, dt);
        rec.check(rec.next_time(), &x)?;
        rec.push(x.clone(), ctrl(&x))?;
    }
    Ok(())
}

/// Classical fourth-order Runge–Kutta with reusable scratch.
pub(crate) struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }

    pub(crate) fn step<R: Fn(&[f64], &mut [f64])>(&mut self, rhs: &R, x: &mut [f64], h: f64) {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        rhs(x, k1);
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        rhs(tmp, k2);
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        rhs(tmp, k3);
        for i in 0..x.len() {
            tmp[i] = x[i] + h * k3[i];
        }
        rhs(tmp, k4);
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[allow(clippy::needless_range_loop)]
fn dopri5<R, F>(
    rhs: &R,
    x0: &[f64],
    dt: f64,
    steps: usize,
    opts: &IntegrationOptions,
    rec: &mut Recorder,
    ctrl: &F,
) -> Result<()>
where
    R: Fn(&[f64], &mut [f64]),
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let t_end = steps as f64 * dt;
    let mut y = x0.to_vec();
    let mut y1 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut cont: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    rhs(&y, &mut k[0]);

    let mut t: f64 = 0.0;
    let mut h = dt.min(0.1);
    let mut taken = 0usize;
    while !rec.done() {
        if taken >= opts.max_steps {
            return Err(rec.stalled(t, format!("adaptive integrator exceeded {} steps", opts.max_steps)));
        }
        if h < 1e-14 * (1.0 + t.abs()) {
            return Err(rec.stalled(t, "step size underflow".into()));
        }
        let h_step = h.min(t_end - t).max(1e-14 * (1.0 + t.abs()));
        let [k1, k2, k3, k4, k5, k6, k7] = &mut k;
        for i in 0..n {
            tmp[i] = y[i] + h_step * A21 * k1[i];
        }
        rhs(&tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + h_step * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(&tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + h_step * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(&tmp, k4);
        for i in 0..n {
            tmp[i] = y[i] + h_step * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(&tmp, k5);
        for i in 0..n {
            tmp[i] = y[i] + h_step * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs(&tmp, k6);
        for i in 0..n {
            y1[i] = y[i] + h_step * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs(&y1, k7);
        taken += 1;

        let mut err = 0.0;
        for i in 0..n {
            let e = h_step * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(y1[i].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / n as f64).sqrt();
        if !err.is_finite() {
            rec.check(t + h_step, &y1)?;
            h = h_step * 0.2;
            continue;
        }
        if err > 1.0 {
            h = h_step * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            continue;
        }

        for i in 0..n {
            let ydiff = y1[i] - y[i];
            let bspl = h_step * k1[i] - ydiff;
            cont[0][i] = y[i];
            cont[1][i] = ydiff;
            cont[2][i] = bspl;
            cont[3][i] = ydiff - h_step * k7[i] - bspl;
            cont[4][i] = h_step * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        let t_new = t + h_step;
        rec.check(t_new, &y1)?;
        while !rec.done() {
            let tg = rec.next_time();
            if tg > t_new + 1e-12 * (1.0 + t_new.abs()) {
                break;
            }
            let theta = ((tg - t) / h_step).clamp(0.0, 1.0);
            let theta1 = 1.0 - theta;
            let x: Vec<f64> = (0..n)
                .map(|i| {
                    cont[0][i]
                        + theta * (cont[1][i] + theta1 * (cont[2][i] + theta * (cont[3][i] + theta1 * cont[4][i])))
                })
                .collect();
            let u = ctrl(&x);
            rec.push(x, u)?;
        }

        t = t_new;
        std::mem::swap(&mut y, &mut y1);
        let (first, rest) = k.split_at_mut(1);
        first[0].copy_from_slice(&rest[5]);
        h = h_step * (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 10.0);
    }
    Ok(())
}
