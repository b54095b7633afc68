//! TR-BDF2 time stepping for the truncated system, plus a dense exponential oracle.
//!
//! Both stages solve `(I - c G) x = rhs` with `c = gamma h / 2`; since `G` is upper
//! triangular this is a single back substitution per stage, no Newton iteration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{mass_norm, ClusterState, TruncatedGenerator};

/// `gamma = 2 - sqrt 2`: trapezoidal stage to `t + gamma h`, then BDF2.
pub const GAMMA: f64 = 2.0 - std::f64::consts::SQRT_2;
const D: f64 = GAMMA / 2.0;
const W: f64 = std::f64::consts::SQRT_2 / 4.0;
/// BDF2 stage coefficients `1/(gamma(2-gamma))` and `(1-gamma)^2/(gamma(2-gamma))`.
const BDF_CUR: f64 = 1.0 / (GAMMA * (2.0 - GAMMA));
const BDF_PREV: f64 = (1.0 - GAMMA) * (1.0 - GAMMA) / (GAMMA * (2.0 - GAMMA));
/// Weights of `G f_n`, `G f_*`, `G f_{n+1}` in the difference between the
/// second-order solution and its third-order companion.
const EST_1: f64 = (4.0 * W - 1.0) / 3.0;
const EST_2: f64 = -1.0 / 3.0;
const EST_3: f64 = 2.0 * D / 3.0;

/// Dense computations (the exponential oracle) are refused above this size.
pub const DENSE_LIMIT: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub t_end: f64,
    pub dt_init: f64,
    pub rtol: f64,
    /// Absolute tolerance on the mass norm of the local error estimate.
    pub atol: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub sample_every: f64,
    /// Keep every accepted step in [`Trajectory::steps`].
    pub record_steps: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            t_end: 20.0,
            dt_init: 1e-4,
            rtol: 1e-6,
            atol: 1e-9,
            dt_min: 1e-14,
            dt_max: 1.0,
            sample_every: 0.1,
            record_steps: false,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.t_end) {
            return Err(Error::Config(format!("t_end = {} must be > 0", self.t_end)));
        }
        if !(pos(self.rtol) && pos(self.atol)) {
            return Err(Error::Config(format!(
                "rtol = {}, atol = {} must both be > 0",
                self.rtol, self.atol
            )));
        }
        if !(pos(self.dt_min) && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max && self.dt_max.is_finite())
        {
            return Err(Error::Config(format!(
                "need 0 < dt_min <= dt_init <= dt_max, got {} / {} / {}",
                self.dt_min, self.dt_init, self.dt_max
            )));
        }
        if !pos(self.sample_every) {
            return Err(Error::Config(format!(
                "sample_every = {} must be > 0",
                self.sample_every
            )));
        }
        Ok(())
    }

    /// Output times in `(0, t_end]`: multiples of `sample_every`, then `t_end`.
    fn sample_times(&self) -> Vec<f64> {
        let mut times = Vec::new();
        let mut k = 1u64;
        loop {
            let t = k as f64 * self.sample_every;
            if t >= self.t_end * (1.0 - 1e-12) {
                break;
            }
            times.push(t);
            k += 1;
        }
        times.push(self.t_end);
        times
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// States at `t = 0` and at each output time.
    pub samples: Vec<ClusterState>,
    /// Every accepted step including `t = 0`; empty unless `record_steps` was set.
    pub steps: Vec<ClusterState>,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }

    pub fn last(&self) -> &ClusterState {
        self.samples.last().expect("trajectory has at least the initial sample")
    }
}

struct Workspace {
    g_f: Vec<f64>,
    stage: Vec<f64>,
    next: Vec<f64>,
    combo: Vec<f64>,
    est: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Workspace {
            g_f: vec![0.0; n],
            stage: vec![0.0; n],
            next: vec![0.0; n],
            combo: vec![0.0; n],
            est: vec![0.0; n],
        }
    }
}

/// One TR-BDF2 step; leaves the new state in `ws.next`.
fn advance(g: &TruncatedGenerator, f: &[f64], h: f64, ws: &mut Workspace) {
    let c = D * h;
    g.apply_into(f, &mut ws.g_f);
    for ((s, &fi), &gfi) in ws.stage.iter_mut().zip(f).zip(&ws.g_f) {
        *s = fi + c * gfi;
    }
    g.solve_shifted_in_place(c, &mut ws.stage);
    for ((x, &si), &fi) in ws.next.iter_mut().zip(&ws.stage).zip(f) {
        *x = BDF_CUR * si - BDF_PREV * fi;
    }
    g.solve_shifted_in_place(c, &mut ws.next);
}

/// Local error estimate for the step just taken by [`advance`]; left in `ws.est`.
fn estimate(g: &TruncatedGenerator, f: &[f64], h: f64, ws: &mut Workspace) {
    for (k, c) in ws.combo.iter_mut().enumerate() {
        *c = h * (EST_1 * f[k] + EST_2 * ws.stage[k] + EST_3 * ws.next[k]);
    }
    g.apply_into(&ws.combo, &mut ws.est);
}

/// A single fixed TR-BDF2 step of size `dt`.
pub fn step_trbdf2(g: &TruncatedGenerator, f: &[f64], dt: f64) -> Result<Vec<f64>> {
    if f.len() != g.size() {
        return Err(Error::DimensionMismatch {
            expected: g.size(),
            found: f.len(),
        });
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Domain(format!("step size must be > 0, got {dt}")));
    }
    let mut ws = Workspace::new(g.size());
    advance(g, f, dt, &mut ws);
    Ok(ws.next)
}

/// Fixed-step integration over `[0, t_end]` with `round(t_end / dt)` equal steps.
pub fn integrate_fixed(g: &TruncatedGenerator, f0: &[f64], dt: f64, t_end: f64) -> Result<Vec<f64>> {
    if f0.len() != g.size() {
        return Err(Error::DimensionMismatch {
            expected: g.size(),
            found: f0.len(),
        });
    }
    if !(dt > 0.0 && t_end >= 0.0) {
        return Err(Error::Domain(format!("need dt > 0 and t_end >= 0, got {dt}, {t_end}")));
    }
    let steps = (t_end / dt).round().max(1.0) as usize;
    let h = t_end / steps as f64;
    let mut ws = Workspace::new(g.size());
    let mut f = f0.to_vec();
    if t_end == 0.0 {
        return Ok(f);
    }
    for _ in 0..steps {
        advance(g, &f, h, &mut ws);
        std::mem::swap(&mut f, &mut ws.next);
    }
    Ok(f)
}

const SAFETY: f64 = 0.9;
const MAX_GROWTH: f64 = 5.0;
const MIN_SHRINK: f64 = 0.2;

fn step_factor(err: f64, tol: f64) -> f64 {
    if err == 0.0 {
        return MAX_GROWTH;
    }
    (SAFETY * (tol / err).cbrt()).clamp(MIN_SHRINK, MAX_GROWTH)
}

/// Adaptive TR-BDF2 over `[0, cfg.t_end]`.
///
/// A step passes when the mass norm of the embedded error estimate is at most
/// `rtol * ||f||_mass + atol`. Steps are shortened to land exactly on the output
/// times, so every sample is an accepted step and no interpolation is involved.
pub fn integrate(g: &TruncatedGenerator, f0: &ClusterState, cfg: &IntegratorConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if f0.len() != g.size() {
        return Err(Error::DimensionMismatch {
            expected: g.size(),
            found: f0.len(),
        });
    }
    if let Some(k) = f0.f.iter().position(|&v| !(v.is_finite() && v >= 0.0)) {
        return Err(Error::Domain(format!(
            "initial state must be finite and nonnegative; f({}) = {}",
            k + 1,
            f0.f[k]
        )));
    }

    let mut ws = Workspace::new(g.size());
    let mut f = f0.f.clone();
    let mut t = 0.0_f64;
    let mut dt = cfg.dt_init;
    let mut stats = StepStats::default();
    let mut samples = vec![ClusterState::new(0.0, f.clone())];
    let mut steps = Vec::new();
    if cfg.record_steps {
        steps.push(ClusterState::new(0.0, f.clone()));
    }

    for target in cfg.sample_times() {
        while t < target {
            let mut h = dt.min(cfg.dt_max);
            let landing = t + 1.01 * h >= target;
            if landing {
                h = target - t;
            }
            advance(g, &f, h, &mut ws);
            estimate(g, &f, h, &mut ws);
            let err = mass_norm(&ws.est);
            let tol = cfg.rtol * mass_norm(&f).max(mass_norm(&ws.next)) + cfg.atol;
            let factor = if err.is_finite() {
                step_factor(err, tol)
            } else {
                MIN_SHRINK
            };

            if err <= tol {
                stats.accepted += 1;
                t = if landing { target } else { t + h };
                std::mem::swap(&mut f, &mut ws.next);
                if cfg.record_steps {
                    steps.push(ClusterState::new(t, f.clone()));
                }
                let proposal = h * factor;
                // A step cut short to hit an output time says little about the
                // admissible step size; do not let it shrink dt.
                dt = if landing { proposal.max(dt) } else { proposal }.min(cfg.dt_max);
            } else {
                stats.rejected += 1;
                dt = h * factor.min(SAFETY);
                if dt < cfg.dt_min {
                    return Err(Error::IntegrationFailure {
                        t,
                        dt,
                        last_good: Box::new(ClusterState::new(t, f)),
                    });
                }
            }
        }
        samples.push(ClusterState::new(target, f.clone()));
    }

    Ok(Trajectory { samples, steps, stats })
}

/// `exp(t G) f0` by dense scaling and squaring with a Padé approximant.
pub fn expm_oracle(g: &TruncatedGenerator, f0: &[f64], t: f64) -> Result<Vec<f64>> {
    let n = g.size();
    if n > DENSE_LIMIT {
        return Err(Error::DenseLimit { n, limit: DENSE_LIMIT });
    }
    if f0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: f0.len(),
        });
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Domain(format!("time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(f0.to_vec());
    }
    let dense = g.to_dense();
    let m = DMatrix::from_fn(n, n, |i, j| t * dense[i][j]);
    let y = m.exp() * DVector::from_column_slice(f0);
    Ok(y.iter().copied().collect())
}
