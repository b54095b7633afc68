//! Dominant eigenpair, rank-one spectral projection and the asymptotic gap.
//!
//! The truncated generator is upper triangular, so its spectrum is `{-theta_n}`.
//! When `theta` has a strict minimum at `N0`, `lambda_1 = -theta_{N0}` is simple and
//! the left and right eigenvectors follow from triangular recursions evaluated
//! directly on the rate coefficients:
//!
//! * right, `e_n = 0` for `n > N0`, `e_{N0} = 1`, and for `n < N0`
//!   `e_n = (r_{n+1} e_{n+1} + sum_{j=n+1}^{N0} a_j b(n, j) e_j) / (theta_n - theta_{N0})`;
//! * left, `e*_n = 0` for `n < N0`, `e*_{N0} = 1`, and for `n > N0`
//!   `e*_n = (r_n e*_{n-1} + a_n sum_{j=N0}^{n-1} b(j, n) e*_j) / (theta_n - theta_{N0})`.
//!
//! The supports overlap only at `N0`, so `<e*, e> = 1` holds exactly.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::operator::mass_norm;
use crate::rates::{theta, KernelSpec, RateModel, Theta};

/// Gap values at or below this are treated as roundoff and left out of the rate fit.
pub const GAP_FLOOR: f64 = 1e-13;
/// Eigenvector recursions abort once a component exceeds this magnitude.
pub const EIGEN_OVERFLOW: f64 = 1e300;
/// Relative spacing `(theta_n - theta_min) / theta_min` below which a warning is raised.
pub const NEAR_TIE: f64 = 1e-8;
/// Minimum number of points for a rate fit.
pub const MIN_FIT_POINTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralData {
    pub lambda1: f64,
    /// 1-based index of the strict minimum of theta.
    pub n0: usize,
    pub e_right: Vec<f64>,
    pub e_left: Vec<f64>,
    /// Second-smallest minus smallest theta; `None` when `N = 1`.
    pub gap: Option<f64>,
    /// 1-based indices where `theta_n` is within [`NEAR_TIE`] of the minimum.
    pub near_ties: Vec<usize>,
}

/// `(lambda_1, N0)` with `lambda_1 = -min theta`; fails unless the minimum is strict.
pub fn dominant_eigenvalue(theta: &Theta) -> Result<(f64, usize)> {
    let vals = theta.values();
    if vals.is_empty() {
        return Err(Error::Domain("empty theta sequence".into()));
    }
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let at: Vec<usize> = vals
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == min)
        .map(|(k, _)| k + 1)
        .collect();
    if at.len() > 1 {
        return Err(Error::Multiplicity { indices: at });
    }
    Ok((-min, at[0]))
}

fn near_ties(theta: &Theta, n0: usize) -> Vec<usize> {
    let base = theta.at(n0);
    theta
        .values()
        .iter()
        .enumerate()
        .filter(|&(k, &v)| k + 1 != n0 && v - base < NEAR_TIE * base)
        .map(|(k, _)| k + 1)
        .collect()
}

fn check_n0(theta: &Theta, n0: usize) -> Result<()> {
    if n0 == 0 || n0 > theta.len() {
        return Err(Error::Domain(format!("N0 = {n0} outside 1..={}", theta.len())));
    }
    let (_, argmin) = dominant_eigenvalue(theta)?;
    if argmin != n0 {
        return Err(Error::Domain(format!(
            "N0 = {n0} is not the minimum of theta (found {argmin})"
        )));
    }
    Ok(())
}

fn guard(index: usize, value: f64) -> Result<f64> {
    if !value.is_finite() || value.abs() > EIGEN_OVERFLOW {
        return Err(Error::EigenOverflow { index, value });
    }
    Ok(value)
}

/// Left eigenvector `e*` of `G_N` for `lambda_1`, normalised by `e*_{N0} = 1`.
pub fn left_eigenvector(
    model: &RateModel,
    kernel: &KernelSpec,
    theta: &Theta,
    n0: usize,
    n: usize,
) -> Result<Vec<f64>> {
    if theta.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: theta.len(),
        });
    }
    check_n0(theta, n0)?;
    let base = theta.at(n0);
    let mut e = vec![0.0; n];
    e[n0 - 1] = 1.0;
    for m in n0 + 1..=n {
        let frag: f64 = (n0..m).map(|j| kernel.eval(j, m) * e[j - 1]).sum();
        let v = (model.decay(m) * e[m - 2] + model.frag(m) * frag) / (theta.at(m) - base);
        e[m - 1] = guard(m, v)?;
    }
    Ok(e)
}

/// Right eigenvector `e` of `G_N` for `lambda_1`, normalised by `e_{N0} = 1`.
pub fn right_eigenvector(model: &RateModel, kernel: &KernelSpec, theta: &Theta, n0: usize) -> Result<Vec<f64>> {
    check_n0(theta, n0)?;
    let n = theta.len();
    let base = theta.at(n0);
    let mut e = vec![0.0; n];
    e[n0 - 1] = 1.0;
    for m in (1..n0).rev() {
        let frag: f64 = (m + 1..=n0).map(|j| model.frag(j) * kernel.eval(m, j) * e[j - 1]).sum();
        let v = (model.decay(m + 1) * e[m] + frag) / (theta.at(m) - base);
        e[m - 1] = guard(m, v)?;
    }
    Ok(e)
}

impl SpectralData {
    /// Dominant eigenvalue, both eigenvectors and the truncated spectral gap at size `N`.
    pub fn compute(model: &RateModel, kernel: &KernelSpec, n: usize) -> Result<Self> {
        let th = theta(model, n)?;
        let (lambda1, n0) = dominant_eigenvalue(&th)?;
        let ties = near_ties(&th, n0);
        for &k in &ties {
            log::warn!(
                "theta({k}) = {} is within {NEAR_TIE:e} (relative) of the minimum theta({n0}); eigenvectors are ill-conditioned",
                th.at(k)
            );
        }
        let e_right = right_eigenvector(model, kernel, &th, n0)?;
        let e_left = left_eigenvector(model, kernel, &th, n0, n)?;
        let gap = th
            .values()
            .iter()
            .enumerate()
            .filter(|&(k, _)| k + 1 != n0)
            .map(|(_, &v)| v)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
            .map(|second| second + lambda1);
        Ok(SpectralData {
            lambda1,
            n0,
            e_right,
            e_left,
            gap,
            near_ties: ties,
        })
    }

    /// `<e*, f>`.
    pub fn coefficient(&self, f: &[f64]) -> f64 {
        self.e_left.iter().zip(f).map(|(a, b)| a * b).sum()
    }

    /// `Pi f = <e*, f> e`.
    pub fn project(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.e_left.len() {
            return Err(Error::DimensionMismatch {
                expected: self.e_left.len(),
                found: f.len(),
            });
        }
        let c = self.coefficient(f);
        Ok(self.e_right.iter().map(|e| c * e).collect())
    }
}

/// Free-function form of [`SpectralData::project`].
pub fn project(sd: &SpectralData, f: &[f64]) -> Result<Vec<f64>> {
    sd.project(f)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    /// Least-squares slope of `ln gap_norm` against `t`.
    pub rate: f64,
    /// `exp` of the intercept, the fitted prefactor in `gap ~ M exp(rate t)`.
    pub prefactor: f64,
    pub points_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapSeries {
    /// `(t, ||exp(-lambda_1 t) f(t) - <e*, f0> e||)` at the trajectory's sample times.
    pub points: Vec<(f64, f64)>,
    pub fit: Option<RateFit>,
    pub fit_window: (f64, f64),
}

impl GapSeries {
    pub fn fitted_rate(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.rate)
    }
}

/// Distance of the rescaled trajectory from its rank-one limit, with an exponential fit.
///
/// `window` defaults to the second half of the sampled interval. Only points with
/// gap above [`GAP_FLOOR`] enter the fit; fewer than [`MIN_FIT_POINTS`] leaves
/// `fit` empty while still returning the series.
pub fn gap_series(traj: &Trajectory, sd: &SpectralData, f0: &[f64], window: Option<(f64, f64)>) -> Result<GapSeries> {
    if f0.len() != sd.e_right.len() {
        return Err(Error::DimensionMismatch {
            expected: sd.e_right.len(),
            found: f0.len(),
        });
    }
    let limit: Vec<f64> = sd.project(f0)?;
    let mut diff = vec![0.0; limit.len()];
    let points: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .map(|s| {
            let scale = (-sd.lambda1 * s.t).exp();
            for ((d, &fk), &pk) in diff.iter_mut().zip(&s.f).zip(&limit) {
                *d = scale * fk - pk;
            }
            (s.t, mass_norm(&diff))
        })
        .collect();

    let t_end = points.last().map_or(0.0, |p| p.0);
    let fit_window = window.unwrap_or((t_end / 2.0, t_end));
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(t, g)| t >= fit_window.0 && t <= fit_window.1 && g > GAP_FLOOR)
        .map(|&(t, g)| (t, g.ln()))
        .collect();
    let fit = (usable.len() >= MIN_FIT_POINTS).then(|| {
        let (slope, intercept) = least_squares(&usable);
        RateFit {
            rate: slope,
            prefactor: intercept.exp(),
            points_used: usable.len(),
        }
    });
    Ok(GapSeries {
        points,
        fit,
        fit_window,
    })
}

fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{build_generator, ClusterState};
    use crate::rates::RateFamily;

    fn linear_death() -> RateModel {
        RateModel::new(
            RateFamily::constant(1.0),
            RateFamily::linear(1.0),
            RateFamily::linear(1.0),
        )
        .unwrap()
    }

    #[test]
    fn dominant_eigenvalue_examples() {
        assert_eq!(
            dominant_eigenvalue(&theta(&linear_death(), 64).unwrap()).unwrap(),
            (-2.0, 1)
        );
        assert_eq!(
            dominant_eigenvalue(&Theta::from_values(vec![3.0, 1.0, 2.0])).unwrap(),
            (-1.0, 2)
        );
        match dominant_eigenvalue(&Theta::from_values(vec![1.0, 1.0, 2.0])) {
            Err(Error::Multiplicity { indices }) => assert_eq!(indices, vec![1, 2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn left_eigenvector_linear_death() {
        let m = linear_death();
        let k = KernelSpec::uniform_binary();
        let th = theta(&m, 4).unwrap();
        let e = left_eigenvector(&m, &k, &th, 1, 4).unwrap();
        assert_eq!(e[0], 1.0);
        assert!((e[1] - 5.0 / 3.0).abs() < 1e-15);
        let g = build_generator(&m, &k, 4).unwrap();
        let gte = g.apply_adjoint(&e).unwrap();
        for (a, b) in gte.iter().zip(&e) {
            assert!((a + 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn minimum_at_last_index() {
        let m = RateModel::new(
            RateFamily::tabulated(vec![3.0, 2.0, 1.0]),
            RateFamily::constant(0.0),
            RateFamily::tabulated(vec![0.0, 0.5, 0.0]),
        )
        .unwrap();
        let th = theta(&m, 3).unwrap();
        let e = left_eigenvector(&m, &KernelSpec::uniform_binary(), &th, 3, 3).unwrap();
        assert_eq!(e, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn right_eigenvector_synthetic() {
        // theta = (5, 1, 4) with r = 1 and a = (0, 2, 3); needs d_2 = -2, so unchecked.
        let m = RateModel::new_unchecked(
            RateFamily::constant(1.0),
            RateFamily::tabulated(vec![4.0, -2.0, 0.0]),
            RateFamily::tabulated(vec![0.0, 2.0, 3.0]),
        );
        let k = KernelSpec::uniform_binary();
        let th = Theta::from_values(vec![5.0, 1.0, 4.0]);
        let e = right_eigenvector(&m, &k, &th, 2).unwrap();
        // e_1 = (r_2 + a_2 b(1,2)) / (theta_1 - theta_2) = (1 + 4) / 4
        assert_eq!(e, vec![1.25, 1.0, 0.0]);
        let g = build_generator(&m, &k, 3).unwrap();
        let ge = g.apply(&e).unwrap();
        for (a, b) in ge.iter().zip(&e) {
            assert!((a + b).abs() < 1e-15, "{ge:?}");
        }
    }

    #[test]
    fn right_eigenvector_at_first_index_is_delta() {
        let m = linear_death();
        let th = theta(&m, 16).unwrap();
        let e = right_eigenvector(&m, &KernelSpec::uniform_binary(), &th, 1).unwrap();
        let mut delta = vec![0.0; 16];
        delta[0] = 1.0;
        assert_eq!(e, delta);
    }

    #[test]
    fn wrong_n0_is_rejected() {
        let m = linear_death();
        let th = theta(&m, 4).unwrap();
        assert!(left_eigenvector(&m, &KernelSpec::uniform_binary(), &th, 2, 4).is_err());
        assert!(right_eigenvector(&m, &KernelSpec::uniform_binary(), &th, 0).is_err());
    }

    #[test]
    fn overflow_is_detected() {
        // Tiny gap above N0 and a huge fragmentation rate make e* explode.
        let n = 40;
        let m = RateModel::new(
            RateFamily::constant(1.0),
            RateFamily::tabulated((1..=n).map(|i| if i == 1 { 1e6 } else { 0.0 }).collect()),
            RateFamily::tabulated((1..=n).map(|i| if i == 1 { 0.0 } else { 1e6 + 1e-3 }).collect()),
        )
        .unwrap();
        assert!(matches!(
            SpectralData::compute(&m, &KernelSpec::uniform_binary(), n),
            Err(Error::EigenOverflow { .. })
        ));
    }

    #[test]
    fn near_ties_are_flagged() {
        let m = RateModel::new(
            RateFamily::constant(1.0),
            RateFamily::tabulated(vec![1.0, 0.0, 5.0]),
            RateFamily::tabulated(vec![0.0, 1.0 + 1e-12, 1.0]),
        )
        .unwrap();
        let sd = SpectralData::compute(&m, &KernelSpec::uniform_binary(), 3).unwrap();
        assert_eq!(sd.n0, 1);
        assert_eq!(sd.near_ties, vec![2]);
    }

    #[test]
    fn projection_examples() {
        let m = linear_death();
        let sd = SpectralData::compute(&m, &KernelSpec::uniform_binary(), 64).unwrap();
        assert_eq!(sd.gap, Some(3.0));
        assert_eq!(sd.project(&sd.e_right).unwrap(), sd.e_right);
        let f0 = ClusterState::monodisperse(64, 32, 10.0);
        let p = sd.project(&f0.f).unwrap();
        assert_eq!(p[0], 10.0 * sd.e_left[31]);
        assert!(p[1..].iter().all(|&v| v == 0.0));
        assert!(sd.project(&[1.0]).is_err());
    }

    #[test]
    fn fit_recovers_exact_exponential() {
        let samples: Vec<ClusterState> = (0..=20)
            .map(|k| {
                let t = k as f64 * 0.5;
                ClusterState::new(t, vec![(-2.0 * t).exp(), 0.5 * (-5.0 * t).exp()])
            })
            .collect();
        let traj = Trajectory {
            samples,
            steps: vec![],
            stats: Default::default(),
        };
        let sd = SpectralData {
            lambda1: -2.0,
            n0: 1,
            e_right: vec![1.0, 0.0],
            e_left: vec![1.0, 0.0],
            gap: Some(3.0),
            near_ties: vec![],
        };
        let gs = gap_series(&traj, &sd, &[1.0, 0.5], Some((1.0, 4.0))).unwrap();
        let fit = gs.fit.unwrap();
        assert!((fit.rate + 3.0).abs() < 1e-9);
        assert!((fit.prefactor - 1.0).abs() < 1e-8);
        assert_eq!(fit.points_used, 7);
        let none = gap_series(&traj, &sd, &[1.0, 0.5], Some((1.0, 1.6))).unwrap();
        assert!(none.fit.is_none());
        assert_eq!(none.points.len(), 21);
    }
}
