//! Scalar diagnostics along a trajectory and their CSV form.

use std::io::{self, Write};

use serde::Serialize;

use crate::format::fmt_g;
use crate::integrator::Trajectory;
use crate::operator::ClusterState;
use crate::rates::RateModel;

/// `M = sum n f_n`.
pub fn total_mass(f: &[f64]) -> f64 {
    f.iter().enumerate().map(|(k, &v)| (k + 1) as f64 * v).sum()
}

/// `N_p = sum f_n`.
pub fn particle_count(f: &[f64]) -> f64 {
    f.iter().sum()
}

/// `c(f) = sum (r_n + n d_n) f_n`, the rate at which mass leaves the system.
pub fn mass_loss_rate(model: &RateModel, f: &[f64]) -> f64 {
    f.iter()
        .enumerate()
        .map(|(k, &v)| {
            let n = k + 1;
            (model.decay(n) + n as f64 * model.death(n)) * v
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSeries {
    pub name: String,
    pub units: String,
    pub points: Vec<(f64, f64)>,
}

impl TimeSeries {
    pub fn new(name: &str, units: &str, points: Vec<(f64, f64)>) -> Self {
        TimeSeries {
            name: name.into(),
            units: units.into(),
            points,
        }
    }

    pub fn from_states(name: &str, units: &str, states: &[ClusterState], f: impl Fn(&[f64]) -> f64) -> Self {
        Self::new(name, units, states.iter().map(|s| (s.t, f(&s.f))).collect())
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    pub fn last_value(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    /// Strictly increasing times and finite values.
    pub fn is_well_formed(&self) -> bool {
        self.points.windows(2).all(|w| w[0].0 < w[1].0)
            && self.points.iter().all(|p| p.0.is_finite() && p.1.is_finite())
    }

    /// Header `t,value`, then one `%.12g,%.12g` row per point.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,value")?;
        for &(t, v) in &self.points {
            writeln!(out, "{},{}", fmt_g(t, 12), fmt_g(v, 12))?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("ascii output")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSet {
    pub mass: TimeSeries,
    pub count: TimeSeries,
    pub loss_rate: TimeSeries,
}

/// Mass, particle count and mass-loss rate at the trajectory's sample times.
pub fn extract_series(traj: &Trajectory, model: &RateModel) -> ObservableSet {
    series_at(&traj.samples, model)
}

/// Same as [`extract_series`] but over an arbitrary list of states (e.g. accepted steps).
pub fn series_at(states: &[ClusterState], model: &RateModel) -> ObservableSet {
    ObservableSet {
        mass: TimeSeries::from_states("mass", "monomers", states, total_mass),
        count: TimeSeries::from_states("count", "clusters", states, particle_count),
        loss_rate: TimeSeries::from_states("loss_rate", "monomers/time", states, |f| mass_loss_rate(model, f)),
    }
}

/// Centered difference `(M_{k+1} - M_{k-1}) / (t_{k+1} - t_{k-1})` at interior points.
pub fn centered_derivative(series: &TimeSeries) -> Vec<(f64, f64)> {
    series
        .points
        .windows(3)
        .map(|w| (w[1].0, (w[2].1 - w[0].1) / (w[2].0 - w[0].0)))
        .collect()
}

/// Indices of strict interior local maxima.
pub fn interior_maxima(series: &TimeSeries) -> Vec<usize> {
    series
        .points
        .windows(3)
        .enumerate()
        .filter(|(_, w)| w[1].1 > w[0].1 && w[1].1 >= w[2].1)
        .map(|(k, _)| k + 1)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::RateFamily;

    fn constant_rates() -> RateModel {
        RateModel::new(
            RateFamily::constant(1.0),
            RateFamily::constant(0.0),
            RateFamily::constant(1.0),
        )
        .unwrap()
    }

    #[test]
    fn scalar_examples() {
        let f0 = ClusterState::monodisperse(64, 32, 10.0);
        assert_eq!(total_mass(&f0.f), 320.0);
        assert_eq!(particle_count(&f0.f), 10.0);
        assert_eq!(total_mass(&[1.0, 1.0, 1.0]), 6.0);
        assert_eq!(particle_count(&[1.0, 1.0, 1.0]), 3.0);
        assert_eq!(total_mass(&[0.0; 5]), 0.0);
        assert_eq!(mass_loss_rate(&constant_rates(), &f0.f), 10.0);
        let m43 = RateModel::new(
            RateFamily::constant(1.0),
            RateFamily::linear(1.0),
            RateFamily::linear(1.0),
        )
        .unwrap();
        assert_eq!(mass_loss_rate(&m43, &[1.0, 0.0]), 2.0);
        assert_eq!(mass_loss_rate(&m43, &[0.0; 3]), 0.0);
    }

    #[test]
    fn csv_format() {
        let s = TimeSeries::new("mass", "monomers", vec![(0.0, 320.0), (0.1, 2.0 / 3.0), (20.0, 1.5e-7)]);
        assert_eq!(s.to_csv(), "t,value\n0,320\n0.1,0.666666666667\n20,1.5e-07\n");
        assert!(s.is_well_formed());
        assert!(!TimeSeries::new("x", "", vec![(1.0, 0.0), (1.0, 0.0)]).is_well_formed());
        assert!(!TimeSeries::new("x", "", vec![(1.0, f64::NAN)]).is_well_formed());
    }

    #[test]
    fn derivative_and_maxima() {
        let s = TimeSeries::new("q", "", (0..5).map(|k| (k as f64, (k * k) as f64)).collect());
        assert_eq!(centered_derivative(&s), vec![(1.0, 2.0), (2.0, 4.0), (3.0, 6.0)]);
        let hump = TimeSeries::new("c", "", vec![(0.0, 1.0), (1.0, 3.0), (2.0, 2.0), (3.0, 0.5)]);
        assert_eq!(interior_maxima(&hump), vec![1]);
        assert!(interior_maxima(&s).is_empty());
    }

    #[test]
    fn zero_trajectory() {
        let states: Vec<ClusterState> = (0..4).map(|k| ClusterState::new(k as f64, vec![0.0; 3])).collect();
        let obs = series_at(&states, &constant_rates());
        for s in [&obs.mass, &obs.count, &obs.loss_rate] {
            assert!(s.values().all(|v| v == 0.0));
            assert_eq!(s.points.len(), 4);
        }
    }
}
