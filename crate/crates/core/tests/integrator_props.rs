#![allow(clippy::excessive_precision)]

mod common;

use common::*;
use fragsim::integrator::{expm_oracle, integrate, integrate_fixed, IntegratorConfig};
use fragsim::observables::{particle_count, total_mass};
use fragsim::operator::{build_generator, ClusterState};
use fragsim::rates::{KernelSpec, RateFamily, RateModel};

fn delta(n: usize, at: usize) -> Vec<f64> {
    ClusterState::monodisperse(n, at, 1.0).f
}

#[test]
fn oracle_matches_frozen_high_precision_values() {
    // e^{tG} delta_N at 50 digits.
    let cases: Vec<(RateModel, usize, f64, Vec<f64>)> = vec![
        (
            constant_rates(),
            8,
            1.0,
            vec![
                0.64959032061600202,
                0.28806007627958062,
                0.21027988155276071,
                0.16820242345121863,
                0.14886881156027396,
                0.15466889512755736,
                0.17400250701850203,
                0.13533528323661269,
            ],
        ),
        (
            linear_decay(),
            6,
            1.0,
            vec![
                0.92848857740846775,
                0.30277644718313229,
                0.14114117734738641,
                0.04855012616571408,
                0.01002796935111579,
                0.00091188196555451621,
            ],
        ),
        (
            linear_death(),
            4,
            20.0,
            vec![
                8.6180900607343662e-18,
                9.3001899400520898e-44,
                2.8974367771682904e-61,
                6.7141842882115932e-79,
            ],
        ),
        (
            all_linear(),
            5,
            2.0,
            vec![
                0.033936341762490376,
                1.8676847222140023e-5,
                4.8441815431469933e-8,
                9.4144423032756439e-11,
                9.3576229688401746e-14,
            ],
        ),
    ];
    for (m, n, t, want) in cases {
        let g = build_generator(&m, &KernelSpec::uniform_binary(), n).unwrap();
        let got = expm_oracle(&g, &delta(n, n), t).unwrap();
        assert!(rel_mass_err(&got, &want) <= 1e-12, "N={n} t={t}: {got:?}");
    }
}

#[test]
fn fixed_step_global_error_is_second_order() {
    for (_, m) in all_models() {
        let n = 8;
        let g = build_generator(&m, &KernelSpec::uniform_binary(), n).unwrap();
        let f0 = delta(n, n);
        let exact = expm_oracle(&g, &f0, 1.0).unwrap();
        let err = |dt: f64| rel_mass_err(&integrate_fixed(&g, &f0, dt, 1.0).unwrap(), &exact);
        let (e1, e2) = (err(0.02), err(0.01));
        let ratio = e1 / e2;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio} ({e1:e} / {e2:e})");
    }
}

fn run(m: &RateModel, cfg: &IntegratorConfig) -> fragsim::integrator::Trajectory {
    let g = build_generator(m, &KernelSpec::uniform_binary(), 64).unwrap();
    integrate(&g, &ClusterState::monodisperse(64, 32, 10.0), cfg).unwrap()
}

#[test]
fn scenario_invariants_at_default_tolerances() {
    let cfg = IntegratorConfig::default();
    for (name, m) in all_models() {
        let tr = run(&m, &cfg);
        let m0 = 320.0;
        assert_eq!(tr.samples[0].f, ClusterState::monodisperse(64, 32, 10.0).f);
        assert!(tr.times().zip(tr.times().skip(1)).all(|(a, b)| a < b));
        assert_eq!(tr.last().t, 20.0);
        for s in &tr.samples {
            assert!(
                s.f.iter().all(|&v| v >= -1e-9 * m0),
                "{name}: negative undershoot at t={}",
                s.t
            );
            // Support never leaves sizes 1..=32.
            assert!(s.f[32..].iter().all(|&v| v == 0.0), "{name}: support grew at t={}", s.t);
        }
        for w in tr.samples.windows(2) {
            let (a, b) = (total_mass(&w[0].f), total_mass(&w[1].f));
            assert!(b <= a * (1.0 + 1e-9), "{name}: mass rose {a} -> {b} at t={}", w[1].t);
        }
    }
}

#[test]
fn linear_death_mass_strictly_decreasing() {
    let tr = run(&linear_death(), &IntegratorConfig::default());
    let mass: Vec<f64> = tr.samples.iter().map(|s| total_mass(&s.f)).collect();
    assert!(mass.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn constant_rates_particle_count_rises_then_falls() {
    let tr = run(&constant_rates(), &IntegratorConfig::default());
    let count: Vec<f64> = tr.samples.iter().map(|s| particle_count(&s.f)).collect();
    let peak = count
        .iter()
        .enumerate()
        .fold(0, |best, (k, &v)| if v > count[best] { k } else { best });
    assert!(peak > 0 && peak < count.len() - 1);
    assert!(count[..=peak].windows(2).all(|w| w[1] >= w[0]));
    assert!(count[peak..].windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn pure_fragmentation_conserves_mass() {
    // r = d = 0 is outside the model's hypotheses; solver check only.
    let m = RateModel::new_unchecked(
        RateFamily::constant(0.0),
        RateFamily::constant(0.0),
        RateFamily::constant(1.0),
    );
    let cfg = IntegratorConfig {
        rtol: 1e-8,
        ..Default::default()
    };
    let tr = run(&m, &cfg);
    for s in &tr.samples {
        let rel = (total_mass(&s.f) - 320.0).abs() / 320.0;
        assert!(rel <= 1e-8, "t={}: drift {rel:e}", s.t);
    }
}

#[test]
fn upper_support_invariance_for_explicit_state() {
    let n = 20;
    let mut f0 = vec![0.0; n];
    for (k, v) in f0.iter_mut().take(7).enumerate() {
        *v = 1.0 + k as f64;
    }
    for (_, m) in all_models() {
        let g = build_generator(&m, &KernelSpec::uniform_binary(), n).unwrap();
        let tr = integrate(
            &g,
            &ClusterState::new(0.0, f0.clone()),
            &IntegratorConfig {
                t_end: 5.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(tr.samples.iter().all(|s| s.f[7..].iter().all(|&v| v == 0.0)));
    }
}

#[test]
fn recorded_steps_cover_samples() {
    let cfg = IntegratorConfig {
        t_end: 2.0,
        record_steps: true,
        ..Default::default()
    };
    let tr = run(&linear_death(), &cfg);
    assert_eq!(tr.steps.len(), tr.stats.accepted + 1);
    assert!(tr.steps.windows(2).all(|w| w[0].t < w[1].t));
    // Every sample is an accepted step.
    for s in &tr.samples {
        assert!(tr.steps.iter().any(|p| p.t == s.t && p.f == s.f));
    }
}

#[test]
fn deterministic() {
    let cfg = IntegratorConfig::default();
    assert_eq!(run(&linear_decay(), &cfg), run(&linear_decay(), &cfg));
}
