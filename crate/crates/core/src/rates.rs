//! Rate coefficient families, the fragmentation kernel, and regime classification.
//!
//! Indices are 1-based cluster sizes throughout the public API: `decay(1)` is the
//! decay rate of monomers. Vectors returned by this module (e.g. [`Theta`]) are
//! stored 0-based, so `theta.values()[i - 1]` belongs to size `i`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for the kernel mass-conservation identity.
pub const KERNEL_CONSERVATION_TOL: f64 = 1e-12;

/// One coefficient sequence indexed by cluster size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RateFamily {
    /// `c` for every size.
    Constant { c: f64 },
    /// `c * i`.
    Linear { c: f64 },
    /// `c * i^p`.
    PowerLaw { c: f64, p: f64 },
    /// Explicit values; `values[0]` belongs to size 1.
    Tabulated { values: Vec<f64> },
}

impl RateFamily {
    pub fn constant(c: f64) -> Self {
        RateFamily::Constant { c }
    }

    pub fn linear(c: f64) -> Self {
        RateFamily::Linear { c }
    }

    pub fn power_law(c: f64, p: f64) -> Self {
        RateFamily::PowerLaw { c, p }
    }

    pub fn tabulated(values: Vec<f64>) -> Self {
        RateFamily::Tabulated { values }
    }

    /// Value at size `i` (1-based). Panics if `i` lies beyond a tabulated range;
    /// callers go through [`RateModel::check_size`] first.
    pub fn value(&self, i: usize) -> f64 {
        debug_assert!(i >= 1);
        match *self {
            RateFamily::Constant { c } => c,
            RateFamily::Linear { c } => c * i as f64,
            RateFamily::PowerLaw { c, p } => c * (i as f64).powf(p),
            RateFamily::Tabulated { ref values } => values[i - 1],
        }
    }

    /// `(c, p)` with value `c * i^p`, for the closed-form families.
    pub fn monomial(&self) -> Option<(f64, f64)> {
        match *self {
            RateFamily::Constant { c } => Some((c, 0.0)),
            RateFamily::Linear { c } => Some((c, 1.0)),
            RateFamily::PowerLaw { c, p } => Some((c, p)),
            RateFamily::Tabulated { .. } => None,
        }
    }

    fn len_limit(&self) -> Option<usize> {
        match self {
            RateFamily::Tabulated { values } => Some(values.len()),
            _ => None,
        }
    }

    fn validate(&self, name: &str, strictly_positive: bool) -> Result<()> {
        let bad = |v: f64| !v.is_finite() || v < 0.0 || (strictly_positive && v == 0.0);
        let requirement = if strictly_positive { "> 0" } else { ">= 0" };
        match *self {
            RateFamily::Constant { c } | RateFamily::Linear { c } => {
                if bad(c) {
                    return Err(Error::InvalidModel(format!(
                        "{name}: prefactor c = {c} must be finite and {requirement}"
                    )));
                }
            }
            RateFamily::PowerLaw { c, p } => {
                if bad(c) || !p.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "{name}: power law c = {c}, p = {p} needs finite p and c {requirement}"
                    )));
                }
            }
            RateFamily::Tabulated { ref values } => {
                if values.is_empty() {
                    return Err(Error::InvalidModel(format!("{name}: empty table")));
                }
                if let Some((k, v)) = values.iter().enumerate().find(|(_, &v)| bad(v)) {
                    return Err(Error::InvalidModel(format!(
                        "{name}({}) = {v} must be finite and {requirement}",
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Decay (`r`), death/sedimentation (`d`) and fragmentation (`a`) rates.
///
/// The fragmentation rate of monomers is structurally zero: closed-form `frag`
/// families describe sizes `i >= 2` only, and tabulated `frag` must start with 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RateModelConfig", into = "RateModelConfig")]
pub struct RateModel {
    decay: RateFamily,
    death: RateFamily,
    frag: RateFamily,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateModelConfig {
    pub decay: RateFamily,
    pub death: RateFamily,
    pub frag: RateFamily,
}

impl TryFrom<RateModelConfig> for RateModel {
    type Error = Error;

    fn try_from(cfg: RateModelConfig) -> Result<Self> {
        RateModel::new(cfg.decay, cfg.death, cfg.frag)
    }
}

impl From<RateModel> for RateModelConfig {
    fn from(m: RateModel) -> Self {
        RateModelConfig {
            decay: m.decay,
            death: m.death,
            frag: m.frag,
        }
    }
}

impl RateModel {
    /// Validated constructor: `r_i > 0`, `d_i >= 0`, `a_i >= 0`, `a_1 = 0`.
    pub fn new(decay: RateFamily, death: RateFamily, frag: RateFamily) -> Result<Self> {
        decay.validate("decay", true)?;
        death.validate("death", false)?;
        frag.validate("frag", false)?;
        if let RateFamily::Tabulated { values } = &frag {
            if values[0] != 0.0 {
                return Err(Error::InvalidModel(format!(
                    "frag(1) = {} but monomers cannot fragment",
                    values[0]
                )));
            }
        }
        Ok(RateModel { decay, death, frag })
    }

    /// Skips validation. Used for solver tests outside the model's hypotheses,
    /// e.g. pure fragmentation with `r = 0`.
    pub fn new_unchecked(decay: RateFamily, death: RateFamily, frag: RateFamily) -> Self {
        RateModel { decay, death, frag }
    }

    pub fn decay_family(&self) -> &RateFamily {
        &self.decay
    }

    pub fn death_family(&self) -> &RateFamily {
        &self.death
    }

    pub fn frag_family(&self) -> &RateFamily {
        &self.frag
    }

    pub fn decay(&self, i: usize) -> f64 {
        self.decay.value(i)
    }

    pub fn death(&self, i: usize) -> f64 {
        self.death.value(i)
    }

    pub fn frag(&self, i: usize) -> f64 {
        if i == 1 {
            0.0
        } else {
            self.frag.value(i)
        }
    }

    pub fn is_tabulated(&self) -> bool {
        [&self.decay, &self.death, &self.frag]
            .iter()
            .any(|f| matches!(f, RateFamily::Tabulated { .. }))
    }

    /// Largest truncation the model can be evaluated at.
    pub fn max_size(&self) -> Option<usize> {
        [&self.decay, &self.death, &self.frag]
            .iter()
            .filter_map(|f| f.len_limit())
            .min()
    }

    pub fn check_size(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::InvalidModel("truncation N must be at least 1".into()));
        }
        match self.max_size() {
            Some(max) if n > max => Err(Error::InvalidModel(format!(
                "tabulated rates cover sizes 1..={max} but N = {n}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Total loss rates `theta_i = r_i + a_i + d_i` for sizes `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta(Vec<f64>);

impl Theta {
    pub fn from_values(values: Vec<f64>) -> Self {
        Theta(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `theta_i` for 1-based `i`.
    pub fn at(&self, i: usize) -> f64 {
        self.0[i - 1]
    }
}

pub fn theta(model: &RateModel, n: usize) -> Result<Theta> {
    model.check_size(n)?;
    let values: Vec<f64> = (1..=n)
        .map(|i| model.decay(i) + model.frag(i) + model.death(i))
        .collect();
    if let Some(k) = values.iter().position(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(Error::InvalidModel(format!(
            "theta({}) = {} is not strictly positive",
            k + 1,
            values[k]
        )));
    }
    Ok(Theta(values))
}

/// Fragmentation kernel `b(i, j)`: expected number of `i`-mers from one broken `j`-mer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelConfig", into = "KernelConfig")]
pub struct KernelSpec {
    kind: KernelKind,
}

#[derive(Debug, Clone, PartialEq)]
enum KernelKind {
    UniformBinary,
    Tabulated {
        entries: Vec<(usize, usize, f64)>,
        lookup: HashMap<(usize, usize), f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelConfig {
    UniformBinary,
    /// Sparse `[i, j, b_ij]` triples; unlisted pairs are zero.
    Tabulated {
        entries: Vec<(usize, usize, f64)>,
    },
}

impl TryFrom<KernelConfig> for KernelSpec {
    type Error = Error;

    fn try_from(cfg: KernelConfig) -> Result<Self> {
        match cfg {
            KernelConfig::UniformBinary => Ok(KernelSpec::uniform_binary()),
            KernelConfig::Tabulated { entries } => KernelSpec::tabulated(entries),
        }
    }
}

impl From<KernelSpec> for KernelConfig {
    fn from(k: KernelSpec) -> Self {
        match k.kind {
            KernelKind::UniformBinary => KernelConfig::UniformBinary,
            KernelKind::Tabulated { entries, .. } => KernelConfig::Tabulated { entries },
        }
    }
}

impl KernelSpec {
    /// `b(i, j) = 2 / (j - 1)` for `i < j`.
    pub fn uniform_binary() -> Self {
        KernelSpec {
            kind: KernelKind::UniformBinary,
        }
    }

    pub fn tabulated(entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(entries.len());
        for &(i, j, v) in &entries {
            if i == 0 {
                return Err(Error::InvalidKernel("sizes are 1-based; got i = 0".into()));
            }
            if i >= j {
                return Err(Error::InvalidKernel(format!(
                    "b({i},{j}) listed but fragments must be smaller than the parent (i < j)"
                )));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidKernel(format!(
                    "b({i},{j}) = {v} must be finite and >= 0"
                )));
            }
            if lookup.insert((i, j), v).is_some() {
                return Err(Error::InvalidKernel(format!("b({i},{j}) listed twice")));
            }
        }
        Ok(KernelSpec {
            kind: KernelKind::Tabulated { entries, lookup },
        })
    }

    pub fn eval(&self, i: usize, j: usize) -> f64 {
        if i >= j || i == 0 {
            return 0.0;
        }
        match &self.kind {
            KernelKind::UniformBinary => 2.0 / (j - 1) as f64,
            KernelKind::Tabulated { lookup, .. } => lookup.get(&(i, j)).copied().unwrap_or(0.0),
        }
    }

    pub fn is_uniform_binary(&self) -> bool {
        matches!(self.kind, KernelKind::UniformBinary)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservationReport {
    pub max_deviation: f64,
    /// `None` when `jmax < 2` (nothing to check).
    pub worst_j: Option<usize>,
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Worst deviation of `sum_{i<j} i * b(i, j)` from `j` over `2 <= j <= jmax`.
pub fn check_kernel_conservation(kernel: &KernelSpec, jmax: usize) -> ConservationReport {
    let mut report = ConservationReport {
        max_deviation: 0.0,
        worst_j: None,
    };
    for j in 2..=jmax {
        let mass = compensated_sum((1..j).map(|i| i as f64 * kernel.eval(i, j)));
        let dev = (mass - j as f64).abs();
        if report.worst_j.is_none() || dev > report.max_deviation {
            report.max_deviation = dev;
            report.worst_j = Some(j);
        }
    }
    report
}

/// Domination `d_n + a_n >= C r_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Domination {
    pub holds: bool,
    /// `min_i (d_i + a_i) / r_i` over the evaluated window.
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub analytic_domination: Domination,
    pub frag_death_ratio_bounded: bool,
    pub theta_divergent: bool,
    pub strict_min_unique: bool,
    /// 1-based index of the (first) minimum of theta over the window.
    pub argmin: usize,
    /// `a_i > 0` for every `2 <= i <= N`.
    pub all_sizes_fragment: bool,
    /// True when the asymptotic verdicts come from a finite window of tabulated data.
    pub heuristic: bool,
    pub window: usize,
}

impl RegimeReport {
    /// All hypotheses of the asynchronous-growth result hold.
    pub fn growth_preconditions(&self) -> bool {
        self.analytic_domination.holds
            && self.frag_death_ratio_bounded
            && self.theta_divergent
            && self.strict_min_unique
    }
}

/// Evaluates the analyticity, compactness and strict-minimum conditions over sizes `1..=N`.
///
/// Closed-form families are decided from their exponents and prefactors; if any family is
/// tabulated the asymptotic verdicts are finite-window heuristics and `heuristic` is set.
pub fn classify_regime(model: &RateModel, n: usize) -> Result<RegimeReport> {
    model.check_size(n)?;
    let r: Vec<f64> = (1..=n).map(|i| model.decay(i)).collect();
    let d: Vec<f64> = (1..=n).map(|i| model.death(i)).collect();
    let a: Vec<f64> = (1..=n).map(|i| model.frag(i)).collect();
    let th: Vec<f64> = (0..n).map(|k| r[k] + a[k] + d[k]).collect();

    let constant = (0..n).map(|k| (d[k] + a[k]) / r[k]).fold(f64::INFINITY, f64::min);

    let (min_val, argmin0) = th.iter().enumerate().fold(
        (f64::INFINITY, 0),
        |(best, bk), (k, &v)| {
            if v < best {
                (v, k)
            } else {
                (best, bk)
            }
        },
    );
    let strict_min_unique = th.iter().filter(|&&v| v == min_val).count() == 1;
    let all_sizes_fragment = a.iter().skip(1).all(|&v| v > 0.0);

    let closed = (model.decay.monomial(), model.death.monomial(), model.frag.monomial());
    let (domination_holds, ratio_bounded, divergent, heuristic) = match closed {
        (Some(rm), Some(dm), Some(am)) => {
            let (dom, bounded, div) = closed_form_verdicts(rm, dm, am, d[0]);
            (dom, bounded, div, false)
        }
        _ => {
            let (bounded, div) = window_verdicts(&d, &a, &th);
            (constant > 0.0, bounded, div, true)
        }
    };

    Ok(RegimeReport {
        analytic_domination: Domination {
            holds: domination_holds,
            constant,
        },
        frag_death_ratio_bounded: ratio_bounded,
        theta_divergent: divergent,
        strict_min_unique,
        argmin: argmin0 + 1,
        all_sizes_fragment,
        heuristic,
        window: n,
    })
}

fn closed_form_verdicts(
    (cr, pr): (f64, f64),
    (cd, pd): (f64, f64),
    (ca, pa): (f64, f64),
    d1: f64,
) -> (bool, bool, bool) {
    // a_1 = 0, so size 1 needs d_1 >= C r_1 on its own; beyond that the fastest
    // growing positive term of d + a must keep pace with r.
    let lead = [(cd, pd), (ca, pa)]
        .iter()
        .filter(|(c, _)| *c > 0.0)
        .map(|&(_, p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    let domination = d1 > 0.0 && lead >= pr;

    let ratio_bounded = if ca == 0.0 {
        true
    } else if cd == 0.0 {
        false
    } else {
        pa <= pd
    };

    let divergent = [(cr, pr), (cd, pd), (ca, pa)].iter().any(|&(c, p)| c > 0.0 && p > 0.0);
    (domination, ratio_bounded, divergent)
}

fn window_verdicts(d: &[f64], a: &[f64], th: &[f64]) -> (bool, bool) {
    let n = th.len();
    let half = n / 2;
    let ratio: Vec<f64> = a
        .iter()
        .zip(d)
        .map(|(&a, &d)| {
            if a == 0.0 {
                0.0
            } else if d == 0.0 {
                f64::INFINITY
            } else {
                a / d
            }
        })
        .collect();
    let max_of = |s: &[f64]| s.iter().copied().fold(0.0_f64, f64::max);
    let bounded = if ratio.iter().any(|q| q.is_infinite()) {
        false
    } else if half == 0 {
        true
    } else {
        max_of(&ratio[half..]) <= 2.0 * max_of(&ratio[..half])
    };

    let divergent = if half == 0 {
        false
    } else {
        let head_max = th[..half].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tail_min = th[half..].iter().copied().fold(f64::INFINITY, f64::min);
        tail_min > head_max
    };
    (bounded, divergent)
}
