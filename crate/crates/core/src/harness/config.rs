//! Experiment configuration: per-experiment JSON defaults with user
//! overrides merged on top. The resolved configuration is what every output
//! record embeds.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analytic::{CriticalKind, RadialFunction};
use crate::elliptic::{CoefficientField, SolverKind};
use crate::grid::{DomainSpec, SubsampleKind};
use crate::recovery::BasisKind;
use crate::weights::WeightProfile;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RateStudy,
    ConvergenceStudy,
    DegeneracyStudy,
    WeightedStudy,
    CriticalStudy,
    PointwiseLimitStudy,
    Recover,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::RateStudy,
        ExperimentKind::ConvergenceStudy,
        ExperimentKind::DegeneracyStudy,
        ExperimentKind::WeightedStudy,
        ExperimentKind::CriticalStudy,
        ExperimentKind::PointwiseLimitStudy,
        ExperimentKind::Recover,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::RateStudy => "rate_study",
            ExperimentKind::ConvergenceStudy => "convergence_study",
            ExperimentKind::DegeneracyStudy => "degeneracy_study",
            ExperimentKind::WeightedStudy => "weighted_study",
            ExperimentKind::CriticalStudy => "critical_study",
            ExperimentKind::PointwiseLimitStudy => "pointwise_limit_study",
            ExperimentKind::Recover => "recover",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

/// Named coefficient generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "generator", deny_unknown_fields)]
pub enum CoefficientSpec {
    Constant { value: f64 },
    Checkerboard { lo: f64, hi: f64 },
    Layered { axis: usize, lo: f64, hi: f64 },
    Lognormal { sigma: f64, seed: u64 },
}

impl CoefficientSpec {
    pub fn build(&self, spec: DomainSpec) -> Result<CoefficientField> {
        match *self {
            CoefficientSpec::Constant { value } => CoefficientField::constant(spec, value),
            CoefficientSpec::Checkerboard { lo, hi } => CoefficientField::checkerboard(spec, lo, hi),
            CoefficientSpec::Layered { axis, lo, hi } => CoefficientField::layered(spec, axis, lo, hi),
            CoefficientSpec::Lognormal { sigma, seed } => CoefficientField::lognormal(spec, sigma, seed),
        }
    }
}

/// A weight profile together with the exponent it is used at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightCase {
    pub weight: WeightProfile,
    pub p: f64,
    /// Expected outcome of the integrability condition, when known.
    #[serde(default)]
    pub bounded: Option<bool>,
}

/// Which test function an experiment samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunctionKind {
    /// `prod_k sin(pi x_k)`.
    SineProduct,
    /// The sine product flattened around the patch centers.
    Flattened,
    /// Seeded low-order Fourier sums (not boundary-vanishing).
    Fourier,
    /// Constant one.
    Constant,
}

/// Expected behaviour of a ball-average sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitExpectation {
    Convergent,
    Divergent,
}

/// How the Cauchy rate of a convergent sequence is checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandMode {
    /// Ratios within `2^{-beta/p} (1 +- band)`.
    TwoSided,
    /// Ratios at most `2^{-beta/p} (1 + band)`.
    Upper,
}

/// Fully resolved experiment parameters. Fields irrelevant to an experiment
/// keep their defaults and are echoed unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub d: usize,
    pub p: f64,
    /// Fine cells per axis.
    pub n: usize,
    /// Patches per axis for fixed-geometry experiments.
    pub m: usize,
    /// Patches-per-axis sweep (convergence study).
    pub m_sweep: Vec<usize>,
    /// Fixed subsample ratio `h/H`.
    pub r: f64,
    /// Ratio sweep `h/H` (decreasing).
    pub r_sweep: Vec<f64>,
    /// Subsample side sweep for grid-free studies (decreasing).
    pub h_sweep: Vec<f64>,
    pub kind: SubsampleKind,
    /// Append the point-kind endpoint to the ratio sweep.
    pub include_point: bool,
    pub basis: BasisKind,
    pub coefficient: CoefficientSpec,
    pub weight: WeightProfile,
    pub weight_cases: Vec<WeightCase>,
    /// Profiles whose integrability condition is swept; parameters are not
    /// validated, so degenerate members can be included.
    pub condition_cases: Vec<WeightCase>,
    pub test_function: TestFunctionKind,
    pub samples: usize,
    pub seed: u64,
    pub critical_kind: CriticalKind,
    pub radial: RadialFunction,
    pub beta: f64,
    pub radius_start: f64,
    pub halvings: usize,
    pub expect: Option<LimitExpectation>,
    pub band_mode: BandMode,
    pub solver: SolverKind,
    pub tol: f64,
    pub tolerances: BTreeMap<String, f64>,
    /// Grid-function file for one-shot recovery.
    pub input: Option<String>,
    pub output: Option<String>,
}

fn base_defaults() -> Value {
    json!({
        "d": 2,
        "p": 2.0,
        "n": 64,
        "m": 2,
        "m_sweep": [2, 4, 8, 16],
        "r": 0.5,
        "r_sweep": [1.0, 0.5, 0.25, 0.125, 0.0625],
        "h_sweep": [0.25, 0.125, 0.0625, 0.03125, 0.015625],
        "kind": {"kind": "cube"},
        "include_point": false,
        "basis": "multiscale",
        "coefficient": {"generator": "constant", "value": 1.0},
        "weight": {"profile": "polynomial", "beta": 1.0},
        "weight_cases": [],
        "condition_cases": [],
        "test_function": "sine_product",
        "samples": 50,
        "seed": 20240917u64,
        "critical_kind": "log",
        "radial": {"kind": "power", "exponent": 0.55},
        "beta": 1.0,
        "radius_start": 0.5,
        "halvings": 20,
        "expect": null,
        "band_mode": "two_sided",
        "solver": "auto",
        "tol": 1e-10,
        "tolerances": {},
        "input": null,
        "output": null
    })
}

/// Defaults for one experiment, including its pass/fail tolerances.
pub fn defaults(kind: ExperimentKind) -> Value {
    let mut v = base_defaults();
    let specific = match kind {
        ExperimentKind::ConvergenceStudy => json!({
            "d": 1, "n": 1024, "r": 0.5, "m_sweep": [2, 4, 8, 16, 32],
            "tolerances": {
                "pc_l2_slope": 1.0, "pc_l2_slope_tol": 0.15,
                "ms_l2_slope": 2.0, "ms_l2_slope_tol": 0.2,
                "ms_energy_slope": 1.0, "ms_energy_slope_tol": 0.15
            }
        }),
        ExperimentKind::RateStudy => json!({
            "d": 2, "n": 128, "m": 1,
            "tolerances": {"band": 0.3, "fit_points": 4.0, "growth_slack": 1.3, "lower_slack": 0.7}
        }),
        ExperimentKind::CriticalStudy => json!({
            "d": 2, "critical_kind": "log",
            "tolerances": {"band": 0.25, "exponent_tol": 0.1}
        }),
        ExperimentKind::WeightedStudy => json!({
            "d": 2, "n": 64, "m": 1,
            "r_sweep": [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125],
            "test_function": "fourier",
            "condition_cases": [
                {"weight": {"profile": "polynomial", "beta": 1.0}, "p": 2.0, "bounded": true},
                {"weight": {"profile": "logarithmic", "gamma": 2.0}, "p": 2.0, "bounded": true},
                {"weight": {"profile": "polynomial", "beta": 0.0}, "p": 2.0, "bounded": false}
            ],
            "weight_cases": [
                {"weight": {"profile": "w11"}, "p": 1.0},
                {"weight": {"profile": "polynomial", "beta": 1.0}, "p": 2.0},
                {"weight": {"profile": "logarithmic", "gamma": 2.0}, "p": 2.0}
            ],
            "tolerances": {"slack": 1.5, "bounded_increment_ratio": 0.5, "divergent_increment_ratio": 0.75}
        }),
        ExperimentKind::DegeneracyStudy => json!({
            "d": 2, "n": 128, "m": 2, "include_point": true,
            "r_sweep": [0.5, 0.25, 0.125, 0.0625],
            "test_function": "flattened",
            "tolerances": {"max_min_ratio": 3.0}
        }),
        ExperimentKind::PointwiseLimitStudy => json!({
            "d": 2, "p": 2.0, "beta": 1.0,
            "radial": {"kind": "power", "exponent": 0.55},
            "halvings": 20, "expect": "convergent",
            "tolerances": {"band": 0.2, "divergence_threshold": 3.0}
        }),
        ExperimentKind::Recover => json!({"d": 2, "n": 64, "m": 4, "r": 0.5}),
    };
    merge(&mut v, specific);
    v["experiment"] = json!(kind.name());
    v
}

/// Recursively overlays `over` onto `base`; objects merge key by key, every
/// other value replaces.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() && k != "kind" && k != "radial" && k != "weight" && k != "coefficient" => {
                        merge(slot, v)
                    }
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl ExperimentConfig {
    /// Resolves user overrides against the defaults of `kind`. An explicit
    /// `experiment` key in the overrides must agree with `kind`.
    pub fn resolve(kind: ExperimentKind, overrides: Value) -> Result<Self> {
        if !overrides.is_object() && !overrides.is_null() {
            return Err(Error::Config("configuration must be a JSON object".into()));
        }
        if let Some(e) = overrides.get("experiment") {
            if e != &json!(kind.name()) {
                return Err(Error::Config(format!("config is for {e}, not {kind}")));
            }
        }
        let mut v = defaults(kind);
        if !overrides.is_null() {
            merge(&mut v, overrides);
        }
        let cfg: ExperimentConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn defaults_for(kind: ExperimentKind) -> Self {
        Self::resolve(kind, Value::Null).expect("defaults are valid")
    }

    pub fn tolerance(&self, key: &str) -> Result<f64> {
        self.tolerances
            .get(key)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing tolerance {key:?} for {}", self.experiment)))
    }

    pub fn domain(&self) -> Result<DomainSpec> {
        DomainSpec::new(self.d, self.n).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        fn strictly_monotone<T: PartialOrd>(v: &[T]) -> bool {
            v.windows(2).all(|w| w[0] < w[1]) || v.windows(2).all(|w| w[0] > w[1])
        }
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.p >= 1.0) {
            return bad(format!("p must be at least 1, got {}", self.p));
        }
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        for (name, ok, empty) in [
            ("m_sweep", strictly_monotone(&self.m_sweep), self.m_sweep.is_empty()),
            ("r_sweep", strictly_monotone(&self.r_sweep), self.r_sweep.is_empty()),
            ("h_sweep", strictly_monotone(&self.h_sweep), self.h_sweep.is_empty()),
        ] {
            if empty {
                return bad(format!("{name} must not be empty"));
            }
            if !ok {
                return bad(format!("{name} must be strictly monotone"));
            }
        }
        if !(self.tol > 0.0) {
            return bad(format!("solver tolerance must be positive, got {}", self.tol));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
