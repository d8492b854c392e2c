//! Experiment configuration: one JSON document per run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use scatterlab_core::fock::{Polynomial, TruncationParams};
use scatterlab_core::localization::{BumpTerm, LocalizationFunction, SpatialProfile};
use scatterlab_core::stepper::{StepRule, TimeGrid};

use crate::LabError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub truncation: TruncationSpec,
    /// Coefficients `a_0, a_1, …` of `P`.
    pub polynomial: Vec<f64>,
    #[serde(default)]
    pub coupling: Vec<BumpSpec>,
    pub grid: GridSpec,
    #[serde(default)]
    pub rule: RuleSpec,
    pub checks: Vec<CheckSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSpec {
    pub mass: f64,
    pub box_length: f64,
    pub mode_cutoff: usize,
    pub n_max: usize,
    pub x_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub amplitude: f64,
    pub t_center: f64,
    pub t_radius: f64,
    pub space: SpaceSpec,
    /// Overrides the global polynomial for this bump.
    #[serde(default)]
    pub polynomial: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceSpec {
    Constant,
    Bump { center: f64, radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleSpec {
    Left,
    #[default]
    Midpoint,
}

impl From<RuleSpec> for StepRule {
    fn from(r: RuleSpec) -> Self {
        match r {
            RuleSpec::Left => StepRule::Left,
            RuleSpec::Midpoint => StepRule::Midpoint,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Dt,
    NMax,
    #[serde(rename = "K")]
    K,
    ApproxLevel,
    Amplitude,
}

impl std::str::FromStr for SweepAxis {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self, LabError> {
        match s {
            "dt" => Ok(SweepAxis::Dt),
            "n_max" => Ok(SweepAxis::NMax),
            "K" | "k" => Ok(SweepAxis::K),
            "approx_level" => Ok(SweepAxis::ApproxLevel),
            "amplitude" => Ok(SweepAxis::Amplitude),
            other => Err(LabError::Config(format!(
                "sweep.axis: unknown axis {other:?} (expected dt, n_max, K, approx_level or amplitude)"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Dt => "dt",
            SweepAxis::NMax => "n_max",
            SweepAxis::K => "K",
            SweepAxis::ApproxLevel => "approx_level",
            SweepAxis::Amplitude => "amplitude",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default)]
    pub dump_matrices: bool,
}

macro_rules! default_fn {
    ($name:ident, $ty:ty, $val:expr) => {
        fn $name() -> $ty {
            $val
        }
    };
}

default_fn!(d_widen, f64, 0.5);
default_fn!(d_geometries, usize, 5);
default_fn!(d_cf_tol, f64, 1e-8);
default_fn!(d_one_i, i64, 1);
default_fn!(d_spatial_tol, f64, 1e-10);
default_fn!(d_time_tol, f64, 1e-8);
default_fn!(d_amplitudes, Vec<f64>, vec![0.02, 0.04, 0.08]);
default_fn!(d_order, usize, 2);
default_fn!(d_min_slope, f64, 2.7);
default_fn!(d_approx_dt, f64, 0.01);
default_fn!(d_cutoff_levels, usize, 16);
default_fn!(d_yosida_exponents, Vec<i32>, vec![2, 4, 6, 8, 10, 12, 14]);
default_fn!(d_agreement_tol, f64, 1e-8);
default_fn!(d_conv_dts, Vec<f64>, vec![0.02, 0.01, 0.005]);
default_fn!(d_refinement, usize, 16);
default_fn!(d_order_tol, f64, 0.2);
default_fn!(d_triples, usize, 10);
default_fn!(d_four, usize, 4);
default_fn!(d_goldstein_dt, f64, 1e-3);
default_fn!(d_orders, Vec<usize>, vec![2, 4]);
default_fn!(d_kernels, usize, 10);
default_fn!(d_lambda_quad, f64, 0.1);
default_fn!(d_quad_amp, f64, 3.0);
default_fn!(d_quad_radius, f64, 0.8);
default_fn!(d_quad_nmax, Vec<usize>, vec![4, 8]);
default_fn!(d_min_shrink, f64, 4.0);
default_fn!(d_oracle_steps, usize, 8000);
default_fn!(d_howland_nt, usize, 40);
default_fn!(d_howland_shifts, Vec<usize>, vec![3, 5]);
default_fn!(d_howland_lambda, f64, 5.0);
default_fn!(d_zero, f64, 0.0);
default_fn!(d_one, f64, 1.0);
default_fn!(d_sohr_neg_amp, f64, 1.0);
default_fn!(d_sohr_neg_radius, f64, 0.1);
default_fn!(d_cutoffs, Vec<usize>, vec![0, 1, 2]);
default_fn!(d_separations, Vec<f64>, vec![0.0, 0.7853981633974483, 1.5707963267948966, 3.141592653589793]);
default_fn!(d_picard_tol, f64, 1e-13);
default_fn!(d_quad_steps, usize, 400);

/// One experiment; every variant expands into one or more check records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    /// `S(g)` for the configured coupling: unitarity, adjoint relation,
    /// `S(0) = 𝟙`, bracket independence.
    Unitarity {
        /// Bracket enlargement on each side, rounded to whole steps.
        #[serde(default = "d_widen")]
        widen: f64,
    },
    /// `‖S(g; Δt) − S(g; Δt/refinement)‖`, reported for step-size sweeps.
    Discretization {
        #[serde(default = "d_refinement")]
        refinement: usize,
    },
    CausalFactorization {
        #[serde(default = "d_geometries")]
        geometries: usize,
        #[serde(default = "d_cf_tol")]
        tolerance: f64,
    },
    Covariance {
        #[serde(default = "d_one_i")]
        x_steps: i64,
        #[serde(default = "d_one_i")]
        t_steps: i64,
        #[serde(default = "d_spatial_tol")]
        spatial_tolerance: f64,
        #[serde(default = "d_time_tol")]
        time_tolerance: f64,
    },
    GroupComposition {
        #[serde(default = "d_cf_tol")]
        tolerance: f64,
    },
    RelativeScattering {},
    Locality {
        #[serde(default = "d_separations")]
        separations: Vec<f64>,
    },
    Dyson {
        #[serde(default = "d_amplitudes")]
        amplitudes: Vec<f64>,
        #[serde(default = "d_order")]
        order: usize,
        #[serde(default = "d_min_slope")]
        min_slope: f64,
    },
    /// Yosida- versus spectral-cutoff-based solutions of `H₀ + V(t; g)`.
    Approximative {
        #[serde(default = "d_approx_dt")]
        dt: f64,
        #[serde(default = "d_cutoff_levels")]
        cutoff_levels: usize,
        /// Yosida levels `10^e`.
        #[serde(default = "d_yosida_exponents")]
        yosida_exponents: Vec<i32>,
        #[serde(default = "d_agreement_tol")]
        tolerance: f64,
    },
    /// Step-size orders of the midpoint product and the implicit resolvent
    /// scheme on the interaction-picture generator of the coupling.
    SchemeConvergence {
        #[serde(default = "d_conv_dts")]
        dts: Vec<f64>,
        #[serde(default = "d_refinement")]
        refinement: usize,
        #[serde(default = "d_order_tol")]
        order_tolerance: f64,
    },
    Goldstein {
        #[serde(default = "d_triples")]
        triples: usize,
        #[serde(default = "d_four")]
        dim: usize,
        #[serde(default = "d_goldstein_dt")]
        dt: f64,
        #[serde(default = "d_cf_tol")]
        tolerance: f64,
    },
    NBound {
        #[serde(default = "d_orders")]
        orders: Vec<usize>,
        #[serde(default = "d_kernels")]
        kernels: usize,
    },
    QuadraticOracle {
        #[serde(default = "d_lambda_quad")]
        lambda: f64,
        #[serde(default = "d_quad_amp")]
        amplitude: f64,
        #[serde(default = "d_zero")]
        t_center: f64,
        #[serde(default = "d_quad_radius")]
        t_radius: f64,
        #[serde(default = "d_quad_nmax")]
        n_max: Vec<usize>,
        #[serde(default = "d_min_shrink")]
        min_shrink: f64,
        #[serde(default = "d_oracle_steps")]
        oracle_steps: usize,
    },
    Howland {
        #[serde(default = "d_howland_nt")]
        n_t: usize,
        #[serde(default = "d_four")]
        dim: usize,
        #[serde(default = "d_howland_shifts")]
        shifts: Vec<usize>,
        #[serde(default = "d_howland_lambda")]
        lambda: f64,
    },
    Sohr {
        #[serde(default = "d_zero")]
        k_positive: f64,
        #[serde(default = "d_one")]
        k_negative: f64,
        #[serde(default = "d_sohr_neg_amp")]
        negative_amplitude: f64,
        #[serde(default = "d_sohr_neg_radius")]
        negative_radius: f64,
    },
    Kato {},
    Picard {
        #[serde(default = "d_picard_tol")]
        tolerance: f64,
    },
    Duhamel {
        #[serde(default = "d_quad_steps")]
        quad_steps: usize,
    },
    FockConsistency {},
    Semiboundedness {
        #[serde(default = "d_cutoffs")]
        cutoffs: Vec<usize>,
    },
    /// Bump smoothness and support bookkeeping.
    Localization {},
}

/// Every check kind, in declaration order.
pub const CHECK_KINDS: &[&str] = &[
    "unitarity",
    "discretization",
    "causal_factorization",
    "covariance",
    "group_composition",
    "relative_scattering",
    "locality",
    "dyson",
    "approximative",
    "scheme_convergence",
    "goldstein",
    "n_bound",
    "quadratic_oracle",
    "howland",
    "sohr",
    "kato",
    "picard",
    "duhamel",
    "fock_consistency",
    "semiboundedness",
    "localization",
];

impl CheckSpec {
    /// The check of the given kind with all parameters at their defaults.
    pub fn with_defaults(kind: &str) -> Result<Self, LabError> {
        serde_json::from_value(serde_json::json!({ "kind": kind }))
            .map_err(|e| LabError::Config(format!("checks: {e}")))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CheckSpec::Unitarity { .. } => "unitarity",
            CheckSpec::Discretization { .. } => "discretization",
            CheckSpec::CausalFactorization { .. } => "causal_factorization",
            CheckSpec::Covariance { .. } => "covariance",
            CheckSpec::GroupComposition { .. } => "group_composition",
            CheckSpec::RelativeScattering { .. } => "relative_scattering",
            CheckSpec::Locality { .. } => "locality",
            CheckSpec::Dyson { .. } => "dyson",
            CheckSpec::Approximative { .. } => "approximative",
            CheckSpec::SchemeConvergence { .. } => "scheme_convergence",
            CheckSpec::Goldstein { .. } => "goldstein",
            CheckSpec::NBound { .. } => "n_bound",
            CheckSpec::QuadraticOracle { .. } => "quadratic_oracle",
            CheckSpec::Howland { .. } => "howland",
            CheckSpec::Sohr { .. } => "sohr",
            CheckSpec::Kato { .. } => "kato",
            CheckSpec::Picard { .. } => "picard",
            CheckSpec::Duhamel { .. } => "duhamel",
            CheckSpec::FockConsistency { .. } => "fock_consistency",
            CheckSpec::Semiboundedness { .. } => "semiboundedness",
            CheckSpec::Localization { .. } => "localization",
        }
    }

    /// Record names the check emits, independent of its parameters.
    pub fn record_names(&self) -> &'static [&'static str] {
        match self {
            CheckSpec::Unitarity { .. } => &[
                "s_unitarity",
                "s_adjoint",
                "s_zero_identity",
                "s_bracket_independence",
            ],
            CheckSpec::Discretization { .. } => &["s_discretization_error"],
            CheckSpec::CausalFactorization { .. } => &["causal_factorization"],
            CheckSpec::Covariance { .. } => &["covariance_spatial", "covariance_time"],
            CheckSpec::GroupComposition { .. } => &["group_composition"],
            CheckSpec::RelativeScattering { .. } => &[
                "relative_trivial_background",
                "relative_trivial_perturbation",
                "relative_unitarity",
            ],
            CheckSpec::Locality { .. } => &["locality_commutator"],
            CheckSpec::Dyson { .. } => &[
                "dyson_zero_order",
                "dyson_first_order",
                "dyson_remainder_slope",
                "dyson_remainder",
            ],
            CheckSpec::Approximative { .. } => &[
                "approx_agreement",
                "approx_saturation_level",
                "approx_yosida_saturation",
                "approx_monotone_tail",
                "approx_residual",
            ],
            CheckSpec::SchemeConvergence { .. } => &["order_midpoint", "order_implicit_resolvent"],
            CheckSpec::Goldstein { .. } => &["goldstein_oracle"],
            CheckSpec::NBound { .. } => &["n_bound_split", "n_bound_symmetric"],
            CheckSpec::QuadraticOracle { .. } => &["quadratic_epsilon", "quadratic_shrink", "quadratic_massless_flag"],
            CheckSpec::Howland { .. } => &[
                "howland_semigroup_law",
                "howland_multiplication",
                "howland_multiplication_negative",
                "howland_resolvent_halving",
                "howland_resolvent_bound",
                "howland_norm_identity",
                "howland_weak_solution",
            ],
            CheckSpec::Sohr { .. } => &["sohr_time_independent", "sohr_positive_coupling", "sohr_compact_bump"],
            CheckSpec::Kato { .. } => &["kato_contractive", "kato_counterexample"],
            CheckSpec::Picard { .. } => &["picard_vs_midpoint"],
            CheckSpec::Duhamel { .. } => &["duhamel_identity"],
            CheckSpec::FockConsistency { .. } => &[
                "fock_basis",
                "fock_ladder_adjoint",
                "fock_ccr",
                "fock_hermiticity",
                "fock_interaction_routes",
                "fock_wick_theorem",
                "fock_translation",
            ],
            CheckSpec::Semiboundedness { .. } => &["semibounded_lowest", "semibounded_monotone", "semibounded_quadratic"],
            CheckSpec::Localization { .. } => &["bump_peak", "bump_boundary_derivative", "bump_smoothness"],
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, LabError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            LabError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |field: &str, msg: &str| Err(LabError::Config(format!("{field}: {msg}")));
        let t = &self.truncation;
        if !(t.mass > 0.0) {
            return bad("truncation.mass", "must be positive");
        }
        if !(t.box_length > 0.0) {
            return bad("truncation.box_length", "must be positive");
        }
        if t.x_points == 0 {
            return bad("truncation.x_points", "must be positive");
        }
        if self.polynomial.is_empty() {
            return bad("polynomial", "needs at least one coefficient");
        }
        let g = &self.grid;
        if !(g.t_end > g.t_start) {
            return bad("grid", "t_end must exceed t_start");
        }
        if !(g.dt > 0.0) || g.dt > g.t_end - g.t_start {
            return bad("grid.dt", "must be positive and at most the grid length");
        }
        let grid = self.time_grid()?;
        for (i, b) in self.coupling.iter().enumerate() {
            if !(b.t_radius > 0.0) {
                return bad(&format!("coupling[{i}].t_radius"), "must be positive");
            }
            if let SpaceSpec::Bump { radius, .. } = b.space {
                if !(radius > 0.0) || 2.0 * radius >= t.box_length {
                    return bad(&format!("coupling[{i}].space.radius"), "must be positive and below half the box");
                }
            }
            LocalizationFunction::bump(self.bump_term(b), &grid, t.box_length).map_err(|e| {
                LabError::Config(format!("coupling[{i}]: {e}"))
            })?;
        }
        if self.checks.is_empty() {
            return bad("checks", "at least one check is required");
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return bad("sweep.values", "at least one value is required");
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Result<TruncationParams, LabError> {
        let t = &self.truncation;
        Ok(TruncationParams::new(t.mass, t.box_length, t.mode_cutoff, t.n_max, t.x_points)?)
    }

    pub fn polynomial(&self) -> Polynomial {
        Polynomial::new(self.polynomial.clone())
    }

    pub fn time_grid(&self) -> Result<TimeGrid, LabError> {
        Ok(TimeGrid::from_step(self.grid.t_start, self.grid.t_end, self.grid.dt)?)
    }

    pub fn bump_term(&self, b: &BumpSpec) -> BumpTerm {
        let space = match b.space {
            SpaceSpec::Constant => SpatialProfile::Constant,
            SpaceSpec::Bump { center, radius } => SpatialProfile::Bump { center, radius },
        };
        let mut term = BumpTerm::new(b.amplitude, b.t_center, b.t_radius, space);
        term.polynomial = b.polynomial.clone().map(Polynomial::new);
        term
    }

    pub fn coupling(&self) -> LocalizationFunction {
        LocalizationFunction::from_terms(
            self.truncation.box_length,
            self.coupling.iter().map(|b| self.bump_term(b)).collect(),
        )
    }

    /// Copy of the configuration with one sweep axis set to `value`.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Result<Self, LabError> {
        let mut cfg = self.clone();
        let as_count = |v: f64, name: &str| -> Result<usize, LabError> {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(LabError::Config(format!("sweep.values: {name} needs nonnegative integers, got {v}")));
            }
            Ok(v as usize)
        };
        match axis {
            SweepAxis::Dt => cfg.grid.dt = value,
            SweepAxis::NMax => cfg.truncation.n_max = as_count(value, "n_max")?,
            SweepAxis::K => cfg.truncation.mode_cutoff = as_count(value, "K")?,
            SweepAxis::ApproxLevel => {
                let n = as_count(value, "approx_level")?;
                for c in &mut cfg.checks {
                    if let CheckSpec::Approximative { cutoff_levels, .. } = c {
                        *cutoff_levels = n;
                    }
                }
            }
            SweepAxis::Amplitude => {
                let peak = cfg.coupling.iter().map(|b| b.amplitude.abs()).fold(0.0, f64::max);
                for b in &mut cfg.coupling {
                    b.amplitude = if peak > 0.0 { b.amplitude / peak * value } else { value };
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_list_is_complete() {
        for &k in CHECK_KINDS {
            let spec = CheckSpec::with_defaults(k).unwrap();
            assert_eq!(spec.kind(), k);
            // exhaustive on purpose: a new variant must be added to CHECK_KINDS
            let position = match spec {
                CheckSpec::Unitarity { .. } => 0,
                CheckSpec::Discretization { .. } => 1,
                CheckSpec::CausalFactorization { .. } => 2,
                CheckSpec::Covariance { .. } => 3,
                CheckSpec::GroupComposition { .. } => 4,
                CheckSpec::RelativeScattering { .. } => 5,
                CheckSpec::Locality { .. } => 6,
                CheckSpec::Dyson { .. } => 7,
                CheckSpec::Approximative { .. } => 8,
                CheckSpec::SchemeConvergence { .. } => 9,
                CheckSpec::Goldstein { .. } => 10,
                CheckSpec::NBound { .. } => 11,
                CheckSpec::QuadraticOracle { .. } => 12,
                CheckSpec::Howland { .. } => 13,
                CheckSpec::Sohr { .. } => 14,
                CheckSpec::Kato { .. } => 15,
                CheckSpec::Picard { .. } => 16,
                CheckSpec::Duhamel { .. } => 17,
                CheckSpec::FockConsistency { .. } => 18,
                CheckSpec::Semiboundedness { .. } => 19,
                CheckSpec::Localization { .. } => 20,
            };
            assert_eq!(CHECK_KINDS[position], k);
        }
        assert_eq!(CHECK_KINDS.len(), 21);
        assert!(CheckSpec::with_defaults("teleport").is_err());
    }
}
