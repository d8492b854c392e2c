//! One function per check kind. Each turns a [`CheckSpec`] into check
//! records, optional CSV series and optional matrices to dump.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scatterlab_core::fock::{
    annihilation_op, binomial, creation_op, interaction_op, interaction_op_pointwise,
    interaction_op_with_field_cutoff, number_weighted_norm, semiboundedness_report, translation_op,
    wick_interior_columns, wick_power, wick_theorem_expansion, OccupationBasis, Polynomial, TruncationParams,
    WickKernel,
};
use scatterlab_core::generators::{kato_stability_check, sohr_condition_check, SohrConfig, TimeDependentGenerator};
use scatterlab_core::howland::{
    generator_consistency_check, lift, multiplication_commutation_check, orbit_residual, semigroup_norm_check,
    semigroup_resolvent_dense, time_averaging, weak_solution_defect, FunctionSpaceGrid, TestFunction,
};
use scatterlab_core::linalg::{
    commutator, hermitian_deviation, log_log_slope, max_abs, norm_2, random_hermitian, random_unit_vector,
    vector_norm,
};
use scatterlab_core::localization::{mollifier, BumpTerm, LocalizationFunction, SpatialProfile, TimeProfile};
use scatterlab_core::scattering::{quadratic_comparison, ScatteringContext};
use scatterlab_core::stepper::{
    approximative_solution, exp_product_propagator, goldstein_oracle, implicit_resolvent_propagator,
    picard_propagator, step_propagator, ApproximativeConfig, GoldsteinProblem, StepRule, StepScheme, Storage,
    TimeGrid, Weight,
};
use scatterlab_core::{CMatrix, C64};

use crate::config::{CheckSpec, ExperimentConfig};
use crate::dump::Series;
use crate::report::{sha256_hex, CheckRecord};
use crate::LabError;

/// Everything shared by the checks of one configuration.
pub struct Setup {
    pub config: ExperimentConfig,
    pub params: TruncationParams,
    pub basis: OccupationBasis,
    pub coupling: LocalizationFunction,
    pub ctx: ScatteringContext,
    pub cap: usize,
}

impl Setup {
    pub fn new(config: &ExperimentConfig, cap: usize) -> Result<Self, LabError> {
        let params = config.params()?;
        let basis = OccupationBasis::build(&params, cap)?;
        let grid = config.time_grid()?;
        let ctx = ScatteringContext::new(params.clone(), basis.clone(), config.polynomial(), grid).with_stepper(
            scatterlab_core::scattering::SOperatorStepper::Auto {
                rule: config.rule.into(),
            },
        );
        Ok(Setup {
            config: config.clone(),
            params,
            basis,
            coupling: config.coupling(),
            ctx,
            cap,
        })
    }

    fn grid(&self) -> TimeGrid {
        self.ctx.grid
    }

    fn rule(&self) -> StepRule {
        self.config.rule.into()
    }

    fn center(&self) -> f64 {
        let g = self.grid();
        0.5 * (g.t_start + g.t_end)
    }

    fn half_length(&self) -> f64 {
        0.5 * self.grid().length()
    }

    /// Largest coupling amplitude; seeded geometries scale with it.
    fn peak_amplitude(&self) -> f64 {
        self.coupling.terms.iter().map(|t| t.amplitude.abs()).fold(0.0, f64::max)
    }

    /// Time at which the first bump peaks, or the grid center.
    fn peak_time(&self) -> f64 {
        self.coupling
            .terms
            .iter()
            .find_map(|t| match t.time {
                TimeProfile::Bump { center, .. } => Some(center),
                _ => None,
            })
            .unwrap_or_else(|| self.center())
    }

    /// `H₀ + V(t; g)` in the Schrödinger picture.
    fn schrodinger(&self, g: &LocalizationFunction) -> Result<TimeDependentGenerator, LabError> {
        Ok(self.ctx.schrodinger_generator(g)?.with_base(self.ctx.free_hamiltonian()))
    }

    /// Grid with the configured bracket and (approximately) step `dt`.
    fn grid_with_step(&self, dt: f64) -> Result<TimeGrid, LabError> {
        let g = self.grid();
        let n = (g.length() / dt).round().max(1.0) as usize;
        Ok(TimeGrid::new(g.t_start, g.t_end, n)?)
    }
}

#[derive(Default)]
pub struct Outcome {
    pub records: Vec<CheckRecord>,
    pub series: Vec<Series>,
    pub matrices: Vec<(String, CMatrix)>,
}

impl Outcome {
    fn push(&mut self, r: CheckRecord) {
        self.records.push(r);
    }
}

/// Runs one check; errors become failed records carrying the message.
pub fn run_check(setup: &Setup, index: usize, spec: &CheckSpec) -> Outcome {
    let seed = setup.config.seed.wrapping_add(index as u64);
    let result = match spec {
        CheckSpec::Unitarity { widen } => unitarity(setup, *widen),
        CheckSpec::Discretization { refinement } => discretization(setup, *refinement),
        CheckSpec::CausalFactorization { geometries, tolerance } => {
            causal_factorization(setup, seed, *geometries, *tolerance)
        }
        CheckSpec::Covariance {
            x_steps,
            t_steps,
            spatial_tolerance,
            time_tolerance,
        } => covariance(setup, *x_steps, *t_steps, *spatial_tolerance, *time_tolerance),
        CheckSpec::GroupComposition { tolerance } => group_composition(setup, *tolerance),
        CheckSpec::RelativeScattering {} => relative_scattering(setup),
        CheckSpec::Locality { separations } => locality(setup, separations),
        CheckSpec::Dyson {
            amplitudes,
            order,
            min_slope,
        } => dyson(setup, amplitudes, *order, *min_slope),
        CheckSpec::Approximative {
            dt,
            cutoff_levels,
            yosida_exponents,
            tolerance,
        } => approximative(setup, *dt, *cutoff_levels, yosida_exponents, *tolerance),
        CheckSpec::SchemeConvergence {
            dts,
            refinement,
            order_tolerance,
        } => scheme_convergence(setup, dts, *refinement, *order_tolerance),
        CheckSpec::Goldstein {
            triples,
            dim,
            dt,
            tolerance,
        } => goldstein(seed, *triples, *dim, *dt, *tolerance),
        CheckSpec::NBound { orders, kernels } => n_bound(setup, seed, orders, *kernels),
        CheckSpec::QuadraticOracle {
            lambda,
            amplitude,
            t_center,
            t_radius,
            n_max,
            min_shrink,
            oracle_steps,
        } => quadratic(
            setup,
            *lambda,
            BumpTerm::new(*amplitude, *t_center, *t_radius, SpatialProfile::Constant),
            n_max,
            *min_shrink,
            *oracle_steps,
        ),
        CheckSpec::Howland {
            n_t,
            dim,
            shifts,
            lambda,
        } => howland(seed, *n_t, *dim, shifts, *lambda),
        CheckSpec::Sohr {
            k_positive,
            k_negative,
            negative_amplitude,
            negative_radius,
        } => sohr(setup, *k_positive, *k_negative, *negative_amplitude, *negative_radius),
        CheckSpec::Kato {} => kato(setup),
        CheckSpec::Picard { tolerance } => picard(setup, *tolerance),
        CheckSpec::Duhamel { quad_steps } => duhamel(setup, *quad_steps),
        CheckSpec::FockConsistency {} => fock_consistency(setup),
        CheckSpec::Semiboundedness { cutoffs } => semiboundedness(setup, cutoffs),
        CheckSpec::Localization {} => localization(setup),
    };
    let mut outcome = result.unwrap_or_else(|e| Outcome {
        records: spec
            .record_names()
            .iter()
            .map(|n| CheckRecord::failed(n, e.to_string()))
            .collect(),
        ..Outcome::default()
    });
    let hash = inputs_hash(&setup.config, index, spec);
    for r in &mut outcome.records {
        r.inputs_hash = hash.clone();
    }
    outcome
}

/// Hash of the check parameters together with everything in the
/// configuration a check can read.
pub fn inputs_hash(cfg: &ExperimentConfig, index: usize, spec: &CheckSpec) -> String {
    let payload = serde_json::json!({
        "check": spec,
        "index": index,
        "seed": cfg.seed,
        "truncation": cfg.truncation,
        "polynomial": cfg.polynomial,
        "coupling": cfg.coupling,
        "grid": cfg.grid,
        "rule": cfg.rule,
    });
    let mut h = sha256_hex(payload.to_string().as_bytes());
    h.truncate(16);
    h
}

fn slope_of(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() < 2 || ys.iter().any(|&y| !(y > 0.0)) {
        return f64::NAN;
    }
    log_log_slope(xs, ys)
}

fn unitarity(setup: &Setup, widen: f64) -> Result<Outcome, LabError> {
    let ctx = &setup.ctx;
    let s = ctx.s_operator(&setup.coupling)?;
    let mut out = Outcome::default();
    out.push(CheckRecord::at_most("s_unitarity", s.unitarity_deviation, 1e-10));
    out.push(CheckRecord::at_most("s_adjoint", ctx.adjoint_check(&s)?, 1e-10));
    let zero = ctx.s_operator(&LocalizationFunction::zero(setup.params.box_length))?;
    let d = ctx.dim();
    out.push(CheckRecord::at_most(
        "s_zero_identity",
        max_abs(&(zero.matrix - CMatrix::identity(d, d))),
        1e-15,
    ));
    let steps = (widen / ctx.grid.dt()).round() as usize;
    out.push(
        CheckRecord::at_most("s_bracket_independence", ctx.bracket_independence(&setup.coupling, steps)?, 1e-12)
            .with_message(format!("bracket widened by {steps} steps per side")),
    );
    out.matrices.push(("s_operator".into(), s.matrix));
    Ok(out)
}

fn discretization(setup: &Setup, refinement: usize) -> Result<Outcome, LabError> {
    let ctx = &setup.ctx;
    let coarse = ctx.s_operator(&setup.coupling)?.matrix;
    let fine = ctx.with_grid(ctx.grid.refined(refinement.max(1))).s_operator(&setup.coupling)?.matrix;
    let mut out = Outcome::default();
    out.push(
        CheckRecord::diagnostic("s_discretization_error", norm_2(&(coarse - fine)))
            .with_message(format!("against step dt/{refinement}")),
    );
    Ok(out)
}

fn causal_factorization(setup: &Setup, seed: u64, geometries: usize, tolerance: f64) -> Result<Outcome, LabError> {
    let ctx = &setup.ctx;
    let dt = ctx.grid.dt();
    // tighten with the step: the factorization error of the product is O(Δt²)
    let tol = tolerance * (dt / 1e-3).powi(2).min(1.0);
    let (c0, half, l) = (setup.center(), setup.half_length(), setup.params.box_length);
    let base = setup.peak_amplitude();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bump = |rng: &mut ChaCha8Rng, center: (f64, f64), radius: (f64, f64)| {
        let tc = c0 + half * rng.random_range(center.0..center.1);
        let tr = half * rng.random_range(radius.0..radius.1);
        let xc = rng.random_range(0.0..l);
        let xr = rng.random_range(0.8..1.5f64).min(0.45 * l);
        let amp = base * rng.random_range(0.5..1.5);
        LocalizationFunction::from_terms(
            l,
            vec![BumpTerm::new(amp, tc, tr, SpatialProfile::Bump { center: xc, radius: xr })],
        )
    };
    let mut series = Series::new("causal_factorization", &["geometry", "deviation"]);
    let mut worst: f64 = 0.0;
    for k in 0..geometries {
        let g = bump(&mut rng, (-0.56, -0.4), (0.24, 0.32));
        let f = bump(&mut rng, (0.4, 0.56), (0.24, 0.32));
        let h = bump(&mut rng, (-0.16, 0.16), (0.48, 0.72));
        let rep = ctx.causal_factorization_check(&f, &h, &g, tol)?;
        series.push(vec![k as f64, rep.value]);
        worst = worst.max(rep.value);
    }
    let mut out = Outcome::default();
    out.push(
        CheckRecord::at_most("causal_factorization", worst, tol)
            .with_message(format!("max over {geometries} seeded geometries")),
    );
    out.series.push(series);
    Ok(out)
}

fn covariance(setup: &Setup, x_steps: i64, t_steps: i64, tol_x: f64, tol_t: f64) -> Result<Outcome, LabError> {
    let ctx = &setup.ctx;
    let a_x = x_steps as f64 * setup.params.spacing();
    let a_t = t_steps as f64 * ctx.grid.dt();
    let mut out = Outcome::default();
    let sx = ctx.covariance_check(&setup.coupling, 0.0, a_x, tol_x)?;
    out.push(CheckRecord::at_most("covariance_spatial", sx.value, tol_x));
    let st = ctx.covariance_check(&setup.coupling, a_t, 0.0, tol_t)?;
    out.push(CheckRecord::at_most("covariance_time", st.value, tol_t));
    Ok(out)
}

/// Two copies of the coupling, one in each half of the bracket.
fn split_coupling(setup: &Setup) -> LocalizationFunction {
    let (c0, half) = (setup.center(), setup.half_length());
    let mut terms = Vec::new();
    for (shift, scale) in [(-0.5, 1.0), (0.5, -0.7)] {
        for t in &setup.coupling.terms {
            let radius = match t.time {
                TimeProfile::Bump { radius, .. } => radius.min(0.45 * half),
                _ => 0.45 * half,
            };
            let mut term = t.clone();
            term.amplitude *= scale;
            term.time = TimeProfile::Bump {
                center: c0 + shift * half,
                radius,
            };
            term.window = None;
            terms.push(term);
        }
    }
    LocalizationFunction::from_terms(setup.params.box_length, terms)
}

fn group_composition(setup: &Setup, tolerance: f64) -> Result<Outcome, LabError> {
    let g = split_coupling(setup);
    let rep = setup.ctx.group_composition_check(&g, setup.center(), tolerance)?;
    let mut out = Outcome::default();
    out.push(CheckRecord::at_most("group_composition", rep.value, tolerance));
    Ok(out)
}

fn relative_scattering(setup: &Setup) -> Result<Outcome, LabError> {
    let ctx = &setup.ctx;
    let g = &setup.coupling;
    let l = setup.params.box_length;
    let zero = LocalizationFunction::zero(l);
    let half_box = (setup.params.x_points / 2) as f64 * setup.params.spacing();
    let f = g.shifted(0.0, half_box).scaled(0.5);
    let d = ctx.dim();
    let mut out = Outcome::default();
    let background = ctx.relative_s_operator(&zero, &f)? - ctx.s_operator(&f)?.matrix;
    out.push(CheckRecord::at_most("relative_trivial_background", norm_2(&background), 1e-12));
    let trivial = ctx.relative_s_operator(g, &zero)? - CMatrix::identity(d, d);
    out.push(CheckRecord::at_most("relative_trivial_perturbation", norm_2(&trivial), 1e-10));
    let rel = ctx.relative_s_operator(g, &f)?;
    out.push(CheckRecord::at_most(
        "relative_unitarity",
        scatterlab_core::linalg::unitarity_defect(&rel),
        1e-10,
    ));
    Ok(out)
}

fn locality(setup: &Setup, separations: &[f64]) -> Result<Outcome, LabError> {
    let g = &setup.coupling;
    let f = g.scaled(0.5);
    let rows = setup.ctx.locality_diagnostic(g, &f, &f, separations)?;
    let mut series = Series::new("locality", &["separation", "commutator"]);
    for &(a, v) in &rows {
        series.push(vec![a, v]);
    }
    let mut out = Outcome::default();
    let last = rows.last().map(|r| r.1).unwrap_or(0.0);
    out.push(CheckRecord::diagnostic("locality_commutator", last).with_message("at the largest separation"));
    out.series.push(series);
    Ok(out)
}

fn dyson(setup: &Setup, amplitudes: &[f64], order: usize, min_slope: f64) -> Result<Outcome, LabError> {
    let ctx = &setup.ctx;
    let peak = setup.peak_amplitude();
    if peak == 0.0 {
        return Err(LabError::Config("checks: dyson needs a nonzero coupling".into()));
    }
    if order > 2 {
        return Err(LabError::Config("checks: dyson order must be at most 2".into()));
    }
    let remainders = |g: &LocalizationFunction| -> Result<[f64; 3], LabError> {
        let s = ctx.s_operator(g)?.matrix;
        let mut e = [0.0; 3];
        for (k, slot) in e.iter_mut().enumerate() {
            *slot = norm_2(&(&s - ctx.dyson_series(g, k)?));
        }
        Ok(e)
    };
    let mut series = Series::new("dyson", &["amplitude", "remainder_0", "remainder_1", "remainder_2"]);
    let mut errs: [Vec<f64>; 3] = Default::default();
    for &a in amplitudes {
        let e = remainders(&setup.coupling.scaled(a / peak))?;
        series.push(vec![a, e[0], e[1], e[2]]);
        for k in 0..3 {
            errs[k].push(e[k]);
        }
    }
    let slopes: Vec<f64> = errs.iter().map(|e| slope_of(amplitudes, e)).collect();
    let mut out = Outcome::default();
    out.push(CheckRecord::at_least("dyson_zero_order", slopes[0], min_slope - 2.0));
    out.push(CheckRecord::at_least("dyson_first_order", slopes[1], min_slope - 1.0));
    out.push(
        CheckRecord::at_least("dyson_remainder_slope", slopes[order], min_slope + order as f64 - 2.0)
            .with_message(format!("log-log slope of the order-{order} remainder")),
    );
    out.push(CheckRecord::diagnostic("dyson_remainder", remainders(&setup.coupling)?[order]));
    out.series.push(series);
    Ok(out)
}

fn approximative(
    setup: &Setup,
    dt: f64,
    cutoff_levels: usize,
    yosida_exponents: &[i32],
    tolerance: f64,
) -> Result<Outcome, LabError> {
    let gen = setup.schrodinger(&setup.coupling)?;
    let grid = setup.grid_with_step(dt)?;
    let cutoff_cfg = ApproximativeConfig {
        rule: setup.rule(),
        ..ApproximativeConfig::spectral_cutoff(ApproximativeConfig::integer_levels(cutoff_levels))
    };
    let cut = approximative_solution(&gen, &grid, &cutoff_cfg)?;
    let yosida_levels: Vec<f64> = yosida_exponents.iter().map(|&e| 10f64.powi(e)).collect();
    let yosida_cfg = ApproximativeConfig {
        rule: setup.rule(),
        storage: Storage::FinalOnly,
        ..ApproximativeConfig::yosida(yosida_levels)
    };
    let yos = approximative_solution(&gen, &grid, &yosida_cfg)?;

    let mut out = Outcome::default();
    let agreement = norm_2(&(cut.table.final_matrix() - yos.table.final_matrix()));
    out.push(CheckRecord::at_most("approx_agreement", agreement, tolerance));
    let expected = cut.max_spectral_radius.ceil();
    out.push(
        CheckRecord::at_most("approx_saturation_level", (cut.saturation_level - expected).abs(), 1.0).with_message(
            format!(
                "saturated at level {} with max spectral radius {}",
                cut.saturation_level, cut.max_spectral_radius
            ),
        ),
    );
    let yos_last = yos.levels.last().and_then(|l| l.max_deviation).unwrap_or(f64::INFINITY);
    out.push(
        CheckRecord::at_most("approx_yosida_saturation", yos_last, yosida_cfg.saturation_tol)
            .with_message(format!("saturated at level {:e}", yos.saturation_level)),
    );
    // differences must decrease from the largest one down to saturation
    let devs: Vec<f64> = cut.levels.iter().filter_map(|l| l.max_deviation).collect();
    let start = devs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
        .0;
    let increases = devs[start..].windows(2).filter(|w| w[1] > w[0]).count();
    out.push(CheckRecord::at_most("approx_monotone_tail", increases as f64, 0.0));
    let residual = cut.levels.last().and_then(|l| l.residual).unwrap_or(f64::NAN);
    out.push(CheckRecord::diagnostic("approx_residual", residual));

    let mut series = Series::new("approx_levels", &["level", "max_deviation", "residual", "clipped"]);
    for l in &cut.levels {
        series.push(vec![
            l.level,
            l.max_deviation.unwrap_or(f64::NAN),
            l.residual.unwrap_or(f64::NAN),
            l.clipped as u8 as f64,
        ]);
    }
    out.series.push(series);
    let mut ys = Series::new("approx_yosida_levels", &["level", "max_deviation"]);
    for l in &yos.levels {
        ys.push(vec![l.level, l.max_deviation.unwrap_or(f64::NAN)]);
    }
    out.series.push(ys);
    Ok(out)
}

fn scheme_convergence(setup: &Setup, dts: &[f64], refinement: usize, order_tol: f64) -> Result<Outcome, LabError> {
    let gen = setup.ctx.interaction_generator(&setup.coupling)?;
    let dt_min = dts.iter().cloned().fold(f64::INFINITY, f64::min);
    if dts.len() < 2 || !(dt_min > 0.0) {
        return Err(LabError::Config("checks: scheme_convergence needs at least two positive steps".into()));
    }
    let reference_grid = setup.grid_with_step(dt_min / refinement.max(1) as f64)?;
    let midpoint = StepScheme::ExpProduct(StepRule::Midpoint);
    let reference = step_propagator(&gen, &reference_grid, &midpoint, Storage::FinalOnly)?;
    let reference = reference.final_matrix();
    let mut series = Series::new("scheme_convergence", &["dt", "midpoint_error", "implicit_resolvent_error"]);
    let (mut e_mid, mut e_imp, mut steps) = (Vec::new(), Vec::new(), Vec::new());
    for &dt in dts {
        let grid = setup.grid_with_step(dt)?;
        let m = step_propagator(&gen, &grid, &midpoint, Storage::FinalOnly)?;
        let r = step_propagator(&gen, &grid, &StepScheme::ImplicitResolvent, Storage::FinalOnly)?;
        let em = norm_2(&(m.final_matrix() - reference));
        let er = norm_2(&(r.final_matrix() - reference));
        series.push(vec![grid.dt(), em, er]);
        e_mid.push(em);
        e_imp.push(er);
        steps.push(grid.dt());
    }
    let om = slope_of(&steps, &e_mid);
    let oi = slope_of(&steps, &e_imp);
    let mut out = Outcome::default();
    out.push(CheckRecord::at_most("order_midpoint", (om - 2.0).abs(), order_tol).with_message(format!("order {om}")));
    out.push(
        CheckRecord::at_most("order_implicit_resolvent", (oi - 1.0).abs(), order_tol)
            .with_message(format!("order {oi}")),
    );
    out.series.push(series);
    Ok(out)
}

fn goldstein(seed: u64, triples: usize, dim: usize, dt: f64, tolerance: f64) -> Result<Outcome, LabError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = TimeGrid::new(0.0, 3.0, (3.0 / dt).round() as usize)?;
    let mut series = Series::new("goldstein", &["triple", "deviation"]);
    let mut worst: f64 = 0.0;
    for k in 0..triples {
        let problem = GoldsteinProblem {
            s: random_hermitian(&mut rng, dim, 1.0),
            l: random_hermitian(&mut rng, dim, 1.0),
            t: random_hermitian(&mut rng, dim, 1.0),
            phi: Weight::bump(0.0, 1.0, 1.0),
            eta: Weight::bump(1.0, 2.0, 1.0),
            psi: Weight::bump(2.0, 3.0, 1.0),
        };
        let y = random_unit_vector(&mut rng, dim);
        let table = step_propagator(
            &problem.generator(),
            &grid,
            &StepScheme::ExpProduct(StepRule::Midpoint),
            Storage::Every((1.0 / grid.dt()).round() as usize),
        )?;
        let mut dev: f64 = 0.0;
        for t in [1.0, 2.0, 3.0] {
            let i = grid
                .index_of(t)
                .ok_or_else(|| LabError::Config("checks: goldstein step must divide 1".into()))?;
            let u = table
                .at(i)
                .ok_or_else(|| LabError::Config("checks: goldstein step must divide 1".into()))?
                * &y;
            dev = dev.max(vector_norm(&(u - goldstein_oracle(&problem, &y, t)?)));
        }
        series.push(vec![k as f64, dev]);
        worst = worst.max(dev);
    }
    let mut out = Outcome::default();
    out.push(CheckRecord::at_most("goldstein_oracle", worst, tolerance));
    out.series.push(series);
    Ok(out)
}

fn n_bound(setup: &Setup, seed: u64, orders: &[usize], kernels: usize) -> Result<Outcome, LabError> {
    let basis = &setup.basis;
    let modes = setup.params.n_modes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut series = Series::new("n_bound", &["order", "creators", "kernel", "ratio_split", "ratio_symmetric"]);
    let (mut split, mut symmetric): (f64, f64) = (0.0, 0.0);
    for &p in orders {
        for k in 0..kernels {
            for m in 0..=p {
                let kernel = WickKernel::random(&mut rng, modes, m, p - m);
                let w = kernel.operator(basis);
                let norm = kernel.l2_norm();
                let r1 = number_weighted_norm(basis, &w, m as f64, (p - m) as f64) / norm;
                let r2 = number_weighted_norm(basis, &w, p as f64, p as f64) / norm;
                series.push(vec![p as f64, m as f64, k as f64, r1, r2]);
                split = split.max(r1);
                symmetric = symmetric.max(r2);
            }
        }
    }
    let mut out = Outcome::default();
    let tol = 1.0 + 1e-10;
    out.push(CheckRecord::at_most("n_bound_split", split, tol).with_message("max ratio to the kernel L2 norm"));
    out.push(CheckRecord::at_most("n_bound_symmetric", symmetric, tol).with_message("max ratio to the kernel L2 norm"));
    out.series.push(series);
    Ok(out)
}

fn quadratic(
    setup: &Setup,
    lambda: f64,
    coupling: BumpTerm,
    n_max: &[usize],
    min_shrink: f64,
    oracle_steps: usize,
) -> Result<Outcome, LabError> {
    if n_max.is_empty() {
        return Err(LabError::Config("checks: quadratic_oracle needs n_max values".into()));
    }
    let mut series = Series::new("quadratic_oracle", &["n_max", "dimension", "epsilon"]);
    let mut eps = Vec::new();
    let mut excluded = 0;
    for &n in n_max {
        let params = setup.params.with_n_max(n);
        let basis = OccupationBasis::build(&params, setup.cap)?;
        let cmp = quadratic_comparison(&params, &basis, &setup.grid(), &coupling, lambda, setup.rule(), oracle_steps)?;
        series.push(vec![n as f64, basis.dim() as f64, cmp.max_deviation]);
        eps.push(cmp.max_deviation);
        excluded = cmp.excluded_modes.len();
    }
    let first = eps[0];
    let last = *eps.last().expect("nonempty");
    let mut out = Outcome::default();
    out.push(CheckRecord::diagnostic("quadratic_epsilon", last).with_message(format!("at n_max = {}", n_max[n_max.len() - 1])));
    out.push(CheckRecord::at_least("quadratic_shrink", first / last, min_shrink));
    out.push(CheckRecord::diagnostic("quadratic_massless_flag", excluded as f64).with_message("modes excluded as massless"));
    out.series.push(series);
    Ok(out)
}

fn howland_generator(rng: &mut ChaCha8Rng, dim: usize) -> TimeDependentGenerator {
    let h = random_hermitian(rng, dim, 1.0);
    let b = random_hermitian(rng, dim, 1.0);
    TimeDependentGenerator::constant(h, "howland").with_term(Arc::new(|t: f64| (2.0 * t).sin()), b, None)
}

fn random_function(rng: &mut ChaCha8Rng, grid: &FunctionSpaceGrid) -> CMatrix {
    let mut f = grid.zeros();
    for i in 0..grid.n_t {
        f.column_mut(i).copy_from(&random_unit_vector(rng, grid.dim));
    }
    f
}

fn howland(seed: u64, n_t: usize, dim: usize, shifts: &[usize], lambda: f64) -> Result<Outcome, LabError> {
    if shifts.len() < 2 {
        return Err(LabError::Config("checks: howland needs two shifts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = howland_generator(&mut rng, dim);
    let grid = TimeGrid::new(0.0, 1.0, n_t)?;
    let table = exp_product_propagator(&gen, &grid, StepRule::Midpoint)?;
    let dt = grid.dt();
    let (s1, s2) = (shifts[0], shifts[1]);
    let a = lift(&table, s1 as f64 * dt)?;
    let b = lift(&table, s2 as f64 * dt)?;
    let ab = lift(&table, (s1 + s2) as f64 * dt)?;
    let fgrid = a.grid;
    let probes: Vec<CMatrix> = (0..4).map(|_| random_function(&mut rng, &fgrid)).collect();
    let law = probes
        .iter()
        .map(|f| max_abs(&(a.apply(&b.apply(f)) - ab.apply(f))))
        .fold(0.0, f64::max);

    let mut out = Outcome::default();
    out.push(CheckRecord::at_most("howland_semigroup_law", law, 1e-12));
    let phi: Vec<f64> = (1..=fgrid.n_t).map(|i| mollifier((fgrid.node(i) - 0.5) / 0.4)).collect();
    let mult = multiplication_commutation_check(&fgrid, |f| a.apply(f), a.shift_steps, &phi, &probes);
    out.push(CheckRecord::at_most("howland_multiplication", mult, 1e-12));
    let neg = multiplication_commutation_check(&fgrid, |f| time_averaging(&fgrid, f), 0, &phi, &probes);
    out.push(
        CheckRecord::at_least("howland_multiplication_negative", neg, 1e-3)
            .with_message("time averaging does not commute with multiplication"),
    );

    // λ − G_d against the resolvent formula, on the grid and on its halving
    let x = random_unit_vector(&mut rng, dim);
    let residual = |n: usize| -> Result<f64, LabError> {
        let t = exp_product_propagator(&gen, &TimeGrid::new(0.0, 1.0, n)?, StepRule::Midpoint)?;
        let g = FunctionSpaceGrid::for_table(&t);
        let f = g.sample(|s| C64::new((3.0 * s).sin(), (2.0 * s).cos()), &x);
        Ok(generator_consistency_check(&t, &gen, lambda, &f)?)
    };
    let (r1, r2) = (residual(n_t)?, residual(2 * n_t)?);
    out.push(
        CheckRecord::at_most("howland_resolvent_halving", (r1 / r2 - 2.0).abs(), 0.2)
            .with_message(format!("residuals {r1:e} and {r2:e}")),
    );
    let resolvent_norm = norm_2(&semigroup_resolvent_dense(&table, lambda)?);
    out.push(CheckRecord::at_most("howland_resolvent_bound", resolvent_norm, 1.0 / lambda + 2.0 * dt));

    let contractive = implicit_resolvent_propagator(&gen, &grid)?;
    let norms = semigroup_norm_check(&lift(&contractive, s1 as f64 * dt)?);
    out.push(
        CheckRecord::at_most("howland_norm_identity", (norms.operator_norm - norms.sup_block_norm).abs(), dt)
            .with_message(format!("operator norm {}", norms.operator_norm)),
    );

    let y = random_unit_vector(&mut rng, dim);
    let psi = |t: f64| (1.0 - t) * (1.0 - t);
    let dpsi = |t: f64| -2.0 * (1.0 - t);
    let tests = [TestFunction { psi: &psi, dpsi: &dpsi, y }];
    let weak = weak_solution_defect(&table, &gen, &x, &tests)?;
    let orbit = orbit_residual(&table, &gen, &x)?;
    out.push(CheckRecord::diagnostic("howland_weak_solution", weak).with_message(format!("orbit residual {orbit:e}")));
    Ok(out)
}

fn sohr(setup: &Setup, k_pos: f64, k_neg: f64, neg_amp: f64, neg_radius: f64) -> Result<Outcome, LabError> {
    let ctx = &setup.ctx;
    let h0 = ctx.free_hamiltonian();
    let l = setup.params.box_length;
    let space = SpatialProfile::Bump {
        center: 0.5 * l,
        radius: 0.3 * l,
    };
    let mut out = Outcome::default();
    let tol = 1e-8;

    // time-independent H = H₀ + V(t_peak)
    let v_peak = interaction_op(&setup.params, &setup.basis, &setup.coupling, &ctx.polynomial, setup.peak_time())?;
    let h = h0.clone() + v_peak.matrix;
    let low = scatterlab_core::linalg::Spectral::of_hermitian(&h).lowest();
    let gen = TimeDependentGenerator::constant(h, "H");
    let cfg = SohrConfig::new(2.0 + low.abs(), k_pos, (0.0, 1.0));
    let rep = sohr_condition_check(&gen, &cfg)?;
    out.push(CheckRecord::at_least("sohr_time_independent", rep.min_value.min(rep.min_form_eigenvalue), -tol));

    // smooth strictly positive modulation (1 + sin(t)/2)·b(x), k = 1, large β
    let mut modulated = BumpTerm::new(1.0, 0.0, 1.0, space);
    modulated.time = TimeProfile::Modulated { depth: 0.5, rate: 1.0 };
    let g = LocalizationFunction::from_terms(l, vec![modulated]);
    let gen = setup.schrodinger(&g)?;
    let rho = gen.max_spectral_radius((0..=16).map(|i| i as f64 * std::f64::consts::TAU / 16.0));
    let cfg = SohrConfig::new(2.0 + 10.0 * rho, 1.0, (0.0, std::f64::consts::TAU));
    let rep = sohr_condition_check(&gen, &cfg)?;
    out.push(CheckRecord::at_least("sohr_positive_coupling", rep.min_value.min(rep.min_form_eigenvalue), -tol));

    // compact bump: the condition fails on the switching edges
    let tc = setup.center();
    let g = LocalizationFunction::from_terms(l, vec![BumpTerm::new(neg_amp, tc, neg_radius, space)]);
    let gen = setup.schrodinger(&g)?;
    let v = interaction_op(&setup.params, &setup.basis, &g, &ctx.polynomial, tc)?.matrix;
    let rho_v = scatterlab_core::linalg::Spectral::of_hermitian(&v).spectral_radius();
    let mut cfg = SohrConfig::new(2.0 + rho_v, k_neg, (tc - neg_radius, tc + neg_radius));
    cfg.samples = 81;
    let rep = sohr_condition_check(&gen, &cfg)?;
    out.push(
        CheckRecord::at_most("sohr_compact_bump", rep.min_value, -tol)
            .with_message(format!("violation at t = {} (beta = {})", rep.argmin_time, cfg.beta)),
    );
    Ok(out)
}

fn kato(setup: &Setup) -> Result<Outcome, LabError> {
    let gen = setup.schrodinger(&setup.coupling)?;
    let grid = setup.grid();
    let stride = (grid.n_steps / 20).max(1);
    let times: Vec<f64> = (0..=grid.n_steps).step_by(stride).map(|i| grid.node(i)).collect();
    let rep = kato_stability_check(&gen, &times, 1.0, 1.0, 0.0)?;
    let worst = |r: &scatterlab_core::generators::StabilityReport| {
        r.product_norms.iter().zip(&r.bounds).map(|(n, b)| n / b).fold(0.0, f64::max)
    };
    let mut out = Outcome::default();
    out.push(CheckRecord::at_most("kato_contractive", worst(&rep), 1.0 + 1e-9));
    let bad = kato_stability_check(&gen, &times, 1.0, 0.05, 0.0)?;
    out.push(
        CheckRecord::at_least("kato_counterexample", worst(&bad), 1.0 + 1e-9)
            .with_message(format!("first violation at prefix {:?}", bad.first_violation)),
    );
    Ok(out)
}

fn picard(setup: &Setup, tolerance: f64) -> Result<Outcome, LabError> {
    let ctx = &setup.ctx;
    let gen = ctx.interaction_generator(&setup.coupling)?;
    let (table, diag) = picard_propagator(&gen, &ctx.grid, tolerance, 500)?;
    let s = ctx.s_operator(&setup.coupling)?.matrix;
    let dt = ctx.grid.dt();
    let mut out = Outcome::default();
    out.push(
        CheckRecord::at_most("picard_vs_midpoint", norm_2(&(table.final_matrix() - s)), dt * dt).with_message(
            format!(
                "{} iterations, certificate {:e}",
                diag.iterations, diag.contraction_certificate
            ),
        ),
    );
    Ok(out)
}

fn duhamel(setup: &Setup, quad_steps: usize) -> Result<Outcome, LabError> {
    let ctx = &setup.ctx;
    let h0 = ctx.free_hamiltonian();
    let t = setup.peak_time();
    let full = interaction_op(&setup.params, &setup.basis, &setup.coupling, &ctx.polynomial, t)?.matrix;
    let lower = setup.params.mode_cutoff.saturating_sub(1);
    let cut = interaction_op_with_field_cutoff(&setup.params, &setup.basis, &setup.coupling, &ctx.polynomial, t, lower)?
        .matrix;
    let (lhs, rhs) = scatterlab_core::stepper::duhamel_difference(&(&h0 + full), &(&h0 + cut), 1.0, quad_steps)?;
    let mut out = Outcome::default();
    out.push(
        CheckRecord::at_most("duhamel_identity", max_abs(&(lhs - rhs)), 1e-8)
            .with_message(format!("field cutoffs {} and {lower}", setup.params.mode_cutoff)),
    );
    Ok(out)
}

fn fock_consistency(setup: &Setup) -> Result<Outcome, LabError> {
    let (p, b) = (&setup.params, &setup.basis);
    let mut out = Outcome::default();

    let expected = binomial(p.n_modes() + p.n_max, p.n_max);
    let bad_index = (0..b.dim()).filter(|&i| b.index_of(b.state(i)) != Some(i)).count();
    out.push(CheckRecord::at_most(
        "fock_basis",
        (b.dim() as f64 - expected).abs() + bad_index as f64 + b.total(0) as f64,
        0.0,
    ));

    let mut adjoint: f64 = 0.0;
    let mut ccr: f64 = 0.0;
    for j in p.modes() {
        let a = annihilation_op(b, j)?.matrix;
        adjoint = adjoint.max(max_abs(&(creation_op(b, j)?.matrix - a.adjoint())));
        for l in p.modes() {
            let comm = commutator(&a, &creation_op(b, l)?.matrix);
            for col in (0..b.dim()).filter(|&c| b.total(c) < b.n_max()) {
                for row in 0..b.dim() {
                    let expect = if row == col && j == l { 1.0 } else { 0.0 };
                    ccr = ccr.max((comm[(row, col)] - C64::new(expect, 0.0)).norm());
                }
            }
        }
    }
    out.push(CheckRecord::at_most("fock_ladder_adjoint", adjoint, 1e-15));
    out.push(CheckRecord::at_most("fock_ccr", ccr, 1e-13));

    let g = &setup.coupling;
    let poly = &setup.ctx.polynomial;
    let t = setup.peak_time();
    let v = interaction_op(p, b, g, poly, t)?;
    out.push(CheckRecord::at_most(
        "fock_hermiticity",
        v.symmetrization_deviation.max(hermitian_deviation(&v.matrix)),
        1e-12,
    ));
    let direct = interaction_op_pointwise(p, b, g, poly, t)?;
    out.push(CheckRecord::at_most("fock_interaction_routes", max_abs(&(&v.matrix - direct)), 1e-12));

    let x = p.lattice_point(p.x_points / 3);
    let mut wick: f64 = 0.0;
    for order in 1..=poly.degree().max(1) {
        let normal = wick_power(p, b, order, x)?.matrix;
        let expansion = wick_theorem_expansion(p, b, order, x)?;
        for col in wick_interior_columns(b, order) {
            for row in 0..b.dim() {
                wick = wick.max((normal[(row, col)] - expansion[(row, col)]).norm());
            }
        }
    }
    out.push(CheckRecord::at_most("fock_wick_theorem", wick, 1e-12));

    let dx = p.spacing();
    let shifted = interaction_op(p, b, &g.shifted(0.0, dx), poly, t)?.matrix;
    let tr = translation_op(p, b, dx);
    out.push(CheckRecord::at_most(
        "fock_translation",
        max_abs(&(shifted - &tr * &v.matrix * tr.adjoint())),
        1e-10,
    ));
    Ok(out)
}

fn semiboundedness(setup: &Setup, cutoffs: &[usize]) -> Result<Outcome, LabError> {
    let t = setup.peak_time();
    let poly = &setup.ctx.polynomial;
    let rep = semiboundedness_report(&setup.params, &setup.coupling, poly, t, cutoffs)?;
    let mut series = Series::new("semiboundedness", &["mode_cutoff", "dimension", "c_trunc", "lowest"]);
    for r in &rep.sweep {
        series.push(vec![r.mode_cutoff as f64, r.dimension as f64, r.c_trunc, r.lowest]);
    }
    let mut out = Outcome::default();
    out.push(CheckRecord::diagnostic("semibounded_lowest", rep.lowest));
    out.push(CheckRecord::at_least("semibounded_monotone", rep.monotone as u8 as f64, 1.0));
    let quad = semiboundedness_report(&setup.params, &setup.coupling, &Polynomial::monomial(2, 1.0), t, &[])?;
    let bound = quad.wick_shift_bound.unwrap_or(f64::NEG_INFINITY);
    out.push(
        CheckRecord::at_most("semibounded_quadratic", bound - quad.lowest, 1e-12)
            .with_message(format!("lowest {} against bound {bound}", quad.lowest)),
    );
    out.series.push(series);
    Ok(out)
}

fn localization(setup: &Setup) -> Result<Outcome, LabError> {
    let mut out = Outcome::default();
    out.push(CheckRecord::at_most("bump_peak", (mollifier(0.0) - 1.0).abs(), 1e-15));
    let h = 1e-4;
    let edge = (0..=100)
        .map(|i| 0.99 + 0.01 * i as f64 / 100.0)
        .map(|u| ((mollifier(u + h) - mollifier(u - h)) / (2.0 * h)).abs())
        .fold(0.0, f64::max);
    out.push(CheckRecord::at_most("bump_boundary_derivative", edge, 1e-12));
    let curvature = setup
        .coupling
        .max_second_difference(&setup.grid(), setup.params.x_points);
    out.push(CheckRecord::diagnostic("bump_smoothness", curvature).with_message("max second difference on the grid"));
    Ok(out)
}
