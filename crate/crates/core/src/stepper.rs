//! Propagators `U(t, s)` on a uniform time grid: Picard iteration, exponential
//! products, implicit resolvent products, the approximative-solution limit
//! over bounded approximations, and closed-form reference solutions.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::generators::{resolvent, yosida_approx, ApproximationKind, ApproximationScheme, TimeDependentGenerator};
use crate::linalg::{c, expm, gemm, max_abs, norm_fro, unitarity_defect, CMatrix, CVector, Spectral, I};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end > t_start) || n_steps == 0 || !t_start.is_finite() || !t_end.is_finite() {
            return Err(invalid(alloc::format!(
                "time grid needs t_end > t_start and n_steps > 0 (got [{t_start}, {t_end}], {n_steps})"
            )));
        }
        Ok(TimeGrid {
            t_start,
            t_end,
            n_steps,
        })
    }

    /// Grid with step `dt`; the interval length must be an integer multiple
    /// of `dt`.
    pub fn from_step(t_start: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(invalid("time step must be positive"));
        }
        let len = t_end - t_start;
        let n = (len / dt).round();
        if n < 1.0 || (n * dt - len).abs() > 1e-9 * len.abs().max(dt) {
            return Err(Error::GridMismatch(alloc::format!(
                "interval [{t_start}, {t_end}] is not a multiple of dt = {dt}"
            )));
        }
        TimeGrid::new(t_start, t_end, n as usize)
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t_end
        } else {
            self.t_start + i as f64 * self.dt()
        }
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        self.t_start + (i as f64 + 0.5) * self.dt()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|i| self.node(i))
    }

    /// Index of the node at `t`, if `t` is a node up to rounding.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let r = (t - self.t_start) / self.dt();
        let i = r.round();
        ((r - i).abs() <= 1e-9 && i >= 0.0 && i as usize <= self.n_steps).then_some(i as usize)
    }

    pub fn refined(&self, factor: usize) -> Self {
        TimeGrid {
            n_steps: self.n_steps * factor,
            ..*self
        }
    }

    pub fn length(&self) -> f64 {
        self.t_end - self.t_start
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepRule {
    Left,
    Midpoint,
}

impl StepRule {
    fn time(self, grid: &TimeGrid, i: usize) -> f64 {
        match self {
            StepRule::Left => grid.node(i),
            StepRule::Midpoint => grid.midpoint(i),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepScheme {
    /// `Π exp(−iΔt H(t_j*))`.
    ExpProduct(StepRule),
    /// `Π (1 − Δt A(t_ν))^{−1}` at right endpoints.
    ImplicitResolvent,
    /// Exponential product of a bounded approximation `A_n`.
    Approximated {
        scheme: ApproximationScheme,
        rule: StepRule,
    },
}

impl StepScheme {
    pub fn id(&self) -> String {
        match self {
            StepScheme::ExpProduct(StepRule::Left) => "exp_product_left".into(),
            StepScheme::ExpProduct(StepRule::Midpoint) => "exp_product_midpoint".into(),
            StepScheme::ImplicitResolvent => "implicit_resolvent".into(),
            StepScheme::Approximated { scheme, rule } => alloc::format!(
                "{}_{}_{:?}",
                match scheme.kind {
                    ApproximationKind::Yosida => "yosida",
                    ApproximationKind::SpectralCutoff => "spectral_cutoff",
                },
                scheme.level,
                rule
            )
            .to_lowercase(),
        }
    }

    /// Steps are exact unitaries.
    pub fn is_unitary(&self) -> bool {
        match self {
            StepScheme::ExpProduct(_) => true,
            StepScheme::ImplicitResolvent => false,
            StepScheme::Approximated { scheme, .. } => scheme.kind == ApproximationKind::SpectralCutoff,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Storage {
    All,
    Every(usize),
    FinalOnly,
}

impl Storage {
    fn keeps(self, i: usize, n: usize) -> bool {
        i == 0
            || i == n
            || match self {
                Storage::All => true,
                Storage::Every(k) => k > 0 && i % k == 0,
                Storage::FinalOnly => false,
            }
    }
}

/// One grid step as an operator on blocks of state vectors.
enum StepOp {
    Identity,
    Spectral { sp: Spectral, dt: f64 },
    Dense { step: CMatrix, generator: CMatrix },
}

impl StepOp {
    fn apply(&self, x: &CMatrix) -> CMatrix {
        match self {
            StepOp::Identity => x.clone(),
            StepOp::Spectral { sp, dt } => sp.apply(|v| (-I * (v * dt)).exp(), x),
            StepOp::Dense { step, .. } => gemm(step, x, false),
        }
    }

    /// Action of the (approximate) generator used by this step.
    fn generator_apply(&self, x: &CMatrix) -> CMatrix {
        match self {
            StepOp::Identity => CMatrix::zeros(x.nrows(), x.ncols()),
            StepOp::Spectral { sp, .. } => sp.apply(|v| -I * v, x),
            StepOp::Dense { generator, .. } => gemm(generator, x, false),
        }
    }
}

#[derive(Default)]
struct StepStats {
    clipped: bool,
    max_radius: f64,
}

fn build_step(
    gen: &TimeDependentGenerator,
    scheme: &StepScheme,
    grid: &TimeGrid,
    i: usize,
    stats: &mut StepStats,
) -> Result<StepOp> {
    let dt = grid.dt();
    match *scheme {
        StepScheme::ExpProduct(rule) => {
            let t = rule.time(grid, i);
            if gen.is_zero_at(t) {
                return Ok(StepOp::Identity);
            }
            let sp = gen.spectral(t);
            stats.max_radius = stats.max_radius.max(sp.spectral_radius());
            Ok(StepOp::Spectral { sp, dt })
        }
        StepScheme::ImplicitResolvent => {
            let t = grid.node(i + 1);
            if gen.is_zero_at(t) {
                return Ok(StepOp::Identity);
            }
            let a = gen.generator(t);
            // (1 − Δt A)^{-1} = Δt^{-1} R(Δt^{-1}, A)
            let step = resolvent(&a, c(1.0 / dt))? * c(1.0 / dt);
            Ok(StepOp::Dense { step, generator: a })
        }
        StepScheme::Approximated { scheme, rule } => {
            let t = rule.time(grid, i);
            if gen.is_zero_at(t) {
                return Ok(StepOp::Identity);
            }
            match scheme.kind {
                ApproximationKind::SpectralCutoff => {
                    let sp = gen.spectral(t);
                    let rho = sp.spectral_radius();
                    stats.max_radius = stats.max_radius.max(rho);
                    if rho > scheme.level {
                        stats.clipped = true;
                    }
                    Ok(StepOp::Spectral {
                        sp: sp.clipped(scheme.level),
                        dt,
                    })
                }
                ApproximationKind::Yosida => {
                    let a = gen.generator(t);
                    let an = yosida_approx(&a, scheme.level)?;
                    let step = expm(&(&an * c(dt)));
                    Ok(StepOp::Dense { step, generator: an })
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct PropagatorTable {
    pub scheme: String,
    pub grid: TimeGrid,
    pub unitary: bool,
    indices: Vec<usize>,
    matrices: Vec<CMatrix>,
    /// `‖U†U − 1‖₂` at every stored node.
    pub unitarity_log: Vec<f64>,
}

impl PropagatorTable {
    fn from_parts(scheme: String, grid: TimeGrid, unitary: bool, indices: Vec<usize>, matrices: Vec<CMatrix>) -> Self {
        let unitarity_log = matrices.iter().map(unitarity_defect).collect();
        PropagatorTable {
            scheme,
            grid,
            unitary,
            indices,
            matrices,
            unitarity_log,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn stored_indices(&self) -> &[usize] {
        &self.indices
    }

    /// `U(t_i, t_0)` if node `i` was stored.
    pub fn at(&self, i: usize) -> Option<&CMatrix> {
        self.indices.binary_search(&i).ok().map(|k| &self.matrices[k])
    }

    pub fn final_matrix(&self) -> &CMatrix {
        self.matrices.last().expect("tables hold at least the initial node")
    }

    /// `U(t_i, t_j) = U(t_i,t_0) U(t_j,t_0)^{−1}`.
    pub fn between(&self, i: usize, j: usize) -> Result<CMatrix> {
        let missing = |k| Error::GridMismatch(alloc::format!("node {k} not stored in table"));
        let ui = self.at(i).ok_or_else(|| missing(i))?;
        let uj = self.at(j).ok_or_else(|| missing(j))?;
        if i == j {
            let d = self.dim();
            return Ok(CMatrix::identity(d, d));
        }
        let inv = if self.unitary {
            uj.adjoint()
        } else {
            crate::linalg::inverse(uj).ok_or(Error::NearSingularResolvent {
                lambda_re: 0.0,
                lambda_im: 0.0,
                residual: f64::INFINITY,
            })?
        };
        Ok(ui * inv)
    }

    /// `‖U(t_i,t_j)U(t_j,t_k) − U(t_i,t_k)‖₂`.
    pub fn composition_defect(&self, i: usize, j: usize, k: usize) -> Result<f64> {
        let lhs = self.between(i, j)? * self.between(j, k)?;
        Ok(crate::linalg::norm_2(&(lhs - self.between(i, k)?)))
    }

    pub fn max_unitarity_defect(&self) -> f64 {
        self.unitarity_log.iter().copied().fold(0.0, f64::max)
    }

    /// Largest `‖U(t_i,t_0)‖₂` over stored nodes.
    pub fn max_norm(&self) -> f64 {
        self.matrices
            .iter()
            .map(crate::linalg::norm_2)
            .fold(0.0, f64::max)
    }

    pub fn matrices(&self) -> impl Iterator<Item = (usize, &CMatrix)> {
        self.indices.iter().copied().zip(self.matrices.iter())
    }

    /// Multiplies every stored `U(t_i, t_0)` by `factor(t_i − t_0)`.
    pub fn scaled_by(&self, factor: impl Fn(f64) -> f64) -> Self {
        let matrices: Vec<CMatrix> = self
            .matrices()
            .map(|(i, u)| u * c(factor(self.grid.node(i) - self.grid.t_start)))
            .collect();
        PropagatorTable::from_parts(
            alloc::format!("{} (scaled)", self.scheme),
            self.grid,
            false,
            self.indices.clone(),
            matrices,
        )
    }
}

struct Propagation {
    indices: Vec<usize>,
    states: Vec<CMatrix>,
    stats: StepStats,
    residual_sq: f64,
}

fn propagate(
    gen: &TimeDependentGenerator,
    grid: &TimeGrid,
    scheme: &StepScheme,
    x0: &CMatrix,
    storage: Storage,
    track_residual: bool,
) -> Result<Propagation> {
    let n = grid.n_steps;
    let dt = grid.dt();
    let mut stats = StepStats::default();
    let mut indices = vec![0];
    let mut states = vec![x0.clone()];
    let mut x = x0.clone();
    let mut residual_sq = 0.0;
    for i in 0..n {
        let op = build_step(gen, scheme, grid, i, &mut stats)?;
        let next = op.apply(&x);
        if track_residual {
            let mean = (&next + &x) * c(0.5);
            let r = (&next - &x) * c(1.0 / dt) - op.generator_apply(&mean);
            residual_sq += dt * norm_fro(&r).powi(2);
        }
        x = next;
        if storage.keeps(i + 1, n) {
            indices.push(i + 1);
            states.push(x.clone());
        }
    }
    Ok(Propagation {
        indices,
        states,
        stats,
        residual_sq,
    })
}

/// Propagates a block of states (columns of `x0`) from `t_start` to `t_end`.
pub fn propagate_states(
    gen: &TimeDependentGenerator,
    grid: &TimeGrid,
    scheme: &StepScheme,
    x0: &CMatrix,
) -> Result<CMatrix> {
    let mut p = propagate(gen, grid, scheme, x0, Storage::FinalOnly, false)?;
    Ok(p.states.pop().expect("final state stored"))
}

pub fn step_propagator(
    gen: &TimeDependentGenerator,
    grid: &TimeGrid,
    scheme: &StepScheme,
    storage: Storage,
) -> Result<PropagatorTable> {
    let d = gen.dim();
    let p = propagate(gen, grid, scheme, &CMatrix::identity(d, d), storage, false)?;
    Ok(PropagatorTable::from_parts(
        scheme.id(),
        *grid,
        scheme.is_unitary(),
        p.indices,
        p.states,
    ))
}

pub fn exp_product_propagator(
    gen: &TimeDependentGenerator,
    grid: &TimeGrid,
    rule: StepRule,
) -> Result<PropagatorTable> {
    step_propagator(gen, grid, &StepScheme::ExpProduct(rule), Storage::All)
}

pub fn implicit_resolvent_propagator(gen: &TimeDependentGenerator, grid: &TimeGrid) -> Result<PropagatorTable> {
    step_propagator(gen, grid, &StepScheme::ImplicitResolvent, Storage::All)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardDiagnostics {
    pub iterations: usize,
    pub last_change: f64,
    /// `(sup‖A‖·T)^m / m!` after the final iteration `m`.
    pub contraction_certificate: f64,
}

/// Fixed point of `U(t) = 1 + ∫_{t_0}^t A(τ)U(τ)dτ` with the integral taken
/// by the composite trapezoid rule on the grid nodes.
pub fn picard_propagator(
    gen: &TimeDependentGenerator,
    grid: &TimeGrid,
    tol: f64,
    max_iter: usize,
) -> Result<(PropagatorTable, PicardDiagnostics)> {
    let d = gen.dim();
    let n = grid.n_steps;
    let dt = grid.dt();
    let generators: Vec<Option<CMatrix>> = (0..=n)
        .map(|i| {
            let t = grid.node(i);
            (!gen.is_zero_at(t)).then(|| gen.generator(t))
        })
        .collect();
    // ‖−iH‖₂ = ρ(H); the spectra reuse cached term decompositions
    let sup_norm = (0..=n)
        .filter(|&i| generators[i].is_some())
        .map(|i| gen.spectral(grid.node(i)).spectral_radius())
        .fold(0.0, f64::max);
    let id = CMatrix::identity(d, d);
    let mut u: Vec<CMatrix> = vec![id.clone(); n + 1];
    let apply = |k: usize, m: &CMatrix| -> CMatrix {
        match &generators[k] {
            Some(a) => gemm(a, m, false),
            None => CMatrix::zeros(d, d),
        }
    };
    let mut certificate = 1.0;
    let mut change = f64::INFINITY;
    for iteration in 1..=max_iter {
        let mut next = Vec::with_capacity(n + 1);
        next.push(id.clone());
        let mut integral = CMatrix::zeros(d, d);
        let mut prev_term = apply(0, &u[0]);
        for k in 1..=n {
            let term = apply(k, &u[k]);
            integral += (&prev_term + &term) * c(0.5 * dt);
            next.push(&id + &integral);
            prev_term = term;
        }
        change = u
            .iter()
            .zip(&next)
            .map(|(a, b)| max_abs(&(a - b)))
            .fold(0.0, f64::max);
        certificate *= sup_norm * grid.length() / iteration as f64;
        u = next;
        if change <= tol {
            let table = PropagatorTable::from_parts("picard".into(), *grid, false, (0..=n).collect(), u);
            return Ok((
                table,
                PicardDiagnostics {
                    iterations: iteration,
                    last_change: change,
                    contraction_certificate: certificate,
                },
            ));
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        change,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApproximativeConfig {
    pub kind: ApproximationKind,
    pub levels: Vec<f64>,
    pub rule: StepRule,
    pub storage: Storage,
    /// Relative Frobenius change below which consecutive levels count as
    /// equal.
    pub saturation_tol: f64,
    pub track_residual: bool,
}

impl ApproximativeConfig {
    pub fn spectral_cutoff(levels: Vec<f64>) -> Self {
        ApproximativeConfig {
            kind: ApproximationKind::SpectralCutoff,
            levels,
            rule: StepRule::Midpoint,
            storage: Storage::All,
            saturation_tol: 1e-12,
            track_residual: true,
        }
    }

    pub fn yosida(levels: Vec<f64>) -> Self {
        ApproximativeConfig {
            kind: ApproximationKind::Yosida,
            saturation_tol: 1e-10,
            ..ApproximativeConfig::spectral_cutoff(levels)
        }
    }

    /// `count` integer levels `1, 2, …`.
    pub fn integer_levels(count: usize) -> Vec<f64> {
        (1..=count).map(|n| n as f64).collect()
    }

    /// Levels `base, base·ratio, …`.
    pub fn geometric_levels(base: f64, ratio: f64, count: usize) -> Vec<f64> {
        (0..count).map(|k| base * ratio.powi(k as i32)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelDiagnostics {
    pub level: f64,
    /// Per stored node `‖U_{n_l} − U_{n_{l−1}}‖_F / √d`; empty for the first
    /// level.
    pub node_deviation: Vec<(usize, f64)>,
    pub max_deviation: Option<f64>,
    /// `(Σ Δt ‖(U_{i+1}−U_i)/Δt − A_n(U_{i+1}+U_i)/2‖_F²)^{1/2} / √d`.
    pub residual: Option<f64>,
    /// Some eigenvalue was clipped (spectral cutoff only).
    pub clipped: bool,
}

#[derive(Clone, Debug)]
pub struct ApproximativeSolution {
    pub table: PropagatorTable,
    pub levels: Vec<LevelDiagnostics>,
    /// First level from which every further level agrees within tolerance.
    pub saturation_level: f64,
    /// `max_t ρ(H(t))` over the evaluation times of the stepper.
    pub max_spectral_radius: f64,
}

/// Builds `U_n` for each approximation level and returns the highest level,
/// with level-to-level deviations and the level at which they vanish.
pub fn approximative_solution(
    gen: &TimeDependentGenerator,
    grid: &TimeGrid,
    cfg: &ApproximativeConfig,
) -> Result<ApproximativeSolution> {
    if cfg.levels.is_empty() || cfg.levels.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("approximation levels must be nonempty and increasing"));
    }
    let d = gen.dim();
    let norm_scale = (d as f64).sqrt();
    let id = CMatrix::identity(d, d);
    let mut diagnostics: Vec<LevelDiagnostics> = Vec::with_capacity(cfg.levels.len());
    let mut previous: Option<Propagation> = None;
    let mut max_radius: f64 = 0.0;
    for &level in &cfg.levels {
        // An unclipped spectral-cutoff run is the exact propagator for every
        // higher level as well.
        let reuse = cfg.kind == ApproximationKind::SpectralCutoff
            && diagnostics.last().is_some_and(|l| !l.clipped);
        let current = if reuse {
            let prev = previous.as_ref().expect("previous level present");
            Propagation {
                indices: prev.indices.clone(),
                states: prev.states.clone(),
                stats: StepStats {
                    clipped: false,
                    max_radius: prev.stats.max_radius,
                },
                residual_sq: prev.residual_sq,
            }
        } else {
            let scheme = StepScheme::Approximated {
                scheme: ApproximationScheme {
                    kind: cfg.kind,
                    level,
                },
                rule: cfg.rule,
            };
            propagate(gen, grid, &scheme, &id, cfg.storage, cfg.track_residual)?
        };
        max_radius = max_radius.max(current.stats.max_radius);
        let node_deviation: Vec<(usize, f64)> = match &previous {
            None => Vec::new(),
            Some(prev) => prev
                .indices
                .iter()
                .zip(prev.states.iter().zip(&current.states))
                .map(|(&i, (a, b))| (i, norm_fro(&(a - b)) / norm_scale))
                .collect(),
        };
        let max_deviation = (!node_deviation.is_empty())
            .then(|| node_deviation.iter().map(|x| x.1).fold(0.0, f64::max));
        diagnostics.push(LevelDiagnostics {
            level,
            node_deviation,
            max_deviation,
            residual: cfg
                .track_residual
                .then(|| current.residual_sq.sqrt() / norm_scale),
            clipped: current.stats.clipped,
        });
        previous = Some(current);
    }

    // Smallest level after which every further level agrees within
    // tolerance. The last level alone is trusted only if nothing was clipped.
    let mut s = diagnostics.len() - 1;
    while s > 0 && diagnostics[s].max_deviation.is_some_and(|dev| dev <= cfg.saturation_tol) {
        s -= 1;
    }
    let last_level = &diagnostics[diagnostics.len() - 1];
    if s == diagnostics.len() - 1 && !(cfg.kind == ApproximationKind::SpectralCutoff && !last_level.clipped) {
        return Err(Error::NoSaturation {
            last_change: last_level.max_deviation.unwrap_or(f64::INFINITY),
        });
    }
    let saturation_level = diagnostics[s].level;
    let last = previous.expect("at least one level");
    let scheme_id = alloc::format!(
        "approximative_{}",
        match cfg.kind {
            ApproximationKind::Yosida => "yosida",
            ApproximationKind::SpectralCutoff => "spectral_cutoff",
        }
    );
    let table = PropagatorTable::from_parts(
        scheme_id,
        *grid,
        cfg.kind == ApproximationKind::SpectralCutoff,
        last.indices,
        last.states,
    );
    Ok(ApproximativeSolution {
        table,
        levels: diagnostics,
        saturation_level,
        max_spectral_radius: max_radius,
    })
}

/// Simpson's rule with adaptive bisection.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    // start from a few panels so narrow features are not missed
    let panels = 16;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let (x0, x1) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (f0, f1, fmid) = if panels == 1 { (fa, fb, fm) } else { (f(x0), f(x1), f(0.5 * (x0 + x1))) };
            let whole = h / 6.0 * (f0 + 4.0 * fmid + f1);
            recurse(f, x0, x1, f0, fmid, f1, whole, tol / panels as f64, 40)
        })
        .sum()
}

/// Scalar weight supported in `[lo, hi]`.
#[derive(Clone)]
pub struct Weight {
    pub profile: crate::generators::Profile,
    pub support: (f64, f64),
}

impl Weight {
    pub fn zero() -> Self {
        Weight {
            profile: alloc::sync::Arc::new(|_| 0.0),
            support: (0.0, 0.0),
        }
    }

    /// Mollifier bump on `[lo, hi]` scaled to total integral `mass`.
    pub fn bump(lo: f64, hi: f64, mass: f64) -> Self {
        let (center, radius) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        let unit = adaptive_simpson(&|t| crate::localization::mollifier((t - center) / radius), lo, hi, 1e-15);
        let scale = mass / unit;
        Weight {
            profile: alloc::sync::Arc::new(move |t| scale * crate::localization::mollifier((t - center) / radius)),
            support: (lo, hi),
        }
    }

    /// `∫_{lo}^{t} w`.
    pub fn running_integral(&self, t: f64) -> f64 {
        let (lo, hi) = self.support;
        adaptive_simpson(&*self.profile, lo, t.min(hi), 1e-15)
    }
}

/// Three hermitian matrices switched on one after another by weights with
/// ordered disjoint supports: `H(t) = φ(t)S + η(t)L + ψ(t)T`.
#[derive(Clone)]
pub struct GoldsteinProblem {
    pub s: CMatrix,
    pub l: CMatrix,
    pub t: CMatrix,
    pub phi: Weight,
    pub eta: Weight,
    pub psi: Weight,
}

impl GoldsteinProblem {
    fn check_supports(&self) -> Result<()> {
        let ws = [&self.phi, &self.eta, &self.psi];
        for w in ws {
            if w.support.1 < w.support.0 {
                return Err(Error::SupportOverlap);
            }
        }
        for pair in ws.windows(2) {
            if pair[0].support.1 > pair[1].support.0 {
                return Err(Error::SupportOverlap);
            }
        }
        Ok(())
    }

    pub fn generator(&self) -> TimeDependentGenerator {
        let d = self.s.nrows();
        TimeDependentGenerator::zero(d, "goldstein")
            .with_term(self.phi.profile.clone(), self.s.clone(), Some(self.phi.support))
            .with_term(self.eta.profile.clone(), self.l.clone(), Some(self.eta.support))
            .with_term(self.psi.profile.clone(), self.t.clone(), Some(self.psi.support))
    }
}

/// `u(t) = e^{−iΨ(t)T} e^{−iH(t)L} e^{−iΦ(t)S} y`, with `Φ, H, Ψ` the running
/// integrals of the weights: the exact solution of `u' = −i H(t) u`,
/// `u(start) = y` for weights with ordered disjoint supports.
pub fn goldstein_oracle(problem: &GoldsteinProblem, y: &CVector, t: f64) -> Result<CVector> {
    problem.check_supports()?;
    let rotate = |m: &CMatrix, angle: f64, v: CVector| -> CVector {
        if angle == 0.0 {
            return v;
        }
        let sp = Spectral::of_hermitian(m);
        let out = sp.apply(|e| (-I * (e * angle)).exp(), &CMatrix::from_column_slice(v.len(), 1, v.as_slice()));
        out.column(0).into_owned()
    };
    let mut u = y.clone();
    u = rotate(&problem.s, problem.phi.running_integral(t), u);
    u = rotate(&problem.l, problem.eta.running_integral(t), u);
    u = rotate(&problem.t, problem.psi.running_integral(t), u);
    Ok(u)
}

/// Both sides of `e^{−rH_a} = e^{−rH_b} − ∫_0^r e^{−sH_b}(H_a−H_b)e^{−(r−s)H_a} ds`,
/// the integral by composite Simpson with `quad_steps` (rounded up to even)
/// panels.
pub fn duhamel_difference(h_a: &CMatrix, h_b: &CMatrix, r: f64, quad_steps: usize) -> Result<(CMatrix, CMatrix)> {
    if !(r > 0.0) || quad_steps == 0 {
        return Err(invalid("Duhamel check needs r > 0 and quadrature steps"));
    }
    let sa = Spectral::of_hermitian(h_a);
    let sb = Spectral::of_hermitian(h_b);
    let diff = h_a - h_b;
    let lhs = sa.function(|e| c((-r * e).exp()));
    let steps = quad_steps + quad_steps % 2;
    let h = r / steps as f64;
    let d = h_a.nrows();
    let mut integral = CMatrix::zeros(d, d);
    for k in 0..=steps {
        let s = k as f64 * h;
        let weight = if k == 0 || k == steps {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let left = sb.function(|e| c((-s * e).exp()));
        let right = sa.function(|e| c((-(r - s) * e).exp()));
        integral += left * &diff * right * c(weight * h / 3.0);
    }
    let rhs = sb.function(|e| c((-r * e).exp())) - integral;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{log_log_slope, norm_2, random_hermitian, random_unit_vector, vector_norm};
    use alloc::sync::Arc;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn grid_nodes_are_exact() {
        let g = TimeGrid::new(-1.0, 1.5, 10).unwrap();
        assert_eq!(g.node(0), -1.0);
        assert_eq!(g.node(10), 1.5);
        assert_eq!(g.index_of(0.0), Some(4));
        assert!(TimeGrid::from_step(0.0, 1.0, 0.3).is_err());
        assert_eq!(TimeGrid::from_step(0.0, 1.0, 0.125).unwrap().n_steps, 8);
    }

    #[test]
    fn picard_zero_generator_converges_in_one_iteration() {
        let gen = TimeDependentGenerator::zero(3, "0");
        let (table, diag) = picard_propagator(&gen, &TimeGrid::new(0.0, 1.0, 10).unwrap(), 1e-14, 5).unwrap();
        assert_eq!(diag.iterations, 1);
        assert_eq!(table.final_matrix(), &CMatrix::identity(3, 3));
    }

    #[test]
    fn picard_rotation_generator() {
        // A = [[0,1],[-1,0]] = −iH with H = iA
        let a = CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(-1.0), c(0.0)]);
        let h = &a * I;
        let gen = TimeDependentGenerator::constant(h, "rot");
        let grid = TimeGrid::new(0.0, 1.0, 4000).unwrap();
        let (table, _) = picard_propagator(&gen, &grid, 1e-14, 200).unwrap();
        let t: f64 = 1.0;
        let exact = CMatrix::from_row_slice(2, 2, &[c(t.cos()), c(t.sin()), c(-t.sin()), c(t.cos())]);
        assert!(max_abs(&(table.final_matrix() - exact)) <= 1e-8);
    }

    #[test]
    fn picard_commuting_family() {
        let h0 = random_hermitian(&mut rng(1), 3, 1.0);
        let gen = TimeDependentGenerator::zero(3, "f").with_term(Arc::new(|t: f64| 1.0 + t * t), h0.clone(), None);
        let grid = TimeGrid::new(0.0, 1.0, 2000).unwrap();
        let (table, diag) = picard_propagator(&gen, &grid, 1e-14, 200).unwrap();
        assert!(diag.contraction_certificate < 1e-10);
        let integral = 1.0 + 1.0 / 3.0;
        let exact = Spectral::of_hermitian(&h0).unitary_step(integral);
        assert!(max_abs(&(table.final_matrix() - exact)) <= 1e-6);
    }

    #[test]
    fn picard_reports_no_convergence() {
        let h = random_hermitian(&mut rng(2), 3, 5.0);
        let gen = TimeDependentGenerator::constant(h, "h");
        let err = picard_propagator(&gen, &TimeGrid::new(0.0, 2.0, 100).unwrap(), 1e-14, 3);
        assert!(matches!(err, Err(Error::NoConvergence { iterations: 3, .. })));
    }

    #[test]
    fn exp_product_single_step_and_unitarity() {
        let h = random_hermitian(&mut rng(3), 4, 1.0);
        let gen = TimeDependentGenerator::constant(h.clone(), "h");
        let table = exp_product_propagator(&gen, &TimeGrid::new(0.0, 0.3, 1).unwrap(), StepRule::Midpoint).unwrap();
        assert!(max_abs(&(table.final_matrix() - Spectral::of_hermitian(&h).unitary_step(0.3))) < 1e-14);

        let b = random_hermitian(&mut rng(4), 4, 1.0);
        let gen = gen.with_term(Arc::new(|t: f64| t.sin()), b, None);
        let table = exp_product_propagator(&gen, &TimeGrid::new(0.0, 2.0, 50).unwrap(), StepRule::Left).unwrap();
        assert!(table.max_unitarity_defect() <= 1e-12);
        assert!(table.composition_defect(40, 17, 3).unwrap() <= 1e-12 * 4.0);
        let back = table.between(10, 30).unwrap() * table.between(30, 10).unwrap();
        assert!(max_abs(&(back - CMatrix::identity(4, 4))) < 1e-13);
    }

    #[test]
    fn exp_product_orders_on_scalar_linear_phase() {
        let gen = TimeDependentGenerator::zero(1, "t").with_term(Arc::new(|t| t), CMatrix::identity(1, 1), None);
        let exact = (-I * 0.5).exp(); // ∫_0^1 t dt = 1/2
        let errs = |rule| -> Vec<f64> {
            [10, 20, 40]
                .iter()
                .map(|&n| {
                    let t = exp_product_propagator(&gen, &TimeGrid::new(0.0, 1.0, n).unwrap(), rule).unwrap();
                    (t.final_matrix()[(0, 0)] - exact).norm()
                })
                .collect()
        };
        let dts = [0.1, 0.05, 0.025];
        let left = log_log_slope(&dts, &errs(StepRule::Left));
        assert!((left - 1.0).abs() < 0.1, "left order {left}");
        // midpoint integrates a linear phase exactly
        assert!(errs(StepRule::Midpoint).iter().all(|&e| e < 1e-13));
    }

    #[test]
    fn implicit_resolvent_contractive_and_first_order() {
        let a = CMatrix::from_element(1, 1, -I);
        let gen = TimeDependentGenerator::constant(&a * I, "scalar");
        let dt = 0.1;
        let t = implicit_resolvent_propagator(&gen, &TimeGrid::new(0.0, dt, 1).unwrap()).unwrap();
        assert!((t.final_matrix()[(0, 0)].norm() - (1.0 + dt * dt).powf(-0.5)).abs() < 1e-15);

        let zero = TimeDependentGenerator::zero(2, "0");
        let t = implicit_resolvent_propagator(&zero, &TimeGrid::new(0.0, 1.0, 7).unwrap()).unwrap();
        assert_eq!(t.final_matrix(), &CMatrix::identity(2, 2));

        let h = random_hermitian(&mut rng(5), 4, 1.0);
        let gen = TimeDependentGenerator::constant(h.clone(), "h");
        let exact = Spectral::of_hermitian(&h).unitary_step(1.0);
        let ns = [50, 100, 200, 400];
        let errs: Vec<f64> = ns
            .iter()
            .map(|&n| {
                let t = implicit_resolvent_propagator(&gen, &TimeGrid::new(0.0, 1.0, n).unwrap()).unwrap();
                assert!(t.max_norm() <= 1.0 + 1e-12);
                norm_2(&(t.final_matrix() - &exact))
            })
            .collect();
        let dts: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
        let rate = log_log_slope(&dts, &errs);
        assert!((rate - 1.0).abs() <= 0.2, "rate {rate}");
    }

    #[test]
    fn approximative_solution_inactive_cutoff() {
        let h = random_hermitian(&mut rng(6), 4, 0.5);
        let gen = TimeDependentGenerator::constant(h, "h");
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let rho = gen.spectral(0.0).spectral_radius();
        let cfg = ApproximativeConfig::spectral_cutoff(vec![rho + 1.0, rho + 2.0, rho + 3.0]);
        let sol = approximative_solution(&gen, &grid, &cfg).unwrap();
        assert_eq!(sol.saturation_level, rho + 1.0);
        for l in &sol.levels[1..] {
            assert_eq!(l.max_deviation, Some(0.0));
        }
    }

    #[test]
    fn approximative_solution_saturates_at_spectral_radius() {
        let h = random_hermitian(&mut rng(7), 5, 2.0);
        let b = random_hermitian(&mut rng(8), 5, 1.0);
        let gen = TimeDependentGenerator::constant(h, "h").with_term(Arc::new(|t: f64| t.cos()), b, None);
        let grid = TimeGrid::new(0.0, 1.0, 40).unwrap();
        let sol = approximative_solution(&gen, &grid, &ApproximativeConfig::spectral_cutoff(ApproximativeConfig::integer_levels(12))).unwrap();
        let expected = sol.max_spectral_radius.ceil();
        assert_eq!(sol.saturation_level, expected);
        assert!(sol.table.max_unitarity_defect() <= 1e-12);
    }

    #[test]
    fn approximative_solution_flags_missing_saturation() {
        let h = crate::linalg::real_diag(&[-5.0, 3.0]);
        let gen = TimeDependentGenerator::constant(h, "h");
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let err = approximative_solution(&gen, &grid, &ApproximativeConfig::spectral_cutoff(vec![1.0, 2.0]));
        assert!(matches!(err, Err(Error::NoSaturation { .. })));
    }

    #[test]
    fn yosida_and_cutoff_limits_agree() {
        let h = random_hermitian(&mut rng(9), 4, 1.0);
        let b = random_hermitian(&mut rng(10), 4, 1.0);
        let gen = TimeDependentGenerator::constant(h, "h").with_term(Arc::new(|t: f64| t.sin()), b, None);
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let cut = approximative_solution(&gen, &grid, &ApproximativeConfig::spectral_cutoff(ApproximativeConfig::integer_levels(8))).unwrap();
        let yos = approximative_solution(&gen, &grid, &ApproximativeConfig::yosida(ApproximativeConfig::geometric_levels(1.0, 100.0, 8))).unwrap();
        assert!(norm_2(&(cut.table.final_matrix() - yos.table.final_matrix())) < 1e-8);
    }

    fn goldstein_problem(seed: u64) -> GoldsteinProblem {
        let mut r = rng(seed);
        GoldsteinProblem {
            s: random_hermitian(&mut r, 4, 1.0),
            l: random_hermitian(&mut r, 4, 1.0),
            t: random_hermitian(&mut r, 4, 1.0),
            phi: Weight::bump(0.0, 1.0, 1.0),
            eta: Weight::bump(1.0, 2.0, 1.0),
            psi: Weight::bump(2.0, 3.0, 1.0),
        }
    }

    #[test]
    fn goldstein_first_window_is_single_exponential() {
        let p = goldstein_problem(11);
        let y = random_unit_vector(&mut rng(12), 4);
        let t = 0.6;
        let u = goldstein_oracle(&p, &y, t).unwrap();
        let phase = p.phi.running_integral(t);
        let expect = Spectral::of_hermitian(&p.s).unitary_step(phase) * &y;
        assert!(vector_norm(&(u - expect)) < 1e-14);
    }

    #[test]
    fn goldstein_zero_weights_and_overlap() {
        let mut p = goldstein_problem(13);
        p.phi = Weight::zero();
        p.eta = Weight::zero();
        p.psi = Weight::zero();
        let y = random_unit_vector(&mut rng(14), 4);
        assert_eq!(goldstein_oracle(&p, &y, 2.5).unwrap(), y);
        let mut q = goldstein_problem(15);
        q.eta = Weight::bump(0.5, 2.0, 1.0);
        assert!(matches!(goldstein_oracle(&q, &y, 1.0), Err(Error::SupportOverlap)));
    }

    #[test]
    fn goldstein_matches_midpoint_stepper_at_window_ends() {
        let p = goldstein_problem(16);
        let grid = TimeGrid::new(0.0, 3.0, 3000).unwrap();
        let table = exp_product_propagator(&p.generator(), &grid, StepRule::Midpoint).unwrap();
        let y = random_unit_vector(&mut rng(17), 4);
        for t in [1.0, 2.0, 3.0] {
            let u = table.at(grid.index_of(t).unwrap()).unwrap() * &y;
            let err = vector_norm(&(u - goldstein_oracle(&p, &y, t).unwrap()));
            assert!(err <= 1e-8, "t = {t}: {err}");
        }
    }

    #[test]
    fn duhamel_equal_and_commuting() {
        let h = random_hermitian(&mut rng(18), 4, 1.0);
        let (lhs, rhs) = duhamel_difference(&h, &h, 0.5, 10).unwrap();
        assert!(max_abs(&(lhs - rhs)) < 1e-14);

        let sp = Spectral::of_hermitian(&h);
        let h2 = sp.function(|e| c(e * e - 0.3));
        let (lhs, rhs) = duhamel_difference(&h, &h2, 0.5, 200).unwrap();
        let closed = sp.function(|e| c((-0.5 * e).exp() - (-0.5 * (e * e - 0.3)).exp()));
        let err = max_abs(&(&lhs - &rhs));
        assert!(max_abs(&(lhs - sp.function(|e| c((-0.5 * (e * e - 0.3)).exp())) - closed)) < 1e-14);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn table_storage_strides() {
        let h = random_hermitian(&mut rng(19), 3, 1.0);
        let gen = TimeDependentGenerator::constant(h, "h");
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let t = step_propagator(&gen, &grid, &StepScheme::ExpProduct(StepRule::Midpoint), Storage::Every(4)).unwrap();
        assert_eq!(t.stored_indices(), &[0, 4, 8, 10]);
        let f = step_propagator(&gen, &grid, &StepScheme::ExpProduct(StepRule::Midpoint), Storage::FinalOnly).unwrap();
        assert_eq!(f.stored_indices(), &[0, 10]);
        assert!(max_abs(&(f.final_matrix() - t.final_matrix())) == 0.0);
        assert_eq!(t.at(0).unwrap(), &CMatrix::identity(3, 3));
    }
}
