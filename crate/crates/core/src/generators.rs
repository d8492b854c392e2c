//! Time-dependent generators `A(t) = −iH(t)`, their bounded approximations,
//! resolvents and the stability / one-sided accretivity checkers.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::{c, norm_2, norm_fro, random_unit_vector, CMatrix, Spectral, C64, I};

pub type Profile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `profile(t) · operator` with the operator's decomposition computed once.
#[derive(Clone)]
pub struct GeneratorTerm {
    pub profile: Profile,
    pub operator: CMatrix,
    pub support: Option<(f64, f64)>,
    spectral: Spectral,
}

impl GeneratorTerm {
    /// `ρ(op)`.
    pub fn spectral_radius(&self) -> f64 {
        self.spectral.spectral_radius()
    }
}

#[derive(Clone, Debug)]
enum Frame {
    /// `e^{itH₀}` with `H₀ = diag(energies)`.
    Diagonal(Vec<f64>),
    General(Spectral),
}

/// `H(t) = base + Σ_i profile_i(t)·op_i`, optionally viewed in the frame
/// `e^{itH₀} H(t) e^{−itH₀}`.
#[derive(Clone)]
pub struct TimeDependentGenerator {
    dim: usize,
    base: Option<(CMatrix, Spectral)>,
    terms: Vec<GeneratorTerm>,
    frame: Option<Frame>,
    pub label: String,
}

impl fmt::Debug for TimeDependentGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeDependentGenerator")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("has_base", &self.base.is_some())
            .field("terms", &self.terms.len())
            .field("frame", &self.frame.is_some())
            .finish()
    }
}

fn check_hermitian(h: &CMatrix) {
    let tol = 1e-12 * (1.0 + crate::linalg::max_abs(h));
    assert!(
        h.is_square() && crate::linalg::hermitian_deviation(h) <= tol,
        "generator operators must be hermitian"
    );
}

impl TimeDependentGenerator {
    pub fn zero(dim: usize, label: impl Into<String>) -> Self {
        TimeDependentGenerator {
            dim,
            base: None,
            terms: Vec::new(),
            frame: None,
            label: label.into(),
        }
    }

    pub fn constant(h: CMatrix, label: impl Into<String>) -> Self {
        let dim = h.nrows();
        TimeDependentGenerator::zero(dim, label).with_base(h)
    }

    pub fn with_base(mut self, h: CMatrix) -> Self {
        check_hermitian(&h);
        assert_eq!(h.nrows(), self.dim);
        let sp = Spectral::of_hermitian(&h);
        self.base = Some((h, sp));
        self
    }

    /// Adds `profile(t)·op`; `support` is the closed hull outside of which the
    /// profile is identically zero, if any.
    pub fn with_term(
        mut self,
        profile: Profile,
        operator: CMatrix,
        support: Option<(f64, f64)>,
    ) -> Self {
        check_hermitian(&operator);
        assert_eq!(operator.nrows(), self.dim);
        let spectral = Spectral::of_hermitian(&operator);
        self.terms.push(GeneratorTerm {
            profile,
            operator,
            support,
            spectral,
        });
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[GeneratorTerm] {
        &self.terms
    }

    pub fn has_base(&self) -> bool {
        self.base.is_some()
    }

    /// Exactly zero at `t` (no constant part and every profile vanishes).
    pub fn is_zero_at(&self, t: f64) -> bool {
        self.base.is_none() && self.terms.iter().all(|term| (term.profile)(t) == 0.0)
    }

    /// Hull of the term supports when the generator vanishes outside it.
    pub fn time_support(&self) -> Option<(f64, f64)> {
        if self.base.is_some() {
            return None;
        }
        let mut hull: Option<(f64, f64)> = None;
        for term in &self.terms {
            let (lo, hi) = term.support?;
            hull = Some(match hull {
                Some((a, b)) => (a.min(lo), b.max(hi)),
                None => (lo, hi),
            });
        }
        hull
    }

    fn raw_hamiltonian(&self, t: f64) -> CMatrix {
        let mut h = match &self.base {
            Some((b, _)) => b.clone(),
            None => CMatrix::zeros(self.dim, self.dim),
        };
        for term in &self.terms {
            let s = (term.profile)(t);
            if s != 0.0 {
                h += &term.operator * c(s);
            }
        }
        h
    }

    fn frame_phases(energies: &[f64], t: f64) -> Vec<C64> {
        energies.iter().map(|e| (I * (e * t)).exp()).collect()
    }

    pub fn hamiltonian(&self, t: f64) -> CMatrix {
        let h = self.raw_hamiltonian(t);
        match &self.frame {
            None => h,
            Some(Frame::Diagonal(e)) => {
                let ph = Self::frame_phases(e, t);
                CMatrix::from_fn(self.dim, self.dim, |i, j| h[(i, j)] * ph[i] * ph[j].conj())
            }
            Some(Frame::General(sp)) => {
                let w = sp.function(|v| (I * (v * t)).exp());
                &w * h * w.adjoint()
            }
        }
    }

    /// `A(t) = −iH(t)`.
    pub fn generator(&self, t: f64) -> CMatrix {
        self.hamiltonian(t) * (-I)
    }

    /// Spectral decomposition of `H(t)`. Reuses the precomputed term
    /// decomposition when a single term is active and there is no constant
    /// part; otherwise diagonalizes.
    pub fn spectral(&self, t: f64) -> Spectral {
        let active: Vec<(usize, f64)> = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, term)| (i, (term.profile)(t)))
            .filter(|&(_, s)| s != 0.0)
            .collect();
        let sp = match (&self.base, active.as_slice()) {
            (None, []) => Spectral::zero(self.dim),
            (None, [(i, s)]) => self.terms[*i].spectral.scaled(*s),
            (Some((_, b)), []) => b.clone(),
            _ => Spectral::of_hermitian(&self.raw_hamiltonian(t)),
        };
        match &self.frame {
            None => sp,
            Some(Frame::Diagonal(e)) => sp.in_frame(&Self::frame_phases(e, t)),
            Some(Frame::General(h0)) => sp.conjugated(&h0.function(|v| (I * (v * t)).exp())),
        }
    }

    /// `t ↦ e^{itH₀} H(t) e^{−itH₀}`.
    pub fn dirac_picture(&self, h0: &CMatrix) -> Self {
        assert!(self.frame.is_none(), "generator is already in an interaction frame");
        check_hermitian(h0);
        let n = h0.nrows();
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || h0[(i, j)] == c(0.0)));
        let frame = if diagonal {
            Frame::Diagonal((0..n).map(|i| h0[(i, i)].re).collect())
        } else {
            Frame::General(Spectral::of_hermitian(h0))
        };
        TimeDependentGenerator {
            frame: Some(frame),
            label: alloc::format!("{} (interaction picture)", self.label),
            ..self.clone()
        }
    }

    /// Largest spectral radius of `H(t)` over the given times.
    pub fn max_spectral_radius(&self, times: impl IntoIterator<Item = f64>) -> f64 {
        times
            .into_iter()
            .map(|t| self.spectral(t).spectral_radius())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApproximationKind {
    Yosida,
    SpectralCutoff,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApproximationScheme {
    pub kind: ApproximationKind,
    pub level: f64,
}

/// `(λ − A)^{−1}` with a residual check.
pub fn resolvent(a: &CMatrix, lambda: C64) -> Result<CMatrix> {
    let d = a.nrows();
    let shifted = CMatrix::identity(d, d) * lambda - a;
    let singular = || Error::NearSingularResolvent {
        lambda_re: lambda.re,
        lambda_im: lambda.im,
        residual: f64::INFINITY,
    };
    let r = crate::linalg::inverse(&shifted).ok_or_else(singular)?;
    let residual = norm_fro(&(&shifted * &r - CMatrix::identity(d, d)));
    if !(residual <= 1e-10) {
        return Err(Error::NearSingularResolvent {
            lambda_re: lambda.re,
            lambda_im: lambda.im,
            residual,
        });
    }
    Ok(r)
}

/// Yosida approximation `A_n = n A (n − A)^{−1}`.
pub fn yosida_approx(a: &CMatrix, n: f64) -> Result<CMatrix> {
    if !(n > 0.0) {
        return Err(invalid("Yosida level must be positive"));
    }
    let r = resolvent(a, c(n))?;
    Ok(a * r * c(n))
}

/// `H_n`: eigenvalues of `H` clipped to `[−n, n]` in the eigenbasis of `H`.
pub fn spectral_cutoff_approx(h: &CMatrix, n: f64) -> CMatrix {
    Spectral::of_hermitian(h).clipped(n).to_matrix()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub m: f64,
    pub omega: f64,
    pub lambda: f64,
    /// `‖Π_{j≤k} R(λ, A(t_j))‖` for every prefix length `k = 1, 2, …`.
    pub product_norms: Vec<f64>,
    pub bounds: Vec<f64>,
    /// Length of the first prefix exceeding its bound.
    pub first_violation: Option<usize>,
    pub pass: bool,
}

/// Checks `‖R(λ,A(t_k))⋯R(λ,A(t_1))‖ ≤ M(λ−ω)^{−k}` for every prefix of an
/// ordered list of times (later times act on the left).
pub fn kato_stability_check(
    gen: &TimeDependentGenerator,
    times: &[f64],
    lambda: f64,
    m: f64,
    omega: f64,
) -> Result<StabilityReport> {
    if !(lambda > omega) {
        return Err(invalid("Kato check needs lambda > omega"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("Kato check needs ordered times"));
    }
    let d = gen.dim();
    let mut product = CMatrix::identity(d, d);
    let mut product_norms = Vec::with_capacity(times.len());
    let mut bounds = Vec::with_capacity(times.len());
    let mut first_violation = None;
    for (k, &t) in times.iter().enumerate() {
        product = resolvent(&gen.generator(t), c(lambda))? * product;
        let norm = norm_2(&product);
        let bound = m * (lambda - omega).powi(-(k as i32 + 1));
        if first_violation.is_none() && norm > bound + 1e-9 {
            first_violation = Some(k + 1);
        }
        product_norms.push(norm);
        bounds.push(bound);
    }
    Ok(StabilityReport {
        m,
        omega,
        lambda,
        product_norms,
        bounds,
        pass: first_violation.is_none(),
        first_violation,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SohrConfig {
    pub beta: f64,
    pub k: f64,
    pub interval: (f64, f64),
    /// Evaluation times, evenly spaced over the closed interval.
    pub samples: usize,
    /// Finite-difference step; `None` means `1e−4 ·` interval length.
    pub delta: Option<f64>,
    pub random_probes: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl SohrConfig {
    pub fn new(beta: f64, k: f64, interval: (f64, f64)) -> Self {
        SohrConfig {
            beta,
            k,
            interval,
            samples: 41,
            delta: None,
            random_probes: 16,
            seed: 0,
            tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SohrReport {
    /// `min_{x,t} ½ d/dt⟨x,(β+H)^{−1}x⟩ + k⟨x,(β+H)^{−1}x⟩` over the probes.
    pub min_value: f64,
    pub argmin_time: f64,
    /// Probe index: basis vectors first, then the random probes.
    pub argmin_probe: usize,
    /// Lowest eigenvalue of the form operator over all sampled times.
    pub min_form_eigenvalue: f64,
    pub derivative_error: f64,
    /// `min_t` lowest eigenvalue of `β + H(t)`.
    pub lowest_shifted: f64,
    pub pass: bool,
}

/// One-sided condition `½ d/dt (x,(β+H(t))^{−1}x) + k (x,(β+H(t))^{−1}x) ≥ 0`
/// evaluated by central differences with one Richardson halving.
pub fn sohr_condition_check(gen: &TimeDependentGenerator, cfg: &SohrConfig) -> Result<SohrReport> {
    let (a, b) = cfg.interval;
    if !(b > a) || cfg.samples < 1 {
        return Err(invalid("Sohr check needs a nonempty interval and samples"));
    }
    let delta = cfg.delta.unwrap_or(1e-4 * (b - a));
    let d = gen.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let randoms: Vec<_> = (0..cfg.random_probes)
        .map(|_| random_unit_vector(&mut rng, d))
        .collect();

    let mut lowest_shifted = f64::INFINITY;
    let mut inverse_at = |t: f64| -> Result<CMatrix> {
        let sp = gen.spectral(t);
        let low = cfg.beta + sp.lowest();
        lowest_shifted = lowest_shifted.min(low);
        if low < 1.0 {
            return Err(Error::LowerBoundViolated { time: t, lowest: low });
        }
        Ok(sp.function(|v| c(1.0 / (cfg.beta + v))))
    };

    let mut report = SohrReport {
        min_value: f64::INFINITY,
        argmin_time: a,
        argmin_probe: 0,
        min_form_eigenvalue: f64::INFINITY,
        derivative_error: 0.0,
        lowest_shifted: f64::INFINITY,
        pass: false,
    };
    let steps = cfg.samples.max(2) - 1;
    for i in 0..cfg.samples {
        let t = if cfg.samples == 1 {
            0.5 * (a + b)
        } else {
            a + (b - a) * i as f64 / steps as f64
        };
        let f = inverse_at(t)?;
        let coarse = (inverse_at(t + delta)? - inverse_at(t - delta)?) * c(0.5 / delta);
        let fine = (inverse_at(t + 0.5 * delta)? - inverse_at(t - 0.5 * delta)?) * c(1.0 / delta);
        let derivative = (&fine * c(4.0) - &coarse) * c(1.0 / 3.0);
        report.derivative_error = report.derivative_error.max(norm_2(&(&fine - &coarse)) / 3.0);
        let form = crate::linalg::hermitian_part(&(derivative * c(0.5) + &f * c(cfg.k)));

        for p in 0..d {
            let v = form[(p, p)].re;
            if v < report.min_value {
                report.min_value = v;
                report.argmin_time = t;
                report.argmin_probe = p;
            }
        }
        for (r, x) in randoms.iter().enumerate() {
            let v = (x.adjoint() * &form * x)[(0, 0)].re;
            if v < report.min_value {
                report.min_value = v;
                report.argmin_time = t;
                report.argmin_probe = d + r;
            }
        }
        report.min_form_eigenvalue = report
            .min_form_eigenvalue
            .min(Spectral::of_hermitian(&form).lowest());
    }
    report.lowest_shifted = lowest_shifted;
    report.pass = report.min_value >= -cfg.tolerance && report.min_form_eigenvalue >= -cfg.tolerance;
    Ok(report)
}

/// Interaction-picture generator `t ↦ e^{itH₀} V(t) e^{−itH₀}`.
pub fn dirac_picture(gen: &TimeDependentGenerator, h0: &CMatrix) -> TimeDependentGenerator {
    gen.dirac_picture(h0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, random_hermitian};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn resolvent_scalar_cases() {
        let one = CMatrix::identity(1, 1);
        let r = resolvent(&CMatrix::zeros(1, 1), c(1.0)).unwrap();
        assert!(max_abs(&(r - &one)) < 1e-15);
        let a = CMatrix::from_element(1, 1, -I);
        let r = resolvent(&a, c(1.0)).unwrap();
        assert!((r[(0, 0)] - C64::new(0.5, -0.5)).norm() < 1e-15);
        let sing = resolvent(&CMatrix::identity(2, 2), c(1.0));
        assert!(matches!(sing, Err(Error::NearSingularResolvent { .. })));
    }

    #[test]
    fn resolvent_of_skew_hermitian_is_contractive_scaled() {
        let h = random_hermitian(&mut rng(1), 6, 2.0);
        let a = &h * (-I);
        for lambda in [0.1, 1.0, 7.0] {
            let r = resolvent(&a, c(lambda)).unwrap();
            assert!(norm_2(&r) <= 1.0 / lambda + 1e-12);
        }
    }

    #[test]
    fn yosida_scalar_and_convergence() {
        let a = CMatrix::from_element(1, 1, -I);
        let a1 = yosida_approx(&a, 1.0).unwrap();
        assert!((a1[(0, 0)] - C64::new(-0.5, -0.5)).norm() < 1e-15);

        let h = random_hermitian(&mut rng(2), 5, 1.0);
        let a = &h * (-I);
        let norm_a = norm_2(&a);
        for n in [100.0 * norm_a, 1000.0 * norm_a] {
            let an = yosida_approx(&a, n).unwrap();
            assert!(norm_2(&(&an - &a)) <= 2.0 * norm_a * norm_a / n);
            assert!(norm_2(&an) <= n * (1.0 + 1e-12));
            let herm_part = crate::linalg::hermitian_part(&an);
            assert!(Spectral::of_hermitian(&herm_part).highest() <= 1e-12);
        }
    }

    #[test]
    fn spectral_cutoff_clips() {
        let h = crate::linalg::real_diag(&[-5.0, 2.0]);
        let hn = spectral_cutoff_approx(&h, 3.0);
        let mut vals: Vec<f64> = Spectral::of_hermitian(&hn).values().to_vec();
        vals.sort_by(f64::total_cmp);
        assert!((vals[0] + 3.0).abs() < 1e-14 && (vals[1] - 2.0).abs() < 1e-14);

        let h = random_hermitian(&mut rng(3), 6, 1.0);
        let rho = Spectral::of_hermitian(&h).spectral_radius();
        assert!(max_abs(&(spectral_cutoff_approx(&h, rho) - &h)) < 1e-13);
        let hn = spectral_cutoff_approx(&h, 0.5 * rho);
        assert!(max_abs(&crate::linalg::commutator(&hn, &h)) < 1e-13);
    }

    #[test]
    fn spectral_cutoff_relative_bound() {
        let h = random_hermitian(&mut rng(4), 6, 3.0);
        let sp = Spectral::of_hermitian(&h);
        for n in [0.5, 1.0, 2.0] {
            let hn = sp.clipped(n).to_matrix();
            for j in 0..6 {
                let y = CMatrix::identity(6, 6).column(j).into_owned();
                let lhs = crate::linalg::vector_norm(&(&hn * &y));
                let rhs = crate::linalg::vector_norm(&(&h * &y)) + 1.0;
                assert!(lhs <= (1.0 + 1e-9) * rhs);
            }
        }
    }

    #[test]
    fn kato_contractive_family_passes() {
        let h = random_hermitian(&mut rng(5), 4, 1.0);
        let b = random_hermitian(&mut rng(6), 4, 1.0);
        let gen = TimeDependentGenerator::constant(h, "h").with_term(Arc::new(|t| t), b, None);
        let times: Vec<f64> = (0..8).map(|i| 0.1 * i as f64).collect();
        let rep = kato_stability_check(&gen, &times, 0.7, 1.0, 0.0).unwrap();
        assert!(rep.pass);

        let zero = TimeDependentGenerator::zero(1, "0");
        let rep = kato_stability_check(&zero, &[0.0], 1.0, 1.0, 0.0).unwrap();
        assert!(rep.pass && (rep.product_norms[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kato_detects_tiny_constant() {
        let h = random_hermitian(&mut rng(7), 4, 1.0);
        let b = random_hermitian(&mut rng(8), 4, 50.0);
        let gen = TimeDependentGenerator::constant(h, "h").with_term(Arc::new(|t| t), b, None);
        let times = [0.0, 0.5, 1.0];
        let rep = kato_stability_check(&gen, &times, 1.0, 0.05, 0.0).unwrap();
        assert!(!rep.pass);
        assert_eq!(rep.first_violation, Some(1));
    }

    #[test]
    fn sohr_time_independent_holds_with_zero_k() {
        let h = random_hermitian(&mut rng(9), 5, 1.0);
        let gen = TimeDependentGenerator::constant(h, "h");
        let rep = sohr_condition_check(&gen, &SohrConfig::new(10.0, 0.0, (0.0, 1.0))).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.min_value.abs() < 1e-8);
        let rep = sohr_condition_check(&gen, &SohrConfig::new(10.0, 1.0, (0.0, 1.0))).unwrap();
        assert!(rep.min_value > 0.0);
    }

    #[test]
    fn sohr_rejects_small_beta() {
        let gen = TimeDependentGenerator::constant(crate::linalg::real_diag(&[-3.0, 1.0]), "h");
        let err = sohr_condition_check(&gen, &SohrConfig::new(2.0, 0.0, (0.0, 1.0)));
        assert!(matches!(err, Err(Error::LowerBoundViolated { .. })));
    }

    #[test]
    fn dirac_picture_properties() {
        let h0 = crate::linalg::real_diag(&[0.0, 1.0, 2.5]);
        let v = random_hermitian(&mut rng(10), 3, 1.0);
        let support = Some((-1.0, 1.0));
        let profile: Profile = Arc::new(|t: f64| if t.abs() < 1.0 { 1.0 - t * t } else { 0.0 });
        let gen = TimeDependentGenerator::zero(3, "v").with_term(profile, v.clone(), support);
        let d = gen.dirac_picture(&h0);
        assert!(d.is_zero_at(1.5));
        assert!(max_abs(&d.hamiltonian(1.5)) == 0.0);

        let t = 0.4;
        let hd = d.hamiltonian(t);
        let w = Spectral::of_hermitian(&h0).function(|e| (I * (e * t)).exp());
        let expect = &w * gen.hamiltonian(t) * w.adjoint();
        assert!(max_abs(&(&hd - &expect)) < 1e-14);
        assert!(crate::linalg::hermitian_deviation(&hd) < 1e-14);
        assert!((norm_2(&hd) - norm_2(&gen.hamiltonian(t))).abs() < 1e-12);
        assert!(max_abs(&(d.spectral(t).to_matrix() - &hd)) < 1e-13);

        // commuting case leaves V unchanged
        let vd = crate::linalg::real_diag(&[0.3, -0.2, 0.1]);
        let g2 = TimeDependentGenerator::zero(3, "diag")
            .with_term(Arc::new(|_| 1.0), vd.clone(), None)
            .dirac_picture(&h0);
        assert!(max_abs(&(g2.hamiltonian(0.7) - vd)) < 1e-15);
    }

    #[test]
    fn general_frame_matches_diagonal_frame() {
        let h0 = random_hermitian(&mut rng(11), 4, 1.0);
        let v = random_hermitian(&mut rng(12), 4, 1.0);
        let gen = TimeDependentGenerator::zero(4, "v").with_term(Arc::new(|t: f64| t.cos()), v, None);
        let d = gen.dirac_picture(&h0);
        let t = 0.8;
        let w = Spectral::of_hermitian(&h0).function(|e| (I * (e * t)).exp());
        let expect = &w * gen.hamiltonian(t) * w.adjoint();
        assert!(max_abs(&(d.hamiltonian(t) - &expect)) < 1e-13);
        assert!(max_abs(&(d.spectral(t).to_matrix() - &expect)) < 1e-13);
    }
}
