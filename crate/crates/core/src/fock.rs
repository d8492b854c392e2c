//! Truncated bosonic Fock space of a scalar field in a periodic box: occupation
//! basis, ladder operators, free Hamiltonian, field, Wick powers and the
//! localized polynomial interaction.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::linalg::{c, hermitian_deviation, max_abs, norm_2, real_diag, CMatrix, Spectral, C64};
use crate::localization::LocalizationFunction;

pub const DEFAULT_DIMENSION_CAP: usize = 20_000;

#[derive(Clone, Debug, PartialEq)]
pub struct TruncationParams {
    pub mass: f64,
    pub box_length: f64,
    /// Modes `j ∈ {−K, …, K}` with momenta `k_j = 2πj/L`.
    pub mode_cutoff: usize,
    /// Maximum total particle number.
    pub n_max: usize,
    /// Spatial lattice points, spacing `L / x_points`.
    pub x_points: usize,
}

impl TruncationParams {
    pub fn new(
        mass: f64,
        box_length: f64,
        mode_cutoff: usize,
        n_max: usize,
        x_points: usize,
    ) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(invalid(alloc::format!("mass must be positive, got {mass}")));
        }
        if !(box_length > 0.0) || !box_length.is_finite() {
            return Err(invalid(alloc::format!(
                "box_length must be positive, got {box_length}"
            )));
        }
        if x_points == 0 {
            return Err(invalid("x_points must be positive"));
        }
        Ok(TruncationParams {
            mass,
            box_length,
            mode_cutoff,
            n_max,
            x_points,
        })
    }

    pub fn n_modes(&self) -> usize {
        2 * self.mode_cutoff + 1
    }

    pub fn modes(&self) -> impl Iterator<Item = i64> {
        let k = self.mode_cutoff as i64;
        -k..=k
    }

    pub fn mode_index(&self, j: i64) -> Result<usize> {
        let k = self.mode_cutoff as i64;
        if j < -k || j > k {
            return Err(Error::ModeOutOfRange {
                mode: j,
                cutoff: self.mode_cutoff,
            });
        }
        Ok((j + k) as usize)
    }

    pub fn mode_of_index(&self, idx: usize) -> i64 {
        idx as i64 - self.mode_cutoff as i64
    }

    pub fn momentum(&self, j: i64) -> f64 {
        2.0 * PI * j as f64 / self.box_length
    }

    /// `μ(k_j) = (k_j² + m²)^{1/2}`.
    pub fn energy(&self, j: i64) -> f64 {
        let k = self.momentum(j);
        (k * k + self.mass * self.mass).sqrt()
    }

    /// `(2 L μ(k_j))^{-1/2}`.
    pub fn field_coefficient(&self, j: i64) -> f64 {
        (2.0 * self.box_length * self.energy(j)).sqrt().recip()
    }

    /// `⟨Ω|φ(x)²|Ω⟩ = Σ_j (2Lμ_j)^{-1}`.
    pub fn c_trunc(&self) -> f64 {
        self.modes().map(|j| self.field_coefficient(j).powi(2)).sum()
    }

    pub fn spacing(&self) -> f64 {
        self.box_length / self.x_points as f64
    }

    pub fn lattice_point(&self, m: usize) -> f64 {
        m as f64 * self.spacing()
    }

    pub fn lattice_index(&self, x: f64) -> Result<usize> {
        let dx = self.spacing();
        let r = x / dx;
        let m = r.round();
        if (r - m).abs() > 1e-9 * (1.0 + r.abs()) {
            return Err(Error::OffLatticePosition { x, spacing: dx });
        }
        Ok((m as i64).rem_euclid(self.x_points as i64) as usize)
    }

    /// `C(M + n_max, n_max)`, saturating.
    pub fn dimension(&self) -> u128 {
        binomial_u128(self.n_modes() + self.n_max, self.n_max)
    }

    pub fn with_mode_cutoff(&self, mode_cutoff: usize) -> Self {
        TruncationParams {
            mode_cutoff,
            ..self.clone()
        }
    }

    pub fn with_n_max(&self, n_max: usize) -> Self {
        TruncationParams {
            n_max,
            ..self.clone()
        }
    }
}

fn binomial_u128(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    let mut r: u128 = 1;
    for i in 0..k {
        r = match r.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    r
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut r = 1.0;
    for i in 0..k.min(n - k) {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

/// Occupation vectors `(n_{−K}, …, n_K)` with total at most `n_max`, graded by
/// total particle number and lexicographically ascending within a grade.
/// Index 0 is the vacuum.
#[derive(Clone, Debug)]
pub struct OccupationBasis {
    mode_cutoff: usize,
    n_max: usize,
    states: Vec<Vec<u32>>,
    index: BTreeMap<Vec<u32>, usize>,
}

pub fn build_basis(params: &TruncationParams) -> Result<OccupationBasis> {
    OccupationBasis::build(params, DEFAULT_DIMENSION_CAP)
}

impl OccupationBasis {
    pub fn build(params: &TruncationParams, cap: usize) -> Result<Self> {
        let dimension = params.dimension();
        if dimension > cap as u128 {
            return Err(Error::DimensionCapExceeded { dimension, cap });
        }
        let m = params.n_modes();
        let mut states = Vec::with_capacity(dimension as usize);
        let mut scratch = vec![0u32; m];
        for total in 0..=params.n_max {
            compositions(&mut scratch, 0, total as u32, &mut states);
        }
        let index = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(OccupationBasis {
            mode_cutoff: params.mode_cutoff,
            n_max: params.n_max,
            states,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn n_modes(&self) -> usize {
        2 * self.mode_cutoff + 1
    }

    pub fn mode_cutoff(&self) -> usize {
        self.mode_cutoff
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn states(&self) -> &[Vec<u32>] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[u32] {
        &self.states[i]
    }

    pub fn index_of(&self, occupations: &[u32]) -> Option<usize> {
        self.index.get(occupations).copied()
    }

    pub fn total(&self, i: usize) -> usize {
        self.states[i].iter().sum::<u32>() as usize
    }

    fn mode_slot(&self, j: i64) -> Result<usize> {
        let k = self.mode_cutoff as i64;
        if j < -k || j > k {
            return Err(Error::ModeOutOfRange {
                mode: j,
                cutoff: self.mode_cutoff,
            });
        }
        Ok((j + k) as usize)
    }

    /// Basis index of the state with the listed mode occupations.
    pub fn index_of_modes(&self, occupied: &[(i64, u32)]) -> Result<Option<usize>> {
        let mut occ = vec![0u32; self.n_modes()];
        for &(j, n) in occupied {
            occ[self.mode_slot(j)?] += n;
        }
        Ok(self.index_of(&occ))
    }
}

fn compositions(scratch: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == scratch.len() {
        scratch[pos] = remaining;
        out.push(scratch.to_vec());
        return;
    }
    for v in 0..=remaining {
        scratch[pos] = v;
        compositions(scratch, pos + 1, remaining - v, out);
    }
    scratch[pos] = 0;
}

#[derive(Clone, Debug)]
pub struct FockOperator {
    pub matrix: CMatrix,
    pub hermitian: bool,
    pub label: String,
    /// Largest `|M − M†|` entry before symmetrization; zero for operators
    /// that are hermitian by construction or not flagged hermitian.
    pub symmetrization_deviation: f64,
}

impl FockOperator {
    pub fn general(matrix: CMatrix, label: impl Into<String>) -> Self {
        FockOperator {
            matrix,
            hermitian: false,
            label: label.into(),
            symmetrization_deviation: 0.0,
        }
    }

    /// Replaces `M` by `(M + M†)/2` and records the deviation removed.
    pub fn symmetrized(matrix: CMatrix, label: impl Into<String>) -> Self {
        let deviation = hermitian_deviation(&matrix);
        FockOperator {
            matrix: crate::linalg::hermitian_part(&matrix),
            hermitian: true,
            label: label.into(),
            symmetrization_deviation: deviation,
        }
    }

    pub fn hermiticity_ok(&self) -> bool {
        !self.hermitian
            || hermitian_deviation(&self.matrix) <= 1e-12 * (1.0 + max_abs(&self.matrix))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn creation_op(basis: &OccupationBasis, j: i64) -> Result<FockOperator> {
    let slot = basis.mode_slot(j)?;
    let d = basis.dim();
    let mut m = CMatrix::zeros(d, d);
    let mut occ = vec![0u32; basis.n_modes()];
    for col in 0..d {
        occ.copy_from_slice(basis.state(col));
        let n = occ[slot];
        occ[slot] += 1;
        if let Some(row) = basis.index_of(&occ) {
            m[(row, col)] = c(((n + 1) as f64).sqrt());
        }
    }
    Ok(FockOperator::general(m, alloc::format!("a+[{j}]")))
}

pub fn annihilation_op(basis: &OccupationBasis, j: i64) -> Result<FockOperator> {
    let a_dag = creation_op(basis, j)?;
    Ok(FockOperator::general(
        a_dag.matrix.adjoint(),
        alloc::format!("a[{j}]"),
    ))
}

pub fn number_op(basis: &OccupationBasis) -> FockOperator {
    let values: Vec<f64> = (0..basis.dim()).map(|i| basis.total(i) as f64).collect();
    FockOperator {
        matrix: real_diag(&values),
        hermitian: true,
        label: "N".into(),
        symmetrization_deviation: 0.0,
    }
}

/// Diagonal of `H₀`: `Σ_j n_j μ(k_j)` per basis state.
pub fn free_energies(params: &TruncationParams, basis: &OccupationBasis) -> Vec<f64> {
    let mu: Vec<f64> = params.modes().map(|j| params.energy(j)).collect();
    basis
        .states()
        .iter()
        .map(|s| s.iter().zip(&mu).map(|(&n, e)| n as f64 * e).sum())
        .collect()
}

pub fn free_hamiltonian(params: &TruncationParams, basis: &OccupationBasis) -> FockOperator {
    FockOperator {
        matrix: real_diag(&free_energies(params, basis)),
        hermitian: true,
        label: "H0".into(),
        symmetrization_deviation: 0.0,
    }
}

/// Diagonal of the total momentum `Σ_j n_j k_j`.
pub fn total_momenta(params: &TruncationParams, basis: &OccupationBasis) -> Vec<f64> {
    let k: Vec<f64> = params.modes().map(|j| params.momentum(j)).collect();
    basis
        .states()
        .iter()
        .map(|s| s.iter().zip(&k).map(|(&n, k)| n as f64 * k).sum())
        .collect()
}

/// Unitary `exp(−i·shift·P)` implementing `x ↦ x + shift`:
/// `T φ(x) T† = φ(x + shift)`.
pub fn translation_op(params: &TruncationParams, basis: &OccupationBasis, shift: f64) -> CMatrix {
    let phases: Vec<C64> = total_momenta(params, basis)
        .iter()
        .map(|p| C64::new(0.0, -shift * p).exp())
        .collect();
    crate::linalg::diag(&phases)
}

pub fn field_op(params: &TruncationParams, basis: &OccupationBasis, x: f64) -> Result<FockOperator> {
    params.lattice_index(x)?;
    let w = WickKernel::plane_wave(params, 1, 0, x);
    let b = w.operator(basis);
    let phi = &b + b.adjoint();
    Ok(FockOperator {
        matrix: phi,
        hermitian: true,
        label: alloc::format!("phi({x})"),
        symmetrization_deviation: 0.0,
    })
}

/// Coefficients `a_p` of `P(λ) = Σ_p a_p λ^p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    pub coefficients: Vec<f64>,
}

impl Polynomial {
    pub fn new(coefficients: Vec<f64>) -> Self {
        Polynomial { coefficients }
    }

    pub fn monomial(power: usize, coefficient: f64) -> Self {
        let mut coefficients = vec![0.0; power + 1];
        coefficients[power] = coefficient;
        Polynomial { coefficients }
    }

    pub fn degree(&self) -> usize {
        self.coefficients
            .iter()
            .rposition(|&a| a != 0.0)
            .unwrap_or(0)
    }

    pub fn leading(&self) -> f64 {
        self.coefficients.get(self.degree()).copied().unwrap_or(0.0)
    }

    pub fn is_even(&self) -> bool {
        self.coefficients
            .iter()
            .enumerate()
            .all(|(p, &a)| p % 2 == 0 || a == 0.0)
    }

    pub fn coefficient(&self, p: usize) -> f64 {
        self.coefficients.get(p).copied().unwrap_or(0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Polynomial {
            coefficients: self.coefficients.iter().map(|a| a * s).collect(),
        }
    }
}

/// Kernel of the Wick monomial
/// `W = Σ w(c₁…c_m; a₁…a_n) a†_{c₁}⋯a†_{c_m} a_{a₁}⋯a_{a_n}`,
/// summed over ordered mode tuples. Values are stored row-major with the
/// creator tuple as the leading index; mode slots are `j + K`.
#[derive(Clone, Debug)]
pub struct WickKernel {
    pub creators: usize,
    pub annihilators: usize,
    pub n_modes: usize,
    pub values: Vec<C64>,
}

impl WickKernel {
    pub fn zeros(n_modes: usize, creators: usize, annihilators: usize) -> Self {
        WickKernel {
            creators,
            annihilators,
            n_modes,
            values: vec![C64::new(0.0, 0.0); n_modes.pow((creators + annihilators) as u32)],
        }
    }

    pub fn order(&self) -> usize {
        self.creators + self.annihilators
    }

    pub fn from_fn(
        n_modes: usize,
        creators: usize,
        annihilators: usize,
        mut f: impl FnMut(&[usize], &[usize]) -> C64,
    ) -> Self {
        let mut k = WickKernel::zeros(n_modes, creators, annihilators);
        let mut tuple = vec![0usize; creators + annihilators];
        for v in k.values.iter_mut() {
            *v = f(&tuple[..creators], &tuple[creators..]);
            advance(&mut tuple, n_modes);
        }
        k
    }

    /// Seeded kernel with independent uniform entries in the unit square.
    pub fn random<R: rand::Rng + ?Sized>(
        rng: &mut R,
        n_modes: usize,
        creators: usize,
        annihilators: usize,
    ) -> Self {
        WickKernel::from_fn(n_modes, creators, annihilators, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    /// `Π_c (2Lμ)^{-1/2} e^{−ik_c x} · Π_a (2Lμ)^{-1/2} e^{+ik_a x}`: the
    /// kernel of `B(x)^m A(x)^n` with `B = Σ c_j e^{−ik_jx} a†_j`, `A = B†`.
    pub fn plane_wave(params: &TruncationParams, creators: usize, annihilators: usize, x: f64) -> Self {
        let coef: Vec<C64> = params
            .modes()
            .map(|j| C64::new(0.0, -params.momentum(j) * x).exp() * params.field_coefficient(j))
            .collect();
        WickKernel::from_fn(params.n_modes(), creators, annihilators, |cr, an| {
            let mut w = c(1.0);
            for &s in cr {
                w *= coef[s];
            }
            for &s in an {
                w *= coef[s].conj();
            }
            w
        })
    }

    /// `‖w‖₂` over ordered tuples.
    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest deviation from invariance under permutations within the
    /// creator block and within the annihilator block.
    pub fn symmetry_deviation(&self) -> f64 {
        let sym = self.symmetrized();
        self.values
            .iter()
            .zip(&sym.values)
            .fold(0.0, |m: f64, (a, b)| m.max((a - b).norm()))
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetry_deviation() <= 1e-12 * (1.0 + self.values.iter().fold(0.0, |m: f64, v| m.max(v.norm())))
    }

    /// Average over permutations within each block. Leaves the operator
    /// unchanged.
    pub fn symmetrized(&self) -> Self {
        let (m, n, modes) = (self.creators, self.annihilators, self.n_modes);
        let perms_c = permutations(m);
        let perms_a = permutations(n);
        let scale = 1.0 / (perms_c.len() * perms_a.len()) as f64;
        let mut out = WickKernel::zeros(modes, m, n);
        let mut tuple = vec![0usize; m + n];
        let mut permuted = vec![0usize; m + n];
        for idx in 0..self.values.len() {
            let mut acc = C64::new(0.0, 0.0);
            for pc in &perms_c {
                for pa in &perms_a {
                    for (i, &p) in pc.iter().enumerate() {
                        permuted[i] = tuple[p];
                    }
                    for (i, &p) in pa.iter().enumerate() {
                        permuted[m + i] = tuple[m + p];
                    }
                    acc += self.values[flat_index(&permuted, modes)];
                }
            }
            out.values[idx] = acc * scale;
            advance(&mut tuple, modes);
        }
        out
    }

    /// Matrix of the Wick monomial on the truncated basis: the exact
    /// compression `P W P`, since every term either stays inside the
    /// particle cap or leaves it.
    pub fn operator(&self, basis: &OccupationBasis) -> CMatrix {
        assert_eq!(self.n_modes, basis.n_modes(), "kernel and basis disagree on mode count");
        let d = basis.dim();
        let (m, n, modes) = (self.creators, self.annihilators, self.n_modes);
        let n_ann = modes.pow(n as u32);
        let n_cre = modes.pow(m as u32);
        let mut out = CMatrix::zeros(d, d);
        let mut occ = vec![0u32; modes];
        let mut ann = vec![0usize; n];
        let mut cre = vec![0usize; m];
        for col in 0..d {
            let total = basis.total(col);
            if total < n || total - n + m > basis.n_max() {
                continue;
            }
            ann.iter_mut().for_each(|s| *s = 0);
            for ai in 0..n_ann {
                occ.copy_from_slice(basis.state(col));
                let mut amp = 1.0;
                for &s in &ann {
                    if occ[s] == 0 {
                        amp = 0.0;
                        break;
                    }
                    amp *= (occ[s] as f64).sqrt();
                    occ[s] -= 1;
                }
                if amp != 0.0 {
                    let reduced = occ.clone();
                    cre.iter_mut().for_each(|s| *s = 0);
                    for ci in 0..n_cre {
                        let w = self.values[ci * n_ann + ai];
                        if w != C64::new(0.0, 0.0) {
                            occ.copy_from_slice(&reduced);
                            let mut a2 = amp;
                            for &s in &cre {
                                occ[s] += 1;
                                a2 *= (occ[s] as f64).sqrt();
                            }
                            let row = basis
                                .index_of(&occ)
                                .expect("particle count checked against cap");
                            out[(row, col)] += w * a2;
                        }
                        advance(&mut cre, modes);
                    }
                }
                advance(&mut ann, modes);
            }
        }
        out
    }
}

fn advance(tuple: &mut [usize], base: usize) {
    for s in tuple.iter_mut().rev() {
        *s += 1;
        if *s < base {
            return;
        }
        *s = 0;
    }
}

fn flat_index(tuple: &[usize], base: usize) -> usize {
    tuple.iter().fold(0, |acc, &s| acc * base + s)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

pub fn kernel_l2_norm(kernel: &WickKernel) -> f64 {
    kernel.l2_norm()
}

/// `:φ(x)^p: = Σ_r C(p,r) B(x)^r A(x)^{p−r}` assembled by normal ordering.
pub fn wick_power(
    params: &TruncationParams,
    basis: &OccupationBasis,
    p: usize,
    x: f64,
) -> Result<FockOperator> {
    params.lattice_index(x)?;
    let d = basis.dim();
    let mut m = CMatrix::zeros(d, d);
    for r in 0..=p {
        let k = WickKernel::plane_wave(params, r, p - r, x);
        m += k.operator(basis) * c(binomial(p, r));
    }
    Ok(FockOperator::symmetrized(m, alloc::format!(":phi^{p}({x}):")))
}

/// `Σ_j (−1)^j p!/((p−2j)! j! 2^j) c^j φ(x)^{p−2j}` built from the truncated
/// field matrix. Agrees with [`wick_power`] on the columns returned by
/// [`wick_interior_columns`].
pub fn wick_theorem_expansion(
    params: &TruncationParams,
    basis: &OccupationBasis,
    p: usize,
    x: f64,
) -> Result<CMatrix> {
    let phi = field_op(params, basis, x)?.matrix;
    let ct = params.c_trunc();
    let d = basis.dim();
    let mut powers = vec![CMatrix::identity(d, d)];
    for k in 1..=p {
        let next = &powers[k - 1] * &phi;
        powers.push(next);
    }
    let mut out = CMatrix::zeros(d, d);
    for j in 0..=p / 2 {
        let mut coef = 1.0;
        for i in (p - 2 * j + 1)..=p {
            coef *= i as f64;
        }
        for i in 1..=j {
            coef /= (2 * i) as f64;
        }
        if j % 2 == 1 {
            coef = -coef;
        }
        out += &powers[p - 2 * j] * c(coef * ct.powi(j as i32));
    }
    Ok(out)
}

/// Columns whose particle number leaves room for `p` more quanta.
pub fn wick_interior_columns(basis: &OccupationBasis, p: usize) -> Vec<usize> {
    (0..basis.dim())
        .filter(|&i| basis.total(i) + p <= basis.n_max())
        .collect()
}

/// `ĝ(n) = Δx Σ_m g(x_m) e^{−i k_n x_m}` for integer momentum labels `n`.
pub fn discrete_fourier(params: &TruncationParams, samples: &[f64], n: i64) -> C64 {
    let x_points = samples.len();
    let dx = params.box_length / x_points as f64;
    let mut acc = C64::new(0.0, 0.0);
    for (m, &g) in samples.iter().enumerate() {
        if g != 0.0 {
            let phase = -2.0 * PI * ((n * m as i64).rem_euclid(x_points as i64)) as f64 / x_points as f64;
            acc += C64::new(0.0, phase).exp() * g;
        }
    }
    acc * dx
}

/// Kernels of `Δx Σ_x g(x) :P(φ(x)):` for `g` given at the lattice points:
/// `w_{p,r}(c; a) = a_p C(p,r) Π c_j · ĝ(Σ j_c − Σ j_a)`, one kernel per
/// `(p, r)`. The field may be restricted to modes `|j| ≤ field_cutoff`; the
/// `p = 0` constant is returned separately.
pub fn interaction_kernels(
    params: &TruncationParams,
    poly: &Polynomial,
    samples: &[f64],
    field_cutoff: usize,
) -> (C64, Vec<WickKernel>) {
    let field_cutoff = field_cutoff.min(params.mode_cutoff);
    let k = params.mode_cutoff as i64;
    let modes = params.n_modes();
    let coef: Vec<f64> = params
        .modes()
        .map(|j| {
            if j.unsigned_abs() as usize <= field_cutoff {
                params.field_coefficient(j)
            } else {
                0.0
            }
        })
        .collect();
    let max_transfer = (poly.degree() as i64) * k;
    let g_hat: Vec<C64> = (-max_transfer..=max_transfer)
        .map(|n| discrete_fourier(params, samples, n))
        .collect();
    let constant = g_hat[max_transfer as usize] * poly.coefficient(0);
    let mut kernels = Vec::new();
    for p in 1..=poly.degree() {
        let a_p = poly.coefficient(p);
        if a_p == 0.0 {
            continue;
        }
        for r in 0..=p {
            let pref = a_p * binomial(p, r);
            kernels.push(WickKernel::from_fn(modes, r, p - r, |cr, an| {
                let mut w = pref;
                let mut transfer = 0i64;
                for &s in cr {
                    w *= coef[s];
                    transfer += s as i64 - k;
                }
                for &s in an {
                    w *= coef[s];
                    transfer -= s as i64 - k;
                }
                if w == 0.0 {
                    return C64::new(0.0, 0.0);
                }
                g_hat[(transfer + max_transfer) as usize] * w
            }));
        }
    }
    (constant, kernels)
}

/// `Δx Σ_x g(x) :P(φ(x)):` before symmetrization.
pub fn interaction_from_samples(
    params: &TruncationParams,
    basis: &OccupationBasis,
    poly: &Polynomial,
    samples: &[f64],
    field_cutoff: usize,
) -> CMatrix {
    let d = basis.dim();
    let (constant, kernels) = interaction_kernels(params, poly, samples, field_cutoff);
    let mut m = CMatrix::identity(d, d) * constant;
    for k in &kernels {
        m += k.operator(basis);
    }
    m
}

/// Terms of `g` grouped by the polynomial they carry, with their spatial
/// samples at time `t` summed per group.
pub fn polynomial_groups(
    g: &LocalizationFunction,
    default: &Polynomial,
    x_points: usize,
    t: f64,
) -> Vec<(Polynomial, Vec<f64>)> {
    let dx = g.box_length / x_points as f64;
    let mut groups: Vec<(Polynomial, Vec<f64>)> = Vec::new();
    for term in &g.terms {
        let tf = term.time_factor(t);
        if tf == 0.0 {
            continue;
        }
        let poly = term.polynomial.as_ref().unwrap_or(default);
        let slot = match groups.iter().position(|(p, _)| p == poly) {
            Some(i) => i,
            None => {
                groups.push((poly.clone(), vec![0.0; x_points]));
                groups.len() - 1
            }
        };
        for (m, s) in groups[slot].1.iter_mut().enumerate() {
            *s += tf * term.space_factor(m as f64 * dx, g.box_length);
        }
    }
    groups
}

fn check_box(params: &TruncationParams, g: &LocalizationFunction) -> Result<()> {
    if (g.box_length - params.box_length).abs() > 1e-12 * params.box_length {
        return Err(Error::GridMismatch(alloc::format!(
            "coupling defined on box {} but field on box {}",
            g.box_length,
            params.box_length
        )));
    }
    Ok(())
}

/// `V(t; g) = Δx Σ_x g(t,x) :P(φ(x)):`, symmetrized.
pub fn interaction_op(
    params: &TruncationParams,
    basis: &OccupationBasis,
    g: &LocalizationFunction,
    poly: &Polynomial,
    t: f64,
) -> Result<FockOperator> {
    interaction_op_with_field_cutoff(params, basis, g, poly, t, params.mode_cutoff)
}

/// As [`interaction_op`] with the field restricted to `|j| ≤ field_cutoff`
/// while the basis keeps all modes.
pub fn interaction_op_with_field_cutoff(
    params: &TruncationParams,
    basis: &OccupationBasis,
    g: &LocalizationFunction,
    poly: &Polynomial,
    t: f64,
    field_cutoff: usize,
) -> Result<FockOperator> {
    check_box(params, g)?;
    let d = basis.dim();
    let mut m = CMatrix::zeros(d, d);
    for (p, samples) in polynomial_groups(g, poly, params.x_points, t) {
        m += interaction_from_samples(params, basis, &p, &samples, field_cutoff);
    }
    Ok(FockOperator::symmetrized(m, alloc::format!("V({t})")))
}

/// Independent route to `V(t; g)`: lattice sum of Wick-power matrices.
pub fn interaction_op_pointwise(
    params: &TruncationParams,
    basis: &OccupationBasis,
    g: &LocalizationFunction,
    poly: &Polynomial,
    t: f64,
) -> Result<CMatrix> {
    check_box(params, g)?;
    let d = basis.dim();
    let dx = params.spacing();
    let mut out = CMatrix::zeros(d, d);
    for (p, samples) in polynomial_groups(g, poly, params.x_points, t) {
        for (m, &gx) in samples.iter().enumerate() {
            if gx == 0.0 {
                continue;
            }
            let x = params.lattice_point(m);
            out += CMatrix::identity(d, d) * c(gx * dx * p.coefficient(0));
            for power in 1..=p.degree() {
                let a = p.coefficient(power);
                if a != 0.0 {
                    out += wick_power(params, basis, power, x)?.matrix * c(gx * dx * a);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NBoundReport {
    pub creators: usize,
    pub annihilators: usize,
    /// `‖(N+1)^{−m/2} W (N+1)^{−n/2}‖₂`.
    pub measured: f64,
    pub kernel_norm: f64,
}

/// Weighted spectral norm `‖(N+1)^{−left/2} W (N+1)^{−right/2}‖₂`.
pub fn number_weighted_norm(basis: &OccupationBasis, w: &CMatrix, left: f64, right: f64) -> f64 {
    let weights: Vec<f64> = (0..basis.dim())
        .map(|i| basis.total(i) as f64 + 1.0)
        .collect();
    let mut m = w.clone();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            m[(i, j)] *= weights[i].powf(-0.5 * left) * weights[j].powf(-0.5 * right);
        }
    }
    norm_2(&m)
}

/// Checks `‖(N+1)^{−m/2} W (N+1)^{−n/2}‖ ≤ ‖w‖₂`; a violation means the
/// operator was not assembled from the kernel.
pub fn verify_n_bound(
    basis: &OccupationBasis,
    w: &CMatrix,
    kernel: &WickKernel,
    m: usize,
    n: usize,
) -> Result<NBoundReport> {
    let measured = number_weighted_norm(basis, w, m as f64, n as f64);
    let kernel_norm = kernel.l2_norm();
    if measured > kernel_norm * (1.0 + 1e-10) + 1e-300 {
        return Err(Error::BoundViolated {
            measured,
            bound: kernel_norm,
        });
    }
    Ok(NBoundReport {
        creators: m,
        annihilators: n,
        measured,
        kernel_norm,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CutoffRow {
    pub mode_cutoff: usize,
    pub dimension: usize,
    pub c_trunc: f64,
    pub lowest: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemiboundednessReport {
    /// Lowest eigenvalue of `H₀ + V(t;g)` at the configured cutoff.
    pub lowest: f64,
    /// `(a₀ − c_trunc·a₂)·Δx Σ g` for quadratic `P`; `None` otherwise.
    pub wick_shift_bound: Option<f64>,
    pub sweep: Vec<CutoffRow>,
    /// Lowest eigenvalue is non-increasing along the sweep.
    pub monotone: bool,
}

fn lowest_eigenvalue(
    params: &TruncationParams,
    g: &LocalizationFunction,
    poly: &Polynomial,
    t: f64,
) -> Result<(usize, f64)> {
    let basis = build_basis(params)?;
    let h0 = free_hamiltonian(params, &basis).matrix;
    let v = interaction_op(params, &basis, g, poly, t)?.matrix;
    Ok((basis.dim(), Spectral::of_hermitian(&(h0 + v)).lowest()))
}

/// Lowest eigenvalue of `H₀ + V(t;g)` for `g ≥ 0` and even `P` with positive
/// leading coefficient, plus the same quantity over a sweep of mode cutoffs.
pub fn semiboundedness_report(
    params: &TruncationParams,
    g: &LocalizationFunction,
    poly: &Polynomial,
    t: f64,
    cutoffs: &[usize],
) -> Result<SemiboundednessReport> {
    if !poly.is_even() || !(poly.leading() > 0.0) && poly.degree() > 0 {
        return Err(invalid("semiboundedness needs an even polynomial with positive leading coefficient"));
    }
    let samples = g.spatial_samples(t, params.x_points);
    if samples.iter().any(|&v| v < 0.0) {
        return Err(invalid("semiboundedness needs g >= 0"));
    }
    let (_, lowest) = lowest_eigenvalue(params, g, poly, t)?;
    let wick_shift_bound = (poly.degree() <= 2 && g.terms.iter().all(|t| t.polynomial.is_none())).then(|| {
        let l1: f64 = samples.iter().sum::<f64>() * params.spacing();
        (poly.coefficient(0) - params.c_trunc() * poly.coefficient(2)) * l1
    });
    let mut sweep = Vec::with_capacity(cutoffs.len());
    for &k in cutoffs {
        let pk = params.with_mode_cutoff(k);
        let (dimension, low) = lowest_eigenvalue(&pk, g, poly, t)?;
        sweep.push(CutoffRow {
            mode_cutoff: k,
            dimension,
            c_trunc: pk.c_trunc(),
            lowest: low,
        });
    }
    let monotone = sweep
        .windows(2)
        .all(|w| w[0].mode_cutoff >= w[1].mode_cutoff || w[1].lowest <= w[0].lowest + 1e-10);
    Ok(SemiboundednessReport {
        lowest,
        wick_shift_bound,
        sweep,
        monotone,
    })
}
