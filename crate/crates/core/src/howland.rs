//! Evolution semigroups on the discretized space `L²(I, X)`, `I = (a, b]`:
//! `(T(σ)f)(t) = U(t, t−σ) f(t−σ)`, zero where `t − σ ∉ I`.
//!
//! Functions are `d × n_t` matrices whose column `i − 1` holds `f(t_i)`,
//! `t_i = a + iΔt`, `i = 1..n_t`, with inner product `Δt Σ_i ⟨f_i, g_i⟩`.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::generators::TimeDependentGenerator;
use crate::linalg::{c, norm_2, norm_fro, CMatrix, CVector, C64};
use crate::stepper::{PropagatorTable, TimeGrid};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FunctionSpaceGrid {
    pub a: f64,
    pub b: f64,
    pub n_t: usize,
    pub dim: usize,
}

impl FunctionSpaceGrid {
    pub fn new(a: f64, b: f64, n_t: usize, dim: usize) -> Result<Self> {
        if !(b > a) || n_t == 0 || dim == 0 {
            return Err(crate::error::invalid("function space grid needs b > a, n_t > 0, dim > 0"));
        }
        Ok(FunctionSpaceGrid { a, b, n_t, dim })
    }

    /// The function space over the nodes of a propagator table.
    pub fn for_table(table: &PropagatorTable) -> Self {
        FunctionSpaceGrid {
            a: table.grid.t_start,
            b: table.grid.t_end,
            n_t: table.grid.n_steps,
            dim: table.dim(),
        }
    }

    pub fn dt(&self) -> f64 {
        (self.b - self.a) / self.n_t as f64
    }

    /// `t_i`, `i = 1..=n_t`.
    pub fn node(&self, i: usize) -> f64 {
        self.time_grid().node(i)
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid {
            t_start: self.a,
            t_end: self.b,
            n_steps: self.n_t,
        }
    }

    pub fn zeros(&self) -> CMatrix {
        CMatrix::zeros(self.dim, self.n_t)
    }

    /// `f(t_i) = profile(t_i) · y`.
    pub fn sample(&self, profile: impl Fn(f64) -> C64, y: &CVector) -> CMatrix {
        let mut f = self.zeros();
        for i in 1..=self.n_t {
            let s = profile(self.node(i));
            f.column_mut(i - 1).copy_from(&(y * s));
        }
        f
    }

    pub fn inner(&self, f: &CMatrix, g: &CMatrix) -> C64 {
        f.iter().zip(g.iter()).map(|(x, y)| x.conj() * y).sum::<C64>() * self.dt()
    }

    pub fn norm(&self, f: &CMatrix) -> f64 {
        norm_fro(f) * self.dt().sqrt()
    }
}

/// `T(σ)` for a grid-aligned shift `σ = s·Δt`, stored as the blocks
/// `U(t_i, t_{i−s})`, `i = s+1..=n_t`.
#[derive(Clone, Debug)]
pub struct EvolutionSemigroupOp {
    pub grid: FunctionSpaceGrid,
    pub shift_steps: usize,
    blocks: Vec<CMatrix>,
}

/// Lifts a propagator table (all nodes stored) to `T(σ)` on `L²(I, X)`.
pub fn lift(table: &PropagatorTable, sigma: f64) -> Result<EvolutionSemigroupOp> {
    let grid = FunctionSpaceGrid::for_table(table);
    let dt = grid.dt();
    let r = sigma / dt;
    let s = r.round();
    if sigma < 0.0 || (r - s).abs() > 1e-9 * (1.0 + r.abs()) {
        return Err(Error::ShiftNotGridAligned { shift: sigma, step: dt });
    }
    let s = s as usize;
    let mut blocks = Vec::new();
    for i in (s + 1)..=grid.n_t {
        blocks.push(table.between(i, i - s)?);
    }
    Ok(EvolutionSemigroupOp {
        grid,
        shift_steps: s,
        blocks,
    })
}

impl EvolutionSemigroupOp {
    pub fn sigma(&self) -> f64 {
        self.shift_steps as f64 * self.grid.dt()
    }

    /// `U(t_i, t_{i−s})` for `i > s`.
    pub fn block(&self, i: usize) -> Option<&CMatrix> {
        (i > self.shift_steps && i <= self.grid.n_t).then(|| &self.blocks[i - self.shift_steps - 1])
    }

    pub fn apply(&self, f: &CMatrix) -> CMatrix {
        let mut out = self.grid.zeros();
        let s = self.shift_steps;
        for i in (s + 1)..=self.grid.n_t {
            let src = f.column(i - s - 1);
            out.column_mut(i - 1).copy_from(&(self.block(i).unwrap() * src));
        }
        out
    }

    /// Dense `(n_t·d) × (n_t·d)` matrix, block `(i, j)` acting from node `j` to `i`.
    pub fn to_dense(&self) -> CMatrix {
        let d = self.grid.dim;
        let n = self.grid.n_t * d;
        let mut m = CMatrix::zeros(n, n);
        for i in (self.shift_steps + 1)..=self.grid.n_t {
            let j = i - self.shift_steps;
            m.view_mut(((i - 1) * d, (j - 1) * d), (d, d))
                .copy_from(self.block(i).unwrap());
        }
        m
    }
}

/// `f ↦ f` reshaped so that dense operators act on stacked columns.
pub fn stack(f: &CMatrix) -> CVector {
    CVector::from_column_slice(f.as_slice())
}

pub fn unstack(v: &CVector, grid: &FunctionSpaceGrid) -> CMatrix {
    CMatrix::from_column_slice(grid.dim, grid.n_t, v.as_slice())
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormReport {
    /// Spectral norm of the dense lifted operator (the uniform weight `Δt`
    /// cancels).
    pub operator_norm: f64,
    /// `sup ‖U(s, s−σ)‖` over node pairs inside `I`; 0 when `σ ≥ |I|`.
    pub sup_block_norm: f64,
}

pub fn semigroup_norm_check(op: &EvolutionSemigroupOp) -> NormReport {
    let sup_block_norm = op.blocks.iter().map(norm_2).fold(0.0, f64::max);
    let operator_norm = norm_2(&op.to_dense());
    NormReport {
        operator_norm,
        sup_block_norm,
    }
}

/// `max_f ‖T(σ)(φf) − (τ_σφ)·T(σ)f‖` over probe functions, for an arbitrary
/// operator standing in for `T(σ)`.
pub fn multiplication_commutation_check(
    grid: &FunctionSpaceGrid,
    apply: impl Fn(&CMatrix) -> CMatrix,
    shift_steps: usize,
    phi: &[f64],
    probes: &[CMatrix],
) -> f64 {
    assert_eq!(phi.len(), grid.n_t);
    let multiply = |weights: &dyn Fn(usize) -> f64, f: &CMatrix| {
        let mut out = f.clone();
        for i in 1..=grid.n_t {
            out.column_mut(i - 1).scale_mut(weights(i));
        }
        out
    };
    let phi_at = |i: usize| phi[i - 1];
    // (τ_σ φ)(t_i) = φ(t_{i−s}); irrelevant where T(σ)f vanishes
    let shifted_at = |i: usize| if i > shift_steps { phi[i - shift_steps - 1] } else { 0.0 };
    probes
        .iter()
        .map(|f| {
            let lhs = apply(&multiply(&phi_at, f));
            let rhs = multiply(&shifted_at, &apply(f));
            grid.norm(&(lhs - rhs))
        })
        .fold(0.0, f64::max)
}

/// A time-mixing operator `(Mf)_i = ½(f_i + f_{i−1})` that is not of
/// evolution-semigroup form; used as a negative control.
pub fn time_averaging(grid: &FunctionSpaceGrid, f: &CMatrix) -> CMatrix {
    let mut out = f * c(0.5);
    for i in 2..=grid.n_t {
        let prev = f.column(i - 2) * c(0.5);
        let mut col = out.column_mut(i - 1);
        col += prev;
    }
    out
}

/// `(R f)(t_i) = Δt Σ_{j≤i} e^{−λ(t_i−t_j)} U(t_i,t_j) f(t_j)` by the recursion
/// `R_i = e^{−λΔt} U(t_i,t_{i−1}) R_{i−1} + Δt f_i`.
pub fn semigroup_resolvent(table: &PropagatorTable, lambda: f64, f: &CMatrix) -> Result<CMatrix> {
    let grid = FunctionSpaceGrid::for_table(table);
    let dt = grid.dt();
    let decay = (-lambda * dt).exp();
    let mut out = grid.zeros();
    let mut prev = CVector::zeros(grid.dim);
    for i in 1..=grid.n_t {
        let fi = f.column(i - 1).into_owned();
        let next = if i == 1 {
            fi * c(dt)
        } else {
            table.between(i, i - 1)? * prev * c(decay) + fi * c(dt)
        };
        out.column_mut(i - 1).copy_from(&next);
        prev = next;
    }
    Ok(out)
}

/// Discrete generator `(G_d u)_i = −(u_i − u_{i−1})/Δt + A(t_i) u_i`, `u_0 = 0`.
pub fn discrete_generator(gen: &TimeDependentGenerator, grid: &FunctionSpaceGrid, u: &CMatrix) -> CMatrix {
    let dt = grid.dt();
    let mut out = grid.zeros();
    for i in 1..=grid.n_t {
        let ui = u.column(i - 1).into_owned();
        let prev = if i == 1 { CVector::zeros(grid.dim) } else { u.column(i - 2).into_owned() };
        let col = -(&ui - prev) * c(1.0 / dt) + gen.generator(grid.node(i)) * &ui;
        out.column_mut(i - 1).copy_from(&col);
    }
    out
}

/// `‖(λ − G_d) R f − f‖ / ‖f‖`.
pub fn generator_consistency_check(
    table: &PropagatorTable,
    gen: &TimeDependentGenerator,
    lambda: f64,
    f: &CMatrix,
) -> Result<f64> {
    let grid = FunctionSpaceGrid::for_table(table);
    let rf = semigroup_resolvent(table, lambda, f)?;
    let lhs = &rf * c(lambda) - discrete_generator(gen, &grid, &rf);
    Ok(grid.norm(&(lhs - f)) / grid.norm(f))
}

/// Dense matrix of the resolvent, column by column.
pub fn semigroup_resolvent_dense(table: &PropagatorTable, lambda: f64) -> Result<CMatrix> {
    let grid = FunctionSpaceGrid::for_table(table);
    let n = grid.n_t * grid.dim;
    let mut m = CMatrix::zeros(n, n);
    for k in 0..n {
        let mut e = CVector::zeros(n);
        e[k] = c(1.0);
        let r = semigroup_resolvent(table, lambda, &unstack(&e, &grid))?;
        m.column_mut(k).copy_from(&stack(&r));
    }
    Ok(m)
}

/// `‖G₀ u‖` for the orbit `u(t_i) = U(t_i, a)x`, `G₀ u_i = −(u_i − u_{i−1})/Δt
/// + A(t_i)u_i` with `u_0 = x`.
pub fn orbit_residual(table: &PropagatorTable, gen: &TimeDependentGenerator, x: &CVector) -> Result<f64> {
    let grid = FunctionSpaceGrid::for_table(table);
    let dt = grid.dt();
    let mut res = grid.zeros();
    let mut prev = x.clone();
    for i in 1..=grid.n_t {
        let ui = table.between(i, 0)? * x;
        let col = -(&ui - &prev) * c(1.0 / dt) + gen.generator(grid.node(i)) * &ui;
        res.column_mut(i - 1).copy_from(&col);
        prev = ui;
    }
    Ok(grid.norm(&res))
}

/// Test function `f(t) = ψ(t)·y` with `ψ(b) = 0` and derivative `ψ'`.
pub struct TestFunction<'a> {
    pub psi: &'a dyn Fn(f64) -> f64,
    pub dpsi: &'a dyn Fn(f64) -> f64,
    pub y: CVector,
}

/// `max_f |Σ_i Δt [(f'(t_i), u_i) + (A(t_i)* f(t_i), u_i)] + (f(a), x)|` for
/// the orbit `u_i = U(t_i, a)x`; vanishes as `Δt → 0` for a weak solution.
pub fn weak_solution_defect(
    table: &PropagatorTable,
    gen: &TimeDependentGenerator,
    x: &CVector,
    tests: &[TestFunction<'_>],
) -> Result<f64> {
    let grid = FunctionSpaceGrid::for_table(table);
    let dt = grid.dt();
    let orbit: Vec<CVector> = (1..=grid.n_t)
        .map(|i| table.between(i, 0).map(|u| u * x))
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for tf in tests {
        let mut acc = tf.y.dotc(x) * (tf.psi)(grid.a);
        for i in 1..=grid.n_t {
            let t = grid.node(i);
            let f = &tf.y * c((tf.psi)(t));
            let df = &tf.y * c((tf.dpsi)(t));
            let adj = gen.generator(t).adjoint() * &f;
            acc += (df.dotc(&orbit[i - 1]) + adj.dotc(&orbit[i - 1])) * dt;
        }
        worst = worst.max(acc.norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, random_hermitian, random_unit_vector};
    use crate::stepper::{exp_product_propagator, StepRule};
    use alloc::sync::Arc;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn generator(seed: u64, d: usize) -> TimeDependentGenerator {
        let h = random_hermitian(&mut rng(seed), d, 1.0);
        let b = random_hermitian(&mut rng(seed + 1), d, 1.0);
        TimeDependentGenerator::constant(h, "h").with_term(Arc::new(|t: f64| (2.0 * t).sin()), b, None)
    }

    fn table(seed: u64, d: usize, n: usize) -> PropagatorTable {
        exp_product_propagator(&generator(seed, d), &TimeGrid::new(0.0, 1.0, n).unwrap(), StepRule::Midpoint).unwrap()
    }

    fn random_function(grid: &FunctionSpaceGrid, seed: u64) -> CMatrix {
        let mut r = rng(seed);
        let mut f = grid.zeros();
        for i in 0..grid.n_t {
            f.column_mut(i).copy_from(&random_unit_vector(&mut r, grid.dim));
        }
        f
    }

    #[test]
    fn zero_shift_is_identity_and_rejects_off_grid() {
        let t = table(1, 3, 10);
        let op = lift(&t, 0.0).unwrap();
        let f = random_function(&op.grid, 2);
        assert!(max_abs(&(op.apply(&f) - &f)) < 1e-14);
        assert!(matches!(lift(&t, 0.15), Err(Error::ShiftNotGridAligned { .. })));
    }

    #[test]
    fn trivial_propagator_gives_right_translation() {
        let gen = TimeDependentGenerator::zero(2, "0");
        let t = exp_product_propagator(&gen, &TimeGrid::new(0.0, 1.0, 8).unwrap(), StepRule::Midpoint).unwrap();
        let op = lift(&t, 0.25).unwrap();
        let f = random_function(&op.grid, 3);
        let g = op.apply(&f);
        for i in 1..=8 {
            let expect = if i > 2 { f.column(i - 3).into_owned() } else { CVector::zeros(2) };
            assert_eq!(g.column(i - 1).into_owned(), expect);
        }
    }

    #[test]
    fn semigroup_law_on_grid() {
        let t = table(4, 3, 20);
        let (a, b, ab) = (lift(&t, 0.15).unwrap(), lift(&t, 0.2).unwrap(), lift(&t, 0.35).unwrap());
        let f = random_function(&a.grid, 5);
        let composed = a.apply(&b.apply(&f));
        assert!(max_abs(&(composed - ab.apply(&f))) <= 1e-12);
    }

    #[test]
    fn norm_identity_cases() {
        let t = table(6, 3, 10);
        let r = semigroup_norm_check(&lift(&t, 0.3).unwrap());
        assert!((r.operator_norm - 1.0).abs() < 1e-10 && (r.sup_block_norm - 1.0).abs() < 1e-10);

        let omega = 0.7;
        let scaled = t.scaled_by(|s| (omega * s).exp());
        let r = semigroup_norm_check(&lift(&scaled, 0.3).unwrap());
        assert!((r.operator_norm - (omega * 0.3).exp()).abs() < 1e-10);
        assert!((r.sup_block_norm - r.operator_norm).abs() < 1e-10);

        let r = semigroup_norm_check(&lift(&t, 1.0).unwrap());
        assert_eq!(r.operator_norm, 0.0);
    }

    #[test]
    fn multiplication_commutation_and_negative_control() {
        let t = table(7, 3, 16);
        let op = lift(&t, 0.25).unwrap();
        let grid = op.grid;
        let phi: Vec<f64> = (1..=grid.n_t).map(|i| crate::localization::mollifier((grid.node(i) - 0.5) / 0.4)).collect();
        let probes: Vec<CMatrix> = (0..4).map(|s| random_function(&grid, 10 + s)).collect();
        let dev = multiplication_commutation_check(&grid, |f| op.apply(f), op.shift_steps, &phi, &probes);
        assert!(dev <= 1e-12);
        let ones = vec![1.0; grid.n_t];
        assert!(multiplication_commutation_check(&grid, |f| op.apply(f), op.shift_steps, &ones, &probes) <= 1e-15);
        let bad = multiplication_commutation_check(&grid, |f| time_averaging(&grid, f), 0, &phi, &probes);
        assert!(bad > 1e-3);
    }

    #[test]
    fn resolvent_of_trivial_propagator_is_laplace_convolution() {
        let gen = TimeDependentGenerator::zero(1, "0");
        let lambda = 2.0;
        let residual = |n: usize| {
            let t = exp_product_propagator(&gen, &TimeGrid::new(0.0, 1.0, n).unwrap(), StepRule::Midpoint).unwrap();
            let grid = FunctionSpaceGrid::for_table(&t);
            let f = grid.sample(|s| c((3.0 * s).sin()), &CVector::from_element(1, c(1.0)));
            generator_consistency_check(&t, &gen, lambda, &f).unwrap()
        };
        let (r1, r2) = (residual(100), residual(200));
        assert!(r1 < 0.05);
        assert!((r1 / r2 - 2.0).abs() < 0.2, "{r1} {r2}");
    }

    #[test]
    fn resolvent_norm_bound() {
        let t = table(8, 2, 30);
        let lambda = 5.0;
        let r = semigroup_resolvent_dense(&t, lambda).unwrap();
        assert!(norm_2(&r) <= 1.0 / lambda + 2.0 * t.grid.dt());
    }

    #[test]
    fn orbit_and_weak_solution_are_first_order() {
        let gen = generator(9, 3);
        let x = random_unit_vector(&mut rng(10), 3);
        let y = random_unit_vector(&mut rng(11), 3);
        let psi = |t: f64| (1.0 - t) * (1.0 - t);
        let dpsi = |t: f64| -2.0 * (1.0 - t);
        let run = |n: usize| {
            let t = exp_product_propagator(&gen, &TimeGrid::new(0.0, 1.0, n).unwrap(), StepRule::Midpoint).unwrap();
            let tests = [TestFunction { psi: &psi, dpsi: &dpsi, y: y.clone() }];
            (orbit_residual(&t, &gen, &x).unwrap(), weak_solution_defect(&t, &gen, &x, &tests).unwrap())
        };
        let (o1, w1) = run(100);
        let (o2, w2) = run(200);
        assert!((o1 / o2 - 2.0).abs() < 0.2, "{o1} {o2}");
        assert!(w1 < 0.05 && w2 < w1, "{w1} {w2}");
    }
}
