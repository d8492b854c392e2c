//! Smooth compactly supported space-time coupling functions `g(t, x)` on the
//! periodic box, built as finite sums of separable mollifier bumps.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::fock::Polynomial;
use crate::stepper::TimeGrid;

/// The standard mollifier `exp(1 - 1/(1 - u²))` on `|u| < 1`, zero outside.
/// Normalized so that the peak value at `u = 0` is 1.
pub fn mollifier(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpatialProfile {
    /// Constant 1 over the whole box.
    Constant,
    /// Periodic mollifier bump centred at `center` with half-width `radius`.
    Bump { center: f64, radius: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum TimeProfile {
    Bump { center: f64, radius: f64 },
    /// Smooth strictly positive modulation `1 + depth·sin(rate·t)`; not
    /// compactly supported.
    Modulated { depth: f64, rate: f64 },
    /// `exp(rate·t)`; not compactly supported.
    Exponential { rate: f64 },
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::Bump { center, radius } => mollifier((t - center) / radius),
            TimeProfile::Modulated { depth, rate } => 1.0 + depth * (rate * t).sin(),
            TimeProfile::Exponential { rate } => (rate * t).exp(),
        }
    }

    /// Closed hull of the support, `None` when unbounded.
    pub fn support(&self) -> Option<(f64, f64)> {
        match *self {
            TimeProfile::Bump { center, radius } => Some((center - radius, center + radius)),
            _ => None,
        }
    }
}

/// One separable term `amplitude · T(t) · X(x)`, optionally cut to a time
/// window `[lo, hi)` and optionally carrying its own polynomial, so that
/// the interaction density becomes `Σ_terms g_term(t,x) :P_term(φ(x)):`.
#[derive(Clone, Debug, PartialEq)]
pub struct BumpTerm {
    pub amplitude: f64,
    pub time: TimeProfile,
    pub space: SpatialProfile,
    pub window: Option<(f64, f64)>,
    pub polynomial: Option<Polynomial>,
}

impl BumpTerm {
    pub fn new(amplitude: f64, t_center: f64, t_radius: f64, space: SpatialProfile) -> Self {
        BumpTerm {
            amplitude,
            time: TimeProfile::Bump {
                center: t_center,
                radius: t_radius,
            },
            space,
            window: None,
            polynomial: None,
        }
    }

    pub fn time_factor(&self, t: f64) -> f64 {
        if let Some((lo, hi)) = self.window {
            if t < lo || t >= hi {
                return 0.0;
            }
        }
        self.amplitude * self.time.eval(t)
    }

    pub fn space_factor(&self, x: f64, box_length: f64) -> f64 {
        match self.space {
            SpatialProfile::Constant => 1.0,
            SpatialProfile::Bump { center, radius } => {
                mollifier(periodic_offset(x - center, box_length) / radius)
            }
        }
    }

    pub fn time_support(&self) -> Option<(f64, f64)> {
        if self.amplitude == 0.0 {
            return None;
        }
        let (mut lo, mut hi) = self.time.support().unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        if let Some((a, b)) = self.window {
            lo = lo.max(a);
            hi = hi.min(b);
        }
        (lo < hi).then_some((lo, hi))
    }
}

/// Offset wrapped into `[-L/2, L/2)`.
pub fn periodic_offset(d: f64, box_length: f64) -> f64 {
    let mut r = (d + 0.5 * box_length) % box_length;
    if r < 0.0 {
        r += box_length;
    }
    r - 0.5 * box_length
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationFunction {
    pub box_length: f64,
    pub terms: Vec<BumpTerm>,
}

impl LocalizationFunction {
    pub fn zero(box_length: f64) -> Self {
        LocalizationFunction {
            box_length,
            terms: Vec::new(),
        }
    }

    pub fn from_terms(box_length: f64, terms: Vec<BumpTerm>) -> Self {
        LocalizationFunction { box_length, terms }
    }

    /// Mollifier bump `A·b((t−t₀)/r_t)·b((x−x₀)/r_x)`; the time support must
    /// lie strictly inside the grid and the spatial support must not wrap
    /// onto itself.
    pub fn bump(term: BumpTerm, grid: &TimeGrid, box_length: f64) -> Result<Self> {
        let (lo, hi) = term
            .time
            .support()
            .ok_or_else(|| crate::error::invalid("bump needs a compactly supported time profile"))?;
        if lo <= grid.t_start || hi >= grid.t_end {
            return Err(Error::SupportOutsideGrid { lo, hi });
        }
        if let SpatialProfile::Bump { center, radius } = term.space {
            if !(radius > 0.0) || 2.0 * radius >= box_length {
                return Err(Error::SupportOutsideGrid {
                    lo: center - radius,
                    hi: center + radius,
                });
            }
        }
        Ok(LocalizationFunction {
            box_length,
            terms: alloc::vec![term],
        })
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|term| term.time_factor(t) * term.space_factor(x, self.box_length))
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.amplitude == 0.0)
    }

    pub fn is_zero_at(&self, t: f64) -> bool {
        self.terms.iter().all(|term| term.time_factor(t) == 0.0)
    }

    /// Hull of the time supports of all nonzero terms; `None` for the zero
    /// function.
    pub fn time_support(&self) -> Option<(f64, f64)> {
        self.terms
            .iter()
            .filter_map(BumpTerm::time_support)
            .reduce(|(a, b), (c, d)| (a.min(c), b.max(d)))
    }

    pub fn plus(&self, other: &Self) -> Result<Self> {
        if self.box_length != other.box_length {
            return Err(Error::GridMismatch(alloc::format!(
                "box lengths {} and {}",
                self.box_length,
                other.box_length
            )));
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(LocalizationFunction {
            box_length: self.box_length,
            terms,
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for term in &mut out.terms {
            term.amplitude *= s;
        }
        out
    }

    /// `g(t − a_t, x − a_x)`.
    pub fn shifted(&self, a_t: f64, a_x: f64) -> Self {
        let mut out = self.clone();
        for term in &mut out.terms {
            term.time = match term.time {
                TimeProfile::Bump { center, radius } => TimeProfile::Bump {
                    center: center + a_t,
                    radius,
                },
                ref other => {
                    assert!(a_t == 0.0, "time shift of a non-compact profile");
                    other.clone()
                }
            };
            if let SpatialProfile::Bump { center, radius } = term.space {
                term.space = SpatialProfile::Bump {
                    center: center + a_x,
                    radius,
                };
            }
            if let Some((lo, hi)) = term.window {
                term.window = Some((lo + a_t, hi + a_t));
            }
        }
        out
    }

    /// `g · 1_{[lo, hi)}(t)`.
    pub fn restricted(&self, lo: f64, hi: f64) -> Self {
        let mut out = self.clone();
        for term in &mut out.terms {
            term.window = Some(match term.window {
                Some((a, b)) => (a.max(lo), b.min(hi)),
                None => (lo, hi),
            });
        }
        out
    }

    /// Samples of `g(t, ·)` at the lattice points `x_m = m·L/x_points`.
    pub fn spatial_samples(&self, t: f64, x_points: usize) -> Vec<f64> {
        let dx = self.box_length / x_points as f64;
        (0..x_points).map(|m| self.eval(t, m as f64 * dx)).collect()
    }

    /// Largest discrete second difference in `t` and in `x` over the given
    /// grid, a proxy for smoothness.
    pub fn max_second_difference(&self, grid: &TimeGrid, x_points: usize) -> f64 {
        let dx = self.box_length / x_points as f64;
        let mut worst: f64 = 0.0;
        for i in 1..grid.n_steps {
            for m in 0..x_points {
                let x = m as f64 * dx;
                let (tm, t0, tp) = (grid.node(i - 1), grid.node(i), grid.node(i + 1));
                let dtt = self.eval(tp, x) - 2.0 * self.eval(t0, x) + self.eval(tm, x);
                let dxx = self.eval(t0, x + dx) - 2.0 * self.eval(t0, x) + self.eval(t0, x - dx);
                worst = worst.max(dtt.abs()).max(dxx.abs());
            }
        }
        worst
    }

    /// `max |g|` sampled on the grid and lattice.
    pub fn max_abs(&self, grid: &TimeGrid, x_points: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..=grid.n_steps {
            for v in self.spatial_samples(grid.node(i), x_points) {
                worst = worst.max(v.abs());
            }
        }
        worst
    }
}
