//! Resolvent `R(z) = (1 - z U*)^{-1}` of a unitary operator and the
//! quantities built from its boundary values on the unit circle.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::dense;
use crate::error::{Error, Result};
use crate::extrapolate::{extrapolate, Extrapolated};
use crate::math::{angle_distance, exp, pow, PI, TAU};
use crate::op::{power_norm, relative_residual, BandedLu, Space, State, WindowedOperator};
use crate::par;
use crate::C64;

/// Side of the unit circle: `+` inside, `-` outside.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// `z = (1 - ε)^{±1} e^{iθ}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialPoint {
    pub eps: f64,
    pub sign: Sign,
    pub theta: f64,
}

impl RadialPoint {
    pub fn new(eps: f64, sign: Sign, theta: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(alloc::format!("eps {eps} outside (0, 1)")));
        }
        Ok(Self { eps, sign, theta })
    }

    /// Point with a given radius `r ∈ (0, ∞) \ {1}`.
    pub fn from_radius(r: f64, theta: f64) -> Result<Self> {
        if r > 0.0 && r < 1.0 {
            Self::new(1.0 - r, Sign::Plus, theta)
        } else if r > 1.0 {
            Self::new(1.0 - 1.0 / r, Sign::Minus, theta)
        } else {
            Err(Error::InvalidParameter(alloc::format!("radius {r} must be positive and != 1")))
        }
    }

    pub fn radius(&self) -> f64 {
        match self.sign {
            Sign::Plus => 1.0 - self.eps,
            Sign::Minus => 1.0 / (1.0 - self.eps),
        }
    }

    pub fn z(&self) -> C64 {
        C64::from_polar(self.radius(), self.theta)
    }

    /// `g_±(ε) = (1 - (1 - ε)^{±2}) / 2π`.
    pub fn weight(&self) -> f64 {
        let r = self.radius();
        (1.0 - r * r) / TAU
    }
}

/// Decreasing list of regularization parameters and an extrapolation order.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsSchedule {
    eps: Vec<f64>,
    order: usize,
}

impl EpsSchedule {
    pub fn new(eps: Vec<f64>, order: usize) -> Result<Self> {
        if order > 2 {
            return Err(Error::InvalidParameter(alloc::format!("extrapolation order {order} > 2")));
        }
        if eps.len() < order + 1 {
            return Err(Error::InvalidParameter("schedule shorter than order + 1".into()));
        }
        if !eps.iter().all(|e| *e > 0.0 && *e < 1.0) || !eps.windows(2).all(|p| p[1] < p[0]) {
            return Err(Error::InvalidParameter("schedule must decrease strictly inside (0, 1)".into()));
        }
        Ok(Self { eps, order })
    }

    /// Geometric schedule `eps0, eps0 / 2, ...` with `n` terms.
    pub fn halving(eps0: f64, n: usize, order: usize) -> Result<Self> {
        Self::new((0..n).map(|k| eps0 / (1u64 << k) as f64).collect(), order)
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn extrapolate(&self, samples: Vec<Vec<C64>>) -> Extrapolated {
        extrapolate(&self.eps, samples, self.order)
    }
}

/// Factored `1 - z U*` for repeated resolvent solves at one point.
#[derive(Clone, Debug)]
pub struct Resolvent {
    z: C64,
    space: Space,
    shifted: WindowedOperator,
    lu: BandedLu,
}

impl Resolvent {
    pub fn new(u: &WindowedOperator, z: C64) -> Result<Self> {
        if !u.is_unitary() {
            return Err(Error::InvalidParameter("resolvent needs a unitary-tagged operator".into()));
        }
        let space = u.domain();
        let shifted = WindowedOperator::identity(space).lin_comb(C64::new(1.0, 0.0), &u.adjoint(), -z)?;
        let lu = shifted.factor()?;
        Ok(Self { z, space, shifted, lu })
    }

    pub fn z(&self) -> C64 {
        self.z
    }

    /// `R(z) v` (or `R(z)* v`) on raw coordinates.
    pub fn apply_slice(&self, v: &[C64], adjoint: bool) -> Vec<C64> {
        self.lu.solve(v, adjoint)
    }

    /// `R(z) v` (or `R(z)* v`) with the relative solve residual.
    pub fn apply(&self, v: &State, adjoint: bool) -> Result<(State, f64)> {
        if v.space() != self.space {
            return Err(Error::SpaceMismatch {
                expected: self.space,
                found: v.space(),
            });
        }
        let x = self.lu.solve(v.data(), adjoint);
        let back = self.shifted.apply_slice(&x, adjoint);
        let res = relative_residual(&back, v.data());
        Ok((State::from_vec(self.space, x)?, res))
    }
}

/// `R(z) v` or `R(z)* v` at a radial point.
pub fn resolvent_apply(u: &WindowedOperator, pt: &RadialPoint, v: &State, adjoint: bool) -> Result<(State, f64)> {
    Resolvent::new(u, pt.z())?.apply(v, adjoint)
}

/// `δ(r, θ) v = (1 - r²)/(2π) · R R* v`.
pub fn delta_apply(u: &WindowedOperator, pt: &RadialPoint, v: &State) -> Result<State> {
    let res = Resolvent::new(u, pt.z())?;
    Ok(delta_with(&res, pt, v))
}

pub(crate) fn delta_with(res: &Resolvent, pt: &RadialPoint, v: &State) -> State {
    let y = res.apply_slice(v.data(), true);
    let x = res.apply_slice(&y, false);
    let c = pt.weight();
    State::from_vec(v.space(), x.into_iter().map(|e| e * c).collect()).expect("same space")
}

/// Operator norm of `δ(r, θ)` by power iteration.
pub fn delta_norm(u: &WindowedOperator, pt: &RadialPoint, tol: f64) -> Result<f64> {
    let res = Resolvent::new(u, pt.z())?;
    let c = pt.weight();
    power_norm(
        u.domain().dim(),
        |v| {
            let y = res.apply_slice(v, true);
            res.apply_slice(&y, false).into_iter().map(|e| e * c).collect()
        },
        tol,
        200_000,
    )
}

/// Closed-form norm `(1 + r) / (2π |1 - r|)` attained at eigenphases.
pub fn delta_norm_bound(r: f64) -> f64 {
    (1.0 + r) / (TAU * (1.0 - r).abs())
}

/// `∫₀^{2π} ⟨δ(r, θ) v, v⟩ dθ` by the periodic trapezoid rule.
pub fn poisson_mass(u: &WindowedOperator, r: f64, v: &State, n_theta: usize) -> Result<f64> {
    if n_theta < 16 || !n_theta.is_power_of_two() {
        return Err(Error::InvalidParameter(alloc::format!("node count {n_theta} must be a power of two >= 16")));
    }
    RadialPoint::from_radius(r, 0.0)?;
    let c = (1.0 - r * r) / TAU;
    let h = TAU / n_theta as f64;
    let vals = par::map(n_theta, |k| -> Result<f64> {
        let z = C64::from_polar(r, k as f64 * h);
        let res = Resolvent::new(u, z)?;
        let y = res.apply_slice(v.data(), true);
        Ok(c * y.iter().map(|e| e.norm_sqr()).sum::<f64>())
    });
    let mut mass = 0.0;
    for val in vals {
        mass += val? * h;
    }
    Ok(mass)
}

/// Extrapolated boundary value `lim ⟨δ((1-ε)^{±1}, θ) φ, ψ⟩` with diagnostics.
#[derive(Clone, Debug)]
pub struct BoundaryValue {
    pub value: C64,
    pub trend: Extrapolated,
}

impl BoundaryValue {
    /// Stepwise differences did not shrink monotonically.
    pub fn warning(&self) -> bool {
        !self.trend.monotone
    }
}

pub fn boundary_density(
    u: &WindowedOperator,
    theta: f64,
    sign: Sign,
    phi: &State,
    psi: &State,
    sched: &EpsSchedule,
) -> Result<BoundaryValue> {
    let mut samples = Vec::with_capacity(sched.eps().len());
    for &eps in sched.eps() {
        let pt = RadialPoint::new(eps, sign, theta)?;
        let res = Resolvent::new(u, pt.z())?;
        let a = res.apply_slice(phi.data(), true);
        let b = res.apply_slice(psi.data(), true);
        let dot = a.iter().zip(&b).fold(C64::new(0.0, 0.0), |s, (x, y)| s + x * y.conj());
        samples.push(vec![dot * pt.weight()]);
    }
    let trend = sched.extrapolate(samples);
    Ok(BoundaryValue {
        value: trend.scalar(),
        trend,
    })
}

/// Cayley transform of `e^{iφ} U` and the residual of the resolvent relation.
#[derive(Clone, Debug)]
pub struct Cayley {
    pub h: DMatrix<C64>,
    pub phase: f64,
    pub relation_residual: f64,
}

/// `H₀ = i(1 + e^{iφ}U)(1 - e^{iφ}U)^{-1}`; with `phase = None` the phase is scanned.
///
/// The relation residual compares `R(z)` with
/// `(1 - wz)^{-1} + 2iwz/(1 - wz)² · (H₀ - i(1 + wz)/(1 - wz))^{-1}` at eight
/// deterministic points off the circle.
pub fn cayley(u: &WindowedOperator, phase: Option<f64>) -> Result<Cayley> {
    let m = u.to_dense();
    let n = m.nrows();
    let (phase, h) = match phase {
        Some(p) => (p, dense::cayley_matrix(&m, p).ok_or(Error::CayleyPhase)?),
        None => dense::cayley_phase(&m, 1e6 * (n as f64).max(1.0))?,
    };
    let w = C64::from_polar(1.0, phase);
    let id = DMatrix::<C64>::identity(n, n);
    let mut worst: f64 = 0.0;
    for k in 0..8 {
        // radii alternate inside/outside, angles spread over the circle
        let r = if k % 2 == 0 { 0.55 + 0.05 * k as f64 } else { 1.3 + 0.1 * k as f64 };
        let z = C64::from_polar(r, 0.77 * k as f64 + 0.31);
        let direct = (&id - m.adjoint() * z).lu().try_inverse().ok_or(Error::Singular {
            pivot: 0.0,
            threshold: 0.0,
        })?;
        let a = C64::new(1.0, 0.0) - w * z;
        let shift = C64::new(0.0, 1.0) * (C64::new(1.0, 0.0) + w * z) / a;
        let inner = (&h - &id * shift).lu().try_inverse().ok_or(Error::Singular {
            pivot: 0.0,
            threshold: 0.0,
        })?;
        let via = &id * (C64::new(1.0, 0.0) / a) + inner * (C64::new(0.0, 2.0) * w * z / (a * a));
        let scale = direct.norm().max(1.0);
        worst = worst.max(dense::max_abs_diff(&direct, &via) / scale);
    }
    Ok(Cayley {
        h,
        phase,
        relation_residual: worst,
    })
}

/// Fourier-truncated smooth indicator of an arc `[θ₁, θ₂]`.
///
/// The indicator is convolved with a periodized Gaussian of width `taper`;
/// the coefficients `c_n`, `|n| ≤ M`, define `Σ c_n Uⁿ`.
#[derive(Clone, Debug)]
pub struct ArcFilter {
    pub theta1: f64,
    pub theta2: f64,
    pub taper: f64,
    coeffs: Vec<C64>,
}

impl ArcFilter {
    pub fn new(theta1: f64, theta2: f64, order: usize, taper: f64) -> Result<Self> {
        if order < 32 {
            return Err(Error::InvalidParameter(alloc::format!("Fourier order {order} < 32")));
        }
        if !(theta2 > theta1) || theta2 - theta1 > TAU + 1e-15 || !(taper > 0.0) {
            return Err(Error::InvalidParameter("arc must satisfy θ₁ < θ₂ ≤ θ₁ + 2π, taper > 0".into()));
        }
        let m = order as i64;
        let full = (theta2 - theta1 - TAU).abs() < 1e-15;
        let coeffs = (-m..=m)
            .map(|n| {
                if n == 0 {
                    return C64::new((theta2 - theta1) / TAU, 0.0);
                }
                if full {
                    return C64::new(0.0, 0.0);
                }
                let nf = n as f64;
                let c = (C64::from_polar(1.0, -nf * theta1) - C64::from_polar(1.0, -nf * theta2))
                    / C64::new(0.0, TAU * nf);
                c * exp(-0.5 * (nf * taper) * (nf * taper))
            })
            .collect();
        Ok(Self { theta1, theta2, taper, coeffs })
    }

    pub fn order(&self) -> usize {
        (self.coeffs.len() - 1) / 2
    }

    fn coeff(&self, n: i64) -> C64 {
        self.coeffs[(n + self.order() as i64) as usize]
    }

    /// Value of the smoothed indicator at angle `t`.
    pub fn value(&self, t: f64) -> f64 {
        let m = self.order() as i64;
        (-m..=m).map(|n| (self.coeff(n) * C64::from_polar(1.0, n as f64 * t)).re).sum()
    }

    /// Bound on `|f - 1_arc|` at distance `d` from the nearest arc edge,
    /// including the Fourier truncation tail.
    pub fn leakage(&self, d: f64) -> f64 {
        let m = self.order() as f64;
        let tail = 2.0 / (PI * m) * exp(-0.5 * (m * self.taper) * (m * self.taper))
            / (1.0 - exp(-m * self.taper * self.taper));
        libm::erfc(d / (core::f64::consts::SQRT_2 * self.taper)) + tail
    }

    /// Distance of `t` from the nearer arc edge.
    pub fn edge_distance(&self, t: f64) -> f64 {
        angle_distance(t, self.theta1).min(angle_distance(t, self.theta2))
    }

    /// `f(U) v` through `2M` applications of `U` and `U*`.
    pub fn apply(&self, u: &WindowedOperator, v: &State) -> Result<State> {
        let mut out = v.scaled(self.coeff(0));
        let mut fwd = v.clone();
        let mut bwd = v.clone();
        for n in 1..=self.order() as i64 {
            fwd = u.apply(&fwd, false)?;
            bwd = u.apply(&bwd, true)?;
            out.axpy(self.coeff(n), &fwd);
            out.axpy(self.coeff(-n), &bwd);
        }
        Ok(out)
    }

    /// `Σ c_n Uⁿ` as an operator.
    pub fn to_operator(&self, u: &WindowedOperator) -> Result<WindowedOperator> {
        let space = u.domain();
        let mut acc = WindowedOperator::identity(space).scaled(self.coeff(0));
        let mut pow_n = WindowedOperator::identity(space);
        for n in 1..=self.order() as i64 {
            pow_n = pow_n.compose(u)?;
            let adj = pow_n.adjoint();
            acc = acc.lin_comb(C64::new(1.0, 0.0), &pow_n, self.coeff(n))?;
            acc = acc.lin_comb(C64::new(1.0, 0.0), &adj, self.coeff(-n))?;
        }
        Ok(acc)
    }
}

/// Smoothed spectral projector of `U` on an arc.
pub fn spectral_filter(
    u: &WindowedOperator,
    arc: (f64, f64),
    order: usize,
    taper: f64,
) -> Result<WindowedOperator> {
    ArcFilter::new(arc.0, arc.1, order, taper)?.to_operator(u)
}

/// `sup_{ε, θ} ‖T δ(1 - ε, θ) T*‖` with the per-ε maxima.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothnessReport {
    pub sup: f64,
    pub per_eps: Vec<f64>,
}

pub fn smooth_diagnostic(
    u: &WindowedOperator,
    t: &WindowedOperator,
    sched: &EpsSchedule,
    thetas: &[f64],
) -> Result<SmoothnessReport> {
    if t.domain() != u.domain() {
        return Err(Error::SpaceMismatch {
            expected: u.domain(),
            found: t.domain(),
        });
    }
    let aux = t.codomain().dim();
    let mut per_eps = Vec::with_capacity(sched.eps().len());
    for &eps in sched.eps() {
        let norms = par::map(thetas.len(), |k| -> Result<f64> {
            let pt = RadialPoint::new(eps, Sign::Plus, thetas[k])?;
            let res = Resolvent::new(u, pt.z())?;
            let c = pt.weight();
            power_norm(
                aux,
                |zeta| {
                    let a = t.apply_slice(zeta, true);
                    let b = res.apply_slice(&a, true);
                    let d = res.apply_slice(&b, false);
                    t.apply_slice(&d, false).into_iter().map(|e| e * c).collect()
                },
                1e-9,
                100_000,
            )
        });
        let mut m: f64 = 0.0;
        for n in norms {
            m = m.max(n?);
        }
        per_eps.push(m);
    }
    let sup = per_eps.iter().fold(0.0_f64, |a, b| a.max(*b));
    Ok(SmoothnessReport { sup, per_eps })
}

/// `g_±(ε)` relative to its first-order asymptote `±ε/π`.
pub fn weight_asymptote_ratio(eps: f64, sign: Sign) -> f64 {
    let g = (1.0 - pow(1.0 - eps, 2.0 * sign.factor())) / TAU;
    g / (sign.factor() * eps / PI)
}

/// Truncated geometric series `Σ_{n<terms} (z U*)ⁿ v`, valid for `|z| < 1`.
pub fn geometric_series(u: &WindowedOperator, z: C64, v: &State, terms: usize) -> Result<State> {
    let mut out = State::zeros(v.space());
    let mut term = v.clone();
    for _ in 0..terms {
        out.axpy(C64::new(1.0, 0.0), &term);
        term = u.apply(&term, true)?.scaled(z);
    }
    Ok(out)
}

/// Bound `|z|^{n} / (1 - |z|)` on the tail of an `n`-term series.
pub fn geometric_tail(z: C64, terms: usize) -> f64 {
    let r = z.norm();
    pow(r, terms as f64) / (1.0 - r)
}
