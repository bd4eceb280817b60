//! Scattering operator `S = W₊* W₋` and its fibers `S(θ)`.
//!
//! Fiber matrices are indexed by the channels of [`Fiber`]: entry `[a][b]` is
//! `⟨S(θ) e_b, e_a⟩`. Auxiliary-space matrices are restricted to the rows of `G`
//! that carry weight, since `B(z)` and `Z₀(θ, GJU₀)` vanish elsewhere.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::extrapolate::{extrapolate, Extrapolated};
use crate::free::{Fiber, FiberVector, FreeSpectrum, Side};
use crate::math::TAU;
use crate::op::{Space, State};
use crate::resolvent::{EpsSchedule, RadialPoint, Resolvent, Sign};
use crate::walk::WalkModel;
use crate::wave::{check_no_wrap, jj_wave_apply, Schedule};
use crate::C64;

/// Dropped squared row weight allowed when compressing the auxiliary space.
pub const AUX_DROP: f64 = 1e-12;

/// Step size below which a limit sequence counts as settled, relative to its scale.
pub const STEP_FLOOR: f64 = 1e-7;

/// Time-domain `S^{(N)} Ψ₀ = U₀ᴺ J* U^{-2N} J U₀ᴺ Ψ₀`.
pub fn scattering_apply(model: &WalkModel, psi0: &State, steps: usize) -> Result<State> {
    if psi0.space() != model.free_space() {
        return Err(Error::SpaceMismatch { expected: model.free_space(), found: psi0.space() });
    }
    check_no_wrap(model, psi0, 2 * steps)?;
    let mut s = psi0.clone();
    for _ in 0..steps {
        s = model.u0.apply(&s, false)?;
    }
    let mut s = model.j.apply(&s, false)?;
    for _ in 0..2 * steps {
        s = model.u.apply(&s, true)?;
    }
    let mut s = model.j.apply(&s, true)?;
    for _ in 0..steps {
        s = model.u0.apply(&s, false)?;
    }
    Ok(s)
}

/// `T₊(z) = U₀* J* V - V* R(z) V` and `T₋(z) = T₊(z̄⁻¹)*`.
pub fn t_apply(model: &WalkModel, z: C64, sign: Sign, psi0: &State) -> Result<State> {
    if (z.norm() - 1.0).abs() < 1e-14 {
        return Err(Error::InvalidParameter("T(z) needs |z| != 1".into()));
    }
    match sign {
        Sign::Plus => {
            let vpsi = model.v.apply(psi0, false)?;
            let a = model.u0.apply(&model.j.apply(&vpsi, true)?, true)?;
            let (rv, _) = Resolvent::new(&model.u, z)?.apply(&vpsi, false)?;
            Ok(a.sub(&model.v.apply(&rv, true)?))
        }
        Sign::Minus => {
            // (U₀*J*V)* = V*JU₀ and (V*R(w)V)* = V*R(w)*V with w = 1/z̄
            let w = C64::new(1.0, 0.0) / z.conj();
            let a = model.v.apply(&model.j.apply(&model.u0.apply(psi0, false)?, false)?, true)?;
            let vpsi = model.v.apply(psi0, false)?;
            let (rv, _) = Resolvent::new(&model.u, w)?.apply(&vpsi, true)?;
            Ok(a.sub(&model.v.apply(&rv, true)?))
        }
    }
}

/// Auxiliary basis vectors kept after dropping rows of `G` of negligible weight.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxWindow {
    /// Indices into `H₀`, ascending.
    pub indices: Vec<usize>,
    /// Squared Hilbert–Schmidt weight of the dropped rows.
    pub dropped: f64,
}

impl AuxWindow {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Rows of `G` sorted by weight, kept until the dropped weight would exceed [`AUX_DROP`].
pub fn aux_window(model: &WalkModel) -> AuxWindow {
    let n = model.free_space().dim();
    let mut rows = alloc::vec![0.0; n];
    for (r, _, v) in model.factorization.g.nonzeros() {
        rows[r] += v.norm_sqr();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rows[a].total_cmp(&rows[b]).then(a.cmp(&b)));
    let mut dropped = 0.0;
    let mut cut = 0;
    for &i in &order {
        if dropped + rows[i] > AUX_DROP {
            break;
        }
        dropped += rows[i];
        cut += 1;
    }
    let mut indices: Vec<usize> = order[cut..].to_vec();
    indices.sort_unstable();
    AuxWindow { indices, dropped }
}

/// `B(z) = G R(z) G*` on the compressed auxiliary basis.
pub fn b_matrix(model: &WalkModel, z: C64, aux: &AuxWindow) -> Result<DMatrix<C64>> {
    let res = Resolvent::new(&model.u, z)?;
    let g = &model.factorization.g;
    let space = model.free_space();
    let k = aux.len();
    let mut m = DMatrix::zeros(k, k);
    for (col, &j) in aux.indices.iter().enumerate() {
        let mut e = State::zeros(space);
        e.data_mut()[j] = C64::new(1.0, 0.0);
        let gs = g.apply(&e, true)?;
        let (r, _) = res.apply(&gs, false)?;
        let out = g.apply(&r, false)?;
        for (row, &i) in aux.indices.iter().enumerate() {
            m[(row, col)] = out.data()[i];
        }
    }
    Ok(m)
}

fn flatten(m: &DMatrix<C64>) -> Vec<C64> {
    m.iter().copied().collect()
}

fn unflatten(v: &[C64], rows: usize, cols: usize) -> DMatrix<C64> {
    DMatrix::from_column_slice(rows, cols, v)
}

/// Extrapolated matrix limit with its finite-ε sequence.
#[derive(Clone, Debug)]
pub struct MatrixLimit {
    pub value: DMatrix<C64>,
    pub trend: Extrapolated,
}

/// `B_±(θ) = lim B((1-ε)^{±1} e^{iθ})`.
pub fn b_limit(model: &WalkModel, theta: f64, sign: Sign, sched: &EpsSchedule, aux: &AuxWindow) -> Result<MatrixLimit> {
    let mut samples = Vec::with_capacity(sched.eps().len());
    for &eps in sched.eps() {
        let z = RadialPoint::new(eps, sign, theta)?.z();
        samples.push(flatten(&b_matrix(model, z, aux)?));
    }
    let trend = sched.extrapolate(samples);
    let scale = trend.value.iter().map(|v| v.norm()).fold(1.0, f64::max);
    let last = trend.steps.last().copied().unwrap_or(0.0);
    if trend.steps.len() >= 2 && last > trend.steps[0] && last > STEP_FLOOR * scale {
        return Err(Error::LimitNotResolved(alloc::format!("B at θ = {theta}: steps {:?}", trend.steps)));
    }
    Ok(MatrixLimit { value: unflatten(&trend.value, aux.len(), aux.len()), trend })
}

/// Operand of `Z₀(θ, ·)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Z0Operand {
    G0,
    GJU0,
}

/// `Z₀(θ, T₀)` with `[c][j] = (F₀ T₀* e_j)(θ)_c = conj((T₀ φ_c)_j)`.
pub fn z0_matrix(model: &WalkModel, fs: &FreeSpectrum, fiber: &Fiber, which: Z0Operand, aux: &AuxWindow) -> Result<DMatrix<C64>> {
    let mut m = DMatrix::zeros(fiber.dim(), aux.len());
    for (c, ch) in fiber.channels.iter().enumerate() {
        let phi = fs.channel_functional(ch);
        let t = match which {
            Z0Operand::G0 => model.factorization.g0.apply(&phi, false)?,
            Z0Operand::GJU0 => {
                let x = model.j.apply(&model.u0.apply(&phi, false)?, false)?;
                model.factorization.g.apply(&x, false)?
            }
        };
        for (col, &j) in aux.indices.iter().enumerate() {
            m[(c, col)] = t.data()[j].conj();
        }
    }
    Ok(m)
}

/// `Δ(θ, G₀) = lim G₀ δ₀(1-ε, θ) G₀*` on the compressed basis, `[i][j] = ⟨Δ e_j, e_i⟩`.
pub fn delta_g0_limit(model: &WalkModel, theta: f64, sched: &EpsSchedule, aux: &AuxWindow) -> Result<MatrixLimit> {
    let space = model.free_space();
    let g0 = &model.factorization.g0;
    let k = aux.len();
    let mut samples = Vec::new();
    for &eps in sched.eps() {
        let pt = RadialPoint::new(eps, Sign::Plus, theta)?;
        let res = Resolvent::new(&model.u0, pt.z())?;
        let cols: Vec<Vec<C64>> = aux
            .indices
            .iter()
            .map(|&j| -> Result<Vec<C64>> {
                let mut e = State::zeros(space);
                e.data_mut()[j] = C64::new(1.0, 0.0);
                Ok(res.apply_slice(g0.apply(&e, true)?.data(), true))
            })
            .collect::<Result<_>>()?;
        let mut m = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let dot = cols[j].iter().zip(&cols[i]).fold(C64::new(0.0, 0.0), |s, (a, b)| s + a * b.conj());
                m[(i, j)] = dot * pt.weight();
            }
        }
        samples.push(flatten(&m));
    }
    let trend = sched.extrapolate(samples);
    Ok(MatrixLimit { value: unflatten(&trend.value, k, k), trend })
}

/// Packet oracle settings: widths to extrapolate over and the time horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct PacketSchedule {
    /// Decreasing fiber widths `σ_θ`.
    pub sigmas: Vec<f64>,
    /// Extrapolation order in `σ²`.
    pub order: usize,
    pub steps: usize,
}

impl PacketSchedule {
    fn extrapolate(&self, samples: Vec<Vec<C64>>) -> Extrapolated {
        let x: Vec<f64> = self.sigmas.iter().map(|s| s * s).collect();
        extrapolate(&x, samples, self.order)
    }
}

/// Fiber matrix measured with channel packets, `[b][a] = ⟨A ψ_a, ψ_b⟩`.
fn packet_matrix<F>(fs: &FreeSpectrum, fiber: &Fiber, sched: &PacketSchedule, apply: F) -> Result<(DMatrix<C64>, Extrapolated)>
where
    F: Fn(&State) -> Result<State>,
{
    let d = fiber.dim();
    let mut samples = Vec::new();
    for &sigma in &sched.sigmas {
        let packets: Vec<State> =
            fiber.channels.iter().map(|ch| fs.wave_packet(ch, fiber.theta, sigma, 0)).collect::<Result<_>>()?;
        let mut m = DMatrix::zeros(d, d);
        for a in 0..d {
            let img = apply(&packets[a])?;
            for b in 0..d {
                m[(b, a)] = img.inner(&packets[b]);
            }
        }
        samples.push(flatten(&m));
    }
    let trend = sched.extrapolate(samples);
    Ok((unflatten(&trend.value, d, d), trend))
}

/// `u_±(θ)` from the time-domain `w_±(U₀, U₀, J*J)`, Hermitian part taken.
#[derive(Clone, Debug)]
pub struct UFiber {
    pub value: DMatrix<C64>,
    /// `‖M - M*‖` before symmetrization.
    pub asymmetry: f64,
    pub trend: Extrapolated,
}

pub fn u_fiber(model: &WalkModel, fs: &FreeSpectrum, fiber: &Fiber, sign: Sign, sched: &PacketSchedule) -> Result<UFiber> {
    let (m, trend) = packet_matrix(fs, fiber, sched, |p| {
        Ok(jj_wave_apply(model, sign, p, Schedule::Time { steps: sched.steps })?.state)
    })?;
    let adj = m.adjoint();
    let asymmetry = (&m - &adj).norm();
    let value = (&m + &adj) * C64::new(0.5, 0.0);
    Ok(UFiber { value, asymmetry, trend })
}

/// Where an `S(θ)` sample came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    FormulaPlus,
    FormulaMinus,
    PacketOracle,
}

impl Source {
    pub fn label(self) -> &'static str {
        match self {
            Source::FormulaPlus => "formula_plus",
            Source::FormulaMinus => "formula_minus",
            Source::PacketOracle => "packet_oracle",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SMatrixSample {
    pub theta: f64,
    pub matrix: DMatrix<C64>,
    pub source: Source,
    /// Channels and eigenvector gauge used for the matrix.
    pub fiber: Fiber,
    /// Stepwise differences of the limit sequence (ε or σ).
    pub steps: Vec<f64>,
    /// Distance between the extrapolated value and the last finite sample.
    pub correction: f64,
    /// Squared weight dropped from the auxiliary space.
    pub dropped: f64,
}

impl SMatrixSample {
    /// `max_{a,b} ||S_ab| - |T_ab||`, invariant under the fiber gauge.
    pub fn modulus_distance(&self, other: &SMatrixSample) -> f64 {
        self.matrix
            .iter()
            .zip(other.matrix.iter())
            .map(|(a, b)| (a.norm() - b.norm()).abs())
            .fold(0.0, f64::max)
    }
}

/// Building blocks shared by both representation formulas at one angle.
#[derive(Clone, Debug)]
pub struct FormulaParts {
    pub fiber: Fiber,
    pub aux: AuxWindow,
    pub z_g0: DMatrix<C64>,
    pub z_gju0: DMatrix<C64>,
}

pub fn formula_parts(model: &WalkModel, fs: &FreeSpectrum, theta: f64) -> Result<FormulaParts> {
    let fiber = fs.fiber_at(theta)?;
    let aux = aux_window(model);
    let z_g0 = z0_matrix(model, fs, &fiber, Z0Operand::G0, &aux)?;
    let z_gju0 = z0_matrix(model, fs, &fiber, Z0Operand::GJU0, &aux)?;
    Ok(FormulaParts { fiber, aux, z_g0, z_gju0 })
}

/// `S(θ) = u₊ + 2π(Z₀(GJU₀)Z₀(G₀)* - Z₀(G₀)B₊Z₀(G₀)*)` or
/// `S(θ) = u₋ - 2π(Z₀(G₀)Z₀(GJU₀)* - Z₀(G₀)B₋Z₀(G₀)*)`.
pub fn smatrix_formula(
    model: &WalkModel,
    parts: &FormulaParts,
    sign: Sign,
    u: &DMatrix<C64>,
    sched: &EpsSchedule,
) -> Result<SMatrixSample> {
    let theta = parts.fiber.theta;
    let b = b_limit(model, theta, sign, sched, &parts.aux)?;
    let z0 = &parts.z_g0;
    let z1 = &parts.z_gju0;
    let tau = C64::new(TAU, 0.0);
    let matrix = match sign {
        Sign::Plus => u + (z1 * z0.adjoint() - z0 * &b.value * z0.adjoint()) * tau,
        // T_-(z) = T_+(1/z̄)* carries the outer boundary value as an adjoint
        Sign::Minus => u - (z0 * z1.adjoint() - z0 * b.value.adjoint() * z0.adjoint()) * tau,
    };
    Ok(SMatrixSample {
        theta,
        matrix,
        source: if sign == Sign::Plus { Source::FormulaPlus } else { Source::FormulaMinus },
        fiber: parts.fiber.clone(),
        steps: b.trend.steps.clone(),
        correction: b.trend.correction(),
        dropped: parts.aux.dropped,
    })
}

/// `S(θ)` from `⟨S^{(N)} ψ_a, ψ_b⟩` with channel packets.
pub fn smatrix_packet(model: &WalkModel, fs: &FreeSpectrum, fiber: &Fiber, sched: &PacketSchedule) -> Result<SMatrixSample> {
    let (matrix, trend) = packet_matrix(fs, fiber, sched, |p| scattering_apply(model, p, sched.steps))?;
    Ok(SMatrixSample {
        theta: fiber.theta,
        matrix,
        source: Source::PacketOracle,
        fiber: fiber.clone(),
        steps: trend.steps.clone(),
        correction: trend.correction(),
        dropped: 0.0,
    })
}

/// Both sides of the fiberwise identity linking `S(θ) - u_±(θ)` to `T_±`.
#[derive(Clone, Debug)]
pub struct PmBisCheck {
    pub lhs: C64,
    pub rhs: C64,
    pub residual: f64,
    /// `|lhs - rhs| / max(|lhs|, |rhs|)`.
    pub relative: f64,
    pub trend: Extrapolated,
}

/// `⟨(S - u_±)(F₀Ψ₀)(θ), (F₀Φ₀)(θ)⟩` against `±2π lim ⟨T_±((1-ε)e^{iθ}) δ₀ Ψ₀, δ₀ Φ₀⟩`.
pub fn pm_bis_check(
    model: &WalkModel,
    sample: &SMatrixSample,
    u: &DMatrix<C64>,
    sign: Sign,
    f_psi: &FiberVector,
    f_phi: &FiberVector,
    psi0: &State,
    phi0: &State,
    sched: &EpsSchedule,
) -> Result<PmBisCheck> {
    let d = sample.fiber.dim();
    let x = DMatrix::from_column_slice(d, 1, &f_psi.coeffs);
    let y = DMatrix::from_column_slice(d, 1, &f_phi.coeffs);
    let lhs = (y.adjoint() * (&sample.matrix - u) * x)[(0, 0)];
    let theta = sample.theta;
    let mut samples = Vec::new();
    for &eps in sched.eps() {
        let pt = RadialPoint::new(eps, Sign::Plus, theta)?;
        let res = Resolvent::new(&model.u0, pt.z())?;
        let delta = |v: &State| -> Result<State> {
            let a = res.apply_slice(v.data(), true);
            let b = res.apply_slice(&a, false);
            State::from_vec(v.space(), b.into_iter().map(|e| e * pt.weight()).collect())
        };
        let dpsi = delta(psi0)?;
        let dphi = delta(phi0)?;
        let t = t_apply(model, pt.z(), sign, &dpsi)?;
        samples.push(alloc::vec![t.inner(&dphi) * sign.factor() * TAU]);
    }
    let trend = sched.extrapolate(samples);
    let rhs = trend.scalar();
    let residual = (lhs - rhs).norm();
    let scale = lhs.norm().max(rhs.norm()).max(1e-300);
    Ok(PmBisCheck { lhs, rhs, residual, relative: residual / scale, trend })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoefficientKind {
    Transmission,
    Reflection,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficient {
    /// Incoming channel (column).
    pub from: usize,
    /// Outgoing channel (row).
    pub to: usize,
    pub value: f64,
    pub kind: CoefficientKind,
}

/// Squared moduli of `S(θ)` labelled by side, with row sums.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelCoefficients {
    pub entries: Vec<Coefficient>,
    pub row_sums: Vec<f64>,
    pub column_sums: Vec<f64>,
}

impl ChannelCoefficients {
    pub fn of_kind(&self, kind: CoefficientKind) -> impl Iterator<Item = &Coefficient> {
        self.entries.iter().filter(move |c| c.kind == kind)
    }
}

pub fn coefficients(sample: &SMatrixSample) -> ChannelCoefficients {
    let ch = &sample.fiber.channels;
    let d = ch.len();
    let mut entries = Vec::with_capacity(d * d);
    let mut row_sums = alloc::vec![0.0; d];
    let mut column_sums = alloc::vec![0.0; d];
    for a in 0..d {
        for b in 0..d {
            let value = sample.matrix[(a, b)].norm_sqr();
            row_sums[a] += value;
            column_sums[b] += value;
            let kind = if ch[a].side == ch[b].side { CoefficientKind::Reflection } else { CoefficientKind::Transmission };
            entries.push(Coefficient { from: b, to: a, value, kind });
        }
    }
    ChannelCoefficients { entries, row_sums, column_sums }
}

/// Channels that survive `w_±(U₀, U₀, J*J)` by direction of motion: those whose
/// free motion under `U₀^{∓n}` stays on their own half-line.
pub fn ballistic_u(fiber: &Fiber, sign: Sign) -> DMatrix<C64> {
    let d = fiber.dim();
    let mut m = DMatrix::zeros(d, d);
    for (i, ch) in fiber.channels.iter().enumerate() {
        let back = -ch.drift() * sign.factor();
        let stays = match ch.side {
            Side::Left => back < 0.0,
            Side::Right => back > 0.0,
        };
        if stays {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
    }
    m
}

/// Space check shared by callers building fiber vectors.
pub fn fiber_vector(fs: &FreeSpectrum, fiber: &Fiber, psi0: &State) -> Result<FiberVector> {
    if psi0.space() != Space::H0(fs.window) {
        return Err(Error::SpaceMismatch { expected: Space::H0(fs.window), found: psi0.space() });
    }
    Ok(fs.f0_on_fiber(fiber, psi0))
}
