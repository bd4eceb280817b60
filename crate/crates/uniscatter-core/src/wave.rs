//! Wave operators of the walk: time iteration `Uⁿ J U₀⁻ⁿ` against the
//! Abel-regularized integral `±g_±(ε) ∮ R(z)* J R₀(z) dθ`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{sqrt, TAU};
use crate::op::{State, WindowedOperator};
use crate::par;
use crate::resolvent::{RadialPoint, Resolvent, Sign};
use crate::walk::WalkModel;
use crate::C64;

/// Spacing of the Cauchy trace of the time method.
pub const TRACE_STRIDE: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Strong,
    Stationary,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Time { steps: usize },
    Abel { eps: f64, n_theta: usize },
}

#[derive(Clone, Debug)]
pub struct WaveResult {
    pub sign: Sign,
    pub method: Method,
    pub schedule: Schedule,
    pub state: State,
    /// `(n, ‖W(n)Ψ₀ - W(n - 50)Ψ₀‖)` for the time method.
    pub trace: Vec<(usize, f64)>,
    pub converged: bool,
    /// Norm carried within 8 sites of the window edge.
    pub leakage: f64,
}

/// Fastest group speed of the asymptotic walks, `a` for each side.
pub fn max_group_speed(model: &WalkModel) -> f64 {
    model.field.left.a.max(model.field.right.a)
}

/// Relative squared norm allowed outside the support radius of a test state.
pub const SUPPORT_TAIL: f64 = 1e-16;

/// Checks `steps · v_max + support radius < L`.
pub fn check_no_wrap(model: &WalkModel, psi0: &State, steps: usize) -> Result<()> {
    let radius = psi0.effective_radius(SUPPORT_TAIL) as f64;
    let need = steps as f64 * max_group_speed(model) + radius;
    let l = model.window.half_width();
    if need >= l as f64 {
        return Err(Error::WrapAround { required: need as usize + 1, available: l });
    }
    Ok(())
}

fn evolve(op: &WindowedOperator, v: &State, steps: usize, backward: bool) -> Result<State> {
    let mut s = v.clone();
    for _ in 0..steps {
        s = op.apply(&s, backward)?;
    }
    Ok(s)
}

fn check_free(model: &WalkModel, psi0: &State) -> Result<()> {
    if psi0.space() != model.free_space() {
        return Err(Error::SpaceMismatch { expected: model.free_space(), found: psi0.space() });
    }
    Ok(())
}

/// `W(n) = U_outⁿ T U_in⁻ⁿ` at `n = ±steps`, with Cauchy trace.
fn time_wave(
    u_out: &WindowedOperator,
    t: &WindowedOperator,
    u_in: &WindowedOperator,
    model: &WalkModel,
    sign: Sign,
    psi0: &State,
    steps: usize,
    cauchy_tol: f64,
    method: Method,
) -> Result<WaveResult> {
    check_free(model, psi0)?;
    check_no_wrap(model, psi0, steps)?;
    // sign + : Uⁿ T U₀⁻ⁿ, sign - : U⁻ⁿ T U₀ⁿ
    let back_in = sign == Sign::Plus;
    let mut free = psi0.clone();
    let mut done = 0;
    let mut prev: Option<State> = None;
    let mut trace = Vec::new();
    let mut checkpoints: Vec<usize> = (1..=steps / TRACE_STRIDE).map(|m| m * TRACE_STRIDE).collect();
    if checkpoints.last() != Some(&steps) {
        checkpoints.push(steps);
    }
    let mut current = t.apply(psi0, false)?;
    for n in checkpoints {
        free = evolve(u_in, &free, n - done, back_in)?;
        done = n;
        current = evolve(u_out, &t.apply(&free, false)?, n, !back_in)?;
        if let Some(p) = &prev {
            trace.push((n, current.sub(p).norm()));
        }
        prev = Some(current.clone());
    }
    let converged = trace.last().is_some_and(|t| t.1 <= cauchy_tol);
    let leakage = sqrt(model.edge_mass(&current, 8));
    Ok(WaveResult {
        sign,
        method,
        schedule: Schedule::Time { steps },
        state: current,
        trace,
        converged,
        leakage,
    })
}

/// Strong wave operator by time iteration: `U^{±N} J U₀^{∓N} Ψ₀`.
pub fn strong_wave_apply(model: &WalkModel, sign: Sign, psi0: &State, steps: usize, cauchy_tol: f64) -> Result<WaveResult> {
    time_wave(&model.u, &model.j, &model.u0, model, sign, psi0, steps, cauchy_tol, Method::Strong)
}

/// Integrand of an Abel-regularized wave operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbelTarget {
    /// `R(z)* J R₀(z)`, giving `w_±(U, U₀, J)`.
    Full,
    /// `R₀(z)* J*J R₀(z)`, giving `w_±(U₀, U₀, J*J)`.
    Free,
}

/// `±g_±(ε) ∮ (integrand) φ dθ` for several jobs sharing the per-node factorizations.
///
/// Nodes are processed in fixed chunks and summed in node order, so the result
/// does not depend on the thread count.
pub fn abel_batch(model: &WalkModel, sign: Sign, eps: f64, n_theta: usize, jobs: &[(AbelTarget, &State)]) -> Result<Vec<State>> {
    if !(eps > 1e-5 && eps < 0.5) {
        return Err(Error::InvalidParameter(alloc::format!("eps = {eps} outside (1e-5, 0.5)")));
    }
    if n_theta < 512 {
        return Err(Error::InvalidParameter(alloc::format!("n_theta = {n_theta} below 512")));
    }
    for (_, v) in jobs {
        check_free(model, v)?;
    }
    let jj = jj_operator(model)?;
    let need_full = jobs.iter().any(|j| j.0 == AbelTarget::Full);
    let h = TAU / n_theta as f64;
    let pt0 = RadialPoint::new(eps, sign, 0.0)?;
    let scale = sign.factor() * pt0.weight() * h;
    let out_space = |t: AbelTarget| if t == AbelTarget::Full { model.hilbert() } else { model.free_space() };
    let mut acc: Vec<Vec<C64>> = jobs.iter().map(|j| vec![C64::new(0.0, 0.0); out_space(j.0).dim()]).collect();
    const CHUNK: usize = 64;
    let mut start = 0;
    while start < n_theta {
        let len = CHUNK.min(n_theta - start);
        let parts = par::map(len, |i| -> Result<Vec<Vec<C64>>> {
            let theta = (start + i) as f64 * h;
            let z = RadialPoint::new(eps, sign, theta)?.z();
            let node = |e: Error| Error::AtNode { node: start + i, theta, source: alloc::boxed::Box::new(e) };
            let r0 = Resolvent::new(&model.u0, z).map_err(node)?;
            let r = if need_full { Some(Resolvent::new(&model.u, z).map_err(node)?) } else { None };
            Ok(jobs
                .iter()
                .map(|(target, v)| {
                    let y = r0.apply_slice(v.data(), false);
                    match (target, &r) {
                        (AbelTarget::Full, Some(r)) => r.apply_slice(&model.j.apply_slice(&y, false), true),
                        _ => r0.apply_slice(&jj.apply_slice(&y, false), true),
                    }
                })
                .collect())
        });
        for part in parts {
            for (a, x) in acc.iter_mut().zip(part?) {
                for (ai, xi) in a.iter_mut().zip(x) {
                    *ai += xi;
                }
            }
        }
        start += len;
    }
    acc.into_iter()
        .zip(jobs)
        .map(|(a, j)| State::from_vec(out_space(j.0), a.into_iter().map(|e| e * scale).collect()))
        .collect()
}

fn stationary_result(model: &WalkModel, sign: Sign, eps: f64, n_theta: usize, state: State) -> WaveResult {
    let leakage = sqrt(model.edge_mass(&state, 8));
    WaveResult {
        sign,
        method: Method::Stationary,
        schedule: Schedule::Abel { eps, n_theta },
        state,
        trace: Vec::new(),
        converged: true,
        leakage,
    }
}

/// Stationary wave operator `w_±(ε)` on several inputs.
pub fn stationary_wave_apply_many(
    model: &WalkModel,
    sign: Sign,
    inputs: &[State],
    eps: f64,
    n_theta: usize,
) -> Result<Vec<WaveResult>> {
    let jobs: Vec<(AbelTarget, &State)> = inputs.iter().map(|v| (AbelTarget::Full, v)).collect();
    let out = abel_batch(model, sign, eps, n_theta, &jobs)?;
    Ok(out.into_iter().map(|s| stationary_result(model, sign, eps, n_theta, s)).collect())
}

pub fn stationary_wave_apply(model: &WalkModel, sign: Sign, psi0: &State, eps: f64, n_theta: usize) -> Result<WaveResult> {
    let mut v = stationary_wave_apply_many(model, sign, core::slice::from_ref(psi0), eps, n_theta)?;
    Ok(v.pop().expect("one input"))
}

/// `J*J = diag(j_ℓ, j_r)` on `H₀`.
pub fn jj_operator(model: &WalkModel) -> Result<WindowedOperator> {
    model.j.adjoint().compose(&model.j)
}

/// `w_±(U₀, U₀, J*J)` by time iteration or by the Abel integral.
pub fn jj_wave_apply(model: &WalkModel, sign: Sign, psi0: &State, schedule: Schedule) -> Result<WaveResult> {
    let jj = jj_operator(model)?;
    match schedule {
        Schedule::Time { steps } => time_wave(&model.u0, &jj, &model.u0, model, sign, psi0, steps, f64::INFINITY, Method::Strong),
        Schedule::Abel { eps, n_theta } => {
            let mut out = abel_batch(model, sign, eps, n_theta, &[(AbelTarget::Free, psi0)])?;
            Ok(stationary_result(model, sign, eps, n_theta, out.pop().expect("one input")))
        }
    }
}

/// Both sides of `w_±* w_± = w_±(U₀, U₀, J*J)` as forms on a pair of states.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProductCheck {
    pub lhs: C64,
    pub rhs: C64,
    pub residual: f64,
}

pub fn product_identity_check(
    model: &WalkModel,
    sign: Sign,
    psi0: &State,
    phi0: &State,
    eps: f64,
    n_theta: usize,
) -> Result<ProductCheck> {
    let out = abel_batch(
        model,
        sign,
        eps,
        n_theta,
        &[(AbelTarget::Full, psi0), (AbelTarget::Full, phi0), (AbelTarget::Free, psi0)],
    )?;
    let lhs = out[0].inner(&out[1]);
    let rhs = out[2].inner(phi0);
    Ok(ProductCheck { lhs, rhs, residual: (lhs - rhs).norm() })
}

/// `‖U w Ψ₀ - w U₀ Ψ₀‖` with both wave images supplied.
pub fn intertwining_defect(model: &WalkModel, w_psi: &State, w_u0_psi: &State) -> Result<f64> {
    Ok(model.u.apply(w_psi, false)?.sub(w_u0_psi).norm())
}
