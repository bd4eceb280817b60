//! Spectral decomposition of the free walk `U₀ = U_ℓ ⊕ U_r`.
//!
//! Under `ψ̂(k) = Σ_x e^{-ikx} ψ(x)` the uniform walk `S C_⋆` becomes
//! multiplication by `Û_⋆(k) = diag(e^{ik}, e^{-ik}) C_⋆`, whose eigenphases
//! satisfy `cos(λ - δ/2) = a cos(k + α - δ/2)`. Each side contributes two
//! branches `λ = δ/2 ± arccos(a cos κ)`, `κ = k + α - δ/2`; for `a = 1` the
//! branches are the straight lines `δ/2 ± κ`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{angle_distance, cos, exp, sin, sqrt, wrap_angle, PI, TAU};
use crate::op::{Space, State};
use crate::walk::{build_coin_matrix, CoinParams, Mat2, WalkModel};
use crate::C64;

/// Default exclusion radius around thresholds, in radians.
pub const EXCLUSION_RADIUS: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Slot of this side in `H₀`.
    pub fn copy(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }
}

/// `Û(k) = diag(e^{ik}, e^{-ik}) C`.
pub fn symbol(coin: &Mat2, k: f64) -> Mat2 {
    let p = C64::from_polar(1.0, k);
    let m = p.conj();
    [[p * coin[0][0], p * coin[0][1]], [m * coin[1][0], m * coin[1][1]]]
}

/// Closed-form branches of one asymptotic coin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dispersion {
    pub params: CoinParams,
    coin: Mat2,
}

impl Dispersion {
    pub fn new(params: CoinParams) -> Result<Self> {
        Ok(Self { params, coin: build_coin_matrix(&params)? })
    }

    fn kappa(&self, k: f64) -> f64 {
        k + self.params.alpha - self.params.delta / 2.0
    }

    fn flat(&self) -> bool {
        self.params.a >= 1.0
    }

    /// Branch sign `+1` for branch 0, `-1` for branch 1.
    fn branch_sign(branch: usize) -> f64 {
        if branch == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// `λ_j(k)`, continuous in `k` (not reduced mod 2π).
    pub fn phase(&self, branch: usize, k: f64) -> f64 {
        let s = Self::branch_sign(branch);
        let kap = self.kappa(k);
        if self.flat() {
            self.params.delta / 2.0 + s * kap
        } else {
            self.params.delta / 2.0 + s * libm::acos(self.params.a * cos(kap))
        }
    }

    /// Group velocity `dλ_j/dk`.
    pub fn velocity(&self, branch: usize, k: f64) -> f64 {
        let s = Self::branch_sign(branch);
        if self.flat() {
            return s;
        }
        let kap = self.kappa(k);
        let a = self.params.a;
        let c = a * cos(kap);
        s * a * sin(kap) / sqrt((1.0 - c * c).max(0.0))
    }

    /// Unit eigenvector of `Û(k)` for `e^{iλ_j(k)}`, largest component real positive.
    pub fn eigenvector(&self, branch: usize, k: f64) -> [C64; 2] {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        if self.flat() {
            return if branch == 0 { [one, zero] } else { [zero, one] };
        }
        let u = symbol(&self.coin, k);
        let mu = C64::from_polar(1.0, self.phase(branch, k));
        let c1 = [u[0][1], mu - u[0][0]];
        let c2 = [mu - u[1][1], u[1][0]];
        let n1 = c1[0].norm_sqr() + c1[1].norm_sqr();
        let n2 = c2[0].norm_sqr() + c2[1].norm_sqr();
        let v = if n1 >= n2 { c1 } else { c2 };
        gauge([v[0], v[1]])
    }

    /// Band edges: `λ_j` at `κ ∈ {0, π}` when `a < 1`, none otherwise.
    pub fn thresholds(&self) -> Vec<f64> {
        if self.flat() {
            return Vec::new();
        }
        let mut out = Vec::new();
        for branch in 0..2 {
            for kap in [0.0, PI] {
                let k = kap - self.params.alpha + self.params.delta / 2.0;
                out.push(wrap_angle(self.phase(branch, k)));
            }
        }
        dedup_angles(out)
    }

    /// Momenta `k ∈ [0, 2π)` with `λ_j(k) ≡ θ`, by bisection on monotone segments.
    pub fn momenta(&self, branch: usize, theta: f64) -> Vec<f64> {
        let off = -self.params.alpha + self.params.delta / 2.0;
        let segments: Vec<(f64, f64)> = if self.flat() {
            vec![(0.0, TAU)]
        } else {
            // velocity vanishes at κ = 0, π
            vec![(off, off + PI), (off + PI, off + TAU)]
        };
        let mut out = Vec::new();
        for (k0, k1) in segments {
            let f = |k: f64| -> f64 { self.phase(branch, k) };
            let (f0, f1) = (f(k0), f(k1));
            let (lo, hi) = if f0 <= f1 { (f0, f1) } else { (f1, f0) };
            // find a representative of θ inside [lo, hi]
            let mut target = theta + TAU * libm::floor((lo - theta) / TAU);
            while target < lo {
                target += TAU;
            }
            while target <= hi {
                if let Some(k) = bisect(&f, k0, k1, target) {
                    let kw = wrap_angle(k);
                    if !out.iter().any(|&q: &f64| angle_distance(q, kw) < 1e-12) {
                        out.push(kw);
                    }
                }
                target += TAU;
            }
        }
        out.sort_by(f64::total_cmp);
        out
    }

    /// Angular arcs covered by the two branches.
    pub fn multiplicity(&self, theta: f64) -> usize {
        (0..2).map(|j| self.momenta(j, theta).len()).sum()
    }
}

fn gauge(v: [C64; 2]) -> [C64; 2] {
    let n = sqrt(v[0].norm_sqr() + v[1].norm_sqr());
    let big = if v[0].norm() >= v[1].norm() { v[0] } else { v[1] };
    let ph = big.conj() / big.norm() / n;
    [v[0] * ph, v[1] * ph]
}

fn bisect<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, target: f64) -> Option<f64> {
    let (mut lo, mut hi) = (a, b);
    let (flo, fhi) = (f(lo) - target, f(hi) - target);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo * fhi > 0.0 {
        return None;
    }
    let increasing = fhi > flo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid) - target;
        if (fm < 0.0) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

fn dedup_angles(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::new();
    for t in v {
        if !out.iter().any(|&q| angle_distance(q, t) < 1e-10) {
            out.push(t);
        }
    }
    out
}

/// Sampled branch with eigenvectors and spectrally differentiated velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct BandFunction {
    pub branch: usize,
    pub k: Vec<f64>,
    /// Unwrapped eigenphases.
    pub lambda: Vec<f64>,
    pub eigenvectors: Vec<[C64; 2]>,
    pub velocity: Vec<f64>,
    /// `max |cos(λ - δ/2) - a cos(k + α - δ/2)|` over the grid.
    pub relation_residual: f64,
}

fn eig2(u: &Mat2) -> [(C64, [C64; 2]); 2] {
    let tr = u[0][0] + u[1][1];
    let det = u[0][0] * u[1][1] - u[0][1] * u[1][0];
    let disc = (tr * tr * 0.25 - det).sqrt();
    let mus = [tr * 0.5 + disc, tr * 0.5 - disc];
    mus.map(|mu| {
        let c1 = [u[0][1], mu - u[0][0]];
        let c2 = [mu - u[1][1], u[1][0]];
        let n1 = c1[0].norm_sqr() + c1[1].norm_sqr();
        let n2 = c2[0].norm_sqr() + c2[1].norm_sqr();
        let v = if n1.max(n2) < 1e-24 {
            [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
        } else if n1 >= n2 {
            c1
        } else {
            c2
        };
        (mu, gauge(v))
    })
}

fn overlap(a: &[C64; 2], b: &[C64; 2]) -> f64 {
    (a[0].conj() * b[0] + a[1].conj() * b[1]).norm()
}

/// Samples both branches of `Û(k)` on `n_k` points by numerical 2×2
/// diagonalization, tracking branches by eigenvector continuity.
pub fn band_functions(params: &CoinParams, n_k: usize) -> Result<[BandFunction; 2]> {
    if n_k < 256 || !n_k.is_power_of_two() {
        return Err(Error::InvalidParameter(alloc::format!("n_k = {n_k} must be a power of two >= 256")));
    }
    let mut n = n_k;
    for _ in 0..2 {
        match sample_bands(params, n) {
            Ok(b) => return Ok(b),
            Err(_) => n *= 4,
        }
    }
    sample_bands(params, n)
}

fn sample_bands(params: &CoinParams, n: usize) -> Result<[BandFunction; 2]> {
    let coin = build_coin_matrix(params)?;
    let ks: Vec<f64> = (0..n).map(|i| TAU * i as f64 / n as f64).collect();
    let mut lam = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut vecs: [Vec<[C64; 2]>; 2] = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut prev: Option<[[C64; 2]; 2]> = None;
    for &k in &ks {
        let pairs = eig2(&symbol(&coin, k));
        let order = match prev {
            None => {
                // branch 0 carries the larger phase offset from δ/2 at the start
                let a0 = wrap_angle(pairs[0].0.arg() - params.delta / 2.0);
                if a0 <= PI {
                    [0, 1]
                } else {
                    [1, 0]
                }
            }
            Some(_) if (pairs[0].0 - pairs[1].0).norm() < 1e-12 => {
                // scalar symbol: any basis diagonalizes it, keep the previous one
                let p = prev.expect("checked");
                let mu = pairs[0].0;
                for j in 0..2 {
                    let mut ph = mu.arg();
                    let last = lam[j].last().copied().unwrap_or(ph);
                    ph += TAU * libm::round((last - ph) / TAU);
                    lam[j].push(ph);
                    vecs[j].push(p[j]);
                }
                continue;
            }
            Some(p) => {
                let keep = overlap(&p[0], &pairs[0].1) + overlap(&p[1], &pairs[1].1);
                let swap = overlap(&p[0], &pairs[1].1) + overlap(&p[1], &pairs[0].1);
                if (keep - swap).abs() < 1e-6 && overlap(&pairs[0].1, &pairs[1].1) > 1e-3 {
                    return Err(Error::BranchTracking(alloc::format!("ambiguous eigenvectors at k = {k}")));
                }
                if keep >= swap {
                    [0, 1]
                } else {
                    [1, 0]
                }
            }
        };
        let mut cur = [[C64::new(0.0, 0.0); 2]; 2];
        for j in 0..2 {
            let (mu, v) = pairs[order[j]];
            let mut ph = mu.arg();
            if let Some(last) = lam[j].last() {
                ph += TAU * libm::round((last - ph) / TAU);
            }
            lam[j].push(ph);
            vecs[j].push(v);
            cur[j] = v;
        }
        prev = Some(cur);
    }
    let mut out = Vec::with_capacity(2);
    for j in 0..2 {
        let l = &lam[j];
        // winding of the unwrapped phase over one period of k
        let step_end = l[n - 1] + (l[1] - l[0]);
        let winding = libm::round((step_end - l[0]) / TAU);
        let periodic: Vec<f64> = l.iter().zip(&ks).map(|(x, k)| x - winding * k).collect();
        let dp = spectral_derivative(&periodic);
        let velocity: Vec<f64> = dp.iter().map(|d| d + winding).collect();
        let mut res: f64 = 0.0;
        for (x, k) in l.iter().zip(&ks) {
            let kap = k + params.alpha - params.delta / 2.0;
            res = res.max((cos(x - params.delta / 2.0) - params.a * cos(kap)).abs());
        }
        out.push(BandFunction {
            branch: j,
            k: ks.clone(),
            lambda: l.clone(),
            eigenvectors: vecs[j].clone(),
            velocity,
            relation_residual: res,
        });
    }
    let b1 = out.pop().expect("two branches");
    let b0 = out.pop().expect("two branches");
    Ok([b0, b1])
}

/// Derivative of a periodic sample sequence on `[0, 2π)` by discrete Fourier transform.
fn spectral_derivative(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let half = (n / 2) as i64;
    let mut coef = vec![C64::new(0.0, 0.0); n];
    for (m, c) in coef.iter_mut().enumerate() {
        let mut s = C64::new(0.0, 0.0);
        for (i, v) in f.iter().enumerate() {
            s += C64::from_polar(*v, -TAU * ((m * i) % n) as f64 / n as f64);
        }
        *c = s / n as f64;
    }
    (0..n)
        .map(|i| {
            let mut s = 0.0;
            for (m, c) in coef.iter().enumerate() {
                let mm = if (m as i64) < half { m as i64 } else if m as i64 == half { 0 } else { m as i64 - n as i64 };
                if mm != 0 {
                    let e = C64::from_polar(1.0, TAU * ((m * i) % n) as f64 / n as f64);
                    s += (C64::new(0.0, mm as f64) * c * e).re;
                }
            }
            s
        })
        .collect()
}

/// One scattering channel of the fiber at `θ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Channel {
    pub side: Side,
    pub branch: usize,
    pub k: f64,
    pub eigenvector: [C64; 2],
    pub velocity: f64,
}

/// Channels spanning the fiber `ℌ₀(θ)`, ordered by side, branch and momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct Fiber {
    pub theta: f64,
    pub channels: Vec<Channel>,
}

impl Channel {
    /// Spatial drift per step under `U₀`; the phase convention makes it `-dλ/dk`.
    pub fn drift(&self) -> f64 {
        -self.velocity
    }
}

impl Fiber {
    pub fn dim(&self) -> usize {
        self.channels.len()
    }
}

/// Coefficients over the channels of a fiber.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberVector {
    pub fiber: Fiber,
    pub coeffs: Vec<C64>,
}

impl FiberVector {
    pub fn inner(&self, other: &FiberVector) -> C64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .fold(C64::new(0.0, 0.0), |s, (a, b)| s + a * b.conj())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Free spectral data of a walk model: both sides' dispersion and the threshold set.
#[derive(Clone, Debug)]
pub struct FreeSpectrum {
    pub window: crate::op::LatticeWindow,
    pub left: Dispersion,
    pub right: Dispersion,
    pub exclusion: f64,
}

impl FreeSpectrum {
    pub fn new(model: &WalkModel) -> Result<Self> {
        Ok(Self {
            window: model.window,
            left: Dispersion::new(model.field.left)?,
            right: Dispersion::new(model.field.right)?,
            exclusion: EXCLUSION_RADIUS,
        })
    }

    pub fn with_exclusion(mut self, radius: f64) -> Self {
        self.exclusion = radius;
        self
    }

    pub fn side(&self, side: Side) -> &Dispersion {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    /// `τ(U) = ∂σ(U_ℓ) ∪ ∂σ(U_r)`, sorted in `[0, 2π)`.
    pub fn thresholds(&self) -> Vec<f64> {
        let mut all = self.left.thresholds();
        all.extend(self.right.thresholds());
        dedup_angles(all)
    }

    /// Distance from `θ` to the nearest threshold (infinite when there is none).
    pub fn threshold_distance(&self, theta: f64) -> (f64, f64) {
        self.thresholds()
            .into_iter()
            .map(|t| (angle_distance(theta, t), t))
            .fold((f64::INFINITY, f64::NAN), |a, b| if b.0 < a.0 { b } else { a })
    }

    /// Fiber at `θ` without the threshold check.
    pub fn fiber_unchecked(&self, theta: f64) -> Fiber {
        let theta = wrap_angle(theta);
        let mut channels = Vec::new();
        for side in [Side::Left, Side::Right] {
            let d = self.side(side);
            for branch in 0..2 {
                for k in d.momenta(branch, theta) {
                    channels.push(Channel {
                        side,
                        branch,
                        k,
                        eigenvector: d.eigenvector(branch, k),
                        velocity: d.velocity(branch, k),
                    });
                }
            }
        }
        Fiber { theta, channels }
    }

    /// Fiber at `θ`, refusing angles within the exclusion radius of a threshold.
    pub fn fiber_at(&self, theta: f64) -> Result<Fiber> {
        let (dist, t) = self.threshold_distance(theta);
        if dist < self.exclusion {
            return Err(Error::ThresholdProximity { theta, threshold: t, radius: self.exclusion });
        }
        Ok(self.fiber_unchecked(theta))
    }

    /// Plane wave `φ_c = (2π)^{-1/2} |v|^{-1/2} e^{ikx} u(k)` in the channel's slot,
    /// so that `(F₀Ψ₀)_c = ⟨Ψ₀, φ_c⟩`.
    pub fn channel_functional(&self, ch: &Channel) -> State {
        let w = self.window;
        let mut s = State::zeros(Space::H0(w));
        let amp = 1.0 / sqrt(TAU * ch.velocity.abs());
        for x in w.positions() {
            let e = C64::from_polar(amp, ch.k * x as f64);
            for comp in 0..2 {
                s.set(ch.side.copy(), x, comp, e * ch.eigenvector[comp]);
            }
        }
        s
    }

    /// `(F₀Ψ₀)(θ)` on a given fiber.
    pub fn f0_on_fiber(&self, fiber: &Fiber, psi0: &State) -> FiberVector {
        let w = self.window;
        let coeffs = fiber
            .channels
            .iter()
            .map(|ch| {
                let amp = 1.0 / sqrt(TAU * ch.velocity.abs());
                let mut hat = [C64::new(0.0, 0.0); 2];
                for x in w.positions() {
                    let e = C64::from_polar(1.0, -ch.k * x as f64);
                    for (comp, h) in hat.iter_mut().enumerate() {
                        *h += e * psi0.get(ch.side.copy(), x, comp);
                    }
                }
                (ch.eigenvector[0].conj() * hat[0] + ch.eigenvector[1].conj() * hat[1]) * amp
            })
            .collect();
        FiberVector { fiber: fiber.clone(), coeffs }
    }

    /// `(F₀Ψ₀)(θ)`.
    pub fn f0_apply(&self, psi0: &State, theta: f64) -> Result<FiberVector> {
        if psi0.space() != Space::H0(self.window) {
            return Err(Error::SpaceMismatch { expected: Space::H0(self.window), found: psi0.space() });
        }
        let fiber = self.fiber_at(theta)?;
        Ok(self.f0_on_fiber(&fiber, psi0))
    }

    /// Arcs `(start, end)` of one side's spectrum, empty gaps excluded.
    fn side_arcs(&self, side: Side) -> Vec<(f64, f64)> {
        let d = self.side(side);
        let th = d.thresholds();
        if th.is_empty() {
            return vec![(0.0, TAU)];
        }
        let mut arcs = Vec::new();
        for i in 0..th.len() {
            let a = th[i];
            let mut b = th[(i + 1) % th.len()];
            if b <= a {
                b += TAU;
            }
            if d.multiplicity(wrap_angle(0.5 * (a + b))) > 0 {
                arcs.push((a, b));
            }
        }
        arcs
    }

    /// `∫ Σ_c |(F₀Ψ₀)(θ)_c|² dθ` over the core spectrum.
    ///
    /// Each arc between band edges is mapped to `t ∈ [0, π]` by
    /// `θ = a + (b - a)(1 - cos t)/2`, which absorbs the inverse square-root
    /// growth of `|v|^{-1}` at the edges; the midpoint rule is used in `t`.
    pub fn f0_norm_integral(&self, psi0: &State, n_theta: usize) -> f64 {
        let mut total = 0.0;
        for side in [Side::Left, Side::Right] {
            let arcs = self.side_arcs(side);
            let share = (n_theta / arcs.len()).max(16);
            for (a, b) in arcs {
                let full = (b - a - TAU).abs() < 1e-12;
                let vals = crate::par::map(share, |i| {
                    let (theta, jac) = if full {
                        (a + TAU * (i as f64 + 0.5) / share as f64, TAU / share as f64)
                    } else {
                        let t = PI * (i as f64 + 0.5) / share as f64;
                        (a + 0.5 * (b - a) * (1.0 - cos(t)), 0.5 * (b - a) * sin(t) * PI / share as f64)
                    };
                    let fiber = self.fiber_unchecked(theta);
                    let sub = Fiber {
                        theta: fiber.theta,
                        channels: fiber.channels.into_iter().filter(|c| c.side == side).collect(),
                    };
                    self.f0_on_fiber(&sub, psi0).norm_sqr() * jac
                });
                total += vals.iter().sum::<f64>();
            }
        }
        total
    }

    /// Union of both sides' spectra with the channel count.
    pub fn core_spectrum(&self) -> CoreSpectrum {
        let breaks = self.thresholds();
        let mut pieces = Vec::new();
        if breaks.is_empty() {
            let m = self.fiber_unchecked(0.0).dim();
            pieces.push((0.0, TAU, m));
        } else {
            for i in 0..breaks.len() {
                let a = breaks[i];
                let mut b = breaks[(i + 1) % breaks.len()];
                if b <= a {
                    b += TAU;
                }
                let m = self.fiber_unchecked(wrap_angle(0.5 * (a + b))).dim();
                pieces.push((a, b, m));
            }
        }
        CoreSpectrum { pieces }
    }

    /// Wave packet in one channel: `F₀Ψ₀` is a Gaussian of width `σ_θ` around
    /// `θ*` on the channel's monotone band segment, cut off smoothly before the
    /// band edges; the state is centred at `x₀`.
    pub fn wave_packet(&self, ch: &Channel, theta_star: f64, sigma: f64, center: i64) -> Result<State> {
        let d = self.side(ch.side);
        let w = self.window;
        let l = w.half_width() as f64;
        let (dist, _) = {
            let th = d.thresholds();
            th.iter()
                .map(|&t| (angle_distance(theta_star, t), t))
                .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a })
        };
        if dist < 6.0 * sigma {
            return Err(Error::InvalidParameter(alloc::format!(
                "packet at θ* = {theta_star} with σ = {sigma} reaches a band edge"
            )));
        }
        let kap_sign = sin(ch.k + d.params.alpha - d.params.delta / 2.0).signum();
        let same_segment = |k: f64| d.flat() || sin(k + d.params.alpha - d.params.delta / 2.0).signum() == kap_sign;
        let nq = 8 * w.sites();
        let mut hat: Vec<(f64, [C64; 2])> = Vec::new();
        for i in 0..nq {
            let k = TAU * i as f64 / nq as f64;
            if !same_segment(k) {
                continue;
            }
            let th = d.phase(ch.branch, k);
            let mut dt = wrap_angle(th - theta_star);
            if dt > PI {
                dt -= TAU;
            }
            let mut g = exp(-dt * dt / (4.0 * sigma * sigma));
            if dist.is_finite() {
                // flat-topped cutoff vanishing smoothly at the band edges
                let t = dt / dist;
                let t8 = (t * t) * (t * t) * (t * t) * (t * t);
                g = if t8 >= 1.0 { 0.0 } else { g * exp(1.0 - 1.0 / (1.0 - t8)) };
            }
            if g < 1e-17 {
                continue;
            }
            let v = d.velocity(ch.branch, k).abs();
            let h = sqrt(TAU * v) * g;
            let u = d.eigenvector(ch.branch, k);
            let shift = C64::from_polar(h, -k * center as f64);
            hat.push((k, [u[0] * shift, u[1] * shift]));
        }
        let mut s = State::zeros(Space::H0(w));
        for x in w.positions() {
            let mut acc = [C64::new(0.0, 0.0); 2];
            for (k, u) in &hat {
                let e = C64::from_polar(1.0, k * x as f64);
                acc[0] += e * u[0];
                acc[1] += e * u[1];
            }
            for comp in 0..2 {
                s.set(ch.side.copy(), x, comp, acc[comp] / nq as f64);
            }
        }
        let n = s.norm();
        if n == 0.0 {
            return Err(Error::InvalidParameter("empty wave packet".into()));
        }
        let s = s.scaled(C64::new(1.0 / n, 0.0));
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for x in w.positions() {
            let p: f64 = (0..2).map(|c| s.get(ch.side.copy(), x, c).norm_sqr()).sum();
            m1 += p * x as f64;
            m2 += p * (x * x) as f64;
        }
        let spread = sqrt((m2 - m1 * m1).max(0.0));
        if spread > l / 4.0 || (center.unsigned_abs() as f64 + 3.0 * spread) > l {
            return Err(Error::PacketTooWide(alloc::format!(
                "position spread {spread:.1} around x = {center} does not fit half-width {l}"
            )));
        }
        Ok(s)
    }
}

/// Spectral pieces between consecutive thresholds with their multiplicity.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreSpectrum {
    /// `(start, end, d_θ)`, `end` possibly beyond `2π`.
    pub pieces: Vec<(f64, f64, usize)>,
}

impl CoreSpectrum {
    pub fn multiplicity(&self, theta: f64) -> usize {
        let t = wrap_angle(theta);
        for &(a, b, m) in &self.pieces {
            if (t >= a && t < b) || (t + TAU >= a && t + TAU < b) {
                return m;
            }
        }
        0
    }

    /// True when `θ` lies within `inflate` of a piece with positive multiplicity.
    pub fn contains(&self, theta: f64, inflate: f64) -> bool {
        let t = wrap_angle(theta);
        self.pieces.iter().filter(|p| p.2 > 0).any(|&(a, b, _)| {
            let inside = (t >= a && t <= b) || (t + TAU >= a && t + TAU <= b);
            inside || angle_distance(t, a) <= inflate || angle_distance(t, wrap_angle(b)) <= inflate
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk::CoinParams;

    #[test]
    fn hadamard_thresholds() {
        let d = Dispersion::new(CoinParams::hadamard()).unwrap();
        let t = d.thresholds();
        let expect = [PI / 4.0, 3.0 * PI / 4.0, 5.0 * PI / 4.0, 7.0 * PI / 4.0];
        assert_eq!(t.len(), 4);
        for (a, b) in t.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn identity_coin_branches() {
        let d = Dispersion::new(CoinParams::identity()).unwrap();
        assert!(d.thresholds().is_empty());
        let m = d.momenta(0, PI / 2.0);
        assert_eq!(m.len(), 1);
        assert!((m[0] - PI / 2.0).abs() < 1e-12);
        let m = d.momenta(1, PI / 2.0);
        assert_eq!(m.len(), 1);
        assert!((m[0] - 3.0 * PI / 2.0).abs() < 1e-12);
        assert_eq!(d.velocity(0, 0.3), 1.0);
        assert_eq!(d.velocity(1, 0.3), -1.0);
    }

    #[test]
    fn eigenvectors_match_symbol() {
        let p = CoinParams::new(0.6, 0.8, 0.4, -1.1, 2.0).unwrap();
        let d = Dispersion::new(p).unwrap();
        let coin = build_coin_matrix(&p).unwrap();
        for i in 0..50 {
            let k = 0.13 * i as f64;
            for j in 0..2 {
                let u = symbol(&coin, k);
                let v = d.eigenvector(j, k);
                let mu = C64::from_polar(1.0, d.phase(j, k));
                for r in 0..2 {
                    let lhs = u[r][0] * v[0] + u[r][1] * v[1];
                    assert!((lhs - mu * v[r]).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn spectral_derivative_of_sine() {
        let n = 64;
        let f: Vec<f64> = (0..n).map(|i| sin(3.0 * TAU * i as f64 / n as f64)).collect();
        let d = spectral_derivative(&f);
        for (i, v) in d.iter().enumerate() {
            let x = TAU * i as f64 / n as f64;
            assert!((v - 3.0 * cos(3.0 * x)).abs() < 1e-10);
        }
    }
}
