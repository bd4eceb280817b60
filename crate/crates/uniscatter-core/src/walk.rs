//! Anisotropic quantum walk `U = SC` on the window, its asymptotic and free
//! evolutions, the identification `J` and the factorized perturbation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{bracket, cos, log, pow, sin, sqrt, PI};
use crate::op::{block_adjoint, block_mul, Block, LatticeWindow, Space, State, WindowedOperator};
use crate::resolvent::Resolvent;
use crate::C64;

pub type Mat2 = Block;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub const IDENTITY2: Mat2 = [[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]];

/// Spectral norm of a 2×2 matrix.
pub fn mat2_norm(m: &Mat2) -> f64 {
    let p = block_mul(&block_adjoint(m), m);
    let tr = p[0][0].re + p[1][1].re;
    let det = (p[0][0] * p[1][1] - p[0][1] * p[1][0]).re;
    let disc = (tr * tr / 4.0 - det).max(0.0);
    sqrt((tr / 2.0 + sqrt(disc)).max(0.0))
}

pub fn mat2_sub(a: &Mat2, b: &Mat2) -> Mat2 {
    [[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]]
}

/// `‖M*M - 1‖` for a 2×2 matrix.
pub fn unitarity_defect(m: &Mat2) -> f64 {
    mat2_norm(&mat2_sub(&block_mul(&block_adjoint(m), m), &IDENTITY2))
}

pub fn mat2_det(m: &Mat2) -> C64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// `exp(i t H)` for a Hermitian 2×2 matrix `H`.
pub fn expi_hermitian(h: &Mat2, t: f64) -> Mat2 {
    // H = a0 + a·σ
    let a0 = 0.5 * (h[0][0].re + h[1][1].re);
    let az = 0.5 * (h[0][0].re - h[1][1].re);
    let ax = h[0][1].re;
    let ay = -h[0][1].im;
    let n = sqrt(ax * ax + ay * ay + az * az);
    let ph = C64::from_polar(1.0, t * a0);
    let (cs, sn) = (cos(t * n), sin(t * n));
    let k = if n > 0.0 { sn / n } else { t };
    let i = c(0.0, 1.0);
    // cos(tn) + i sin(tn) (a·σ)/n
    let m = [
        [c(cs, 0.0) + i * k * az, i * k * c(ax, -ay)],
        [i * k * c(ax, ay), c(cs, 0.0) - i * k * az],
    ];
    [[ph * m[0][0], ph * m[0][1]], [ph * m[1][0], ph * m[1][1]]]
}

/// Parameters `(a, b, α, β, δ)` of an asymptotic coin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoinParams {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
}

impl CoinParams {
    pub fn new(a: f64, b: f64, alpha: f64, beta: f64, delta: f64) -> Result<Self> {
        let p = Self { a, b, alpha, beta, delta };
        p.validate()?;
        Ok(p)
    }

    pub fn identity() -> Self {
        Self { a: 1.0, b: 0.0, alpha: 0.0, beta: 0.0, delta: 0.0 }
    }

    pub fn hadamard() -> Self {
        let h = core::f64::consts::FRAC_1_SQRT_2;
        Self { a: h, b: h, alpha: 0.0, beta: 0.0, delta: PI }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a", self.a), ("b", self.b)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("coin parameter {name} = {v} outside [0, 1]")));
            }
        }
        if (self.a * self.a + self.b * self.b - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "coin parameters violate a² + b² = 1 (a = {}, b = {})",
                self.a, self.b
            )));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("delta", self.delta)] {
            if !(v > -PI && v <= PI) {
                return Err(Error::InvalidParameter(format!("coin angle {name} = {v} outside (-π, π]")));
            }
        }
        Ok(())
    }
}

/// The unitary 2×2 coin for the given parameters.
pub fn build_coin_matrix(p: &CoinParams) -> Result<Mat2> {
    p.validate()?;
    let g = C64::from_polar(1.0, p.delta / 2.0);
    let ea = C64::from_polar(1.0, p.alpha - p.delta / 2.0);
    let eb = C64::from_polar(1.0, p.beta - p.delta / 2.0);
    Ok([
        [g * ea * p.a, g * eb * p.b],
        [-g * eb.conj() * p.b, g * ea.conj() * p.a],
    ])
}

/// Declared decay `‖C(x) - C_⋆‖ ≤ κ_⋆ |x|^{-1-ε_⋆}` on each side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decay {
    pub kappa_left: f64,
    pub eps_left: f64,
    pub kappa_right: f64,
    pub eps_right: f64,
}

impl Default for Decay {
    fn default() -> Self {
        Self { kappa_left: 1.0, eps_left: 1.0, kappa_right: 1.0, eps_right: 1.0 }
    }
}

/// How the coin departs from its asymptotes.
#[derive(Clone, Debug, PartialEq)]
pub enum Deviation {
    /// Asymptotes everywhere (`x < 0` left, `x ≥ 0` right).
    None,
    /// Explicit coins at finitely many sites.
    Table(Vec<(i64, Mat2)>),
    /// `C(x) = C_⋆ exp(i κ_⋆ ⟨x⟩^{-1-ε_⋆} H_⋆)` with Hermitian seeds of norm ≤ 1.
    Generator { seed_left: Mat2, seed_right: Mat2 },
}

/// Coin field `x ↦ C(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoinField {
    pub left: CoinParams,
    pub right: CoinParams,
    pub deviation: Deviation,
    pub decay: Decay,
}

impl CoinField {
    pub fn uniform(p: CoinParams) -> Self {
        Self { left: p, right: p, deviation: Deviation::None, decay: Decay::default() }
    }

    pub fn asymptote(&self, x: i64) -> Result<Mat2> {
        build_coin_matrix(if x < 0 { &self.left } else { &self.right })
    }

    pub fn coin(&self, x: i64) -> Result<Mat2> {
        let base = self.asymptote(x)?;
        Ok(match &self.deviation {
            Deviation::None => base,
            Deviation::Table(t) => t.iter().rev().find(|e| e.0 == x).map_or(base, |e| e.1),
            Deviation::Generator { seed_left, seed_right } => {
                let (seed, kappa, eps) = if x < 0 {
                    (seed_left, self.decay.kappa_left, self.decay.eps_left)
                } else {
                    (seed_right, self.decay.kappa_right, self.decay.eps_right)
                };
                let t = kappa * pow(bracket(x as f64), -1.0 - eps);
                block_mul(&base, &expi_hermitian(seed, t))
            }
        })
    }

    /// Declared bound `κ_⋆ |x|^{-1-ε_⋆}` (infinite at the origin).
    pub fn bound(&self, x: i64) -> f64 {
        if x == 0 {
            return f64::INFINITY;
        }
        let (k, e) = if x < 0 {
            (self.decay.kappa_left, self.decay.eps_left)
        } else {
            (self.decay.kappa_right, self.decay.eps_right)
        };
        k * pow((x as f64).abs(), -1.0 - e)
    }

    /// Largest `|x|` at which the coin differs from the asymptote.
    fn table_radius(&self) -> i64 {
        match &self.deviation {
            Deviation::Table(t) => t.iter().map(|e| e.0.abs()).max().unwrap_or(0),
            _ => 0,
        }
    }

    fn validate(&self) -> Result<()> {
        self.left.validate()?;
        self.right.validate()?;
        let d = &self.decay;
        if !(d.kappa_left > 0.0 && d.kappa_right > 0.0 && d.eps_left > 0.0 && d.eps_right > 0.0) {
            return Err(Error::InvalidParameter("decay constants must be positive".into()));
        }
        match &self.deviation {
            Deviation::Table(t) => {
                for (x, m) in t {
                    if unitarity_defect(m) > 1e-13 {
                        return Err(Error::InvalidParameter(format!("coin at site {x} is not unitary")));
                    }
                }
            }
            Deviation::Generator { seed_left, seed_right } => {
                for s in [seed_left, seed_right] {
                    let herm = mat2_norm(&mat2_sub(s, &block_adjoint(s)));
                    if herm > 1e-14 || mat2_norm(s) > 1.0 + 1e-12 {
                        return Err(Error::InvalidParameter("generator seed must be Hermitian with norm ≤ 1".into()));
                    }
                }
            }
            Deviation::None => {}
        }
        Ok(())
    }
}

/// Per-site decay verification and a fitted power law per side.
#[derive(Clone, Debug, PartialEq)]
pub struct ShortRangeReport {
    /// `(x, ‖C(x) - C_⋆‖)` over the inspected sites.
    pub deviations: Vec<(i64, f64)>,
    pub declared: Decay,
    /// Fitted `(κ, exponent)` with `deviation ≈ κ |x|^{exponent}`, when enough data exist.
    pub fitted_left: Option<(f64, f64)>,
    pub fitted_right: Option<(f64, f64)>,
    /// Sites where the declared bound fails.
    pub violations: Vec<i64>,
}

impl ShortRangeReport {
    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }
}

fn fit_power_law(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (log(x), log(y));
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let den = n * sxx - sx * sx;
    if den.abs() < 1e-300 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / den;
    let icpt = (sy - slope * sx) / n;
    Some((libm::exp(icpt), slope))
}

/// Checks `‖C(x) - C_⋆‖ ≤ κ_⋆ |x|^{-1-ε_⋆}` on `0 < |x| ≤ L` and fits the decay.
pub fn check_short_range(field: &CoinField, window: LatticeWindow) -> Result<ShortRangeReport> {
    let l = window.half_width() as i64;
    let mut deviations = Vec::new();
    let mut violations = Vec::new();
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for x in -l..=l {
        let dev = mat2_norm(&mat2_sub(&field.coin(x)?, &field.asymptote(x)?));
        deviations.push((x, dev));
        if x != 0 {
            if dev > field.bound(x) * (1.0 + 1e-12) {
                violations.push(x);
            }
            if dev > 1e-14 {
                let pt = ((x as f64).abs(), dev);
                if x < 0 {
                    left.push(pt)
                } else {
                    right.push(pt)
                }
            }
        }
    }
    Ok(ShortRangeReport {
        deviations,
        declared: field.decay,
        fitted_left: fit_power_law(&left),
        fitted_right: fit_power_law(&right),
        violations,
    })
}

/// `V = G* G₀` with `G₀ = ⟨Q⟩^{-s} ⊕ ⟨Q⟩^{-s}`, `G = D* ⟨Q⟩^{-s}`.
#[derive(Clone, Debug)]
pub struct Factorization {
    pub s: f64,
    /// `⟨Q⟩^{-s}` on `H`.
    pub weight: WindowedOperator,
    pub g0: WindowedOperator,
    pub g: WindowedOperator,
    pub d: WindowedOperator,
    /// `max |V - G* G₀|` entrywise.
    pub residual: f64,
    /// `(radius, ‖D‖)` over nested sub-windows.
    pub d_norms: Vec<(usize, f64)>,
}

/// Assembled walk and the operators of the scattering triple.
#[derive(Clone, Debug)]
pub struct WalkModel {
    pub window: LatticeWindow,
    pub field: CoinField,
    pub coins: Vec<Mat2>,
    pub u: WindowedOperator,
    pub u_left: WindowedOperator,
    pub u_right: WindowedOperator,
    pub u0: WindowedOperator,
    pub j: WindowedOperator,
    pub v: WindowedOperator,
    pub factorization: Factorization,
}

/// `S C` for a site-wise coin list, with the shift reading `Ψ⁰(x+1)` and `Ψ¹(x-1)`.
pub fn shift_coin(window: LatticeWindow, coins: &[Mat2]) -> Result<WindowedOperator> {
    let n = window.sites();
    let z = c(0.0, 0.0);
    let rows = (0..n)
        .map(|i| {
            let x = window.position(i);
            let up = window.wrap(x + 1);
            let down = window.wrap(x - 1);
            let cu = coins[up];
            let cd = coins[down];
            vec![(up, [[cu[0][0], cu[0][1]], [z, z]]), (down, [[z, z], [cd[1][0], cd[1][1]]])]
        })
        .collect();
    Ok(WindowedOperator::from_blocks(Space::H(window), Space::H(window), rows)?.tagged_unitary())
}

/// The bare shift `S`.
pub fn shift(window: LatticeWindow) -> Result<WindowedOperator> {
    shift_coin(window, &vec![IDENTITY2; window.sites()])
}

/// `j_r(x) = 1` for `x ≥ 0`, `j_ℓ = 1 - j_r`.
pub fn j_right(x: i64) -> f64 {
    if x >= 0 {
        1.0
    } else {
        0.0
    }
}

/// `J(Ψ_ℓ, Ψ_r) = j_ℓ Ψ_ℓ + j_r Ψ_r`.
pub fn identification(window: LatticeWindow) -> Result<WindowedOperator> {
    let n = window.sites();
    let rows = (0..n)
        .map(|i| {
            let jr = j_right(window.position(i));
            let jl = 1.0 - jr;
            let id = |t: f64| [[c(t, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(t, 0.0)]];
            let mut row = Vec::new();
            if jl != 0.0 {
                row.push((i, id(jl)));
            }
            if jr != 0.0 {
                row.push((n + i, id(jr)));
            }
            row
        })
        .collect();
    WindowedOperator::from_blocks(Space::H0(window), Space::H(window), rows)
}

/// Direct sum of two operators on `H` as an operator on `H₀`.
pub fn direct_sum(a: &WindowedOperator, b: &WindowedOperator) -> Result<WindowedOperator> {
    let w = a.domain().window().ok_or(Error::NotSquare)?;
    let n = w.sites();
    let mut rows: Vec<Vec<(usize, Block)>> = vec![Vec::new(); 2 * n];
    for (op, off) in [(a, 0), (b, n)] {
        for (r, col, v) in op.nonzeros() {
            let (rb, cb) = (r / 2 + off, col / 2 + off);
            let row = &mut rows[rb];
            let k = match row.iter().position(|e| e.0 == cb) {
                Some(k) => k,
                None => {
                    row.push((cb, [[c(0.0, 0.0); 2]; 2]));
                    row.len() - 1
                }
            };
            row[k].1[r % 2][col % 2] += v;
        }
    }
    let op = WindowedOperator::from_blocks(Space::H0(w), Space::H0(w), rows)?;
    Ok(if a.is_unitary() && b.is_unitary() { op.tagged_unitary() } else { op })
}

/// True when sites `i` and `j` are coupled only through the cyclic wrap.
pub fn across_seam(window: LatticeWindow, i: usize, j: usize) -> bool {
    let d = if i > j { i - j } else { j - i };
    d > window.sites() / 2
}

/// `⟨Q⟩^{t}` on `H`.
pub fn position_weight(window: LatticeWindow, t: f64) -> WindowedOperator {
    let w = (0..window.dim())
        .map(|k| c(pow(bracket(window.position(k / 2) as f64), t), 0.0))
        .collect();
    WindowedOperator::diagonal(Space::H(window), w)
}

fn doubled_weight(window: LatticeWindow, t: f64) -> WindowedOperator {
    let w = (0..2 * window.dim())
        .map(|k| c(pow(bracket(window.position((k % window.dim()) / 2) as f64), t), 0.0))
        .collect();
    WindowedOperator::diagonal(Space::H0(window), w)
}

/// Builds the walk on a window; the coin table must sit at least 8 sites inside.
pub fn build_walk(field: &CoinField, window: LatticeWindow) -> Result<WalkModel> {
    build_walk_with_weight(field, window, 1.0)
}

pub fn build_walk_with_weight(field: &CoinField, window: LatticeWindow, s: f64) -> Result<WalkModel> {
    field.validate()?;
    for (name, p) in [("left", &field.left), ("right", &field.right)] {
        if !(p.a > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "{name} asymptote has a = 0; purely absolutely continuous spectrum needs a in (0, 1]"
            )));
        }
    }
    let l = window.half_width() as i64;
    if field.table_radius() + 8 > l {
        return Err(Error::InvalidParameter(format!(
            "coin table reaches |x| = {} but the window half-width is {l}; need a margin of 8 sites",
            field.table_radius()
        )));
    }
    let mut coins = Vec::with_capacity(window.sites());
    for x in window.positions() {
        let cx = field.coin(x)?;
        if unitarity_defect(&cx) > 1e-13 {
            return Err(Error::InvalidParameter(format!("coin at site {x} is not unitary")));
        }
        let dev = mat2_norm(&mat2_sub(&cx, &field.asymptote(x)?));
        if x != 0 && dev > field.bound(x) * (1.0 + 1e-12) {
            return Err(Error::DecayViolated { site: x, deviation: dev, bound: field.bound(x) });
        }
        coins.push(cx);
    }
    let u = shift_coin(window, &coins)?;
    let u_left = shift_coin(window, &vec![build_coin_matrix(&field.left)?; window.sites()])?;
    let u_right = shift_coin(window, &vec![build_coin_matrix(&field.right)?; window.sites()])?;
    let u0 = direct_sum(&u_left, &u_right)?;
    let j = identification(window)?;
    let v = perturbation(&u, &u0, &j, window)?;
    let mut model = WalkModel {
        window,
        field: field.clone(),
        coins,
        u,
        u_left,
        u_right,
        u0,
        j,
        v,
        factorization: Factorization {
            s,
            weight: position_weight(window, -s),
            g0: doubled_weight(window, -s),
            g: WindowedOperator::zero(Space::H(window), Space::H0(window)),
            d: WindowedOperator::zero(Space::H0(window), Space::H(window)),
            residual: 0.0,
            d_norms: Vec::new(),
        },
    };
    model.factorization = factorize_perturbation(&model, s)?;
    Ok(model)
}

/// `JU₀ - UJ` without the entries that couple across the cyclic seam.
///
/// Those entries exist only because the window is closed into a ring; they are
/// carried by states that reached the window edge.
pub fn perturbation(
    u: &WindowedOperator,
    u0: &WindowedOperator,
    j: &WindowedOperator,
    window: LatticeWindow,
) -> Result<WindowedOperator> {
    let full = j.compose(u0)?.lin_comb(c(1.0, 0.0), &u.compose(j)?, c(-1.0, 0.0))?;
    let n = window.sites();
    let mut rows: Vec<Vec<(usize, Block)>> = vec![Vec::new(); n];
    for (r, col, val) in full.nonzeros() {
        let (rb, cb) = (r / 2, col / 2);
        if across_seam(window, rb, cb % n) || val.norm() < 1e-15 {
            continue;
        }
        let row = &mut rows[rb];
        let k = match row.iter().position(|e| e.0 == cb) {
            Some(k) => k,
            None => {
                row.push((cb, [[c(0.0, 0.0); 2]; 2]));
                row.len() - 1
            }
        };
        row[k].1[r % 2][col % 2] += val;
    }
    WindowedOperator::from_blocks(Space::H0(window), Space::H(window), rows)
}

/// `D = ⟨Q⟩^s V (⟨Q⟩^s ⊕ ⟨Q⟩^s)`, `G₀`, `G = D*⟨Q⟩^{-s}`, with checks.
pub fn factorize_perturbation(model: &WalkModel, s: f64) -> Result<Factorization> {
    if !(s > 0.5) {
        return Err(Error::InvalidParameter(format!("weight exponent s = {s} must exceed 1/2")));
    }
    let w = model.window;
    let weight = position_weight(w, -s);
    let g0 = doubled_weight(w, -s);
    let d = position_weight(w, s).compose(&model.v)?.compose(&doubled_weight(w, s))?;
    let g = d.adjoint().compose(&weight)?;
    let residual = model.v.max_abs_diff(&g.adjoint().compose(&g0)?);
    if residual > 1e-12 {
        return Err(Error::ShortRangeViolated(format!("V - G*G₀ residual {residual:e} above 1e-12")));
    }
    let l = w.half_width();
    // nested radii start past any explicit table so a compact defect is seen whole
    let r1 = (l / 4).max(model.field.table_radius() as usize).min(l);
    let mut d_norms = Vec::new();
    for radius in [r1, (r1 + l) / 2, l] {
        let restricted = restrict(&d, w, radius as i64)?;
        d_norms.push((radius, restricted.op_norm()?));
    }
    if let [(r1, n1), _, (r3, n3)] = d_norms[..] {
        // superlinear growth of ‖D‖ in the sub-window radius rules out boundedness
        if n1 > 1e-12 && r1 > 0 && n3 / n1 > 1.5 * (r3 as f64 / r1 as f64) {
            return Err(Error::ShortRangeViolated(format!(
                "‖D‖ grows from {n1:e} to {n3:e} between radii {r1} and {r3}"
            )));
        }
    }
    Ok(Factorization { s, weight, g0, g, d, residual, d_norms })
}

fn restrict(op: &WindowedOperator, w: LatticeWindow, radius: i64) -> Result<WindowedOperator> {
    let inside = |k: usize| w.position((k % w.dim()) / 2).abs() <= radius;
    let n = op.codomain().dim();
    let blocks = n / 2;
    let mut rows: Vec<Vec<(usize, Block)>> = vec![Vec::new(); blocks];
    for (r, col, v) in op.nonzeros() {
        if inside(r) && inside(col) {
            let row = &mut rows[r / 2];
            let k = match row.iter().position(|e| e.0 == col / 2) {
                Some(k) => k,
                None => {
                    row.push((col / 2, [[c(0.0, 0.0); 2]; 2]));
                    row.len() - 1
                }
            };
            row[k].1[r % 2][col % 2] += v;
        }
    }
    WindowedOperator::from_blocks(op.domain(), op.codomain(), rows)
}

/// Truncated `2 Σ_{|x| ≤ L} ⟨x⟩^{-2s}`.
pub fn weight_sum(half_width: usize, s: f64) -> f64 {
    let l = half_width as i64;
    2.0 * (-l..=l).map(|x| pow(bracket(x as f64), -2.0 * s)).sum::<f64>()
}

impl WalkModel {
    pub fn hilbert(&self) -> Space {
        Space::H(self.window)
    }

    pub fn free_space(&self) -> Space {
        Space::H0(self.window)
    }

    /// Relative residual of `JR₀(z) - R(z)J + zR(z)U*VU₀*R₀(z)` on `Ψ₀`.
    pub fn second_resolvent_residual(&self, z: C64, psi0: &State) -> Result<f64> {
        let r0 = Resolvent::new(&self.u0, z)?;
        let r = Resolvent::new(&self.u, z)?;
        let (a, _) = r0.apply(psi0, false)?;
        let lhs = self.j.apply(&a, false)?;
        let (b, _) = r.apply(&self.j.apply(psi0, false)?, false)?;
        let inner = self.u0.apply(&a, true)?;
        let inner = self.v.apply(&inner, false)?;
        let inner = self.u.apply(&inner, true)?;
        let (corr, _) = r.apply(&inner, false)?;
        let mut total = lhs.sub(&b);
        total.axpy(z, &corr);
        Ok(total.norm() / psi0.norm().max(1e-300))
    }

    /// Squared norm of a state within `margin` sites of the window edge.
    pub fn edge_mass(&self, state: &State, margin: usize) -> f64 {
        let radius = self.window.half_width().saturating_sub(margin) as i64;
        state.mass_beyond(radius)
    }
}
