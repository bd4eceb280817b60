#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uniscatter_core::walk::{build_coin_matrix, CoinField, CoinParams, Decay, Deviation, Mat2};
use uniscatter_core::{LatticeWindow, Space, State, WindowedOperator, C64};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
    DMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

/// Haar-like unitary: Q factor of a random matrix with the phases of R's diagonal removed.
pub fn random_unitary_matrix(n: usize, seed: u64) -> DMatrix<C64> {
    let mut r = rng(seed);
    let qr = gaussian_matrix(n, &mut r).qr();
    let (q, rr) = (qr.q(), qr.r());
    let mut q = q;
    for j in 0..n {
        let d = rr[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= ph;
        }
    }
    q
}

pub fn random_unitary(n: usize, seed: u64) -> WindowedOperator {
    let s = Space::Plain(n);
    WindowedOperator::dense(s, s, random_unitary_matrix(n, seed)).tagged_unitary()
}

pub fn random_vector(space: Space, seed: u64) -> State {
    let mut r = rng(seed);
    let data = (0..space.dim()).map(|_| C64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))).collect();
    State::from_vec(space, data).unwrap()
}

/// Unit state with random entries on `|x| ≤ radius` in every copy.
pub fn local_state(space: Space, radius: i64, seed: u64) -> State {
    let mut r = rng(seed);
    let mut s = State::zeros(space);
    let copies = if matches!(space, Space::H0(_)) { 2 } else { 1 };
    for copy in 0..copies {
        for x in -radius..=radius {
            for comp in 0..2 {
                s.set(copy, x, comp, C64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)));
            }
        }
    }
    let n = s.norm();
    s.scaled(C64::new(1.0 / n, 0.0))
}

pub fn window(l: usize) -> LatticeWindow {
    LatticeWindow::new(l).unwrap()
}

pub fn defect_coin() -> Mat2 {
    build_coin_matrix(&CoinParams::new(0.4, (1.0f64 - 0.16).sqrt(), 0.3, -0.5, 3.0).unwrap()).unwrap()
}

/// Hadamard asymptotes with a three-site defect at `x = 0, 1, 2`.
pub fn defect_field() -> CoinField {
    let d = defect_coin();
    CoinField {
        left: CoinParams::hadamard(),
        right: CoinParams::hadamard(),
        deviation: Deviation::Table(vec![(0, d), (1, d), (2, d)]),
        decay: Decay { kappa_left: 10.0, eps_left: 1.0, kappa_right: 10.0, eps_right: 1.0 },
    }
}

/// Phase-kicked Hadamard coins on three sites; binds states in both gaps.
pub fn bound_field() -> CoinField {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let d = build_coin_matrix(&CoinParams::new(h, h, 1.5, 0.0, 0.0).unwrap()).unwrap();
    CoinField { deviation: Deviation::Table(vec![(0, d), (1, d), (2, d)]), ..defect_field() }
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}
