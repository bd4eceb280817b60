mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use uniscatter_core::dense::unitary_eigen;
use uniscatter_core::free::{FreeSpectrum, Side};
use uniscatter_core::math::{PI, TAU};
use uniscatter_core::resolvent::*;
use uniscatter_core::walk::{build_walk, CoinField, CoinParams};
use uniscatter_core::{Space, State, WindowedOperator, C64};

fn scalar(u: C64) -> WindowedOperator {
    let s = Space::Plain(1);
    WindowedOperator::dense(s, s, DMatrix::from_element(1, 1, u)).tagged_unitary()
}

/// `R(z)` as a dense matrix for oracle comparisons.
fn dense_resolvent(u: &DMatrix<C64>, z: C64) -> DMatrix<C64> {
    let n = u.nrows();
    (DMatrix::identity(n, n) - u.adjoint() * z).try_inverse().unwrap()
}

#[test]
fn radial_points() {
    let p = RadialPoint::new(0.1, Sign::Plus, 1.0).unwrap();
    assert!(p.z().norm() < 1.0 && p.weight() > 0.0);
    let m = RadialPoint::new(0.1, Sign::Minus, 1.0).unwrap();
    assert!(m.z().norm() > 1.0 && m.weight() < 0.0);
    for eps in [1e-2, 1e-3, 1e-4] {
        for sign in [Sign::Plus, Sign::Minus] {
            assert!((weight_asymptote_ratio(eps, sign) - 1.0).abs() <= 2.0 * eps);
            let g = RadialPoint::new(eps, sign, 0.0).unwrap().weight();
            assert!((g / (sign.factor() * eps / PI) - weight_asymptote_ratio(eps, sign)).abs() < 1e-12);
        }
    }
    assert!(RadialPoint::new(0.0, Sign::Plus, 0.0).is_err());
    assert!(RadialPoint::from_radius(1.0, 0.0).is_err());
}

#[test]
fn eps_schedule_validation() {
    assert!(EpsSchedule::new(vec![0.1, 0.05], 2).is_err());
    assert!(EpsSchedule::new(vec![0.1, 0.2], 1).is_err());
    assert!(EpsSchedule::new(vec![0.1, 0.05, 0.025], 3).is_err());
    let s = EpsSchedule::halving(0.04, 3, 2).unwrap();
    assert_eq!(s.eps(), &[0.04, 0.02, 0.01]);
    // quadratic data extrapolates exactly
    let f = |e: f64| c(1.0 + 2.0 * e - 3.0 * e * e, -e);
    let out = s.extrapolate(s.eps().iter().map(|&e| vec![f(e)]).collect());
    assert!((out.scalar() - c(1.0, 0.0)).norm() < 1e-13);
    assert!(out.monotone);
}

#[test]
fn resolvent_trivial_cases() {
    let u = random_unitary(6, 1);
    let v = random_vector(Space::Plain(6), 2);
    let (x, res) = Resolvent::new(&u, c(0.0, 0.0)).unwrap().apply(&v, false).unwrap();
    assert!(x.sub(&v).norm() < 1e-15 && res < 1e-15);
    let one = scalar(c(1.0, 0.0));
    let w = State::from_vec(Space::Plain(1), vec![c(0.3, -0.7)]).unwrap();
    let pt = RadialPoint::from_radius(0.5, 0.0).unwrap();
    let (x, _) = resolvent_apply(&one, &pt, &w, false).unwrap();
    assert!((x.data()[0] - w.data()[0] * 2.0).norm() < 1e-15);
    // untagged operators are refused
    let plain = WindowedOperator::dense(Space::Plain(1), Space::Plain(1), DMatrix::from_element(1, 1, c(1.0, 0.0)));
    assert!(Resolvent::new(&plain, c(0.5, 0.0)).is_err());
}

#[test]
fn inside_outside_relation() {
    let u = random_unitary(24, 3);
    let v = random_vector(Space::Plain(24), 4);
    let z = C64::from_polar(0.7, 1.3);
    let (outer, _) = Resolvent::new(&u, (z.conj()).inv()).unwrap().apply(&v, true).unwrap();
    let (r, _) = Resolvent::new(&u, z).unwrap().apply(&v, false).unwrap();
    let rhs = u.apply(&r, true).unwrap().scaled(-z);
    assert!(outer.sub(&rhs).norm() < 1e-10);
}

#[test]
fn delta_norm_bound_attained_at_eigenphases() {
    assert!((delta_norm_bound(0.5) - 3.0 / TAU).abs() < 1e-15);
    assert!((delta_norm_bound(0.5) - 0.477465).abs() < 1e-6);
    let m = random_unitary_matrix(16, 5);
    let (phases, _) = unitary_eigen(&m).unwrap();
    let u = WindowedOperator::dense(Space::Plain(16), Space::Plain(16), m).tagged_unitary();
    for (i, &th) in phases.iter().take(4).enumerate() {
        let r = [0.5, 0.3, 2.0, 0.6][i];
        let pt = RadialPoint::from_radius(r, th).unwrap();
        let n = delta_norm(&u, &pt, 1e-15).unwrap();
        let bound = delta_norm_bound(r);
        assert!((n.abs() - bound).abs() < 1e-10 * bound, "r {r}: {n} vs {bound}");
    }
}

#[test]
fn delta_symmetry_and_positivity() {
    let u = random_unitary(20, 6);
    let v = random_vector(Space::Plain(20), 7);
    for (r, th) in [(0.5, 0.2), (0.9, 2.0), (0.3, 5.0)] {
        let inside = delta_apply(&u, &RadialPoint::from_radius(r, th).unwrap(), &v).unwrap();
        let outside = delta_apply(&u, &RadialPoint::from_radius(1.0 / r, th).unwrap(), &v).unwrap();
        assert!(inside.add(&outside).norm() < 1e-10 * inside.norm().max(1.0));
        let form = inside.inner(&v);
        assert!(form.re >= 0.0 && form.im.abs() < 1e-12 * form.re.max(1.0));
    }
}

#[test]
fn poisson_mass_is_unit() {
    let one = scalar(C64::from_polar(1.0, 0.4));
    let w = State::from_vec(Space::Plain(1), vec![c(0.6, 0.8)]).unwrap();
    assert!((poisson_mass(&one, 0.5, &w, 1024).unwrap() - 1.0).abs() < 1e-12);
    let u = random_unitary(32, 8);
    let v = random_vector(Space::Plain(32), 9);
    // outside the circle the weight 1 - r² flips sign and the mass is -‖v‖²
    for (r, sign) in [(0.9, 1.0), (2.0, -1.0)] {
        let m = poisson_mass(&u, r, &v, 4096).unwrap();
        assert!((m - sign * v.norm_sqr()).abs() < 1e-8, "r {r}: {m}");
    }
    assert!(poisson_mass(&u, 0.5, &v, 1000).is_err());
}

#[test]
fn boundary_density_matches_free_fiber_mass() {
    // ε must stay well above the eigenphase spacing of the periodic window
    let w = window(1024);
    let model = build_walk(&CoinField::uniform(CoinParams::hadamard()), w).unwrap();
    let fs = FreeSpectrum::new(&model).unwrap();
    let theta = 0.0;
    let fiber = fs.fiber_at(theta).unwrap();
    let ch = fiber.channels.iter().find(|c| c.side == Side::Right).unwrap();
    let psi = fs.wave_packet(ch, theta, 0.1, 0).unwrap();
    let sched = EpsSchedule::new(vec![0.04, 0.02, 0.01], 2).unwrap();
    let plus = boundary_density(&model.u0, theta, Sign::Plus, &psi, &psi, &sched).unwrap();
    let minus = boundary_density(&model.u0, theta, Sign::Minus, &psi, &psi, &sched).unwrap();
    let mass = fs.f0_apply(&psi, theta).unwrap().norm_sqr();
    assert!(plus.trend.monotone);
    assert!((plus.value.re - mass).abs() < 1e-2 * mass, "{} vs {mass}", plus.value);
    assert!((plus.value + minus.value).norm() < 1e-3 * mass);

    // states in distinct spectral subspaces: a packet in the band against one far from θ
    let other = fs.fiber_at(2.9).unwrap();
    let far = fs.wave_packet(&other.channels[0], 2.9, 0.05, 0).unwrap();
    let cross = boundary_density(&model.u0, theta, Sign::Plus, &psi, &far, &sched).unwrap();
    assert!(cross.value.norm() < 1e-6);
}

#[test]
fn cayley_transform() {
    let h = cayley(&scalar(c(-1.0, 0.0)), Some(0.0)).unwrap().h;
    assert!(h[(0, 0)].norm() < 1e-15);
    let h = cayley(&scalar(c(0.0, 1.0)), Some(0.0)).unwrap().h;
    assert!((h[(0, 0)] + 1.0).norm() < 1e-15);
    let ct = cayley(&random_unitary(16, 10), None).unwrap();
    assert!(ct.relation_residual < 1e-8);
    assert!((&ct.h - ct.h.adjoint()).norm() < 1e-12);
    // phase hitting the spectrum
    assert!(cayley(&scalar(c(1.0, 0.0)), Some(0.0)).is_err());
}

#[test]
fn spectral_filters() {
    let m = random_unitary_matrix(48, 11);
    let u = WindowedOperator::dense(Space::Plain(48), Space::Plain(48), m.clone()).tagged_unitary();
    let full = spectral_filter(&u, (0.3, 0.3 + TAU), 32, 0.05).unwrap();
    assert!(full.max_abs_diff(&WindowedOperator::identity(Space::Plain(48))) < 1e-12);

    let (a, b) = (0.7, 2.9);
    let f = spectral_filter(&u, (a, b), 256, 0.02).unwrap();
    let g = spectral_filter(&u, (b, a + TAU), 256, 0.02).unwrap();
    let sum = f.lin_comb(c(1.0, 0.0), &g, c(1.0, 0.0)).unwrap();
    assert!(sum.max_abs_diff(&WindowedOperator::identity(Space::Plain(48))) < 1e-12);
    assert!(f.max_abs_diff(&f.adjoint()) < 1e-12);

    // idempotency on eigenvectors away from the arc edges
    let filt = ArcFilter::new(a, b, 256, 0.02).unwrap();
    let (phases, vecs) = unitary_eigen(&m).unwrap();
    for (k, &t) in phases.iter().enumerate() {
        let d = filt.edge_distance(t);
        if d < 0.1 {
            continue;
        }
        let v = State::from_vec(Space::Plain(48), vecs.column(k).iter().copied().collect()).unwrap();
        let fv = f.apply(&v, false).unwrap();
        let ffv = f.apply(&fv, false).unwrap();
        assert!(ffv.sub(&fv).norm() <= 3.0 * filt.leakage(d));
    }
}

#[test]
fn smoothness_diagnostics() {
    let w = window(64);
    let model = build_walk(&CoinField::uniform(CoinParams::hadamard()), w).unwrap();
    let sched = EpsSchedule::new(vec![0.1, 0.05, 0.025], 0).unwrap();
    let zero = WindowedOperator::zero(Space::H0(w), Space::H0(w));
    assert_eq!(smooth_diagnostic(&model.u0, &zero, &sched, &[0.2]).unwrap().sup, 0.0);

    let g0 = &model.factorization.g0;
    let rep = smooth_diagnostic(&model.u0, g0, &sched, &[-0.4, 0.2, 3.0]).unwrap();
    // bounded with a flat trend in ε
    assert!(rep.per_eps[2] < 1.5 * rep.per_eps[0]);

    let u = random_unitary(12, 12);
    let (phases, _) = unitary_eigen(&u.to_dense()).unwrap();
    let id = WindowedOperator::identity(Space::Plain(12));
    let rep = smooth_diagnostic(&u, &id, &sched, &[phases[0]]).unwrap();
    for (k, eps) in sched.eps().iter().enumerate() {
        let bound = delta_norm_bound(1.0 - eps);
        assert!((rep.per_eps[k] - bound).abs() < 0.05 * bound);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn first_resolvent_equation(seed in 0u64..500, r1 in 0.1f64..3.0, r2 in 0.1f64..3.0, t1 in 0.0f64..6.2, t2 in 0.0f64..6.2) {
        prop_assume!((r1 - 1.0).abs() > 0.05 && (r2 - 1.0).abs() > 0.05);
        let u = random_unitary(16, seed);
        let v = random_vector(Space::Plain(16), seed + 1);
        let (z1, z2) = (C64::from_polar(r1, t1), C64::from_polar(r2, t2));
        let (a, _) = Resolvent::new(&u, z1).unwrap().apply(&v, false).unwrap();
        let (b, _) = Resolvent::new(&u, z2).unwrap().apply(&v, false).unwrap();
        let (rb, _) = Resolvent::new(&u, z1).unwrap().apply(&u.apply(&b, true).unwrap(), false).unwrap();
        let lhs = a.sub(&b);
        let rhs = rb.scaled(z1 - z2);
        prop_assert!(lhs.sub(&rhs).norm() <= 1e-10 * v.norm() * (1.0 + lhs.norm()));
    }

    #[test]
    fn geometric_series_oracle(seed in 0u64..500, r in 0.05f64..0.9, t in 0.0f64..6.2, terms in 5usize..60) {
        let u = random_unitary(12, seed);
        let v = random_vector(Space::Plain(12), seed + 2);
        let z = C64::from_polar(r, t);
        let (x, _) = Resolvent::new(&u, z).unwrap().apply(&v, false).unwrap();
        let s = geometric_series(&u, z, &v, terms).unwrap();
        prop_assert!(x.sub(&s).norm() <= geometric_tail(z, terms) * v.norm() * (1.0 + 1e-12) + 1e-13);
    }

    #[test]
    fn delta_norm_never_exceeds_bound(seed in 0u64..500, r in 0.1f64..3.0, t in 0.0f64..6.2) {
        prop_assume!((r - 1.0).abs() > 0.1);
        let u = random_unitary(10, seed);
        let pt = RadialPoint::from_radius(r, t).unwrap();
        let n = delta_norm(&u, &pt, 1e-12).unwrap();
        prop_assert!(n <= delta_norm_bound(r) * (1.0 + 1e-10));
        // dense oracle for δ
        let m = u.to_dense();
        let rr = dense_resolvent(&m, pt.z());
        let d = &rr * rr.adjoint() * C64::new(pt.weight(), 0.0);
        let top = d.singular_values().max();
        prop_assert!((n - top).abs() <= 1e-8 * top);
    }
}
