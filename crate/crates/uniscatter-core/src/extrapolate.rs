//! Richardson extrapolation of finite-ε sequences to ε = 0.

use alloc::vec::Vec;

use crate::math::sqrt;
use crate::C64;

/// Polynomial extrapolation to zero through the last `order + 1` samples.
///
/// Returns the Lagrange weights so that callers can combine vectors or
/// matrices sample-wise.
pub fn weights(eps: &[f64], order: usize) -> Vec<f64> {
    let n = eps.len();
    let k = (order + 1).min(n);
    let mut w = alloc::vec![0.0; n];
    for i in n - k..n {
        let mut li = 1.0;
        for j in n - k..n {
            if j != i {
                li *= eps[j] / (eps[j] - eps[i]);
            }
        }
        w[i] = li;
    }
    w
}

/// Extrapolated limit, the raw sequence and the stepwise differences.
#[derive(Clone, Debug, PartialEq)]
pub struct Extrapolated {
    pub value: Vec<C64>,
    pub sequence: Vec<Vec<C64>>,
    /// `‖f(ε_{i+1}) - f(ε_i)‖` for consecutive samples.
    pub steps: Vec<f64>,
    /// True when the steps shrink monotonically.
    pub monotone: bool,
}

impl Extrapolated {
    pub fn scalar(&self) -> C64 {
        self.value[0]
    }

    /// Last finite-ε sample.
    pub fn last(&self) -> &[C64] {
        self.sequence.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Distance between the extrapolated value and the last sample.
    pub fn correction(&self) -> f64 {
        dist(&self.value, self.last())
    }
}

fn dist(a: &[C64], b: &[C64]) -> f64 {
    sqrt(a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum())
}

/// Extrapolates a sequence of equally-shaped samples taken at decreasing `eps`.
pub fn extrapolate(eps: &[f64], samples: Vec<Vec<C64>>, order: usize) -> Extrapolated {
    assert_eq!(eps.len(), samples.len());
    let w = weights(eps, order);
    let len = samples.first().map_or(0, |s| s.len());
    let mut value = alloc::vec![C64::new(0.0, 0.0); len];
    for (wi, s) in w.iter().zip(&samples) {
        if *wi != 0.0 {
            for (v, x) in value.iter_mut().zip(s) {
                *v += x * *wi;
            }
        }
    }
    let steps: Vec<f64> = samples.windows(2).map(|p| dist(&p[0], &p[1])).collect();
    let monotone = steps.windows(2).all(|p| p[1] <= p[0]);
    Extrapolated {
        value,
        sequence: samples,
        steps,
        monotone,
    }
}
