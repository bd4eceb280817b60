//! Windowed lattice states and operators.
//!
//! A window `{-L, ..., L}` carries a `C²` value per site. States on
//! `H = l²(window, C²)` are stored site-major (`2 * (x + L) + component`);
//! states on `H₀ = H ⊕ H` put the left copy first. Operators keep their
//! structure class so that application and solves stay linear in the window
//! size for the banded walk operators.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::C64;

/// Symmetric lattice window `{-L, ..., L}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LatticeWindow {
    half_width: usize,
}

impl LatticeWindow {
    pub const MIN_HALF_WIDTH: usize = 4;

    pub fn new(half_width: usize) -> Result<Self> {
        if half_width < Self::MIN_HALF_WIDTH {
            return Err(Error::WindowTooSmall(half_width));
        }
        Ok(Self { half_width })
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn sites(&self) -> usize {
        2 * self.half_width + 1
    }

    /// Dimension of `H` on this window.
    pub fn dim(&self) -> usize {
        2 * self.sites()
    }

    /// Site index of position `x`, if it lies in the window.
    pub fn index(&self, x: i64) -> Option<usize> {
        let l = self.half_width as i64;
        (-l..=l).contains(&x).then(|| (x + l) as usize)
    }

    pub fn position(&self, i: usize) -> i64 {
        i as i64 - self.half_width as i64
    }

    /// Site index of `x` with cyclic identification of the window edges.
    pub fn wrap(&self, x: i64) -> usize {
        let n = self.sites() as i64;
        (x + self.half_width as i64).rem_euclid(n) as usize
    }

    pub fn positions(&self) -> impl Iterator<Item = i64> {
        let l = self.half_width as i64;
        -l..=l
    }

    /// Cyclic distance between two site indices.
    pub fn site_distance(&self, i: usize, j: usize) -> usize {
        let n = self.sites();
        let d = if i > j { i - j } else { j - i };
        d.min(n - d)
    }
}

/// Hilbert space tag of a state or operator side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Space {
    /// `l²(window, C²)`.
    H(LatticeWindow),
    /// `H ⊕ H`, left copy first.
    H0(LatticeWindow),
    /// Plain `Cⁿ` without lattice structure.
    Plain(usize),
}

impl Space {
    pub fn dim(&self) -> usize {
        match self {
            Space::H(w) => w.dim(),
            Space::H0(w) => 2 * w.dim(),
            Space::Plain(n) => *n,
        }
    }

    pub fn window(&self) -> Option<LatticeWindow> {
        match self {
            Space::H(w) | Space::H0(w) => Some(*w),
            Space::Plain(_) => None,
        }
    }

    /// Number of `C²` blocks (zero for plain spaces).
    fn blocks(&self) -> usize {
        match self {
            Space::H(w) => w.sites(),
            Space::H0(w) => 2 * w.sites(),
            Space::Plain(_) => 0,
        }
    }

    fn block_site(&self, b: usize) -> usize {
        match self {
            Space::H(w) | Space::H0(w) => b % w.sites(),
            Space::Plain(_) => b,
        }
    }

    /// Coordinate order used to assemble banded factorizations.
    ///
    /// Sites are interleaved from both ends (`-L, L, -L+1, L-1, ...`) so the
    /// cyclic neighbours of every site sit within a few positions.
    fn banded_order(&self) -> Vec<usize> {
        match self {
            Space::Plain(n) => (0..*n).collect(),
            Space::H(w) | Space::H0(w) => {
                let n = w.sites();
                let copies = self.blocks() / n;
                let mut pos = vec![0; self.dim()];
                for c in 0..copies {
                    for i in 0..n {
                        let p = if i < n.div_ceil(2) { 2 * i } else { 2 * (n - 1 - i) + 1 };
                        let b = c * n + p;
                        for comp in 0..2 {
                            pos[2 * (c * n + i) + comp] = 2 * b + comp;
                        }
                    }
                }
                pos
            }
        }
    }
}

/// Vector in `H`, `H₀` or a plain space.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    space: Space,
    data: Vec<C64>,
}

impl State {
    pub fn zeros(space: Space) -> Self {
        Self {
            space,
            data: vec![C64::new(0.0, 0.0); space.dim()],
        }
    }

    pub fn from_vec(space: Space, data: Vec<C64>) -> Result<Self> {
        if data.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                found: data.len(),
            });
        }
        Ok(Self { space, data })
    }

    /// Unit vector at `(copy, x, component)`; `copy` is 0 (left) or 1 (right) on `H₀`.
    pub fn delta(space: Space, copy: usize, x: i64, comp: usize) -> Self {
        let mut s = Self::zeros(space);
        s.set(copy, x, comp, C64::new(1.0, 0.0));
        s
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    fn lattice_index(&self, copy: usize, x: i64, comp: usize) -> usize {
        let w = self.space.window().expect("lattice state");
        let i = w.index(x).expect("position inside window");
        copy * w.dim() + 2 * i + comp
    }

    pub fn get(&self, copy: usize, x: i64, comp: usize) -> C64 {
        self.data[self.lattice_index(copy, x, comp)]
    }

    pub fn set(&mut self, copy: usize, x: i64, comp: usize, v: C64) {
        let k = self.lattice_index(copy, x, comp);
        self.data[k] = v;
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        sqrt(self.norm_sqr())
    }

    /// `⟨self, other⟩`, linear in `self`.
    pub fn inner(&self, other: &State) -> C64 {
        debug_assert_eq!(self.space, other.space);
        self.data
            .iter()
            .zip(&other.data)
            .fold(C64::new(0.0, 0.0), |acc, (a, b)| acc + a * b.conj())
    }

    pub fn scaled(&self, c: C64) -> State {
        State {
            space: self.space,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: C64, other: &State) {
        debug_assert_eq!(self.space, other.space);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn add(&self, other: &State) -> State {
        let mut out = self.clone();
        out.axpy(C64::new(1.0, 0.0), other);
        out
    }

    pub fn sub(&self, other: &State) -> State {
        let mut out = self.clone();
        out.axpy(C64::new(-1.0, 0.0), other);
        out
    }

    /// `(left, right) ∈ H₀` from two states on `H`.
    pub fn direct_sum(left: &State, right: &State) -> Result<State> {
        let w = match (left.space, right.space) {
            (Space::H(a), Space::H(b)) if a == b => a,
            (Space::H(_), other) | (other, _) => {
                return Err(Error::SpaceMismatch {
                    expected: left.space,
                    found: other,
                })
            }
        };
        let mut data = left.data.clone();
        data.extend_from_slice(&right.data);
        Ok(State {
            space: Space::H0(w),
            data,
        })
    }

    /// Left and right components of a state on `H₀`.
    pub fn split(&self) -> Result<(State, State)> {
        match self.space {
            Space::H0(w) => {
                let (l, r) = self.data.split_at(w.dim());
                Ok((
                    State { space: Space::H(w), data: l.to_vec() },
                    State { space: Space::H(w), data: r.to_vec() },
                ))
            }
            other => Err(Error::NotDirectSum(other)),
        }
    }

    /// Squared norm carried by sites with `|x| > radius`.
    pub fn mass_beyond(&self, radius: i64) -> f64 {
        let Some(w) = self.space.window() else { return 0.0 };
        let mut m = 0.0;
        for (k, v) in self.data.iter().enumerate() {
            let x = w.position((k % w.dim()) / 2);
            if x.abs() > radius {
                m += v.norm_sqr();
            }
        }
        m
    }

    /// Smallest radius outside which at most `rel_mass · ‖v‖²` of the squared norm lies.
    pub fn effective_radius(&self, rel_mass: f64) -> i64 {
        let Some(w) = self.space.window() else { return 0 };
        let l = w.half_width();
        let mut shell = alloc::vec![0.0; l + 1];
        for (k, v) in self.data.iter().enumerate() {
            let x = w.position((k % w.dim()) / 2);
            shell[x.unsigned_abs() as usize] += v.norm_sqr();
        }
        let budget = rel_mass * self.norm_sqr();
        let mut outside = 0.0;
        for r in (0..=l).rev() {
            if outside + shell[r] > budget {
                return r as i64;
            }
            outside += shell[r];
        }
        0
    }

    /// Largest `|x|` carrying a component above `tol` in modulus.
    pub fn support_radius(&self, tol: f64) -> i64 {
        let Some(w) = self.space.window() else { return 0 };
        let mut r = 0;
        for (k, v) in self.data.iter().enumerate() {
            if v.norm() > tol {
                r = r.max(w.position((k % w.dim()) / 2).abs());
            }
        }
        r
    }
}

/// `2×2` block, row-major.
pub type Block = [[C64; 2]; 2];

pub fn block_adjoint(a: &Block) -> Block {
    [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
}

pub fn block_mul(a: &Block, b: &Block) -> Block {
    let mut c = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn block_add(a: &mut Block, b: &Block, s: C64) {
    for i in 0..2 {
        for j in 0..2 {
            a[i][j] += s * b[i][j];
        }
    }
}

/// Structure class of a windowed operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    BlockBanded,
    BlockDiagonal,
    DiagonalWeight,
    Dense,
}

#[derive(Clone, Debug)]
enum Repr {
    /// Per codomain block, sorted `(domain block, 2×2 block)` entries.
    Blocks(Vec<Vec<(usize, Block)>>),
    Diagonal(Vec<C64>),
    Dense(DMatrix<C64>),
}

/// Bounded operator between two spaces on a common window.
#[derive(Clone, Debug)]
pub struct WindowedOperator {
    domain: Space,
    codomain: Space,
    repr: Repr,
    unitary: bool,
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

impl WindowedOperator {
    pub fn identity(space: Space) -> Self {
        Self::diagonal(space, vec![C64::new(1.0, 0.0); space.dim()]).tagged_unitary()
    }

    pub fn zero(domain: Space, codomain: Space) -> Self {
        match (domain, codomain) {
            (Space::Plain(_), _) | (_, Space::Plain(_)) => {
                Self::dense(domain, codomain, DMatrix::zeros(codomain.dim(), domain.dim()))
            }
            _ => Self {
                domain,
                codomain,
                repr: Repr::Blocks(vec![Vec::new(); codomain.blocks()]),
                unitary: false,
            },
        }
    }

    /// Multiplication by a diagonal weight on one space.
    pub fn diagonal(space: Space, weights: Vec<C64>) -> Self {
        assert_eq!(weights.len(), space.dim());
        Self {
            domain: space,
            codomain: space,
            repr: Repr::Diagonal(weights),
            unitary: false,
        }
    }

    /// Block-sparse operator; `rows[r]` lists `(domain block, block)` for codomain block `r`.
    pub fn from_blocks(domain: Space, codomain: Space, rows: Vec<Vec<(usize, Block)>>) -> Result<Self> {
        if rows.len() != codomain.blocks() || domain.blocks() == 0 {
            return Err(Error::DimensionMismatch {
                expected: codomain.blocks(),
                found: rows.len(),
            });
        }
        let nb = domain.blocks();
        let rows = rows
            .into_iter()
            .map(|row| {
                let mut merged: Vec<(usize, Block)> = Vec::with_capacity(row.len());
                let mut row = row;
                row.sort_by_key(|e| e.0);
                for (c, b) in row {
                    assert!(c < nb, "block column out of range");
                    match merged.last_mut() {
                        Some((lc, lb)) if *lc == c => block_add(lb, &b, C64::new(1.0, 0.0)),
                        _ => merged.push((c, b)),
                    }
                }
                merged
            })
            .collect();
        Ok(Self {
            domain,
            codomain,
            repr: Repr::Blocks(rows),
            unitary: false,
        })
    }

    pub fn dense(domain: Space, codomain: Space, m: DMatrix<C64>) -> Self {
        assert_eq!(m.nrows(), codomain.dim());
        assert_eq!(m.ncols(), domain.dim());
        Self {
            domain,
            codomain,
            repr: Repr::Dense(m),
            unitary: false,
        }
    }

    /// Marks the operator as unitary; callers are responsible for the claim.
    pub fn tagged_unitary(mut self) -> Self {
        self.unitary = true;
        self
    }

    pub fn is_unitary(&self) -> bool {
        self.unitary
    }

    pub fn domain(&self) -> Space {
        self.domain
    }

    pub fn codomain(&self) -> Space {
        self.codomain
    }

    pub fn structure(&self) -> Structure {
        match &self.repr {
            Repr::Diagonal(_) => Structure::DiagonalWeight,
            Repr::Dense(_) => Structure::Dense,
            Repr::Blocks(_) => {
                if self.bandwidth() == 0 {
                    Structure::BlockDiagonal
                } else {
                    Structure::BlockBanded
                }
            }
        }
    }

    /// Largest cyclic site distance coupled by a block entry.
    pub fn bandwidth(&self) -> usize {
        match &self.repr {
            Repr::Diagonal(_) => 0,
            Repr::Dense(_) => self.domain.blocks().max(self.domain.dim()),
            Repr::Blocks(rows) => {
                let w = self.domain.window().expect("lattice operator");
                let mut bw = 0;
                for (r, row) in rows.iter().enumerate() {
                    let rs = self.codomain.block_site(r);
                    for (c, _) in row {
                        bw = bw.max(w.site_distance(rs, self.domain.block_site(*c)));
                    }
                }
                bw
            }
        }
    }

    /// Entry `(row, col)` in flat coordinates.
    pub fn entry(&self, row: usize, col: usize) -> C64 {
        match &self.repr {
            Repr::Diagonal(d) => {
                if row == col {
                    d[row]
                } else {
                    zero()
                }
            }
            Repr::Dense(m) => m[(row, col)],
            Repr::Blocks(rows) => rows[row / 2]
                .iter()
                .find(|(c, _)| *c == col / 2)
                .map_or(zero(), |(_, b)| b[row % 2][col % 2]),
        }
    }

    /// Structural non-zeros `(row, col, value)` with `value != 0`.
    pub fn nonzeros(&self) -> Vec<(usize, usize, C64)> {
        let mut out = Vec::new();
        match &self.repr {
            Repr::Diagonal(d) => {
                for (i, v) in d.iter().enumerate() {
                    if *v != zero() {
                        out.push((i, i, *v));
                    }
                }
            }
            Repr::Dense(m) => {
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        if m[(i, j)] != zero() {
                            out.push((i, j, m[(i, j)]));
                        }
                    }
                }
            }
            Repr::Blocks(rows) => {
                for (r, row) in rows.iter().enumerate() {
                    for (c, b) in row {
                        for i in 0..2 {
                            for j in 0..2 {
                                if b[i][j] != zero() {
                                    out.push((2 * r + i, 2 * c + j, b[i][j]));
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn check_input(&self, v: &State, adjoint: bool) -> Result<()> {
        let expected = if adjoint { self.codomain } else { self.domain };
        if v.space() != expected {
            if v.space().dim() != expected.dim() {
                return Err(Error::DimensionMismatch {
                    expected: expected.dim(),
                    found: v.space().dim(),
                });
            }
            return Err(Error::SpaceMismatch {
                expected,
                found: v.space(),
            });
        }
        Ok(())
    }

    /// `A v` or `A* v`.
    pub fn apply(&self, v: &State, adjoint: bool) -> Result<State> {
        self.check_input(v, adjoint)?;
        let out_space = if adjoint { self.domain } else { self.codomain };
        let data = self.apply_slice(v.data(), adjoint);
        State::from_vec(out_space, data)
    }

    pub(crate) fn apply_slice(&self, v: &[C64], adjoint: bool) -> Vec<C64> {
        match &self.repr {
            Repr::Diagonal(d) => v
                .iter()
                .zip(d)
                .map(|(x, w)| if adjoint { x * w.conj() } else { x * w })
                .collect(),
            Repr::Dense(m) => {
                let x = nalgebra::DVector::from_column_slice(v);
                let y = if adjoint { m.adjoint() * x } else { m * x };
                y.as_slice().to_vec()
            }
            Repr::Blocks(rows) => {
                if adjoint {
                    let mut out = vec![zero(); self.domain.dim()];
                    for (r, row) in rows.iter().enumerate() {
                        let (x0, x1) = (v[2 * r], v[2 * r + 1]);
                        for (c, b) in row {
                            out[2 * c] += b[0][0].conj() * x0 + b[1][0].conj() * x1;
                            out[2 * c + 1] += b[0][1].conj() * x0 + b[1][1].conj() * x1;
                        }
                    }
                    out
                } else {
                    let mut out = vec![zero(); self.codomain.dim()];
                    for (r, row) in rows.iter().enumerate() {
                        let (mut y0, mut y1) = (zero(), zero());
                        for (c, b) in row {
                            let (x0, x1) = (v[2 * c], v[2 * c + 1]);
                            y0 += b[0][0] * x0 + b[0][1] * x1;
                            y1 += b[1][0] * x0 + b[1][1] * x1;
                        }
                        out[2 * r] = y0;
                        out[2 * r + 1] = y1;
                    }
                    out
                }
            }
        }
    }

    pub fn adjoint(&self) -> WindowedOperator {
        let repr = match &self.repr {
            Repr::Diagonal(d) => Repr::Diagonal(d.iter().map(|w| w.conj()).collect()),
            Repr::Dense(m) => Repr::Dense(m.adjoint()),
            Repr::Blocks(rows) => {
                let mut t: Vec<Vec<(usize, Block)>> = vec![Vec::new(); self.domain.blocks()];
                for (r, row) in rows.iter().enumerate() {
                    for (c, b) in row {
                        t[*c].push((r, block_adjoint(b)));
                    }
                }
                Repr::Blocks(t)
            }
        };
        WindowedOperator {
            domain: self.codomain,
            codomain: self.domain,
            repr,
            unitary: self.unitary,
        }
    }

    fn as_blocks(&self) -> Option<Vec<Vec<(usize, Block)>>> {
        match &self.repr {
            Repr::Blocks(rows) => Some(rows.clone()),
            Repr::Diagonal(d) if self.domain.blocks() > 0 => Some(
                (0..self.domain.blocks())
                    .map(|b| {
                        vec![(b, [[d[2 * b], zero()], [zero(), d[2 * b + 1]]])]
                    })
                    .collect(),
            ),
            _ => None,
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        match &self.repr {
            Repr::Dense(m) => m.clone(),
            _ => {
                let mut m = DMatrix::zeros(self.codomain.dim(), self.domain.dim());
                for (i, j, v) in self.nonzeros() {
                    m[(i, j)] = v;
                }
                m
            }
        }
    }

    /// `self ∘ rhs`.
    pub fn compose(&self, rhs: &WindowedOperator) -> Result<WindowedOperator> {
        if rhs.codomain != self.domain {
            return Err(Error::SpaceMismatch {
                expected: self.domain,
                found: rhs.codomain,
            });
        }
        let repr = match (&self.repr, &rhs.repr) {
            (Repr::Diagonal(a), Repr::Diagonal(b)) => {
                Repr::Diagonal(a.iter().zip(b).map(|(x, y)| x * y).collect())
            }
            (Repr::Dense(_), _) | (_, Repr::Dense(_)) => Repr::Dense(self.to_dense() * rhs.to_dense()),
            _ => match (self.as_blocks(), rhs.as_blocks()) {
                (Some(a), Some(b)) => {
                    let rows = a
                        .iter()
                        .map(|row| {
                            let mut acc: Vec<(usize, Block)> = Vec::new();
                            for (k, ab) in row {
                                for (j, bb) in &b[*k] {
                                    let p = block_mul(ab, bb);
                                    match acc.iter_mut().find(|e| e.0 == *j) {
                                        Some(e) => block_add(&mut e.1, &p, C64::new(1.0, 0.0)),
                                        None => acc.push((*j, p)),
                                    }
                                }
                            }
                            acc.sort_by_key(|e| e.0);
                            acc
                        })
                        .collect();
                    Repr::Blocks(rows)
                }
                _ => Repr::Dense(self.to_dense() * rhs.to_dense()),
            },
        };
        Ok(WindowedOperator {
            domain: rhs.domain,
            codomain: self.codomain,
            repr,
            unitary: self.unitary && rhs.unitary,
        })
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: C64, other: &WindowedOperator, b: C64) -> Result<WindowedOperator> {
        if self.domain != other.domain || self.codomain != other.codomain {
            return Err(Error::SpaceMismatch {
                expected: self.domain,
                found: other.domain,
            });
        }
        let repr = match (&self.repr, &other.repr) {
            (Repr::Diagonal(x), Repr::Diagonal(y)) => {
                Repr::Diagonal(x.iter().zip(y).map(|(p, q)| a * p + b * q).collect())
            }
            (Repr::Dense(_), _) | (_, Repr::Dense(_)) => {
                Repr::Dense(self.to_dense() * a + other.to_dense() * b)
            }
            _ => match (self.as_blocks(), other.as_blocks()) {
                (Some(x), Some(y)) => {
                    let rows = x
                        .into_iter()
                        .zip(y)
                        .map(|(rx, ry)| {
                            let mut acc: Vec<(usize, Block)> = Vec::new();
                            for (c, blk) in rx {
                                let mut s = [[zero(); 2]; 2];
                                block_add(&mut s, &blk, a);
                                acc.push((c, s));
                            }
                            for (c, blk) in ry {
                                match acc.iter_mut().find(|e| e.0 == c) {
                                    Some(e) => block_add(&mut e.1, &blk, b),
                                    None => {
                                        let mut s = [[zero(); 2]; 2];
                                        block_add(&mut s, &blk, b);
                                        acc.push((c, s));
                                    }
                                }
                            }
                            acc.sort_by_key(|e| e.0);
                            acc
                        })
                        .collect();
                    Repr::Blocks(rows)
                }
                _ => Repr::Dense(self.to_dense() * a + other.to_dense() * b),
            },
        };
        Ok(WindowedOperator {
            domain: self.domain,
            codomain: self.codomain,
            repr,
            unitary: false,
        })
    }

    pub fn scaled(&self, c: C64) -> WindowedOperator {
        let repr = match &self.repr {
            Repr::Diagonal(d) => Repr::Diagonal(d.iter().map(|v| v * c).collect()),
            Repr::Dense(m) => Repr::Dense(m * c),
            Repr::Blocks(rows) => Repr::Blocks(
                rows.iter()
                    .map(|row| {
                        row.iter()
                            .map(|(j, b)| {
                                let mut s = [[zero(); 2]; 2];
                                block_add(&mut s, b, c);
                                (*j, s)
                            })
                            .collect()
                    })
                    .collect(),
            ),
        };
        WindowedOperator {
            domain: self.domain,
            codomain: self.codomain,
            repr,
            unitary: self.unitary && (c.norm() - 1.0).abs() < 1e-15,
        }
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &WindowedOperator) -> f64 {
        let d = self.lin_comb(C64::new(1.0, 0.0), other, C64::new(-1.0, 0.0)).expect("matching spaces");
        d.nonzeros().iter().fold(0.0, |m, e| m.max(e.2.norm()))
    }

    /// Frobenius (Hilbert–Schmidt) norm.
    pub fn hs_norm(&self) -> f64 {
        sqrt(self.nonzeros().iter().map(|e| e.2.norm_sqr()).sum())
    }

    /// Spectral norm by power iteration on `A*A`, relative tolerance `1e-10`.
    pub fn op_norm(&self) -> Result<f64> {
        self.op_norm_tol(1e-10, 20_000)
    }

    pub fn op_norm_tol(&self, tol: f64, max_iter: usize) -> Result<f64> {
        power_norm(
            self.domain.dim(),
            |v| {
                let w = self.apply_slice(v, false);
                self.apply_slice(&w, true)
            },
            tol,
            max_iter,
        )
        .map(sqrt)
    }

    /// Banded LU factorization of a square operator.
    pub fn factor(&self) -> Result<BandedLu> {
        if self.domain != self.codomain {
            return Err(Error::NotSquare);
        }
        BandedLu::new(self)
    }

    /// Solves `A x = b` (or `A* x = b`) and reports the relative residual.
    pub fn solve(&self, b: &State, adjoint: bool) -> Result<Solution> {
        self.check_input(b, adjoint)?;
        let lu = self.factor()?;
        let x = lu.solve(b.data(), adjoint);
        let ax = self.apply_slice(&x, adjoint);
        let residual = relative_residual(&ax, b.data());
        Ok(Solution {
            x: State::from_vec(b.space(), x)?,
            residual,
        })
    }
}

pub(crate) fn relative_residual(ax: &[C64], b: &[C64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, q) in ax.iter().zip(b) {
        num += (p - q).norm_sqr();
        den += q.norm_sqr();
    }
    if den == 0.0 {
        sqrt(num)
    } else {
        sqrt(num / den)
    }
}

/// Deterministic pseudo-random seed vector (splitmix64).
pub(crate) fn seed_vector(n: usize) -> Vec<C64> {
    let mut s: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut next = move || {
        s = s.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = s;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    (0..n).map(|_| C64::new(next(), next())).collect()
}

/// Largest eigenvalue of a positive semi-definite map by power iteration.
pub(crate) fn power_norm<F>(n: usize, apply: F, tol: f64, max_iter: usize) -> Result<f64>
where
    F: Fn(&[C64]) -> Vec<C64>,
{
    let mut v = seed_vector(n);
    let nv = sqrt(v.iter().map(|c| c.norm_sqr()).sum::<f64>());
    v.iter_mut().for_each(|c| *c /= nv);
    let mut lambda = 0.0;
    let mut last = f64::INFINITY;
    for _ in 0..max_iter {
        let w = apply(&v);
        let nw = sqrt(w.iter().map(|c| c.norm_sqr()).sum::<f64>());
        if nw == 0.0 {
            return Ok(0.0);
        }
        let change = (nw - lambda).abs();
        lambda = nw;
        v = w.into_iter().map(|c| c / nw).collect();
        last = change;
        if change <= tol * lambda {
            return Ok(lambda);
        }
    }
    Err(Error::NoConvergence {
        what: "power iteration",
        iterations: max_iter,
        last,
    })
}

/// Result of a linear solve.
#[derive(Clone, Debug)]
pub struct Solution {
    pub x: State,
    pub residual: f64,
}

/// LU factorization with partial pivoting in band storage.
///
/// Rows keep columns `[i - kl, i + kl + ku]`; the extra `kl` absorbs pivoting
/// fill. Multipliers are stored per elimination step and applied interleaved
/// with the row swaps.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    pos: Vec<usize>,
    a: Vec<C64>,
    l: Vec<C64>,
    piv: Vec<usize>,
}

/// Relative pivot threshold.
pub const PIVOT_THRESHOLD: f64 = 1e-14;

impl BandedLu {
    fn new(op: &WindowedOperator) -> Result<Self> {
        let n = op.domain.dim();
        let pos = match op.repr {
            Repr::Dense(_) => (0..n).collect(),
            _ => op.domain.banded_order(),
        };
        let nz = op.nonzeros();
        let (mut kl, mut ku) = (0usize, 0usize);
        let mut maxabs: f64 = 0.0;
        for &(r, c, v) in &nz {
            let (pr, pc) = (pos[r], pos[c]);
            if pr > pc {
                kl = kl.max(pr - pc);
            } else {
                ku = ku.max(pc - pr);
            }
            maxabs = maxabs.max(v.norm());
        }
        let width = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            ku,
            width,
            pos,
            a: vec![zero(); n * width],
            l: vec![zero(); n * kl.max(1)],
            piv: vec![0; n],
        };
        for &(r, c, v) in &nz {
            let (pr, pc) = (lu.pos[r], lu.pos[c]);
            let k = lu.idx(pr, pc);
            lu.a[k] += v;
        }
        lu.factorize(PIVOT_THRESHOLD * maxabs.max(f64::MIN_POSITIVE))?;
        Ok(lu)
    }

    #[inline]
    fn idx(&self, row: usize, col: usize) -> usize {
        row * self.width + col + self.kl - row
    }

    fn factorize(&mut self, threshold: f64) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = self.a[self.idx(k, k)].norm();
            for i in k + 1..=last_row {
                let m = self.a[self.idx(i, k)].norm();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            if best <= threshold {
                return Err(Error::Singular { pivot: best, threshold });
            }
            self.piv[k] = p;
            if p != k {
                for col in k..=last_col {
                    let (i1, i2) = (self.idx(k, col), self.idx(p, col));
                    self.a.swap(i1, i2);
                }
            }
            let pivot = self.a[self.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                let m = self.a[ik] / pivot;
                self.l[k * kl + (i - k - 1)] = m;
                self.a[ik] = zero();
                if m != zero() {
                    for col in k + 1..=last_col {
                        let kc = self.idx(k, col);
                        let ic = self.idx(i, col);
                        let t = self.a[kc];
                        self.a[ic] -= m * t;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Lower and upper bandwidth of the assembled matrix.
    pub fn bands(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    /// Solves with the factored matrix or its adjoint.
    pub fn solve(&self, b: &[C64], adjoint: bool) -> Vec<C64> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut x = vec![zero(); n];
        for (i, v) in b.iter().enumerate() {
            x[self.pos[i]] = *v;
        }
        if !adjoint {
            for k in 0..n {
                x.swap(k, self.piv[k]);
                let xk = x[k];
                for i in k + 1..=(k + kl).min(n - 1) {
                    x[i] -= self.l[k * kl + (i - k - 1)] * xk;
                }
            }
            for k in (0..n).rev() {
                let mut s = x[k];
                for col in k + 1..=(k + kl + ku).min(n - 1) {
                    s -= self.a[self.idx(k, col)] * x[col];
                }
                x[k] = s / self.a[self.idx(k, k)];
            }
        } else {
            for k in 0..n {
                let mut s = x[k];
                for j in k.saturating_sub(kl + ku)..k {
                    s -= self.a[self.idx(j, k)].conj() * x[j];
                }
                x[k] = s / self.a[self.idx(k, k)].conj();
            }
            for k in (0..n).rev() {
                let mut s = x[k];
                for i in k + 1..=(k + kl).min(n - 1) {
                    s -= self.l[k * kl + (i - k - 1)].conj() * x[i];
                }
                x[k] = s;
                x.swap(k, self.piv[k]);
            }
        }
        let mut out = vec![zero(); n];
        for (i, o) in out.iter_mut().enumerate() {
            *o = x[self.pos[i]];
        }
        out
    }
}
