//! Small dense operators used to assemble the stock scenarios.

use nalgebra::DMatrix;

use crate::hilbert::C64;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn identity(d: usize) -> DMatrix<C64> {
    DMatrix::identity(d, d)
}

pub fn pauli_x() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])
}

pub fn pauli_y() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[c(0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), c(0.0)])
}

pub fn pauli_z() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)])
}

pub fn hadamard() -> DMatrix<C64> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    DMatrix::from_row_slice(2, 2, &[c(h), c(h), c(h), c(-h)])
}

/// Real rotation `exp(-i theta Y / 2)`.
pub fn ry(theta: f64) -> DMatrix<C64> {
    let (s, co) = (theta / 2.0).sin_cos();
    DMatrix::from_row_slice(2, 2, &[c(co), c(-s), c(s), c(co)])
}

/// Kronecker product, first factor most significant.
pub fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

/// Controlled-X with the first qubit as control.
pub fn controlled_not() -> DMatrix<C64> {
    controlled_shift(2)
}

/// `|j, m> -> |j, m + j mod d>` on two `d`-level systems.
pub fn controlled_shift(d: usize) -> DMatrix<C64> {
    let mut u = DMatrix::zeros(d * d, d * d);
    for j in 0..d {
        for m in 0..d {
            u[(j * d + (m + j) % d, j * d + m)] = c(1.0);
        }
    }
    u
}

/// Controlled-U with a `dc`-level control: applies `ops[j]` when the control
/// reads `j`.
pub fn controlled(ops: &[DMatrix<C64>]) -> DMatrix<C64> {
    let dt = ops[0].nrows();
    let dc = ops.len();
    let mut u = DMatrix::zeros(dc * dt, dc * dt);
    for (j, op) in ops.iter().enumerate() {
        u.view_mut((j * dt, j * dt), (dt, dt)).copy_from(op);
    }
    u
}

/// Spin-up and spin-down eigenvectors along the direction at polar angle
/// `theta` in the x-z plane.
pub fn axis_states(theta: f64) -> ([C64; 2], [C64; 2]) {
    let (s, co) = (theta / 2.0).sin_cos();
    ([c(co), c(s)], [c(-s), c(co)])
}

/// Projectors `(P+, P-)` onto the axis at polar angle `theta`.
pub fn axis_projectors(theta: f64) -> (DMatrix<C64>, DMatrix<C64>) {
    let (up, down) = axis_states(theta);
    let proj = |v: [C64; 2]| {
        DMatrix::from_fn(2, 2, |i, j| v[i] * v[j].conj())
    };
    (proj(up), proj(down))
}

/// `P+ (x) I + P- (x) X`: copies the spin component along `theta` into a
/// record qubit initialized in `|0>`.
pub fn measurement_coupling(theta: f64) -> DMatrix<C64> {
    let (p, m) = axis_projectors(theta);
    kron(&p, &identity(2)) + kron(&m, &pauli_x())
}

/// Projectors `(P+, P-) = (I +/- n.sigma) / 2` for a unit 3-vector `n`.
pub fn spin_projectors(n: [f64; 3]) -> (DMatrix<C64>, DMatrix<C64>) {
    let ns = pauli_x() * c(n[0]) + pauli_y() * c(n[1]) + pauli_z() * c(n[2]);
    let half = c(0.5);
    ((identity(2) + &ns) * half, (identity(2) - ns) * half)
}

/// `P+(n) (x) I + P-(n) (x) X`: spin measurement along `n` into a record
/// qubit, pointer 0 for the `+` outcome.
pub fn spin_coupling(n: [f64; 3]) -> DMatrix<C64> {
    let (p, m) = spin_projectors(n);
    kron(&p, &identity(2)) + kron(&m, &pauli_x())
}

/// Permutation matrix exchanging basis states `a` and `b` of a `d`-level
/// system.
pub fn swap_levels(d: usize, a: usize, b: usize) -> DMatrix<C64> {
    let mut u = identity(d);
    u.swap_columns(a, b);
    u
}

/// Unitary discrete Fourier transform of size `n`.
pub fn dft(n: usize) -> DMatrix<C64> {
    let norm = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, n, |j, k| {
        C64::from_polar(norm, 2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64)
    })
}
