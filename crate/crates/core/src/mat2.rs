//! Minimal complex 2×2 matrix arithmetic.
//!
//! Everything here is `Copy` and allocation-free so the integrator inner
//! loop stays on the stack.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);
const C_ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Complex 2×2 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub e: [[Complex64; 2]; 2],
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2 {
        e: [[C_ZERO, C_ZERO], [C_ZERO, C_ZERO]],
    };

    pub const IDENTITY: Mat2 = Mat2 {
        e: [[C_ONE, C_ZERO], [C_ZERO, C_ONE]],
    };

    pub fn new(e00: Complex64, e01: Complex64, e10: Complex64, e11: Complex64) -> Self {
        Mat2 {
            e: [[e00, e01], [e10, e11]],
        }
    }

    /// Real diagonal matrix.
    pub fn diag(a: f64, b: f64) -> Self {
        Mat2::new(a.into(), C_ZERO, C_ZERO, b.into())
    }

    pub fn sigma_x() -> Self {
        Mat2::new(C_ZERO, C_ONE, C_ONE, C_ZERO)
    }

    pub fn sigma_y() -> Self {
        Mat2::new(
            C_ZERO,
            Complex64::new(0.0, -1.0),
            Complex64::new(0.0, 1.0),
            C_ZERO,
        )
    }

    pub fn sigma_z() -> Self {
        Mat2::diag(1.0, -1.0)
    }

    pub fn adjoint(&self) -> Self {
        Mat2::new(
            self.e[0][0].conj(),
            self.e[1][0].conj(),
            self.e[0][1].conj(),
            self.e[1][1].conj(),
        )
    }

    pub fn trace(&self) -> Complex64 {
        self.e[0][0] + self.e[1][1]
    }

    /// Largest elementwise deviation from the conjugate transpose.
    pub fn hermiticity_defect(&self) -> f64 {
        let d = *self - self.adjoint();
        d.max_abs()
    }

    /// Hermitian part `(m + m†)/2`.
    pub fn symmetrize(&self) -> Self {
        let off = 0.5 * (self.e[0][1] + self.e[1][0].conj());
        Mat2::new(
            self.e[0][0].re.into(),
            off,
            off.conj(),
            self.e[1][1].re.into(),
        )
    }

    /// Eigenvalues of a Hermitian matrix, ascending. Only the Hermitian
    /// part of `self` is consulted.
    pub fn eigvals_hermitian(&self) -> (f64, f64) {
        let a = self.e[0][0].re;
        let d = self.e[1][1].re;
        let mean = 0.5 * (a + d);
        let half_gap = (0.25 * (a - d) * (a - d) + self.e[0][1].norm_sqr()).sqrt();
        (mean - half_gap, mean + half_gap)
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0_f64;
        for row in &self.e {
            for v in row {
                m = m.max(v.norm());
            }
        }
        m
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    #[inline]
    fn add(self, rhs: Mat2) -> Mat2 {
        Mat2::new(
            self.e[0][0] + rhs.e[0][0],
            self.e[0][1] + rhs.e[0][1],
            self.e[1][0] + rhs.e[1][0],
            self.e[1][1] + rhs.e[1][1],
        )
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    #[inline]
    fn sub(self, rhs: Mat2) -> Mat2 {
        Mat2::new(
            self.e[0][0] - rhs.e[0][0],
            self.e[0][1] - rhs.e[0][1],
            self.e[1][0] - rhs.e[1][0],
            self.e[1][1] - rhs.e[1][1],
        )
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    #[inline]
    fn mul(self, rhs: Mat2) -> Mat2 {
        let a = &self.e;
        let b = &rhs.e;
        Mat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    #[inline]
    fn mul(self, s: f64) -> Mat2 {
        Mat2::new(
            self.e[0][0] * s,
            self.e[0][1] * s,
            self.e[1][0] * s,
            self.e[1][1] * s,
        )
    }
}

impl Mul<Complex64> for Mat2 {
    type Output = Mat2;
    #[inline]
    fn mul(self, s: Complex64) -> Mat2 {
        Mat2::new(
            self.e[0][0] * s,
            self.e[0][1] * s,
            self.e[1][0] * s,
            self.e[1][1] * s,
        )
    }
}

/// `[a, b] = ab - ba`.
#[inline]
pub fn commutator(a: &Mat2, b: &Mat2) -> Mat2 {
    *a * *b - *b * *a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pauli_algebra() {
        let x = Mat2::sigma_x();
        let y = Mat2::sigma_y();
        let z = Mat2::sigma_z();
        // σ_x σ_y = i σ_z
        let xy = x * y;
        let iz = z * Complex64::new(0.0, 1.0);
        assert!((xy - iz).max_abs() < 1e-15);
        // σ_z² = 1
        assert!((z * z - Mat2::IDENTITY).max_abs() < 1e-15);
        assert_eq!(commutator(&z, &z), Mat2::ZERO);
    }

    #[test]
    fn hermitian_eigvals() {
        let m = Mat2::new(
            2.0.into(),
            Complex64::new(0.0, -1.0),
            Complex64::new(0.0, 1.0),
            (-1.0).into(),
        );
        let (lo, hi) = m.eigvals_hermitian();
        // characteristic roots of [[2, -i], [i, -1]]
        let disc = (1.5_f64 * 1.5 + 1.0).sqrt();
        assert!((lo - (0.5 - disc)).abs() < 1e-12);
        assert!((hi - (0.5 + disc)).abs() < 1e-12);
    }

    #[test]
    fn symmetrize_removes_defect() {
        let m = Mat2::new(
            Complex64::new(1.0, 1e-3),
            Complex64::new(0.2, 0.1),
            Complex64::new(0.2, -0.1001),
            0.5.into(),
        );
        assert!(m.hermiticity_defect() > 0.0);
        assert!(m.symmetrize().hermiticity_defect() < 1e-16);
    }
}
