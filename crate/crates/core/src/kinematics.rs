//! Deformation-gradient kinematics: principal stretches and directions,
//! stretch invariants and the sampling admissibility test.

use serde::{Deserialize, Serialize};

use crate::error::KinematicsError;
use crate::linalg::{self, Mat3, Vec3};

/// A deformation gradient `F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefGrad(Mat3);

impl DefGrad {
    /// Checked constructor; requires `det(F) > 0`.
    pub fn new(f: Mat3) -> Result<Self, KinematicsError> {
        let j = linalg::det(&f);
        if !(j > 0.0) {
            return Err(KinematicsError::NonPositiveJacobian(j));
        }
        Ok(Self(f))
    }

    /// Wraps a matrix without validation. [`spectral`] still rejects `det(F) <= 0`.
    pub fn from_matrix_unchecked(f: Mat3) -> Self {
        Self(f)
    }

    pub fn identity() -> Self {
        Self(linalg::IDENTITY)
    }

    pub fn diagonal(d: Vec3) -> Self {
        Self(linalg::diag(d))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn det(&self) -> f64 {
        linalg::det(&self.0)
    }

    /// Left Cauchy-Green tensor `b = F Fᵀ`.
    pub fn left_cauchy_green(&self) -> Mat3 {
        linalg::matmul(&self.0, &linalg::transpose(&self.0))
    }

    /// Right Cauchy-Green tensor `C = Fᵀ F`.
    pub fn right_cauchy_green(&self) -> Mat3 {
        linalg::matmul(&linalg::transpose(&self.0), &self.0)
    }

    /// Row-major flattening.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }

    pub fn from_row_major(v: &[f64; 9]) -> Self {
        Self([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }
}

/// Principal stretches (descending) with the matching spatial principal directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralState {
    pub stretches: Vec3,
    /// Unit eigenvectors of `b = F Fᵀ`, `directions[a]` pairs with `stretches[a]`.
    pub directions: [Vec3; 3],
    pub j: f64,
}

impl SpectralState {
    /// State with the given stretches and the coordinate axes as directions.
    /// Stretches are sorted descending; `j` is their product.
    pub fn from_stretches(stretches: Vec3) -> Self {
        let mut s = stretches;
        s.sort_by(|a, b| b.total_cmp(a));
        Self {
            stretches: s,
            directions: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            j: s[0] * s[1] * s[2],
        }
    }

    /// Eigenvalues of `cof U`: `(λ₂λ₃, λ₁λ₃, λ₁λ₂)`.
    pub fn cof_stretches(&self) -> Vec3 {
        let [l1, l2, l3] = self.stretches;
        [l2 * l3, l1 * l3, l1 * l2]
    }

    /// Rebuilds `b = Σ λₐ² nₐ⊗nₐ`.
    pub fn reconstruct_left_cauchy_green(&self) -> Mat3 {
        let mut b = [[0.0; 3]; 3];
        for a in 0..3 {
            let n = &self.directions[a];
            let l2 = self.stretches[a] * self.stretches[a];
            for i in 0..3 {
                for k in 0..3 {
                    b[i][k] += l2 * n[i] * n[k];
                }
            }
        }
        b
    }
}

/// Principal stretches and spatial principal directions of `F`.
pub fn spectral(f: &DefGrad) -> Result<SpectralState, KinematicsError> {
    let j_det = f.det();
    if !(j_det > 0.0) {
        return Err(KinematicsError::NonPositiveJacobian(j_det));
    }
    let b = f.left_cauchy_green();
    let (evals, evecs) = symmetric_eigen(&b)?;
    // ascending from the solver; stretches are reported descending
    let mut stretches = [0.0; 3];
    let mut directions = [[0.0; 3]; 3];
    for a in 0..3 {
        let ev = evals[2 - a];
        if !(ev > 0.0) || !ev.is_finite() {
            return Err(KinematicsError::EigenFailure(format!("non-positive eigenvalue {ev} of F·Fᵀ")));
        }
        stretches[a] = ev.sqrt();
        directions[a] = evecs[2 - a];
    }
    Ok(SpectralState { stretches, directions, j: stretches[0] * stretches[1] * stretches[2] })
}

/// Eigen-decomposition of a symmetric 3×3 matrix with the trigonometric closed
/// form for eigenvalues and cross-product/deflation construction of the
/// eigenvectors. Eigenvalues are returned ascending; vectors are orthonormal
/// and right-handed.
pub fn symmetric_eigen(a: &Mat3) -> Result<(Vec3, [Vec3; 3]), KinematicsError> {
    let max_abs = a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !max_abs.is_finite() {
        return Err(KinematicsError::EigenFailure("non-finite matrix entry".into()));
    }
    let axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    if max_abs == 0.0 {
        return Ok(([0.0; 3], axes));
    }
    let inv = 1.0 / max_abs;
    let mut s = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            // symmetrize against round-off in the caller's product
            s[i][k] = 0.5 * (a[i][k] + a[k][i]) * inv;
        }
    }
    let q = (s[0][0] + s[1][1] + s[2][2]) / 3.0;
    let b00 = s[0][0] - q;
    let b11 = s[1][1] - q;
    let b22 = s[2][2] - q;
    let (b01, b02, b12) = (s[0][1], s[0][2], s[1][2]);
    let p2 = (b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * (b01 * b01 + b02 * b02 + b12 * b12)) / 6.0;
    if p2 <= f64::EPSILON * f64::EPSILON {
        return Ok(([q * max_abs; 3], axes));
    }
    let p = p2.sqrt();
    let c = [[b00 / p, b01 / p, b02 / p], [b01 / p, b11 / p, b12 / p], [b02 / p, b12 / p, b22 / p]];
    let half_det = (0.5 * linalg::det(&c)).clamp(-1.0, 1.0);
    let angle = half_det.acos() / 3.0;
    let two_thirds_pi = 2.0 * std::f64::consts::FRAC_PI_3;
    let beta2 = 2.0 * angle.cos();
    let beta0 = 2.0 * (angle + two_thirds_pi).cos();
    let beta1 = -(beta0 + beta2);
    let evals = [q + p * beta0, q + p * beta1, q + p * beta2];

    let mut evecs = [[0.0; 3]; 3];
    if half_det >= 0.0 {
        evecs[2] = eigenvector_isolated(&s, evals[2]);
        evecs[1] = eigenvector_in_complement(&s, &evecs[2], evals[1]);
        evecs[0] = linalg::cross(&evecs[1], &evecs[2]);
    } else {
        evecs[0] = eigenvector_isolated(&s, evals[0]);
        evecs[1] = eigenvector_in_complement(&s, &evecs[0], evals[1]);
        evecs[2] = linalg::cross(&evecs[0], &evecs[1]);
    }
    for v in &evecs {
        if !v.iter().all(|x| x.is_finite()) {
            return Err(KinematicsError::EigenFailure("non-finite eigenvector".into()));
        }
    }
    Ok((evals.map(|e| e * max_abs), evecs))
}

/// Eigenvector of a simple eigenvalue from the largest cross product of the
/// rows of `A - e I`.
fn eigenvector_isolated(a: &Mat3, e: f64) -> Vec3 {
    let r0 = [a[0][0] - e, a[0][1], a[0][2]];
    let r1 = [a[0][1], a[1][1] - e, a[1][2]];
    let r2 = [a[0][2], a[1][2], a[2][2] - e];
    let c01 = linalg::cross(&r0, &r1);
    let c02 = linalg::cross(&r0, &r2);
    let c12 = linalg::cross(&r1, &r2);
    let d01 = linalg::dot(&c01, &c01);
    let d02 = linalg::dot(&c02, &c02);
    let d12 = linalg::dot(&c12, &c12);
    let (best, d) = if d01 >= d02 && d01 >= d12 {
        (c01, d01)
    } else if d02 >= d12 {
        (c02, d02)
    } else {
        (c12, d12)
    };
    if d == 0.0 {
        return [1.0, 0.0, 0.0];
    }
    linalg::scale(&best, 1.0 / d.sqrt())
}

fn orthogonal_complement(w: &Vec3) -> (Vec3, Vec3) {
    let u = if w[0].abs() > w[1].abs() {
        let inv = 1.0 / (w[0] * w[0] + w[2] * w[2]).sqrt();
        [-w[2] * inv, 0.0, w[0] * inv]
    } else {
        let inv = 1.0 / (w[1] * w[1] + w[2] * w[2]).sqrt();
        [0.0, w[2] * inv, -w[1] * inv]
    };
    let v = linalg::cross(w, &u);
    (u, v)
}

/// Deflated solve for the middle eigenvalue within the plane orthogonal to a
/// known eigenvector. Stable when the two remaining eigenvalues coalesce.
fn eigenvector_in_complement(a: &Mat3, known: &Vec3, e: f64) -> Vec3 {
    let (u, v) = orthogonal_complement(known);
    let au = mat_vec(a, &u);
    let av = mat_vec(a, &v);
    let mut m00 = linalg::dot(&u, &au) - e;
    let mut m01 = linalg::dot(&u, &av);
    let mut m11 = linalg::dot(&v, &av) - e;
    let (a00, a01, a11) = (m00.abs(), m01.abs(), m11.abs());
    let combine = |cu: f64, cv: f64| [cu * u[0] - cv * v[0], cu * u[1] - cv * v[1], cu * u[2] - cv * v[2]];
    if a00 >= a11 {
        let max = a00.max(a01);
        if max > 0.0 {
            if a00 >= a01 {
                m01 /= m00;
                m00 = 1.0 / (1.0 + m01 * m01).sqrt();
                m01 *= m00;
            } else {
                m00 /= m01;
                m01 = 1.0 / (1.0 + m00 * m00).sqrt();
                m00 *= m01;
            }
            combine(m01, m00)
        } else {
            u
        }
    } else {
        let max = a11.max(a01);
        if max > 0.0 {
            if a11 >= a01 {
                m01 /= m11;
                m11 = 1.0 / (1.0 + m01 * m01).sqrt();
                m01 *= m11;
            } else {
                m11 /= m01;
                m01 = 1.0 / (1.0 + m11 * m11).sqrt();
                m11 *= m01;
            }
            combine(m11, m01)
        } else {
            u
        }
    }
}

fn mat_vec(a: &Mat3, x: &Vec3) -> Vec3 {
    [linalg::dot(&a[0], x), linalg::dot(&a[1], x), linalg::dot(&a[2], x)]
}

/// Principal invariants of `U`: `(λ₁+λ₂+λ₃, λ₁λ₂+λ₁λ₃+λ₂λ₃, λ₁λ₂λ₃)`.
pub fn invariants_u(s: &SpectralState) -> (f64, f64, f64) {
    stretch_invariants(&s.stretches)
}

pub fn stretch_invariants(l: &Vec3) -> (f64, f64, f64) {
    (l[0] + l[1] + l[2], l[0] * l[1] + l[0] * l[2] + l[1] * l[2], l[0] * l[1] * l[2])
}

/// Discriminant of the cubic `t³ - i₁t² + i₂t - i₃` whose roots are the stretches.
pub fn discriminant(i1: f64, i2: f64, i3: f64) -> f64 {
    -4.0 * i1.powi(3) * i3 + i1 * i1 * i2 * i2 + 18.0 * i1 * i2 * i3 - 4.0 * i2.powi(3) - 27.0 * i3 * i3
}

/// Accepts a sample when all roots are real (non-negative discriminant) and
/// the volume ratio is positive.
pub fn admissible(i1: f64, i2: f64, i3: f64) -> bool {
    i3 > 0.0 && discriminant(i1, i2, i3) >= 0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn uniaxial_diagonal() {
        let r = 1.0 / 2f64.sqrt();
        let s = spectral(&DefGrad::diagonal([2.0, r, r])).unwrap();
        assert!(close(s.stretches[0], 2.0, 1e-14));
        assert!(close(s.stretches[1], std::f64::consts::FRAC_1_SQRT_2, 1e-12));
        assert!(close(s.stretches[2], std::f64::consts::FRAC_1_SQRT_2, 1e-12));
        assert!(close(s.j, 1.0, 1e-14));
        assert!(s.directions[0][0].abs() > 1.0 - 1e-12);
    }

    #[test]
    fn identity_gives_unit_stretches() {
        let s = spectral(&DefGrad::identity()).unwrap();
        assert_eq!(s.stretches, [1.0, 1.0, 1.0]);
        assert_eq!(s.j, 1.0);
        for a in 0..3 {
            for b in 0..3 {
                let d = linalg::dot(&s.directions[a], &s.directions[b]);
                assert!(close(d, if a == b { 1.0 } else { 0.0 }, 1e-14));
            }
        }
    }

    #[test]
    fn rejects_inverted_configuration() {
        let f = DefGrad::from_matrix_unchecked(linalg::diag([1.0, 1.0, -1.0]));
        assert!(matches!(spectral(&f), Err(KinematicsError::NonPositiveJacobian(_))));
        assert!(DefGrad::new(linalg::diag([1.0, 0.0, 1.0])).is_err());
    }

    #[test]
    fn invariant_examples() {
        assert_eq!(stretch_invariants(&[1.0, 1.0, 1.0]), (3.0, 3.0, 1.0));
        assert_eq!(stretch_invariants(&[2.0, 1.0, 1.0]), (4.0, 5.0, 2.0));
        let (i1, i2, i3) = stretch_invariants(&[1.2, 1.0, 0.8]);
        assert!(close(i1, 3.0, 1e-14) && close(i2, 2.96, 1e-14) && close(i3, 0.96, 1e-14));
    }

    #[test]
    fn admissibility_examples() {
        assert_eq!(discriminant(3.0, 3.0, 1.0), 0.0);
        assert!(admissible(3.0, 3.0, 1.0));
        let (i1, i2, i3) = stretch_invariants(&[1.2, 1.0, 0.8]);
        assert!(close(discriminant(i1, i2, i3), 0.000256, 1e-12));
        assert!(admissible(i1, i2, i3));
        // roots 1, 1 ± i
        assert_eq!(discriminant(3.0, 4.0, 2.0), -4.0);
        assert!(!admissible(3.0, 4.0, 2.0));
        assert!(!admissible(3.0, 3.0, -1.0));
    }

    #[test]
    fn coalesced_pair_is_orthonormal() {
        let f = DefGrad::diagonal([2.0, 1.0, 1.0]);
        let s = spectral(&f).unwrap();
        assert_eq!(s.stretches[0], 2.0);
        let b = s.reconstruct_left_cauchy_green();
        let err = linalg::frobenius(&linalg::sub(&b, &f.left_cauchy_green()));
        assert!(err < 1e-12);
    }
}
