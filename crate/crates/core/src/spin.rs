//! Collective spin states of `N` two-level atoms.
//!
//! States are stored as amplitudes over the eigenbasis of `J_y`, indexed by
//! `m = -J..=J` with `J = N/2`. The ladder operators raise `m`:
//! `J_+ |m> = C(m) |m+1>` with `C(m) = sqrt(J(J+1) - m(m+1))`, and the
//! transverse components are `J_z = -(J_+ + J_-)/2`, `J_x = i(J_+ - J_-)/2`.
//! In this phase convention the squeezed family
//! `|psi(kappa)> ∝ sum_m (-1)^m exp(-(m/kappa)^2) |m>` has its mean spin along
//! `+z`, and the usual commutators `[J_x, J_y] = i J_z` (cyclic) hold.

use num_complex::Complex64;

use crate::error::{domain, Result};
use crate::numerics::{bessel_j_sequence, integrate};

/// Rotation axes used by the protocol.
///
/// `Axis1` is `J_x`: phase imprint and feedback rotations. `Axis3` is `J_y`,
/// the axis the dispersive probe couples to in the interrogation frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Axis1,
    Axis3,
}

/// Exact pure state of the collective spin.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinStateVector {
    atom_count: usize,
    amplitudes: Vec<Complex64>,
}

/// First and second moments of `(J_x, J_y, J_z)`.
///
/// Covariances are symmetrized, `cov_ab = <(J_a J_b + J_b J_a)/2> - <J_a><J_b>`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnsembleMoments {
    pub mean_x: f64,
    pub mean_y: f64,
    pub mean_z: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub var_z: f64,
    pub cov_yz: f64,
    pub cov_xz: f64,
    pub cov_xy: f64,
}

impl EnsembleMoments {
    /// Mean vector in `(x, y, z)` order.
    pub fn mean(&self) -> [f64; 3] {
        [self.mean_x, self.mean_y, self.mean_z]
    }

    /// Covariance matrix in `(x, y, z)` order.
    pub fn covariance(&self) -> [[f64; 3]; 3] {
        [
            [self.var_x, self.cov_xy, self.cov_xz],
            [self.cov_xy, self.var_y, self.cov_yz],
            [self.cov_xz, self.cov_yz, self.var_z],
        ]
    }

    pub fn from_parts(mean: [f64; 3], cov: [[f64; 3]; 3]) -> Self {
        Self {
            mean_x: mean[0],
            mean_y: mean[1],
            mean_z: mean[2],
            var_x: cov[0][0],
            var_y: cov[1][1],
            var_z: cov[2][2],
            cov_yz: 0.5 * (cov[1][2] + cov[2][1]),
            cov_xz: 0.5 * (cov[0][2] + cov[2][0]),
            cov_xy: 0.5 * (cov[0][1] + cov[1][0]),
        }
    }

    /// `<J_a^2>` for the three components, `(x, y, z)` order.
    pub fn second_moments(&self) -> [f64; 3] {
        [
            self.var_x + self.mean_x * self.mean_x,
            self.var_y + self.mean_y * self.mean_y,
            self.var_z + self.mean_z * self.mean_z,
        ]
    }

    /// Apply the Schrödinger-picture rotation `exp(-i angle J_axis)` to the
    /// moments. Exact: the map on `(J_x, J_y, J_z)` is linear.
    pub fn rotated(&self, axis: Axis, angle: f64) -> Self {
        let r = rotation_matrix(axis, angle);
        let mu = self.mean();
        let cov = self.covariance();
        let mut mean = [0.0; 3];
        for (i, row) in r.iter().enumerate() {
            mean[i] = row.iter().zip(mu.iter()).map(|(a, b)| a * b).sum();
        }
        let mut rc = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rc[i][j] = (0..3).map(|k| r[i][k] * cov[k][j]).sum();
            }
        }
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| rc[i][k] * r[j][k]).sum();
            }
        }
        Self::from_parts(mean, out)
    }
}

/// Matrix `R` with `<J>' = R <J>` under `exp(-i angle J_axis)`, `(x, y, z)` order.
pub fn rotation_matrix(axis: Axis, angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    match axis {
        // y' = c y - s z, z' = s y + c z
        Axis::Axis1 => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        // z' = c z - s x, x' = c x + s z
        Axis::Axis3 => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
    }
}

fn ladder(j: f64, m: f64) -> f64 {
    (j * (j + 1.0) - m * (m + 1.0)).max(0.0).sqrt()
}

fn check_atoms(n: usize) -> Result<()> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(domain(format!("atom count must be even and >= 2, got {n}")));
    }
    Ok(())
}

impl SpinStateVector {
    /// Build a state from raw amplitudes over `m = -J..=J`. The amplitudes
    /// are normalized.
    pub fn from_amplitudes(atom_count: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        check_atoms(atom_count)?;
        if amplitudes.len() != atom_count + 1 {
            return Err(domain(format!(
                "expected {} amplitudes, got {}",
                atom_count + 1,
                amplitudes.len()
            )));
        }
        let mut s = Self { atom_count, amplitudes };
        let norm = s.norm_sqr();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(domain("amplitudes must have finite, nonzero norm"));
        }
        s.scale(1.0 / norm.sqrt());
        Ok(s)
    }

    /// The `J_y` eigenstate `|m>`.
    pub fn eigenstate(atom_count: usize, m: i64) -> Result<Self> {
        check_atoms(atom_count)?;
        let j = (atom_count / 2) as i64;
        if m.abs() > j {
            return Err(domain(format!("|m| must be <= {j}")));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); atom_count + 1];
        amps[(m + j) as usize] = Complex64::new(1.0, 0.0);
        Ok(Self {
            atom_count,
            amplitudes: amps,
        })
    }

    pub fn atom_count(&self) -> usize {
        self.atom_count
    }

    /// Total angular momentum quantum number `J = N/2`.
    pub fn j(&self) -> i64 {
        (self.atom_count / 2) as i64
    }

    /// Amplitudes indexed from `m = -J`.
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    /// Amplitude of `|m>`.
    pub fn amplitude(&self, m: i64) -> Complex64 {
        self.amplitudes[(m + self.j()) as usize]
    }

    /// Probabilities `|c_m|^2`, indexed from `m = -J`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    pub(crate) fn scale(&mut self, f: f64) {
        for c in self.amplitudes.iter_mut() {
            *c *= f;
        }
    }

    pub(crate) fn renormalize(&mut self) {
        let n = self.norm_sqr();
        self.scale(1.0 / n.sqrt());
    }
}

/// `|psi(kappa)> ∝ sum_m (-1)^m exp(-(m/kappa)^2) |m>`, normalized.
pub fn build_squeezed_state(atom_count: usize, kappa: f64) -> Result<SpinStateVector> {
    check_atoms(atom_count)?;
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(domain(format!("kappa must be positive, got {kappa}")));
    }
    let j = (atom_count / 2) as i64;
    let mut amps: Vec<Complex64> = (-j..=j)
        .map(|m| {
            let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            let x = m as f64 / kappa;
            Complex64::new(sign * (-x * x).exp(), 0.0)
        })
        .collect();
    let norm: f64 = amps.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    for c in amps.iter_mut() {
        *c /= norm;
    }
    Ok(SpinStateVector {
        atom_count,
        amplitudes: amps,
    })
}

/// All first and second moments of `(J_x, J_y, J_z)` from the ladder matrix
/// elements.
pub fn exact_moments(state: &SpinStateVector) -> EnsembleMoments {
    let j = state.j() as f64;
    let jj = j * (j + 1.0);
    let c = &state.amplitudes;
    let dim = c.len();
    let m_of = |k: usize| k as f64 - j;

    let mut mean_y = 0.0;
    let mut y2 = 0.0;
    for (k, ck) in c.iter().enumerate() {
        let p = ck.norm_sqr();
        let m = m_of(k);
        mean_y += p * m;
        y2 += p * m * m;
    }
    // <J_+>, <{J_y, J_+}>, <J_+^2>
    let mut a1 = Complex64::new(0.0, 0.0);
    let mut b1 = Complex64::new(0.0, 0.0);
    let mut a2 = Complex64::new(0.0, 0.0);
    for k in 0..dim - 1 {
        let m = m_of(k);
        let t = c[k + 1].conj() * c[k] * ladder(j, m);
        a1 += t;
        b1 += t * (2.0 * m + 1.0);
        if k + 2 < dim {
            a2 += c[k + 2].conj() * c[k] * ladder(j, m) * ladder(j, m + 1.0);
        }
    }
    let mean_z = -a1.re;
    let mean_x = -a1.im;
    let z2 = 0.5 * (jj - y2 + a2.re);
    let x2 = 0.5 * (jj - y2 - a2.re);
    let sym_zx = 0.5 * a2.im;
    let sym_yz = -0.5 * b1.re;
    let sym_yx = -0.5 * b1.im;
    EnsembleMoments {
        mean_x,
        mean_y,
        mean_z,
        var_x: x2 - mean_x * mean_x,
        var_y: y2 - mean_y * mean_y,
        var_z: z2 - mean_z * mean_z,
        cov_yz: sym_yz - mean_y * mean_z,
        cov_xz: sym_zx - mean_x * mean_z,
        cov_xy: sym_yx - mean_x * mean_y,
    }
}

/// Moments of `|psi(kappa)>` with the sums over `m` replaced by integrals.
///
/// Valid for `N >> 1`; requires `N >= 100` and `kappa >= 1`.
pub fn gaussian_moments(atom_count: usize, kappa: f64) -> Result<EnsembleMoments> {
    check_atoms(atom_count)?;
    if atom_count < 100 {
        return Err(domain(format!("continuum moments need N >= 100, got {atom_count}")));
    }
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(domain(format!("continuum moments need kappa >= 1, got {kappa}")));
    }
    let j = atom_count as f64 / 2.0;
    let jj = j * (j + 1.0);
    // |c_m|^2 is a normal density in m with variance kappa^2/4.
    let sd = kappa / 2.0;
    let density = |u: f64| (-0.5 * (u / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let lim = (12.0 * sd).min(j - 0.5);
    let tol = 1e-12;

    // <J_z>/sqrt(jj): adjacent amplitudes pair up around u = m + 1/2.
    let mz_unit = integrate(
        |u| density(u) * (1.0 + (0.25 - u * u) / jj).max(0.0).sqrt(),
        -lim,
        lim,
        tol,
    )?;
    let mean_z = (-0.5 / (kappa * kappa)).exp() * mz_unit * jj.sqrt();

    // <J_+^2>/jj around v = m + 1.
    let s2_unit = integrate(
        |v| {
            let a = 1.0 - v * v / jj;
            density(v) * (a * a - v * v / (jj * jj)).max(0.0).sqrt()
        },
        -lim,
        lim,
        tol,
    )?;
    let s2 = (-2.0 / (kappa * kappa)).exp() * s2_unit * jj;
    let var_y = kappa * kappa / 4.0;
    let z2 = 0.5 * (jj - var_y + s2);
    let x2 = 0.5 * (jj - var_y - s2);
    Ok(EnsembleMoments {
        mean_x: 0.0,
        mean_y: 0.0,
        mean_z,
        var_x: x2,
        var_y,
        var_z: (z2 - mean_z * mean_z).max(0.0),
        cov_yz: 0.0,
        cov_xz: 0.0,
        cov_xy: 0.0,
    })
}

/// Apply `exp(-i angle J_axis)` to the state.
pub fn rotate_state(state: &SpinStateVector, axis: Axis, angle: f64) -> SpinStateVector {
    let mut out = state.clone();
    rotate_in_place(&mut out, axis, angle);
    out
}

pub(crate) fn rotate_in_place(state: &mut SpinStateVector, axis: Axis, angle: f64) {
    if angle == 0.0 {
        return;
    }
    match axis {
        Axis::Axis3 => {
            let j = state.j();
            for (k, c) in state.amplitudes.iter_mut().enumerate() {
                let m = k as f64 - j as f64;
                *c *= Complex64::from_polar(1.0, -angle * m);
            }
        }
        Axis::Axis1 => chebyshev_jx(state, angle),
    }
}

/// Multiply `c_m` by `i^{power * m}`, with `power` in `{1, -1}`.
fn phase_quarter(c: &mut [Complex64], j: i64, power: i64) {
    for (k, v) in c.iter_mut().enumerate() {
        let m = k as i64 - j;
        *v *= match (power * m).rem_euclid(4) {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        };
    }
}

/// `exp(-i angle J_x)` by a Chebyshev expansion.
///
/// In the basis `i^{-m}|m>` the operator `J_x` is the real symmetric
/// tridiagonal matrix with off-diagonal `C(m)/2`, and its spectrum lies in
/// `[-J, J]`.
fn chebyshev_jx(state: &mut SpinStateVector, angle: f64) {
    let j = state.j();
    let jf = j as f64;
    let dim = state.amplitudes.len();
    let off: Vec<f64> = (0..dim - 1).map(|k| 0.5 * ladder(jf, k as f64 - jf) / jf).collect();
    let a = angle * jf;
    let kmax = (a.abs() + 12.0 * a.abs().cbrt() + 40.0).ceil() as usize;
    let bessel = bessel_j_sequence(a, kmax);
    let mut nterms = kmax;
    while nterms > 1 && bessel[nterms].abs() < 1e-18 && nterms as f64 > a.abs() {
        nterms -= 1;
    }

    // psi in the real-J_x basis: phi_m = i^{-m} c_m
    let psi = &mut state.amplitudes;
    phase_quarter(psi, j, -1);

    let apply = |v: &[Complex64], out: &mut [Complex64]| {
        for k in 0..dim {
            let mut acc = Complex64::new(0.0, 0.0);
            if k > 0 {
                acc += v[k - 1] * off[k - 1];
            }
            if k + 1 < dim {
                acc += v[k + 1] * off[k];
            }
            out[k] = acc;
        }
    };

    // exp(-i a x) = J_0(a) + 2 sum_k (-i)^k J_k(a) T_k(x)
    let coeff = |k: usize| -> Complex64 {
        let mag = if k == 0 { bessel[0] } else { 2.0 * bessel[k] };
        match k % 4 {
            0 => Complex64::new(mag, 0.0),
            1 => Complex64::new(0.0, -mag),
            2 => Complex64::new(-mag, 0.0),
            _ => Complex64::new(0.0, mag),
        }
    };

    let mut t_prev: Vec<Complex64> = psi.to_vec();
    let mut t_cur = vec![Complex64::new(0.0, 0.0); dim];
    apply(&t_prev, &mut t_cur);
    let mut acc: Vec<Complex64> = t_prev.iter().map(|v| v * coeff(0)).collect();
    let c1 = coeff(1);
    for (a, v) in acc.iter_mut().zip(t_cur.iter()) {
        *a += v * c1;
    }
    let mut t_next = vec![Complex64::new(0.0, 0.0); dim];
    for k in 2..=nterms {
        apply(&t_cur, &mut t_next);
        let ck = coeff(k);
        for i in 0..dim {
            let v = 2.0 * t_next[i] - t_prev[i];
            t_next[i] = v;
            acc[i] += v * ck;
        }
        std::mem::swap(&mut t_prev, &mut t_cur);
        std::mem::swap(&mut t_cur, &mut t_next);
    }
    psi.copy_from_slice(&acc);
    phase_quarter(psi, j, 1);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_squeezed_state(3, 1.0).is_err());
        assert!(build_squeezed_state(0, 1.0).is_err());
        assert!(build_squeezed_state(4, 0.0).is_err());
        assert!(build_squeezed_state(4, -1.0).is_err());
        assert!(gaussian_moments(98, 3.0).is_err());
        assert!(gaussian_moments(1000, 0.5).is_err());
    }

    #[test]
    fn narrow_state_is_nearly_fock() {
        let s = build_squeezed_state(2, 0.1).unwrap();
        assert!(s.amplitude(0).norm_sqr() > 0.999);
    }

    #[test]
    fn n4_kappa1_matches_direct_sum() {
        let s = build_squeezed_state(4, 1.0).unwrap();
        let norm = (-2..=2)
            .map(|m: i64| (-2.0 * (m * m) as f64).exp())
            .sum::<f64>()
            .powf(-0.5);
        for m in -2..=2i64 {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            let want = sign * norm * (-((m * m) as f64)).exp();
            assert!(close(s.amplitude(m).re, want, 1e-15));
            assert_eq!(s.amplitude(m).im, 0.0);
        }
    }

    #[test]
    fn uncorrelated_kappa_gives_projection_noise() {
        let s = build_squeezed_state(100, 10.0).unwrap();
        let m = exact_moments(&s);
        let r = m.var_y / 25.0;
        assert!((0.8..=1.2).contains(&r), "{r}");
    }

    #[test]
    fn squeezed_state_symmetry_and_casimir() {
        for &(n, k) in &[(2usize, 1.0), (10, 2.0), (100, 4.0), (400, 20.0)] {
            let s = build_squeezed_state(n, k).unwrap();
            let m = exact_moments(&s);
            assert!(m.mean_x.abs() < 1e-12);
            assert!(m.mean_y.abs() < 1e-12);
            assert!(m.mean_z > 0.0);
            let j = n as f64 / 2.0;
            let cas: f64 = m.second_moments().iter().sum();
            assert!(close(cas, j * (j + 1.0), 1e-9 * j * j));
        }
    }

    /// Explicit 3x3 matrices for J = 1 in the J_y eigenbasis.
    fn spin1_matrices() -> [[[Complex64; 3]; 3]; 3] {
        let z = Complex64::new(0.0, 0.0);
        let r = std::f64::consts::SQRT_2;
        // J_+ |m> = sqrt(2) |m+1> for m = -1, 0. Index 0 is m = -1.
        let mut jp = [[z; 3]; 3];
        jp[1][0] = Complex64::new(r, 0.0);
        jp[2][1] = Complex64::new(r, 0.0);
        let mut jx = [[z; 3]; 3];
        let mut jy = [[z; 3]; 3];
        let mut jz = [[z; 3]; 3];
        for a in 0..3 {
            jy[a][a] = Complex64::new(a as f64 - 1.0, 0.0);
            for b in 0..3 {
                let p = jp[a][b];
                let m = jp[b][a].conj(); // J_-
                jz[a][b] = -(p + m) * 0.5;
                jx[a][b] = Complex64::new(0.0, 0.5) * (p - m);
            }
        }
        [jx, jy, jz]
    }

    fn expect(op: &[[Complex64; 3]; 3], c: &[Complex64]) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for a in 0..3 {
            for b in 0..3 {
                acc += c[a].conj() * op[a][b] * c[b];
            }
        }
        acc.re
    }

    #[test]
    fn n2_mean_z_matches_matrix_algebra() {
        let s = build_squeezed_state(2, 1.0).unwrap();
        let [_, _, jz] = spin1_matrices();
        let want = expect(&jz, s.amplitudes());
        let got = exact_moments(&s).mean_z;
        assert!(close(got, want, 1e-14), "{got} {want}");
        assert!(want > 0.0);
    }

    #[test]
    fn spin1_commutators_hold() {
        let [jx, jy, jz] = spin1_matrices();
        let mul = |a: &[[Complex64; 3]; 3], b: &[[Complex64; 3]; 3]| {
            let mut o = [[Complex64::new(0.0, 0.0); 3]; 3];
            for i in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        o[i][k] += a[i][l] * b[l][k];
                    }
                }
            }
            o
        };
        let xy = mul(&jx, &jy);
        let yx = mul(&jy, &jx);
        for i in 0..3 {
            for k in 0..3 {
                let comm = xy[i][k] - yx[i][k];
                let want = Complex64::new(0.0, 1.0) * jz[i][k];
                assert!((comm - want).norm() < 1e-14);
            }
        }
    }

    /// Taylor series of exp(-i t J_x) on the 3-level system.
    fn spin1_rotation(angle: f64) -> [[Complex64; 3]; 3] {
        let [jx, _, _] = spin1_matrices();
        let mut out = [[Complex64::new(0.0, 0.0); 3]; 3];
        let mut term = [[Complex64::new(0.0, 0.0); 3]; 3];
        for i in 0..3 {
            out[i][i] = Complex64::new(1.0, 0.0);
            term[i][i] = Complex64::new(1.0, 0.0);
        }
        for n in 1..60 {
            let mut next = [[Complex64::new(0.0, 0.0); 3]; 3];
            for i in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        next[i][k] += term[i][l] * jx[l][k];
                    }
                    next[i][k] *= Complex64::new(0.0, -angle / n as f64);
                }
            }
            term = next;
            for i in 0..3 {
                for k in 0..3 {
                    out[i][k] += term[i][k];
                }
            }
        }
        out
    }

    #[test]
    fn n2_rotation_matches_matrix_exponential_and_classical_rotation() {
        let s = build_squeezed_state(2, 1.0).unwrap();
        let angle = std::f64::consts::FRAC_PI_2;
        let u = spin1_rotation(angle);
        let c = s.amplitudes();
        let want: Vec<Complex64> = (0..3).map(|i| (0..3).map(|k| u[i][k] * c[k]).sum()).collect();
        let got = rotate_state(&s, Axis::Axis1, angle);
        for (g, w) in got.amplitudes().iter().zip(want.iter()) {
            assert!((g - w).norm() < 1e-13);
        }
        let before = exact_moments(&s).mean();
        let after = exact_moments(&got).mean();
        let r = rotation_matrix(Axis::Axis1, angle);
        for i in 0..3 {
            let rot: f64 = (0..3).map(|k| r[i][k] * before[k]).sum();
            assert!(close(after[i], rot, 1e-12), "{i}: {} {}", after[i], rot);
        }
    }

    #[test]
    fn zero_angle_is_identity() {
        let s = build_squeezed_state(50, 3.0).unwrap();
        assert_eq!(rotate_state(&s, Axis::Axis1, 0.0), s);
        assert_eq!(rotate_state(&s, Axis::Axis3, 0.0), s);
    }

    #[test]
    fn large_rotation_is_unitary() {
        let s = build_squeezed_state(1000, 5.0).unwrap();
        let r = rotate_state(&s, Axis::Axis1, 2.5);
        assert!((r.norm_sqr() - 1.0).abs() < 1e-12);
        // Full turn about J_x is the identity for integer J.
        let back = rotate_state(&s, Axis::Axis1, 2.0 * std::f64::consts::PI);
        for (a, b) in back.amplitudes().iter().zip(s.amplitudes()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn continuum_moments_track_exact_sums() {
        for &kappa in &[2.0, 3.0, 8.0, 20.0, 1000f64.sqrt()] {
            let g = gaussian_moments(1000, kappa).unwrap();
            let e = exact_moments(&build_squeezed_state(1000, kappa).unwrap());
            let rel = |a: f64, b: f64| ((a - b) / b).abs();
            assert!(rel(g.mean_z, e.mean_z) < 0.01);
            assert!(rel(g.var_y, e.var_y) < 0.01);
            assert!(rel(g.var_x, e.var_x) < 0.01);
            assert!(rel(g.var_z, e.var_z) < 0.01, "kappa {kappa}: {} {}", g.var_z, e.var_z);
            assert_eq!(g.mean_x, 0.0);
            assert_eq!(g.mean_y, 0.0);
        }
    }

    #[test]
    fn continuum_squeezing_ratio_scales_as_kappa_over_n() {
        let n = 10_000usize;
        let g = gaussian_moments(n, 10.0).unwrap();
        let ratio = (g.var_y / (g.mean_z * g.mean_z)) / (100.0 / (n * n) as f64);
        assert!((0.5..2.0).contains(&ratio), "{ratio}");
    }
}
