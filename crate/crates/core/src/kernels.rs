//! Pointwise ingredients: the collision kernel family, the Maxwellian,
//! weight functions with their logarithmic derivatives, the radial projector,
//! and the smooth spherical cutoff used to split the linearized operator.
//!
//! The kernel matrix is `a(z) = |z|^{gamma+2} (I - zz^T/|z|^2)`, the projector
//! onto the plane orthogonal to `z`, scaled by `|z|^{gamma+2}`. Its first and
//! second contractions are `b_i = d_j a_ij = -2 |z|^gamma z_i` and
//! `c = d_ij a_ij = -2 (gamma+3) |z|^gamma`. Only `gamma` in `[-2, 1]` is
//! supported (Coulomb `gamma = -3` and the range below `-2` are out of scope).

use crate::error::{Error, Result};

/// `(2*pi)^{-3/2}`, the Maxwellian normalization.
pub const MAXWELLIAN_NORM: f64 = 0.06349363593424097;

/// Interaction exponent `gamma`, validated to `[-2, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Potential {
    gamma: f64,
}

impl Potential {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(-2.0..=1.0).contains(&gamma) || !gamma.is_finite() {
            return Err(Error::InvalidGamma(gamma));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(self) -> f64 {
        self.gamma
    }

    /// Hard potentials and the Maxwell case: `gamma >= 0`.
    pub fn is_hard(self) -> bool {
        self.gamma >= 0.0
    }

    /// Kernel matrix `a(z)`. At `z = 0` the continuous extension `0` is used
    /// (for `gamma = -2` the radial limit does not exist; the zero matrix is
    /// the documented convention, consistent with omitting the single
    /// singular node in quadrature sums).
    pub fn kernel_a(self, z: [f64; 3]) -> [[f64; 3]; 3] {
        let r2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
        if r2 == 0.0 {
            return [[0.0; 3]; 3];
        }
        let scale = r2.powf(0.5 * (self.gamma + 2.0));
        let mut a = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let proj = if i == j { 1.0 } else { 0.0 } - z[i] * z[j] / r2;
                a[i][j] = scale * proj;
            }
        }
        a
    }

    /// First contraction `b(z) = -2 |z|^gamma z`. Undefined at `z = 0` for
    /// `gamma < 0`.
    pub fn kernel_b(self, z: [f64; 3]) -> Result<[f64; 3]> {
        let r2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
        if r2 == 0.0 {
            if self.gamma < 0.0 {
                return Err(Error::DomainError { gamma: self.gamma });
            }
            return Ok([0.0; 3]);
        }
        let scale = -2.0 * r2.powf(0.5 * self.gamma);
        Ok([scale * z[0], scale * z[1], scale * z[2]])
    }

    /// Second contraction `c(z) = -2 (gamma+3) |z|^gamma`. Undefined at
    /// `z = 0` for `gamma < 0`.
    pub fn kernel_c(self, z: [f64; 3]) -> Result<f64> {
        let r2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
        if r2 == 0.0 {
            if self.gamma < 0.0 {
                return Err(Error::DomainError { gamma: self.gamma });
            }
            // |z|^0 = 1 by continuity at gamma = 0; |z|^gamma -> 0 otherwise.
            return Ok(if self.gamma == 0.0 {
                -2.0 * (self.gamma + 3.0)
            } else {
                0.0
            });
        }
        Ok(-2.0 * (self.gamma + 3.0) * r2.powf(0.5 * self.gamma))
    }

    /// Regularized `c` sample for the `z = 0` cell of a grid with spacing
    /// `dv`. For `gamma < 0` the singularity is integrable, so the cell
    /// carries the average of `c` over a ball of the cell's volume; for
    /// `gamma >= 0` the pointwise value is already finite.
    pub fn c_origin(self, dv: f64) -> f64 {
        if self.gamma < 0.0 {
            let r_eq = dv * (3.0 / (4.0 * std::f64::consts::PI)).powf(1.0 / 3.0);
            -8.0 * std::f64::consts::PI * r_eq.powf(self.gamma + 3.0) / dv.powi(3)
        } else {
            self.kernel_c([0.0; 3]).unwrap()
        }
    }
}

/// Global Maxwellian `mu(v) = (2 pi)^{-3/2} exp(-|v|^2/2)`.
pub fn maxwellian(v: [f64; 3]) -> f64 {
    let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    MAXWELLIAN_NORM * (-0.5 * r2).exp()
}

/// Weight function family. `sigma` classifies the exponential strength:
/// 0 for polynomial `<v>^k`, `s` for stretched exponential `exp(r <v>^s)`,
/// 2 for Gaussian-type `exp(r <v>^2)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Weight {
    Polynomial { k: f64 },
    Stretched { r: f64, s: f64 },
    Gaussian { r: f64 },
}

impl Weight {
    /// Structural validation (positivity, stretched range `s in (0,2)`,
    /// Gaussian `r in (0, 1/2)` so that `m^2 mu` stays integrable).
    /// Admissibility relative to a given `gamma` is the abscissa's job.
    pub fn validate(self) -> Result<()> {
        match self {
            Weight::Polynomial { k } => {
                if !(k > 0.0) || !k.is_finite() {
                    return Err(Error::InadmissibleWeight(format!(
                        "polynomial weight needs k > 0, got k = {k}"
                    )));
                }
            }
            Weight::Stretched { r, s } => {
                if !(r > 0.0) || !r.is_finite() {
                    return Err(Error::InadmissibleWeight(format!(
                        "stretched weight needs r > 0, got r = {r}"
                    )));
                }
                if !(s > 0.0 && s < 2.0) {
                    return Err(Error::InadmissibleWeight(format!(
                        "stretched weight needs s in (0, 2), got s = {s}"
                    )));
                }
            }
            Weight::Gaussian { r } => {
                if !(r > 0.0 && r < 0.5) {
                    return Err(Error::InadmissibleWeight(format!(
                        "Gaussian-type weight needs r in (0, 1/2), got r = {r}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Exponential strength `sigma` (0, s, or 2).
    pub fn sigma(self) -> f64 {
        match self {
            Weight::Polynomial { .. } => 0.0,
            Weight::Stretched { s, .. } => s,
            Weight::Gaussian { .. } => 2.0,
        }
    }

    /// `m(v)`.
    pub fn eval(self, v: [f64; 3]) -> f64 {
        let w2 = 1.0 + v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        match self {
            Weight::Polynomial { k } => w2.powf(0.5 * k),
            Weight::Stretched { r, s } => (r * w2.powf(0.5 * s)).exp(),
            Weight::Gaussian { r } => (r * w2).exp(),
        }
    }

    /// Logarithmic gradient `grad m / m`.
    pub fn log_grad(self, v: [f64; 3]) -> [f64; 3] {
        let w2 = 1.0 + v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        let g = match self {
            // k v_i <v>^{-2}
            Weight::Polynomial { k } => k / w2,
            // r s v_i <v>^{s-2}
            Weight::Stretched { r, s } => r * s * w2.powf(0.5 * s - 1.0),
            Weight::Gaussian { r } => 2.0 * r,
        };
        [g * v[0], g * v[1], g * v[2]]
    }

    /// Logarithmic Hessian `(d_ij m) / m`, returned as
    /// `diag_coeff * delta_ij + rank1_coeff * v_i v_j`.
    pub fn log_hess_coeffs(self, v: [f64; 3]) -> (f64, f64) {
        let w2 = 1.0 + v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        match self {
            Weight::Polynomial { k } => (k / w2, k * (k - 2.0) / (w2 * w2)),
            Weight::Stretched { r, s } => {
                let a = r * s * w2.powf(0.5 * s - 1.0);
                let b = r * s * (s - 2.0) * w2.powf(0.5 * s - 2.0)
                    + r * r * s * s * w2.powf(s - 2.0);
                (a, b)
            }
            Weight::Gaussian { r } => (2.0 * r, 4.0 * r * r),
        }
    }

    /// Full logarithmic Hessian matrix.
    pub fn log_hess(self, v: [f64; 3]) -> [[f64; 3]; 3] {
        let (d, q) = self.log_hess_coeffs(v);
        let mut h = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                h[i][j] = q * v[i] * v[j];
            }
            h[i][i] += d;
        }
        h
    }
}

/// Projector onto the direction of `v`: `P_v = vv^T/|v|^2`, zero matrix at
/// `v = 0` by convention.
pub fn radial_projector(v: [f64; 3]) -> [[f64; 3]; 3] {
    let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    if r2 == 0.0 {
        return [[0.0; 3]; 3];
    }
    let mut p = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            p[i][j] = v[i] * v[j] / r2;
        }
    }
    p
}

/// Split a vector into (parallel-to-v, orthogonal-to-v) parts.
pub fn split_radial(v: [f64; 3], xi: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    if r2 == 0.0 {
        return ([0.0; 3], xi);
    }
    let dot = (v[0] * xi[0] + v[1] * xi[1] + v[2] * xi[2]) / r2;
    let par = [dot * v[0], dot * v[1], dot * v[2]];
    (par, [xi[0] - par[0], xi[1] - par[1], xi[2] - par[2]])
}

/// Smooth transition `h(t)`: 0 for `t <= 0`, 1 for `t >= 1`, strictly
/// increasing in between, all derivatives vanishing at both ends.
pub fn bump(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a / (a + b)
    }
}

/// Radial cutoff profile `chi(|v|)`: 1 on `|v| <= 1`, 0 on `|v| >= 2`,
/// smooth monotone in between.
pub fn chi(v_abs: f64) -> f64 {
    bump(2.0 - v_abs.abs())
}

/// Scaled cutoff `chi_R(v) = chi(|v|/R)`.
pub fn chi_r(v: [f64; 3], r: f64) -> f64 {
    debug_assert!(r > 0.0);
    let v_abs = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    chi(v_abs / r)
}

/// `sup |chi'|` over the radial profile, so `|grad chi_R| <= chi_sup_grad()/R`.
/// Computed once by dense sampling plus local refinement.
pub fn chi_sup_grad() -> f64 {
    use std::sync::OnceLock;
    static CACHE: OnceLock<f64> = OnceLock::new();
    *CACHE.get_or_init(|| {
        let d = |x: f64| {
            let h = 1e-6;
            (chi(x + h) - chi(x - h)).abs() / (2.0 * h)
        };
        let mut best = 0.0f64;
        let mut best_x = 1.5;
        let n = 20_000;
        for i in 0..=n {
            let x = 1.0 + (i as f64) / (n as f64);
            let v = d(x);
            if v > best {
                best = v;
                best_x = x;
            }
        }
        // golden-section polish around the sampled max
        let (mut lo, mut hi) = (best_x - 2e-4, best_x + 2e-4);
        for _ in 0..60 {
            let m1 = lo + 0.382 * (hi - lo);
            let m2 = lo + 0.618 * (hi - lo);
            if d(m1) > d(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        d(0.5 * (lo + hi)).max(best)
    })
}

/// Velocity-localized absorption term `M chi_R`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CutoffSpec {
    /// Amplitude `M >= 0`.
    pub m: f64,
    /// Radius `R > 0`; the cutoff is 1 on `|v| <= R` and 0 on `|v| >= 2R`.
    pub r: f64,
}

impl CutoffSpec {
    pub const ZERO: CutoffSpec = CutoffSpec { m: 0.0, r: 1.0 };

    pub fn eval(&self, v: [f64; 3]) -> f64 {
        if self.m == 0.0 {
            return 0.0;
        }
        self.m * chi_r(v, self.r)
    }

    /// Pointwise bound on `M |grad chi_R|` at `v` (radial profile derivative).
    pub fn grad_bound(&self, v_abs: f64) -> f64 {
        if self.m == 0.0 {
            return 0.0;
        }
        let h = 1e-6;
        let x = v_abs / self.r;
        self.m * (chi(x + h) - chi(x - h)).abs() / (2.0 * h * self.r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_range_is_enforced() {
        assert!(Potential::new(-2.0).is_ok());
        assert!(Potential::new(1.0).is_ok());
        assert!(Potential::new(-2.5).is_err());
        assert!(Potential::new(1.5).is_err());
        assert!(Potential::new(f64::NAN).is_err());
    }

    #[test]
    fn kernel_a_frozen_value_hard_potential() {
        // gamma = 1, z = (0,2,0): |z|^3 = 8 times the projector orthogonal
        // to e2, i.e. 8 * diag(1,0,1).
        let p = Potential::new(1.0).unwrap();
        let a = p.kernel_a([0.0, 2.0, 0.0]);
        let expect = [[8.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 8.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(a[i][j], expect[i][j], max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn kernel_a_annihilates_z_and_is_psd() {
        for &gamma in &[-2.0, -1.0, 0.0, 0.5, 1.0] {
            let p = Potential::new(gamma).unwrap();
            for z in [[0.3, -1.2, 0.7], [2.0, 0.0, 0.0], [-0.1, -0.1, 5.0]] {
                let a = p.kernel_a(z);
                let r2: f64 = z.iter().map(|x| x * x).sum();
                let scale = r2.powf(0.5 * (gamma + 2.0));
                // a z = 0 exactly
                for i in 0..3 {
                    let az: f64 = (0..3).map(|j| a[i][j] * z[j]).sum();
                    assert!(az.abs() <= 1e-13 * scale.max(1.0));
                }
                // Quadratic form equals scale * |orthogonal part|^2 >= 0.
                for xi in [[1.0, 0.0, 0.0], [0.4, 1.0, -0.3], [0.0, -1.0, 2.0]] {
                    let q: f64 = (0..3)
                        .flat_map(|i| (0..3).map(move |j| (i, j)))
                        .map(|(i, j)| xi[i] * a[i][j] * xi[j])
                        .sum();
                    let (_, orth) = split_radial(z, xi);
                    let o2: f64 = orth.iter().map(|x| x * x).sum();
                    assert_relative_eq!(q, scale * o2, max_relative = 1e-12, epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn kernel_b_c_are_divergences_of_a() {
        // b_i = d_j a_ij and c = d_i b_i, checked by central differences with
        // Richardson extrapolation at off-axis points.
        let h = 1e-3;
        for &gamma in &[-1.5, 0.0, 1.0] {
            let p = Potential::new(gamma).unwrap();
            let z = [0.9, -0.6, 1.3];
            let b = p.kernel_b(z).unwrap();
            for i in 0..3 {
                let mut fd = 0.0;
                for j in 0..3 {
                    let df = |step: f64| {
                        let mut zp = z;
                        let mut zm = z;
                        zp[j] += step;
                        zm[j] -= step;
                        (p.kernel_a(zp)[i][j] - p.kernel_a(zm)[i][j]) / (2.0 * step)
                    };
                    fd += (4.0 * df(h) - df(2.0 * h)) / 3.0;
                }
                assert_relative_eq!(fd, b[i], max_relative = 5e-8, epsilon = 5e-9);
            }
            let c = p.kernel_c(z).unwrap();
            let mut fd_c = 0.0;
            for j in 0..3 {
                let df = |step: f64| {
                    let mut zp = z;
                    let mut zm = z;
                    zp[j] += step;
                    zm[j] -= step;
                    (p.kernel_b(zp).unwrap()[j] - p.kernel_b(zm).unwrap()[j]) / (2.0 * step)
                };
                fd_c += (4.0 * df(h) - df(2.0 * h)) / 3.0;
            }
            assert_relative_eq!(fd_c, c, max_relative = 5e-8, epsilon = 5e-9);
        }
    }

    #[test]
    fn kernel_singularities_error_only_for_negative_gamma() {
        let soft = Potential::new(-1.0).unwrap();
        assert!(soft.kernel_b([0.0; 3]).is_err());
        assert!(soft.kernel_c([0.0; 3]).is_err());
        let maxwell = Potential::new(0.0).unwrap();
        assert_eq!(maxwell.kernel_b([0.0; 3]).unwrap(), [0.0; 3]);
        assert_relative_eq!(maxwell.kernel_c([0.0; 3]).unwrap(), -6.0);
        let hard = Potential::new(1.0).unwrap();
        assert_eq!(hard.kernel_c([0.0; 3]).unwrap(), 0.0);
    }

    #[test]
    fn maxwellian_frozen_values() {
        assert_relative_eq!(maxwellian([0.0; 3]), 0.06349363593424097, max_relative = 1e-15);
        let v = [1.0, 2.0, -1.0];
        assert_relative_eq!(
            maxwellian(v),
            MAXWELLIAN_NORM * (-3.0f64).exp(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn weight_values_match_frozen_examples() {
        // stretched r=1, s=1 at v=(1,0,0): grad m / m = v/<v> -> 2^{-1/2}
        let w = Weight::Stretched { r: 1.0, s: 1.0 };
        let g = w.log_grad([1.0, 0.0, 0.0]);
        assert_relative_eq!(g[0], std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-15);
        // Gaussian-type r=1/4 at v=(2,0,0): m = exp(5/4)
        let w = Weight::Gaussian { r: 0.25 };
        assert_relative_eq!(w.eval([2.0, 0.0, 0.0]), (1.25f64).exp(), max_relative = 1e-15);
        // polynomial k=10 at v=0: m = 1
        let w = Weight::Polynomial { k: 10.0 };
        assert_relative_eq!(w.eval([0.0; 3]), 1.0);
    }

    #[test]
    fn weight_log_derivatives_match_finite_differences() {
        let h = 1e-5;
        let cases = [
            Weight::Polynomial { k: 10.0 },
            Weight::Polynomial { k: 3.5 },
            Weight::Stretched { r: 0.7, s: 1.3 },
            Weight::Gaussian { r: 0.2 },
        ];
        let v = [0.8, -1.1, 0.5];
        for w in cases {
            let m = w.eval(v);
            let g = w.log_grad(v);
            let hess = w.log_hess(v);
            for i in 0..3 {
                let mut vp = v;
                let mut vm = v;
                vp[i] += h;
                vm[i] -= h;
                let fd = (w.eval(vp) - w.eval(vm)) / (2.0 * h * m);
                assert_relative_eq!(fd, g[i], max_relative = 1e-8, epsilon = 1e-10);
                // larger step for second differences: eps/h^2 roundoff
                let h2 = 1e-4;
                for j in 0..3 {
                    let mut vpp = v;
                    let mut vpm = v;
                    let mut vmp = v;
                    let mut vmm = v;
                    vpp[i] += h2;
                    vpp[j] += h2;
                    vpm[i] += h2;
                    vpm[j] -= h2;
                    vmp[i] -= h2;
                    vmp[j] += h2;
                    vmm[i] -= h2;
                    vmm[j] -= h2;
                    let fd2 = (w.eval(vpp) - w.eval(vpm) - w.eval(vmp) + w.eval(vmm))
                        / (4.0 * h2 * h2 * m);
                    assert_relative_eq!(fd2, hess[i][j], max_relative = 1e-5, epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn weight_validation_rejects_out_of_range() {
        assert!(Weight::Gaussian { r: 0.5 }.validate().is_err());
        assert!(Weight::Gaussian { r: 0.49 }.validate().is_ok());
        assert!(Weight::Stretched { r: 1.0, s: 2.0 }.validate().is_err());
        assert!(Weight::Polynomial { k: 0.0 }.validate().is_err());
    }

    #[test]
    fn radial_projector_splits_vectors() {
        let v = [3.0, 0.0, 4.0];
        let p = radial_projector(v);
        // P_v v = v
        for i in 0..3 {
            let pv: f64 = (0..3).map(|j| p[i][j] * v[j]).sum();
            assert_relative_eq!(pv, v[i], max_relative = 1e-14);
        }
        // P_0 = 0
        assert_eq!(radial_projector([0.0; 3]), [[0.0; 3]; 3]);
        let (par, orth) = split_radial(v, [1.0, 2.0, 0.0]);
        let dot: f64 = (0..3).map(|i| par[i] * orth[i]).sum();
        assert!(dot.abs() < 1e-14);
        for i in 0..3 {
            assert_relative_eq!(par[i] + orth[i], [1.0, 2.0, 0.0][i], max_relative = 1e-14);
        }
    }

    #[test]
    fn cutoff_plateaus_and_support() {
        assert_eq!(chi(0.3), 1.0);
        assert_eq!(chi(1.0), 1.0);
        assert_eq!(chi(2.0), 0.0);
        assert_eq!(chi(5.0), 0.0);
        let mid = chi(1.5);
        assert!(mid > 0.0 && mid < 1.0);
        assert_relative_eq!(mid, 0.5, max_relative = 1e-12); // profile is symmetric about 1.5
        // monotone decreasing on [1,2]
        let mut last = 1.0;
        for i in 0..=100 {
            let x = 1.0 + 1.0 * (i as f64) / 100.0;
            let v = chi(x);
            assert!(v <= last + 1e-15);
            last = v;
        }
        // scaled version
        let spec = CutoffSpec { m: 3.0, r: 4.0 };
        assert_eq!(spec.eval([1.0, 0.0, 0.0]), 3.0);
        assert_eq!(spec.eval([9.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn cutoff_gradient_constant_is_stable() {
        let c = chi_sup_grad();
        // The profile derivative h'(t) = h(1-h)(1/t^2 + 1/(1-t)^2) is
        // symmetric about t = 1/2 with maximum h'(1/2) = 2 exactly.
        assert_relative_eq!(c, 2.0, max_relative = 1e-6);
        let spec = CutoffSpec { m: 5.0, r: 2.0 };
        let mut worst = 0.0f64;
        for i in 0..400 {
            let x = 2.0 + 2.0 * (i as f64) / 400.0;
            worst = worst.max(spec.grad_bound(x));
        }
        assert!(worst <= 5.0 * c / 2.0 + 1e-6);
    }
}
