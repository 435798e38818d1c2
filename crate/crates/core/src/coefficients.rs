//! Maxwellian-mollified coefficients: `abar = a * mu`, `bbar = b * mu`,
//! `cbar = c * mu`, the eigenvalues `ell1` (along `v`) and `ell2`
//! (transverse), and the moment functions `J_alpha(v) = int |v-w|^alpha mu(w) dw`.
//!
//! Everything reduces to 1D radial integrals: writing `u = |v|`, `a = u r`,
//! and `E∓ = exp(-(u∓r)^2/2)`, the angular moments
//! `I_k(u,r) = e^{-(u^2+r^2)/2} int_{-1}^{1} t^k e^{urt} dt` have the closed
//! forms `I_0 = (E- - E+)/a`, etc., with power series taking over for small
//! `a` where the closed forms cancel catastrophically. Then
//!   `J_alpha = (2 pi)^{-1/2} int_0^inf r^{alpha+2} I_0 dr`,
//!   `ell1    = (2 pi)^{-1/2} int_0^inf r^{gamma+4} (I_0 - I_2) dr`,
//!   `ell2    = (2 pi)^{-1/2} int_0^inf r^{gamma+4} (I_0 + I_2)/2 dr`,
//!   `bbar    = beta(u) v/u` with `beta = -2 (2 pi)^{-1/2} int r^{gamma+3} I_1 dr`,
//!   `cbar    = -2 (gamma+3) J_gamma`.
//! Quadrature: geometric panels on [1e-12, 1] (handles the integrable
//! `r^{alpha+2}` singularity for alpha near -3, with the [0, 1e-12] remainder
//! added analytically) plus unit panels out to `u + 12`, where the Gaussian
//! factor is below 1e-31.

use crate::error::{Error, Result};
use crate::grids::VelocityGrid;
use crate::kernels::Potential;
use std::collections::BTreeMap;
use std::io::{Read as IoRead, Write as IoWrite};
use std::sync::OnceLock;

const INV_SQRT_2PI: f64 = 0.3989422804014327;
/// Lower quadrature cutoff; `[0, R0]` is integrated analytically.
const R0: f64 = 1e-12;

/// Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration on the
/// Legendre recurrence (deterministic, no tables to typo).
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..60 {
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0f64, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        xs[i] = x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

fn gl12() -> &'static (Vec<f64>, Vec<f64>) {
    static C: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    C.get_or_init(|| gauss_legendre(12))
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static C: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    C.get_or_init(|| gauss_legendre(16))
}

/// `e^{-(u^2+r^2)/2} int_{-1}^1 t^k e^{urt} dt` for k = 0, 1, 2.
fn angular_moments(u: f64, r: f64) -> [f64; 3] {
    let a = u * r;
    if a < 0.5 {
        // series sum 2 a^m / (m! (m+k+... )); truncation below 1e-16 at a = 1/2
        let e = (-0.5 * (u * u + r * r)).exp();
        let a2 = a * a;
        let i0 = 2.0
            + a2 * (1.0 / 3.0
                + a2 * (1.0 / 60.0
                    + a2 * (1.0 / 2520.0
                        + a2 * (1.0 / 181440.0
                            + a2 * (1.0 / 19958400.0 + a2 / 3113510400.0)))));
        let i1 = a
            * (2.0 / 3.0
                + a2 * (1.0 / 15.0
                    + a2 * (1.0 / 420.0
                        + a2 * (1.0 / 22680.0
                            + a2 * (1.0 / 1995840.0 + a2 / 259459200.0)))));
        let i2 = 2.0 / 3.0
            + a2 * (1.0 / 5.0
                + a2 * (1.0 / 84.0
                    + a2 * (1.0 / 3240.0
                        + a2 * (1.0 / 221760.0
                            + a2 * (1.0 / 23587200.0 + a2 / 3592512000.0)))));
        [e * i0, e * i1, e * i2]
    } else {
        let em = (-0.5 * (u - r) * (u - r)).exp();
        let ep = (-0.5 * (u + r) * (u + r)).exp();
        let p = 0.5 * (em + ep);
        let m = 0.5 * (em - ep);
        let i0 = 2.0 * m / a;
        let i1 = 2.0 * (a * p - m) / (a * a);
        let i2 = 2.0 * ((a * a + 2.0) * m - 2.0 * a * p) / (a * a * a);
        [i0, i1, i2]
    }
}

/// Panel quadrature of K radial integrands sharing the angular moments.
fn panel_quad<const K: usize>(u: f64, f: &mut impl FnMut(f64) -> [f64; K]) -> [f64; K] {
    let mut acc = [0.0f64; K];
    let add = |a: f64, b: f64, xs: &[f64], ws: &[f64], f: &mut dyn FnMut(f64) -> [f64; K], acc: &mut [f64; K]| {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        for (x, w) in xs.iter().zip(ws) {
            let vals = f(c + h * x);
            for k in 0..K {
                acc[k] += vals[k] * w * h;
            }
        }
    };
    let (x12, w12) = gl12();
    for k in 0..24 {
        let a = 10f64.powf(-12.0 + 0.5 * k as f64);
        let b = 10f64.powf(-12.0 + 0.5 * (k + 1) as f64);
        add(a, b, x12, w12, f, &mut acc);
    }
    let (x16, w16) = gl16();
    let top = (u + 12.0).ceil() as usize;
    for k in 1..top {
        add(k as f64, k as f64 + 1.0, x16, w16, f, &mut acc);
    }
    acc
}

fn j_alpha_radial(alpha: f64, u: f64) -> f64 {
    let val = panel_quad::<1>(u, &mut |r| [r.powf(alpha + 2.0) * angular_moments(u, r)[0]]);
    // analytic remainder of [0, R0]: I_0 ~ 2 e^{-u^2/2} (1 + O(r^2))
    let tail = 2.0 * (-0.5 * u * u).exp() * R0.powf(alpha + 3.0) / (alpha + 3.0);
    (val[0] + tail) * INV_SQRT_2PI
}

/// `J_alpha(v) = int |v-w|^alpha mu(w) dw` for `alpha in (-3, 3]`.
pub fn j_alpha(alpha: f64, v: [f64; 3]) -> Result<f64> {
    if !(alpha > -3.0 && alpha <= 3.0) || !alpha.is_finite() {
        return Err(Error::Config(format!(
            "moment exponent alpha must lie in (-3, 3], got {alpha}"
        )));
    }
    Ok(j_alpha_radial(alpha, (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()))
}

/// Radial profile of the mollified coefficients at `u = |v|`:
/// `abar = ell1 P_v + ell2 (I - P_v)`, `bbar = beta * v/|v|`, `cbar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialCoeffs {
    pub ell1: f64,
    pub ell2: f64,
    pub beta: f64,
    pub cbar: f64,
}

impl RadialCoeffs {
    /// Closed forms in the Maxwell case `gamma = 0`:
    /// `abar = (|v|^2 + 2) I - v (x) v`, so `ell1 = 2`, `ell2 = |v|^2 + 2`,
    /// `bbar = -2v`, `cbar = -6`.
    pub fn closed_form_maxwell(u: f64) -> Self {
        Self { ell1: 2.0, ell2: u * u + 2.0, beta: -2.0 * u, cbar: -6.0 }
    }
}

/// Quadrature evaluation of the radial coefficient profile at any `u >= 0`.
pub fn radial_coeffs(pot: Potential, u: f64) -> RadialCoeffs {
    let gamma = pot.gamma();
    let vals = panel_quad::<4>(u, &mut |r| {
        let [i0, i1, i2] = angular_moments(u, r);
        let rg = r.powf(gamma);
        let r2 = rg * r * r;
        let r3 = r2 * r;
        let r4 = r3 * r;
        [r4 * (i0 - i2), r4 * 0.5 * (i0 + i2), r3 * i1, r2 * i0]
    });
    RadialCoeffs {
        ell1: vals[0] * INV_SQRT_2PI,
        ell2: vals[1] * INV_SQRT_2PI,
        beta: -2.0 * vals[2] * INV_SQRT_2PI,
        cbar: -2.0 * (gamma + 3.0) * vals[3] * INV_SQRT_2PI,
    }
}

/// Per-node tables of the mollified coefficients on a velocity grid.
/// `abar` components are ordered `(00, 11, 22, 01, 02, 12)`.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    grid: VelocityGrid,
    gamma: f64,
    pub abar: [Vec<f64>; 6],
    pub bbar: [Vec<f64>; 3],
    pub cbar: Vec<f64>,
    pub ell1: Vec<f64>,
    pub ell2: Vec<f64>,
}

impl CoefficientField {
    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Full symmetric matrix at node `m`.
    pub fn abar_matrix(&self, m: usize) -> [[f64; 3]; 3] {
        let [d0, d1, d2] = [self.abar[0][m], self.abar[1][m], self.abar[2][m]];
        let [o01, o02, o12] = [self.abar[3][m], self.abar[4][m], self.abar[5][m]];
        [[d0, o01, o02], [o01, d1, o12], [o02, o12, d2]]
    }

    /// `xi . abar(v_m) xi`.
    pub fn quadratic_form(&self, m: usize, xi: [f64; 3]) -> f64 {
        let a = self.abar_matrix(m);
        let mut q = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                q += xi[i] * a[i][j] * xi[j];
            }
        }
        q
    }
}

fn assemble_node(out: &mut CoefficientField, m: usize, v: [f64; 3], rc: RadialCoeffs) {
    let u2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let (vhat, beta_dir) = if u2 > 0.0 {
        let u = u2.sqrt();
        ([v[0] / u, v[1] / u, v[2] / u], rc.beta / u)
    } else {
        ([0.0; 3], 0.0)
    };
    let d = rc.ell1 - rc.ell2;
    out.abar[0][m] = rc.ell2 + d * vhat[0] * vhat[0];
    out.abar[1][m] = rc.ell2 + d * vhat[1] * vhat[1];
    out.abar[2][m] = rc.ell2 + d * vhat[2] * vhat[2];
    out.abar[3][m] = d * vhat[0] * vhat[1];
    out.abar[4][m] = d * vhat[0] * vhat[2];
    out.abar[5][m] = d * vhat[1] * vhat[2];
    for i in 0..3 {
        // bbar = beta(u) vhat = (beta/u) v; exactly -ell1 v in the continuum
        out.bbar[i][m] = beta_dir * v[i];
    }
    out.cbar[m] = rc.cbar;
    out.ell1[m] = rc.ell1;
    out.ell2[m] = rc.ell2;
}

/// Mollified coefficient tables for `(grid, gamma)`. Radial evaluations are
/// deduplicated by the exact integer radius key (node coordinates are
/// half-integer multiples of `dv`). The Maxwell case uses its closed forms.
pub fn mollify_coefficients(grid: &VelocityGrid, pot: Potential) -> Result<CoefficientField> {
    let nv = grid.len();
    let mut field = CoefficientField {
        grid: *grid,
        gamma: pot.gamma(),
        abar: std::array::from_fn(|_| vec![0.0; nv]),
        bbar: std::array::from_fn(|_| vec![0.0; nv]),
        cbar: vec![0.0; nv],
        ell1: vec![0.0; nv],
        ell2: vec![0.0; nv],
    };
    let n = grid.n() as i64;
    let maxwell = pot.gamma() == 0.0;
    // key: sorted |2i + 1 - N| per axis (u^2 = (dv/2)^2 * sum key^2)
    let mut cache: BTreeMap<[i64; 3], RadialCoeffs> = BTreeMap::new();
    for m in 0..nv {
        let [i, j, k] = grid.idx3(m);
        let mut key =
            [(2 * i as i64 + 1 - n).abs(), (2 * j as i64 + 1 - n).abs(), (2 * k as i64 + 1 - n).abs()];
        key.sort_unstable();
        let v = grid.node(m);
        let u = 0.5 * grid.dv() * ((key[0] * key[0] + key[1] * key[1] + key[2] * key[2]) as f64).sqrt();
        let rc = *cache.entry(key).or_insert_with(|| {
            if maxwell {
                RadialCoeffs::closed_form_maxwell(u)
            } else {
                radial_coeffs(pot, u)
            }
        });
        assemble_node(&mut field, m, v, rc);
    }
    // quadrature self-check: scheme normalization and the mean identity
    // bbar = -ell1 v at the largest radius present
    for u in [0.1, 3.0, grid.l()] {
        let j0 = j_alpha_radial(0.0, u);
        if (j0 - 1.0).abs() > 1e-10 {
            return Err(Error::Quadrature { achieved: (j0 - 1.0).abs(), target: 1e-10 });
        }
    }
    if !maxwell {
        let u_top = grid.l() * 3.0f64.sqrt();
        let rc = radial_coeffs(pot, u_top);
        let resid = (rc.beta + rc.ell1 * u_top).abs() / rc.beta.abs().max(1e-300);
        if resid > 1e-6 {
            return Err(Error::Quadrature { achieved: resid, target: 1e-6 });
        }
    }
    Ok(field)
}

const CACHE_MAGIC: &[u8; 8] = b"LNDCOEF1";

fn cache_hash(grid: &VelocityGrid, gamma: f64) -> u64 {
    // FNV-1a over the exact parameter bits
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(&grid.l().to_bits().to_le_bytes());
    eat(&(grid.n() as u64).to_le_bytes());
    eat(&gamma.to_bits().to_le_bytes());
    eat(&1u32.to_le_bytes()); // layout version
    h
}

/// Cache file layout: magic, key hash (u64), L (f64), N (u64), gamma (f64),
/// then the 12 per-node arrays (abar x6, bbar x3, cbar, ell1, ell2) as
/// little-endian f64, each of length N^3, in that order.
pub fn mollify_coefficients_cached(
    grid: &VelocityGrid,
    pot: Potential,
    cache_dir: Option<&std::path::Path>,
) -> Result<CoefficientField> {
    let dir = match cache_dir {
        Some(d) => d,
        None => return mollify_coefficients(grid, pot),
    };
    let hash = cache_hash(grid, pot.gamma());
    let path = dir.join(format!("coeffs-{hash:016x}.bin"));
    if path.exists() {
        return read_cache(&path, grid, pot.gamma(), hash);
    }
    let field = mollify_coefficients(grid, pot)?;
    std::fs::create_dir_all(dir)?;
    write_cache(&path, &field, hash)?;
    Ok(field)
}

fn write_cache(path: &std::path::Path, field: &CoefficientField, hash: u64) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&hash.to_le_bytes())?;
    w.write_all(&field.grid.l().to_le_bytes())?;
    w.write_all(&(field.grid.n() as u64).to_le_bytes())?;
    w.write_all(&field.gamma.to_le_bytes())?;
    let arrays: Vec<&Vec<f64>> = field
        .abar
        .iter()
        .chain(field.bbar.iter())
        .chain([&field.cbar, &field.ell1, &field.ell2])
        .collect();
    for arr in arrays {
        for v in arr {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_cache(
    path: &std::path::Path,
    grid: &VelocityGrid,
    gamma: f64,
    hash: u64,
) -> Result<CoefficientField> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::BadCache(format!("{}: bad magic", path.display())));
    }
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    if u64::from_le_bytes(b) != hash {
        return Err(Error::BadCache(format!("{}: key hash mismatch", path.display())));
    }
    r.read_exact(&mut b)?;
    let l = f64::from_le_bytes(b);
    r.read_exact(&mut b)?;
    let n = u64::from_le_bytes(b) as usize;
    r.read_exact(&mut b)?;
    let g = f64::from_le_bytes(b);
    if l.to_bits() != grid.l().to_bits() || n != grid.n() || g.to_bits() != gamma.to_bits() {
        return Err(Error::BadCache(format!("{}: parameter mismatch", path.display())));
    }
    let nv = grid.len();
    let read_array = |r: &mut dyn IoRead| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(nv);
        let mut b = [0u8; 8];
        for _ in 0..nv {
            r.read_exact(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    };
    let mut arrays = Vec::with_capacity(12);
    for _ in 0..12 {
        arrays.push(read_array(&mut r)?);
    }
    let mut it = arrays.into_iter();
    Ok(CoefficientField {
        grid: *grid,
        gamma,
        abar: std::array::from_fn(|_| it.next().unwrap()),
        bbar: std::array::from_fn(|_| it.next().unwrap()),
        cbar: it.next().unwrap(),
        ell1: it.next().unwrap(),
        ell2: it.next().unwrap(),
    })
}

/// Ratios against the large-velocity asymptotics `ell1 ~ 2 <v>^gamma`,
/// `ell2 ~ <v>^{gamma+2}`, sampled along the main diagonal of the box.
#[derive(Debug, Clone, Copy)]
pub struct AsymptoticsRow {
    pub v_abs: f64,
    pub ell1_ratio: f64,
    pub ell2_ratio: f64,
}

pub fn ell_asymptotics_report(field: &CoefficientField) -> Vec<AsymptoticsRow> {
    let grid = field.grid;
    let n = grid.n();
    let gamma = field.gamma;
    let mut rows = Vec::new();
    for i in n / 2..n {
        let m = grid.lin([i, i, i]);
        let v = grid.node(m);
        let u2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        let w2 = 1.0 + u2;
        rows.push(AsymptoticsRow {
            v_abs: u2.sqrt(),
            ell1_ratio: field.ell1[m] / (2.0 * w2.powf(0.5 * gamma)),
            ell2_ratio: field.ell2[m] / w2.powf(0.5 * (gamma + 2.0)),
        });
    }
    rows
}

/// Measured anisotropic coercivity floor: the minimum over random `(v, xi)`
/// of `xi.abar xi / (<v>^gamma |P_v xi|^2 + <v>^{gamma+2} |(I-P_v) xi|^2)`.
pub fn coercivity_floor(field: &CoefficientField, samples: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let grid = field.grid;
    let gamma = field.gamma;
    let mut floor = f64::INFINITY;
    for _ in 0..samples {
        let m = rng.gen_range(0..grid.len());
        let xi = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let norm2: f64 = xi.iter().map(|x| x * x).sum();
        if norm2 < 1e-3 {
            continue;
        }
        let v = grid.node(m);
        let w2 = 1.0 + v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        let (par, orth) = crate::kernels::split_radial(v, xi);
        let p2: f64 = par.iter().map(|x| x * x).sum();
        let o2: f64 = orth.iter().map(|x| x * x).sum();
        let rhs = w2.powf(0.5 * gamma) * p2 + w2.powf(0.5 * (gamma + 2.0)) * o2;
        floor = floor.min(field.quadratic_form(m, xi) / rhs);
    }
    floor
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::maxwellian;
    use approx::assert_relative_eq;

    #[test]
    fn j_alpha_closed_form_oracles() {
        // alpha = 2: J_2 = |v|^2 + 3 (Gaussian second moment)
        assert_relative_eq!(j_alpha(2.0, [0.0; 3]).unwrap(), 3.0, max_relative = 1e-12);
        assert_relative_eq!(j_alpha(2.0, [1.0, 0.0, 0.0]).unwrap(), 4.0, max_relative = 1e-12);
        assert_relative_eq!(j_alpha(2.0, [0.0, -3.0, 4.0]).unwrap(), 28.0, max_relative = 1e-12);
        // alpha = 0: normalization
        for u in [0.0, 0.3, 2.0, 9.0] {
            assert_relative_eq!(j_alpha_radial(0.0, u), 1.0, max_relative = 1e-12);
        }
        // alpha = -1: J_{-1}(u) = erf(u/sqrt(2))/u (frozen double-precision values)
        assert_relative_eq!(j_alpha_radial(-1.0, 0.5), 0.7658498450960524, max_relative = 1e-9);
        assert_relative_eq!(j_alpha_radial(-1.0, 2.0), 0.4772498680518208, max_relative = 1e-9);
        assert_relative_eq!(j_alpha_radial(-1.0, 5.0), 0.19999988533937124, max_relative = 1e-9);
        // domain
        assert!(j_alpha(-3.0, [1.0, 0.0, 0.0]).is_err());
        assert!(j_alpha(3.2, [1.0, 0.0, 0.0]).is_err());
        assert!(j_alpha(3.0, [1.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn j_alpha_envelope_bounds() {
        // lemma-type envelopes with fitted constants: alpha in (0,3]:
        // J_alpha comparable to <v>^alpha; alpha in (-3,0): J_alpha <= C <v>^alpha
        for alpha in [-1.0, 1.0, 3.0] {
            let mut c_max = 0.0f64;
            let mut c_min = f64::INFINITY;
            for i in 0..40 {
                let u = 0.05 + 0.35 * i as f64;
                let w = (1.0 + u * u).sqrt();
                let ratio = j_alpha_radial(alpha, u) / w.powf(alpha);
                c_max = c_max.max(ratio);
                c_min = c_min.min(ratio);
            }
            assert!(c_max.is_finite() && c_max > 0.0);
            if alpha > 0.0 {
                assert!(c_min > 0.0, "lower envelope failed for alpha = {alpha}: {c_min}");
            }
        }
    }

    #[test]
    fn maxwell_case_quadrature_matches_closed_forms() {
        let pot = Potential::new(0.0).unwrap();
        for u in [0.0, 0.33, 1.0, 2.5, 6.0, 13.0] {
            let rc = radial_coeffs(pot, u);
            let cf = RadialCoeffs::closed_form_maxwell(u);
            assert_relative_eq!(rc.ell1, cf.ell1, max_relative = 1e-8);
            assert_relative_eq!(rc.ell2, cf.ell2, max_relative = 1e-8);
            assert_relative_eq!(rc.beta, cf.beta, max_relative = 1e-8, epsilon = 1e-10);
            assert_relative_eq!(rc.cbar, cf.cbar, max_relative = 1e-8);
        }
    }

    #[test]
    fn quadrature_matches_cartesian_brute_force() {
        // independent 3D midpoint-rule oracle at v = (2,0,0):
        // abar_00 = ell1, abar_11 = ell2 there.
        let oracle = |gamma: f64, comp: usize| -> f64 {
            let pot = Potential::new(gamma).unwrap();
            let(nw, lw) = (64usize, 10.0);
            let dw = 2.0 * lw / nw as f64;
            let mut acc = 0.0;
            for i in 0..nw {
                let w0 = -lw + (i as f64 + 0.5) * dw;
                for j in 0..nw {
                    let w1 = -lw + (j as f64 + 0.5) * dw;
                    for k in 0..nw {
                        let w2 = -lw + (k as f64 + 0.5) * dw;
                        let z = [2.0 - w0, -w1, -w2];
                        acc += pot.kernel_a(z)[comp][comp] * maxwellian([w0, w1, w2]);
                    }
                }
            }
            acc * dw * dw * dw
        };
        for (gamma, tol) in [(1.0, 1e-2), (-1.0, 5e-2)] {
            let rc = radial_coeffs(Potential::new(gamma).unwrap(), 2.0);
            assert_relative_eq!(oracle(gamma, 0), rc.ell1, max_relative = tol);
            assert_relative_eq!(oracle(gamma, 1), rc.ell2, max_relative = tol);
        }
    }

    #[test]
    fn lemma_identities_hold_on_quadrature_path() {
        for gamma in [-2.0, -1.5, 0.5, 1.0] {
            let pot = Potential::new(gamma).unwrap();
            for u in [0.5, 3.0, 8.0, 12.0] {
                let rc = radial_coeffs(pot, u);
                // mean identity: bbar = -ell1 v, i.e. beta = -ell1 u
                assert_relative_eq!(rc.beta, -rc.ell1 * u, max_relative = 1e-8);
                // trace identity: ell1 + 2 ell2 = 2 J_{gamma+2}
                let tr = rc.ell1 + 2.0 * rc.ell2;
                assert_relative_eq!(tr, 2.0 * j_alpha_radial(gamma + 2.0, u), max_relative = 1e-10);
                // cbar = -2 (gamma+3) J_gamma
                assert_relative_eq!(
                    rc.cbar,
                    -2.0 * (gamma + 3.0) * j_alpha_radial(gamma, u),
                    max_relative = 1e-10
                );
                // positivity of both eigenvalues
                assert!(rc.ell1 > 0.0 && rc.ell2 > 0.0);
            }
        }
    }

    #[test]
    fn field_assembly_structure() {
        let grid = VelocityGrid::new(6.0, 12).unwrap();
        let pot = Potential::new(1.0).unwrap();
        let field = mollify_coefficients(&grid, pot).unwrap();
        for m in (0..grid.len()).step_by(37) {
            let v = grid.node(m);
            let a = field.abar_matrix(m);
            // abar v = ell1 v (radial eigenvector)
            for i in 0..3 {
                let av: f64 = (0..3).map(|j| a[i][j] * v[j]).sum();
                assert_relative_eq!(av, field.ell1[m] * v[i], max_relative = 1e-12, epsilon = 1e-12);
            }
            // transverse eigenvector
            let w = [v[1] - v[2], v[2] - v[0], v[0] - v[1]]; // orthogonal to v
            for i in 0..3 {
                let aw: f64 = (0..3).map(|j| a[i][j] * w[j]).sum();
                assert_relative_eq!(aw, field.ell2[m] * w[i], max_relative = 1e-12, epsilon = 1e-12);
            }
            // bbar parallel to v with magnitude beta = -ell1 u
            let u = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            for i in 0..3 {
                assert_relative_eq!(
                    field.bbar[i][m],
                    -field.ell1[m] * v[i],
                    max_relative = 1e-6,
                    epsilon = 1e-8
                );
            }
            let _ = u;
        }
        // nodes sharing |v| get identical radial values (dedup correctness)
        let m1 = grid.lin([2, 7, 4]);
        let m2 = grid.lin([4, 2, 7]);
        assert_eq!(field.ell1[m1], field.ell1[m2]);
        assert_eq!(field.ell2[m1], field.ell2[m2]);
        assert_eq!(field.cbar[m1], field.cbar[m2]);
    }

    #[test]
    fn maxwell_field_uses_closed_forms() {
        let grid = VelocityGrid::new(6.0, 8).unwrap();
        let field = mollify_coefficients(&grid, Potential::new(0.0).unwrap()).unwrap();
        for m in 0..grid.len() {
            let v = grid.node(m);
            let u2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            assert_eq!(field.ell1[m], 2.0);
            assert_eq!(field.cbar[m], -6.0);
            assert_relative_eq!(field.ell2[m], u2 + 2.0, max_relative = 1e-14);
            // abar = (|v|^2+2) I - v (x) v
            let a = field.abar_matrix(m);
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { u2 + 2.0 } else { 0.0 } - v[i] * v[j];
                    assert_relative_eq!(a[i][j], expect, max_relative = 1e-12, epsilon = 1e-12);
                }
            }
            for i in 0..3 {
                assert_relative_eq!(field.bbar[i][m], -2.0 * v[i], max_relative = 1e-12, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn cache_roundtrip_and_rejection() {
        let grid = VelocityGrid::new(4.0, 6).unwrap();
        let pot = Potential::new(-1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let first = mollify_coefficients_cached(&grid, pot, Some(dir.path())).unwrap();
        // one cache file now exists
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1);
        let second = mollify_coefficients_cached(&grid, pot, Some(dir.path())).unwrap();
        assert_eq!(first.cbar, second.cbar);
        assert_eq!(first.abar[3], second.abar[3]);
        // corrupt the magic: rejected as BadCache
        let path = files[0].as_ref().unwrap().path();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        match mollify_coefficients_cached(&grid, pot, Some(dir.path())) {
            Err(Error::BadCache(_)) => {}
            other => panic!("expected BadCache, got {other:?}"),
        }
    }

    #[test]
    fn asymptotic_ratios_approach_one() {
        let grid = VelocityGrid::new(8.0, 16).unwrap();
        for gamma in [1.0, -2.0] {
            let field = mollify_coefficients(&grid, Potential::new(gamma).unwrap()).unwrap();
            let rows = ell_asymptotics_report(&field);
            let last = rows.last().unwrap();
            assert!(last.v_abs >= 8.0);
            assert!((last.ell1_ratio - 1.0).abs() < 0.1, "ell1 ratio = {}", last.ell1_ratio);
            assert!((last.ell2_ratio - 1.0).abs() < 0.1, "ell2 ratio = {}", last.ell2_ratio);
        }
    }

    #[test]
    fn coercivity_floor_is_positive() {
        let grid = VelocityGrid::new(6.0, 10).unwrap();
        for gamma in [-2.0, 0.0, 1.0] {
            let field = mollify_coefficients(&grid, Potential::new(gamma).unwrap()).unwrap();
            let c0 = coercivity_floor(&field, 500, 42);
            assert!(c0 > 0.0, "gamma = {gamma}: c0 = {c0}");
        }
    }
}
