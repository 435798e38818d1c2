//! Linearized collision dynamics near the global Maxwellian.
//!
//! The linearization of the collision operator at `mu` is
//! `L f = Q(mu, f) + Q(f, mu)`; together with free transport it forms the
//! generator `Lambda = L - v . grad_x`. Splitting `L` into a nonlocal
//! smoothing part and a local diffusion part gives
//! `A0 f = (a_ij * f) d_ij mu - (c * f) mu` and
//! `B0 f = abar_ij d_ij f - cbar f`, from which the shifted pair
//! `A = A0 + M chi_R` and `B = B0 - M chi_R - v . grad_x` is built. The
//! appliers reuse identical discrete pieces, so `apply_a + apply_b`
//! reassembles the generator to machine precision rather than to
//! truncation order.
//!
//! Dense matrices act on `h = f / sqrt(mu)`, the coordinates of the
//! `mu^{-1/2}`-weighted space in which `L` is self-adjoint. The `L` matrix
//! is not a row-by-row discretization: it is assembled from the pairwise
//! Dirichlet form
//!
//! ```text
//! <-L h, h'> = (dv^6 / 2) sum_{n != m} mu_n mu_m
//!              [xi_nm(q)]^T a(v_n - v_m) [xi_nm(p)],
//! xi_nm(p) = (grad_h p)_n - (grad_h p)_m,   p = h / sqrt(mu),
//! ```
//!
//! where `grad_h` is a forward-difference gradient whose rows are exact on
//! quadratics up to a shared `+dv` bias that cancels in the pair
//! difference (see [`gradient_row`] for why this stencil and not a central
//! one). Since `a(z) z = 0` pointwise, every pair term annihilates the
//! five conserved directions `sqrt(mu) {1, v, |v|^2}` exactly, so the
//! assembled matrix has a genuinely five-dimensional numerical null space
//! instead of an `O(dv^2)`-perturbed one, and it is bitwise symmetric
//! negative semidefinite by construction.
//!
//! The nonlocal part `A0` has an analytic symmetric kernel in the weighted
//! coordinates: with `z = v_n - v_m` and midpoint `x = (v_n + v_m)/2`,
//! `a(z) : (v_n v_n^T - I) = a(z) : (x x^T) - tr a(z)` because `a(z) z = 0`,
//! which makes the dense entries manifestly symmetric under `n <-> m`. The
//! dense `B` is defined as `L - A0 - M chi_R - i (v . xi)`, so the dense
//! splitting identity `A + B = Lambda_xi` is exact as well. Weighted
//! conjugations `B_m = m B (1/m)` are local operators and are assembled
//! row by row from the zero-extension stencils; the adjoint `B*_m` is the
//! conjugate transpose, the exact discrete adjoint under the flat pairing.
//!
//! Spatial dependence enters through Fourier modes: transport is diagonal
//! per mode, so the full generator decomposes into independent blocks
//! `Lambda_xi = L - i (v . xi)` with `xi = 2 pi k`, `k` integer. Everything
//! here is deterministic and single-pass; matrices are immutable once
//! assembled.

use crate::coefficients::{mollify_coefficients, CoefficientField};
use crate::collision::{CollisionOperator, ConvolvedFields, SYM_PAIRS};
use crate::error::{Error, Result};
use crate::grids::{DistributionField, VelocityGrid};
use crate::kernels::{CutoffSpec, Potential, Weight};
use ndarray::{Array1, Array2};
use ndarray_linalg::{EigVals, EigValsh, FactorizeInto, Solve, UPLO};
use num_complex::Complex64;
use std::fmt::Write as FmtWrite;
use std::io::{Read as IoRead, Write as IoWrite};

/// Dense assembly is refused above this many nodes per axis.
pub const DENSE_AXIS_CAP: usize = 16;

fn cplx(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Applier bundle for the linearized operator and its splitting at one
/// `(grid, gamma)` pair. Caches the Maxwellian, its convolution fields, its
/// exact second derivatives, and the mollified coefficient tables.
pub struct LinearizedOperator {
    op: CollisionOperator,
    coeffs: CoefficientField,
    mu: Vec<f64>,
    mu_fields: ConvolvedFields,
    d2mu: [Vec<f64>; 6],
}

impl LinearizedOperator {
    pub fn new(grid: &VelocityGrid, pot: Potential) -> Result<Self> {
        let op = CollisionOperator::new(grid, pot);
        let coeffs = mollify_coefficients(grid, pot)?;
        let mu = grid.maxwellian();
        let mu_fields = op.convolve_fields(&mu);
        // d_ij mu = (v_i v_j - delta_ij) mu, exact
        let d2mu: [Vec<f64>; 6] = std::array::from_fn(|k| {
            let (i, j) = SYM_PAIRS[k];
            (0..grid.len())
                .map(|n| {
                    let v = grid.node(n);
                    let delta = if i == j { 1.0 } else { 0.0 };
                    (v[i] * v[j] - delta) * mu[n]
                })
                .collect()
        });
        Ok(Self { op, coeffs, mu, mu_fields, d2mu })
    }

    pub fn grid(&self) -> &VelocityGrid {
        self.op.grid()
    }

    pub fn gamma(&self) -> f64 {
        self.op.gamma()
    }

    /// The Maxwellian sampled on the grid.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn coefficients(&self) -> &CoefficientField {
        &self.coeffs
    }

    /// `L f = Q(mu, f) + Q(f, mu)` in conservative divergence form.
    pub fn apply_l(&self, f: &[f64]) -> Vec<f64> {
        let mut out = self.op.q_divergence_with(&self.mu_fields, f);
        let q_f_mu = self.op.q_divergence_form(f, &self.mu);
        for (o, q) in out.iter_mut().zip(&q_f_mu) {
            *o += q;
        }
        out
    }

    /// Nonlocal part `A0 f = (a_ij * f) d_ij mu - (c * f) mu`.
    pub fn apply_a0(&self, f: &[f64]) -> Vec<f64> {
        let (a_f, c_f) = self.op.convolve_with_c(f);
        let nv = self.grid().len();
        let mut out = vec![0.0; nv];
        for n in 0..nv {
            let mut s = -c_f[n] * self.mu[n];
            for k in 0..3 {
                s += a_f[k][n] * self.d2mu[k][n];
            }
            for k in 3..6 {
                s += 2.0 * a_f[k][n] * self.d2mu[k][n];
            }
            out[n] = s;
        }
        out
    }

    /// Local part `B0 f = abar_ij d_ij f - cbar f`.
    pub fn apply_b0(&self, f: &[f64]) -> Vec<f64> {
        let hess = self.grid().second_derivatives(f);
        let nv = self.grid().len();
        let mut out = vec![0.0; nv];
        for n in 0..nv {
            let mut s = -self.coeffs.cbar[n] * f[n];
            for k in 0..3 {
                s += self.coeffs.abar[k][n] * hess[k][n];
            }
            for k in 3..6 {
                s += 2.0 * self.coeffs.abar[k][n] * hess[k][n];
            }
            out[n] = s;
        }
        out
    }

    /// `A f = A0 f + M chi_R f`.
    pub fn apply_a(&self, f: &[f64], cutoff: &CutoffSpec) -> Vec<f64> {
        let mut out = self.apply_a0(f);
        for (n, o) in out.iter_mut().enumerate() {
            *o += cutoff.eval(self.grid().node(n)) * f[n];
        }
        out
    }

    /// Velocity part of `B f = B0 f - M chi_R f`; the field variant adds
    /// the `-v . grad_x` transport term.
    pub fn apply_b(&self, f: &[f64], cutoff: &CutoffSpec) -> Vec<f64> {
        let mut out = self.apply_b0(f);
        for (n, o) in out.iter_mut().enumerate() {
            *o -= cutoff.eval(self.grid().node(n)) * f[n];
        }
        out
    }

    /// `B` on a phase-space field, including transport.
    pub fn apply_b_field(
        &self,
        field: &DistributionField,
        cutoff: &CutoffSpec,
    ) -> Result<DistributionField> {
        self.check_grid(field)?;
        let transport = field.v_dot_grad_x();
        let mut out = DistributionField::zeros(field.space(), *self.grid());
        for xm in 0..field.space().node_count() {
            let b = self.apply_b(field.slice(xm), cutoff);
            let t = transport.slice(xm);
            let dst = out.slice_mut(xm);
            for n in 0..b.len() {
                dst[n] = b[n] - t[n];
            }
        }
        Ok(out)
    }

    /// Homogeneous generator through the split pieces, `A0 f + B0 f`.
    /// `apply_a + apply_b` reassembles exactly this because the cutoff
    /// terms are evaluated identically and cancel.
    pub fn apply_lambda(&self, f: &[f64]) -> Vec<f64> {
        let a0 = self.apply_a0(f);
        let mut out = self.apply_b0(f);
        for (o, a) in out.iter_mut().zip(&a0) {
            *o += a;
        }
        out
    }

    /// Full generator `Lambda f = A0 f + B0 f - v . grad_x f` on a field.
    pub fn apply_lambda_field(&self, field: &DistributionField) -> Result<DistributionField> {
        self.check_grid(field)?;
        let transport = field.v_dot_grad_x();
        let mut out = DistributionField::zeros(field.space(), *self.grid());
        for xm in 0..field.space().node_count() {
            let lam = self.apply_lambda(field.slice(xm));
            let t = transport.slice(xm);
            let dst = out.slice_mut(xm);
            for n in 0..lam.len() {
                dst[n] = lam[n] - t[n];
            }
        }
        Ok(out)
    }

    fn check_grid(&self, field: &DistributionField) -> Result<()> {
        if field.grid() != self.grid() {
            return Err(Error::GridMismatch(
                "field velocity grid does not match the operator's".into(),
            ));
        }
        Ok(())
    }
}

/// Normalized conserved directions `sqrt(mu) {1, v1, v2, v3, |v|^2}` in the
/// weighted coordinates; unit Euclidean norm each.
pub fn null_candidates(grid: &VelocityGrid) -> [Vec<f64>; 5] {
    let mu = grid.maxwellian();
    let mut out: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; grid.len()]);
    for n in 0..grid.len() {
        let v = grid.node(n);
        let w = mu[n].sqrt();
        let vals = [1.0, v[0], v[1], v[2], v[0] * v[0] + v[1] * v[1] + v[2] * v[2]];
        for (c, val) in vals.iter().enumerate() {
            out[c][n] = w * val;
        }
    }
    for cand in out.iter_mut() {
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in cand.iter_mut() {
            *x /= norm;
        }
    }
    out
}

/// Projection onto the conserved directions `{mu, v_i mu, |v|^2 mu}`,
/// orthonormalized as `{mu, v_i mu, (|v|^2 - 3) mu / sqrt(6)}` against the
/// moment functionals `{1, v_i, (|v|^2 - 3)/sqrt(6)}`. The projection uses
/// the double `x`-and-`v` quadrature, so the output has no spatial
/// dependence.
pub fn project_pi0(field: &DistributionField) -> DistributionField {
    let grid = *field.grid();
    let m = field.moments();
    let slice = pi0_from_moments(&grid, m.mass, m.momentum, m.energy);
    let mut out = DistributionField::zeros(field.space(), grid);
    for xm in 0..field.space().node_count() {
        out.slice_mut(xm).copy_from_slice(&slice);
    }
    out
}

/// Velocity-slice variant of [`project_pi0`].
pub fn project_pi0_slice(grid: &VelocityGrid, f: &[f64]) -> Vec<f64> {
    let (mass, momentum, energy) = grid.moments_slice(f);
    pi0_from_moments(grid, mass, momentum, energy)
}

fn pi0_from_moments(grid: &VelocityGrid, mass: f64, momentum: [f64; 3], energy: f64) -> Vec<f64> {
    let sqrt6 = 6f64.sqrt();
    let e_mom = (energy - 3.0 * mass) / sqrt6;
    grid.sample(|v| {
        let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        let bracket = mass
            + momentum[0] * v[0]
            + momentum[1] * v[1]
            + momentum[2] * v[2]
            + e_mom * (r2 - 3.0) / sqrt6;
        bracket * crate::kernels::maxwellian(v)
    })
}

/// Which operator a dense matrix represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorTag {
    /// Collision part only, weighted coordinates.
    L,
    /// `L - i (v . xi)`, weighted coordinates.
    Lambda,
    /// `A0 + M chi_R`, weighted coordinates.
    A,
    /// `L - A0 - M chi_R - i (v . xi)`, weighted coordinates.
    B,
    /// `m B (1/m)` for a weight `m`, flat coordinates.
    Bm,
    /// Conjugate transpose of `Bm`.
    BmStar,
}

/// Dense complex matrix over velocity-grid indices with its assembly
/// metadata. For tags `L | Lambda | A | B` the matrix acts on
/// `h = f / sqrt(mu)` and the recorded weight is the Gaussian-type
/// `exp(|v|^2/4)` equivalent of that conjugation; for `Bm | BmStar` it acts
/// on `h = m f` with the recorded weight `m`.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub tag: OperatorTag,
    /// Spatial Fourier mode as integers; the physical frequency is `2 pi xi`.
    pub xi: [i64; 3],
    pub gamma: f64,
    pub weight: Weight,
    pub cutoff: CutoffSpec,
    pub grid: VelocityGrid,
    pub mat: Array2<Complex64>,
}

impl OperatorMatrix {
    /// Matrix dimension (total node count).
    pub fn n(&self) -> usize {
        self.mat.nrows()
    }

    /// Self-describing binary dump (exact round trip).
    pub fn write_snapshot(&self, path: &std::path::Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(b"LNDMAT01")?;
        w.write_all(&[tag_code(self.tag)])?;
        for d in 0..3 {
            w.write_all(&self.xi[d].to_le_bytes())?;
        }
        w.write_all(&self.gamma.to_le_bytes())?;
        let (wf, p0, p1) = weight_code(self.weight);
        w.write_all(&[wf])?;
        w.write_all(&p0.to_le_bytes())?;
        w.write_all(&p1.to_le_bytes())?;
        w.write_all(&self.cutoff.m.to_le_bytes())?;
        w.write_all(&self.cutoff.r.to_le_bytes())?;
        w.write_all(&self.grid.l().to_le_bytes())?;
        w.write_all(&(self.grid.n() as u64).to_le_bytes())?;
        for x in self.mat.iter() {
            w.write_all(&x.re.to_le_bytes())?;
            w.write_all(&x.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot(path: &std::path::Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"LNDMAT01" {
            return Err(Error::BadCache("matrix snapshot magic mismatch".into()));
        }
        let mut b1 = [0u8; 1];
        let mut b8 = [0u8; 8];
        let f64_of = |r: &mut dyn IoRead, b8: &mut [u8; 8]| -> Result<f64> {
            r.read_exact(b8)?;
            Ok(f64::from_le_bytes(*b8))
        };
        r.read_exact(&mut b1)?;
        let tag = tag_of_code(b1[0])?;
        let mut xi = [0i64; 3];
        for d in xi.iter_mut() {
            r.read_exact(&mut b8)?;
            *d = i64::from_le_bytes(b8);
        }
        let gamma = f64_of(&mut r, &mut b8)?;
        r.read_exact(&mut b1)?;
        let wf = b1[0];
        let p0 = f64_of(&mut r, &mut b8)?;
        let p1 = f64_of(&mut r, &mut b8)?;
        let weight = weight_of_code(wf, p0, p1)?;
        let m = f64_of(&mut r, &mut b8)?;
        let cr = f64_of(&mut r, &mut b8)?;
        let l = f64_of(&mut r, &mut b8)?;
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let grid = VelocityGrid::new(l, n)?;
        let nv = grid.len();
        let mut data = Vec::with_capacity(nv * nv);
        for _ in 0..nv * nv {
            let re = f64_of(&mut r, &mut b8)?;
            let im = f64_of(&mut r, &mut b8)?;
            data.push(Complex64::new(re, im));
        }
        let mat = Array2::from_shape_vec((nv, nv), data)
            .map_err(|e| Error::BadCache(format!("matrix snapshot shape: {e}")))?;
        Ok(OperatorMatrix { tag, xi, gamma, weight, cutoff: CutoffSpec { m, r: cr }, grid, mat })
    }
}

fn tag_code(tag: OperatorTag) -> u8 {
    match tag {
        OperatorTag::L => 0,
        OperatorTag::Lambda => 1,
        OperatorTag::A => 2,
        OperatorTag::B => 3,
        OperatorTag::Bm => 4,
        OperatorTag::BmStar => 5,
    }
}

fn tag_of_code(code: u8) -> Result<OperatorTag> {
    Ok(match code {
        0 => OperatorTag::L,
        1 => OperatorTag::Lambda,
        2 => OperatorTag::A,
        3 => OperatorTag::B,
        4 => OperatorTag::Bm,
        5 => OperatorTag::BmStar,
        other => return Err(Error::BadCache(format!("unknown operator tag code {other}"))),
    })
}

fn weight_code(w: Weight) -> (u8, f64, f64) {
    match w {
        Weight::Polynomial { k } => (0, k, 0.0),
        Weight::Stretched { r, s } => (1, r, s),
        Weight::Gaussian { r } => (2, r, 0.0),
    }
}

fn weight_of_code(code: u8, p0: f64, p1: f64) -> Result<Weight> {
    Ok(match code {
        0 => Weight::Polynomial { k: p0 },
        1 => Weight::Stretched { r: p0, s: p1 },
        2 => Weight::Gaussian { r: p0 },
        other => return Err(Error::BadCache(format!("unknown weight code {other}"))),
    })
}

/// Assemble the dense matrix of the chosen operator.
///
/// `xi` is the integer spatial mode (physical frequency `2 pi xi`); it is
/// ignored by tags `L` and `A`, which contain no transport. `weight` is the
/// conjugation weight for `Bm | BmStar` and is ignored by the other tags,
/// whose space is fixed to `mu^{-1/2}`-weighted coordinates.
pub fn assemble_operator(
    grid: &VelocityGrid,
    pot: Potential,
    tag: OperatorTag,
    cutoff: CutoffSpec,
    xi: [i64; 3],
    weight: Weight,
) -> Result<OperatorMatrix> {
    if grid.n() > DENSE_AXIS_CAP {
        return Err(Error::SizeCap { requested: grid.len(), cap: DENSE_AXIS_CAP.pow(3) });
    }
    if !(cutoff.m >= 0.0) || !(cutoff.r > 0.0) {
        return Err(Error::Config(format!(
            "cutoff needs M >= 0 and R > 0, got M = {}, R = {}",
            cutoff.m, cutoff.r
        )));
    }
    let tau = 2.0 * std::f64::consts::PI;
    let xi_phys = [tau * xi[0] as f64, tau * xi[1] as f64, tau * xi[2] as f64];
    let nv = grid.len();
    let vxi = |n: usize| {
        let v = grid.node(n);
        v[0] * xi_phys[0] + v[1] * xi_phys[1] + v[2] * xi_phys[2]
    };
    let mat = match tag {
        OperatorTag::L => to_complex(&dirichlet_form_matrix(grid, pot)),
        OperatorTag::Lambda => {
            let mut m = to_complex(&dirichlet_form_matrix(grid, pot));
            for n in 0..nv {
                m[[n, n]] -= Complex64::new(0.0, vxi(n));
            }
            m
        }
        OperatorTag::A => {
            let mut a = a0_matrix(grid, pot);
            for n in 0..nv {
                a[[n, n]] += cutoff.eval(grid.node(n));
            }
            to_complex(&a)
        }
        OperatorTag::B => {
            let mut b = dirichlet_form_matrix(grid, pot) - a0_matrix(grid, pot);
            for n in 0..nv {
                b[[n, n]] -= cutoff.eval(grid.node(n));
            }
            let mut m = to_complex(&b);
            for n in 0..nv {
                m[[n, n]] -= Complex64::new(0.0, vxi(n));
            }
            m
        }
        OperatorTag::Bm => {
            weight.validate()?;
            bm_matrix(grid, pot, weight, &cutoff, xi_phys)?
        }
        OperatorTag::BmStar => {
            weight.validate()?;
            let bm = bm_matrix(grid, pot, weight, &cutoff, xi_phys)?;
            bm.t().mapv(|x| x.conj())
        }
    };
    let recorded_weight = match tag {
        OperatorTag::Bm | OperatorTag::BmStar => weight,
        _ => Weight::Gaussian { r: 0.25 },
    };
    Ok(OperatorMatrix { tag, xi, gamma: pot.gamma(), weight: recorded_weight, cutoff, grid: *grid, mat })
}

fn to_complex(m: &Array2<f64>) -> Array2<Complex64> {
    m.mapv(|x| Complex64::new(x, 0.0))
}

/// One row of the form gradient along axis `a`, as `(column, coefficient)`
/// pairs: a one-sided difference in direction `dir` (+1 forward, -1
/// backward), with a bias-matched second-order one-sided stencil at the
/// face it runs into.
///
/// The assembled form averages the forward and backward variants, and
/// three properties of this family make that the right choice. First,
/// one-sided differences have no lattice kernel beyond constants (the
/// symbol `2 sin(t/2) / dv` never vanishes), unlike central differences,
/// whose interior checkerboard kernel would only be damped at the faces,
/// where the Maxwellian weight is exponentially small; that would leave
/// spurious near-null modes at the `exp(-L^2/2)` scale. Because each
/// directional form is separately negative semidefinite, their average
/// keeps the clean kernel (a Jensen-style average of the difference
/// quotients before squaring would reintroduce the checkerboard). Second,
/// every row is exact on quadratics up to the same node-independent bias
/// `dir * dv` (the face stencils are built to match it), and the pairwise
/// form only sees differences of rows, so the bias cancels and the five
/// conserved directions survive to machine precision. Third, the leading
/// consistency errors of the two directions are opposite, so averaging
/// the two forms cancels the `O(dv)` error term and restores second-order
/// accuracy of the assembled eigenvalues.
fn gradient_row(
    grid: &VelocityGrid,
    lin: usize,
    a: usize,
    dir: i32,
    out: &mut [(usize, f64); 3],
) -> usize {
    let n = grid.n();
    let st = [n * n, n, 1];
    let s = st[a];
    let i = grid.idx3(lin)[a];
    let inv = 1.0 / grid.dv();
    if dir > 0 {
        if i == n - 1 {
            out[0] = (lin, 2.0 * inv);
            out[1] = (lin - s, -3.0 * inv);
            out[2] = (lin - 2 * s, inv);
            3
        } else {
            out[0] = (lin + s, inv);
            out[1] = (lin, -inv);
            2
        }
    } else if i == 0 {
        out[0] = (lin, -2.0 * inv);
        out[1] = (lin + s, 3.0 * inv);
        out[2] = (lin + 2 * s, -inv);
        3
    } else {
        out[0] = (lin, inv);
        out[1] = (lin - s, -inv);
        2
    }
}

/// Weighted-coordinate collision matrix from the pairwise Dirichlet form.
/// Bitwise symmetric (each pair block is computed once and mirrored) and
/// negative semidefinite; annihilates the five conserved directions to
/// machine precision. See the module docs for the derivation.
fn dirichlet_form_matrix(grid: &VelocityGrid, pot: Potential) -> Array2<f64> {
    let nv = grid.len();
    let dv3 = grid.weight();
    let mu = grid.maxwellian();
    let isq: Vec<f64> = mu.iter().map(|x| 1.0 / x.sqrt()).collect();
    let mut mat = Array2::<f64>::zeros((nv, nv));
    let mut row = [(0usize, 0.0f64); 3];
    // per-pair column support of the stencil difference, <= 14 entries
    let mut cols = [0usize; 16];
    let mut sten = [[0.0f64; 3]; 16];
    let mut au = [[0.0f64; 3]; 16];
    for n in 0..nv {
        let vn = grid.node(n);
        for m in (n + 1)..nv {
            let vm = grid.node(m);
            let z = [vn[0] - vm[0], vn[1] - vm[1], vn[2] - vm[2]];
            let a = pot.kernel_a(z);
            // halve: the forward and backward directional forms are averaged
            let scale = 0.5 * dv3 * mu[n] * mu[m];
            for dir in [1i32, -1] {
                let mut nc = 0usize;
                for ax in 0..3 {
                    let kn = gradient_row(grid, n, ax, dir, &mut row);
                    for &(c, w) in &row[..kn] {
                        push_stencil(&mut cols, &mut sten, &mut nc, c, ax, w);
                    }
                    let km = gradient_row(grid, m, ax, dir, &mut row);
                    for &(c, w) in &row[..km] {
                        push_stencil(&mut cols, &mut sten, &mut nc, c, ax, -w);
                    }
                }
                for k in 0..nc {
                    for i in 0..3 {
                        au[k][i] =
                            a[i][0] * sten[k][0] + a[i][1] * sten[k][1] + a[i][2] * sten[k][2];
                    }
                }
                for k in 0..nc {
                    let wk = scale * isq[cols[k]];
                    for l in k..nc {
                        let p =
                            sten[k][0] * au[l][0] + sten[k][1] * au[l][1] + sten[k][2] * au[l][2];
                        let val = wk * isq[cols[l]] * p;
                        mat[[cols[k], cols[l]]] -= val;
                        if k != l {
                            mat[[cols[l], cols[k]]] -= val;
                        }
                    }
                }
            }
        }
    }
    mat
}

fn push_stencil(
    cols: &mut [usize; 16],
    sten: &mut [[f64; 3]; 16],
    nc: &mut usize,
    c: usize,
    ax: usize,
    w: f64,
) {
    for k in 0..*nc {
        if cols[k] == c {
            sten[k][ax] += w;
            return;
        }
    }
    cols[*nc] = c;
    sten[*nc] = [0.0; 3];
    sten[*nc][ax] = w;
    *nc += 1;
}

/// Weighted-coordinate nonlocal part: the analytic symmetric kernel
/// `dv^3 sqrt(mu_n mu_m) [a(z) : (x x^T) - tr a(z) - c(z)]` with
/// `z = v_n - v_m`, `x = (v_n + v_m)/2`; the diagonal uses the same
/// regularized `c` sample as the convolution engine, so this equals the
/// FFT applier's lattice sum entry for entry.
fn a0_matrix(grid: &VelocityGrid, pot: Potential) -> Array2<f64> {
    let nv = grid.len();
    let dv3 = grid.weight();
    let c0 = pot.c_origin(grid.dv());
    let mu = grid.maxwellian();
    let sq: Vec<f64> = mu.iter().map(|x| x.sqrt()).collect();
    let mut mat = Array2::<f64>::zeros((nv, nv));
    for n in 0..nv {
        let vn = grid.node(n);
        for m in n..nv {
            let vm = grid.node(m);
            let z = [vn[0] - vm[0], vn[1] - vm[1], vn[2] - vm[2]];
            let a = pot.kernel_a(z);
            let c = if n == m { c0 } else { pot.kernel_c(z).unwrap() };
            let x = [0.5 * (vn[0] + vm[0]), 0.5 * (vn[1] + vm[1]), 0.5 * (vn[2] + vm[2])];
            let mut quad = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    quad += a[i][j] * x[i] * x[j];
                }
            }
            let tra = a[0][0] + a[1][1] + a[2][2];
            let e = dv3 * sq[n] * sq[m] * (quad - tra - c);
            mat[[n, m]] = e;
            mat[[m, n]] = e;
        }
    }
    mat
}

/// Row-assembled `B_m = m B (1/m)` in flat coordinates:
/// `B_m h = abar_ij d_ij h - 2 abar_ij (d_i m / m) d_j h
///          + [2 abar_ij (d_i m / m)(d_j m / m) - abar_ij (d_ij m / m)
///             - cbar - M chi_R] h - i (v . xi) h`,
/// with zero-extension central stencils for both derivative orders.
fn bm_matrix(
    grid: &VelocityGrid,
    pot: Potential,
    weight: Weight,
    cutoff: &CutoffSpec,
    xi_phys: [f64; 3],
) -> Result<Array2<Complex64>> {
    let coeffs = mollify_coefficients(grid, pot)?;
    let nv = grid.len();
    let n = grid.n();
    let dv = grid.dv();
    let st = [n * n, n, 1];
    let inv_d2 = 1.0 / (dv * dv);
    let inv_2d = 1.0 / (2.0 * dv);
    let mut mat = Array2::<Complex64>::zeros((nv, nv));
    for r in 0..nv {
        let idx = grid.idx3(r);
        let v = grid.node(r);
        let a = coeffs.abar_matrix(r);
        let lg = weight.log_grad(v);
        let (hd, hq) = weight.log_hess_coeffs(v);
        // drift coefficient of d_j h: -2 sum_i abar_ij (d_i m / m)
        let mut drift = [0.0; 3];
        for (j, d) in drift.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..3 {
                s += a[i][j] * lg[i];
            }
            *d = -2.0 * s;
        }
        let mut a_lglg = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                a_lglg += a[i][j] * lg[i] * lg[j];
            }
        }
        let tra = a[0][0] + a[1][1] + a[2][2];
        let avv = coeffs.quadratic_form(r, v);
        let zeta = 2.0 * a_lglg - (hd * tra + hq * avv)
            - coeffs.cbar[r]
            - cutoff.eval(v);
        let mut diag = zeta;
        for ax in 0..3 {
            let s = st[ax];
            diag -= 2.0 * a[ax][ax] * inv_d2;
            if idx[ax] + 1 < n {
                mat[[r, r + s]] += cplx(a[ax][ax] * inv_d2 + drift[ax] * inv_2d);
            }
            if idx[ax] > 0 {
                mat[[r, r - s]] += cplx(a[ax][ax] * inv_d2 - drift[ax] * inv_2d);
            }
        }
        // mixed second derivatives: each unordered pair contributes twice,
        // and the cross stencil weighs corners by 1/(4 dv^2)
        let pairs = [(0usize, 1usize), (0, 2), (1, 2)];
        for (p, &(ax, bx)) in pairs.iter().enumerate() {
            let coef = 2.0 * coeffs.abar[3 + p][r] * 0.25 * inv_d2;
            for (da, db, sign) in
                [(1i64, 1i64, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)]
            {
                let ia = idx[ax] as i64 + da;
                let ib = idx[bx] as i64 + db;
                if ia < 0 || ia >= n as i64 || ib < 0 || ib >= n as i64 {
                    continue;
                }
                let col = (r as i64 + da * st[ax] as i64 + db * st[bx] as i64) as usize;
                mat[[r, col]] += cplx(sign * coef);
            }
        }
        let vxi = v[0] * xi_phys[0] + v[1] * xi_phys[1] + v[2] * xi_phys[2];
        mat[[r, r]] += Complex64::new(diag, -vxi);
    }
    Ok(mat)
}

/// Spectrum summary of an assembled operator.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub tag: OperatorTag,
    pub xi: [i64; 3],
    pub gamma: f64,
    /// Nodes per axis of the underlying grid.
    pub n: usize,
    /// All eigenvalues, sorted by real part (then imaginary part).
    pub eigenvalues: Vec<Complex64>,
    /// `1e-6` times the largest eigenvalue modulus.
    pub null_tol: f64,
    /// Number of eigenvalues with modulus below `null_tol`.
    pub null_count: usize,
    /// `-max { Re lambda : |lambda| >= null_tol }`; `None` when every
    /// eigenvalue is below the null tolerance.
    pub gap: Option<f64>,
    /// `|M h| / |h|` for the five conserved candidates, for collision tags
    /// at `xi = 0`; empty otherwise.
    pub null_residuals: Vec<f64>,
    /// `max |M - M^H| / max |M|`; the Hermitian solver is used below 1e-12.
    pub hermitian_defect: f64,
    /// `"eigh"` or `"eig"`.
    pub method: &'static str,
}

/// Full dense spectrum with null-space diagnostics. Uses the Hermitian
/// eigensolver when the matrix is Hermitian to roundoff, the general one
/// otherwise.
pub fn spectral_report(matrix: &OperatorMatrix) -> Result<SpectralReport> {
    let m = &matrix.mat;
    let nv = m.nrows();
    let mut max_abs = 0.0f64;
    let mut defect = 0.0f64;
    for r in 0..nv {
        for c in 0..=r {
            let x = m[[r, c]];
            let y = m[[c, r]];
            max_abs = max_abs.max(x.norm()).max(y.norm());
            defect = defect.max((x - y.conj()).norm());
        }
    }
    let hermitian_defect = if max_abs > 0.0 { defect / max_abs } else { 0.0 };
    let (mut eigenvalues, method) = if hermitian_defect <= 1e-12 {
        let vals = m.eigvalsh(UPLO::Lower).map_err(|e| Error::Eigen(e.to_string()))?;
        (vals.iter().map(|&x| cplx(x)).collect::<Vec<_>>(), "eigh")
    } else {
        let vals = m.eigvals().map_err(|e| Error::Eigen(e.to_string()))?;
        (vals.to_vec(), "eig")
    };
    eigenvalues.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let scale = eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let null_tol = 1e-6 * scale;
    let null_count = eigenvalues.iter().filter(|l| l.norm() < null_tol).count();
    let mut edge: Option<f64> = None;
    for l in &eigenvalues {
        if l.norm() >= null_tol {
            edge = Some(edge.map_or(l.re, |e: f64| e.max(l.re)));
        }
    }
    let gap = edge.map(|e| -e);
    let collision_tag = matches!(matrix.tag, OperatorTag::L | OperatorTag::Lambda);
    let null_residuals = if collision_tag && matrix.xi == [0; 3] {
        null_candidates(&matrix.grid)
            .iter()
            .map(|cand| {
                let hv = Array1::from(cand.iter().map(|&x| cplx(x)).collect::<Vec<_>>());
                let r = m.dot(&hv);
                let num = r.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                let den = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
                num / den
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(SpectralReport {
        tag: matrix.tag,
        xi: matrix.xi,
        gamma: matrix.gamma,
        n: matrix.grid.n(),
        eigenvalues,
        null_tol,
        null_count,
        gap,
        null_residuals,
        hermitian_defect,
        method,
    })
}

impl SpectralReport {
    /// CSV serialization: `#` summary header lines, then `re,im` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let gap = match self.gap {
            Some(g) => format!("{g:.12e}"),
            None => "none".into(),
        };
        let _ = writeln!(
            s,
            "# operator={:?} gamma={} n={} xi={},{},{} method={} hermitian_defect={:.3e}",
            self.tag,
            self.gamma,
            self.n,
            self.xi[0],
            self.xi[1],
            self.xi[2],
            self.method,
            self.hermitian_defect
        );
        let _ = writeln!(
            s,
            "# null_tol={:.12e} null_count={} gap={}",
            self.null_tol, self.null_count, gap
        );
        if !self.null_residuals.is_empty() {
            let rs: Vec<String> = self.null_residuals.iter().map(|r| format!("{r:.6e}")).collect();
            let _ = writeln!(s, "# null_residuals={}", rs.join(","));
        }
        let _ = writeln!(s, "re,im");
        for l in &self.eigenvalues {
            let _ = writeln!(s, "{:.17e},{:.17e}", l.re, l.im);
        }
        s
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Matrix exponential by degree-13 Pade approximation with scaling and
/// squaring; the reference propagator for dense generators.
pub fn expm(a: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Config(format!(
            "matrix exponential needs a square matrix, got {} x {}",
            n,
            a.ncols()
        )));
    }
    let mut norm1 = 0.0f64;
    for c in a.columns() {
        let s: f64 = c.iter().map(|x| x.norm()).sum();
        norm1 = norm1.max(s);
    }
    const THETA13: f64 = 5.371_920_351_148_152;
    let s = if norm1 > THETA13 { (norm1 / THETA13).log2().ceil().max(0.0) as i32 } else { 0 };
    let a_s = a.mapv(|x| x / cplx(2f64.powi(s)));
    const B: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];
    let id = Array2::<Complex64>::eye(n);
    let a2 = a_s.dot(&a_s);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);
    let u_inner = &a6 * cplx(B[13]) + &a4 * cplx(B[11]) + &a2 * cplx(B[9]);
    let u_mid = a6.dot(&u_inner)
        + &a6 * cplx(B[7])
        + &a4 * cplx(B[5])
        + &a2 * cplx(B[3])
        + &id * cplx(B[1]);
    let u = a_s.dot(&u_mid);
    let v_inner = &a6 * cplx(B[12]) + &a4 * cplx(B[10]) + &a2 * cplx(B[8]);
    let v = a6.dot(&v_inner)
        + &a6 * cplx(B[6])
        + &a4 * cplx(B[4])
        + &a2 * cplx(B[2])
        + &id * cplx(B[0]);
    let lhs = &v - &u;
    let rhs = &v + &u;
    let f = lhs
        .factorize_into()
        .map_err(|e| Error::Eigen(format!("matrix exponential factorization: {e}")))?;
    let mut x = Array2::<Complex64>::zeros((n, n));
    for j in 0..n {
        let col = f
            .solve(&rhs.column(j))
            .map_err(|e| Error::Eigen(format!("matrix exponential solve: {e}")))?;
        x.column_mut(j).assign(&col);
    }
    for _ in 0..s {
        x = x.dot(&x);
    }
    Ok(x)
}
