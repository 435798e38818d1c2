//! Discretization substrate: truncated velocity box, periodic spatial grid,
//! quadrature, finite-difference stencils, and the FFT convolution contract.
//!
//! The velocity grid is uniform on `[-L, L)^3`, offset by half a cell so that
//! `v = 0` is never a node (this removes the kernel singularity for
//! `gamma < 0` and the radial-projector degeneracy at the origin). States are
//! treated as 0 outside the box, justified by Gaussian-type decay of
//! everything of interest.
//!
//! Velocity convolutions are linear (not circular): kernels are sampled on
//! the doubled difference grid (all differences in `[-2L, 2L]`) and fields
//! zero-padded to `2N + 2` per axis, so every difference consulted for an
//! output on the box is a directly sampled kernel value - no wrap-around,
//! even for kernel components that are odd in individual coordinates.
//! Because the zero-extension central difference of a padded field is a
//! circulant on the doubled grid, convolutions against the *gradient* of a
//! field cost no extra forward transform: they are diagonal `i sin` spectral
//! multipliers on the already-transformed field.

use crate::error::{Error, Result};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::io::{Read as IoRead, Write as IoWrite};
use std::sync::Arc;

/// Neumaier compensated sum; quadratures and moment sums cancel heavily.
pub fn csum(it: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for x in it {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// Uniform velocity box `[-L, L)^3`, `N` nodes per axis at
/// `v_i = -L + (i + 1/2) dv`. The node set is symmetric under `v -> -v`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VelocityGrid {
    l: f64,
    n: usize,
    dv: f64,
}

impl VelocityGrid {
    pub fn new(l: f64, n: usize) -> Result<Self> {
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::Config(format!("velocity box half-width must be positive, got {l}")));
        }
        if n < 4 || n % 2 != 0 {
            return Err(Error::GridMismatch(format!(
                "velocity grid needs an even node count >= 4 per axis, got {n}"
            )));
        }
        Ok(Self { l, n, dv: 2.0 * l / n as f64 })
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dv(&self) -> f64 {
        self.dv
    }

    /// Total node count `N^3`.
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Per-node quadrature weight `dv^3` (uniform midpoint rule).
    pub fn weight(&self) -> f64 {
        self.dv * self.dv * self.dv
    }

    /// Coordinate of the `i`-th node along one axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.l + (i as f64 + 0.5) * self.dv
    }

    pub fn lin(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.n + idx[1]) * self.n + idx[2]
    }

    pub fn idx3(&self, lin: usize) -> [usize; 3] {
        let k = lin % self.n;
        let j = (lin / self.n) % self.n;
        let i = lin / (self.n * self.n);
        [i, j, k]
    }

    pub fn node(&self, lin: usize) -> [f64; 3] {
        let [i, j, k] = self.idx3(lin);
        [self.coord(i), self.coord(j), self.coord(k)]
    }

    /// Sample a function of `v` on all nodes.
    pub fn sample(&self, f: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.n {
            let vi = self.coord(i);
            for j in 0..self.n {
                let vj = self.coord(j);
                for k in 0..self.n {
                    out.push(f([vi, vj, self.coord(k)]));
                }
            }
        }
        out
    }

    /// The Maxwellian sampled on the grid.
    pub fn maxwellian(&self) -> Vec<f64> {
        self.sample(crate::kernels::maxwellian)
    }

    /// Quadrature of `f` against `{1, v, |v|^2}`.
    pub fn moments_slice(&self, f: &[f64]) -> (f64, [f64; 3], f64) {
        debug_assert_eq!(f.len(), self.len());
        let w = self.weight();
        let mass = csum(f.iter().copied()) * w;
        let mut mom = [0.0; 3];
        for d in 0..3 {
            mom[d] = csum((0..f.len()).map(|m| f[m] * self.node(m)[d])) * w;
        }
        let energy = csum((0..f.len()).map(|m| {
            let v = self.node(m);
            f[m] * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
        })) * w;
        (mass, mom, energy)
    }

    /// `sum f g dv^3`.
    pub fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), g.len());
        csum(f.iter().zip(g).map(|(a, b)| a * b)) * self.weight()
    }

    pub fn norm_l2(&self, f: &[f64]) -> f64 {
        self.dot(f, f).sqrt()
    }

    fn strides(&self) -> [usize; 3] {
        [self.n * self.n, self.n, 1]
    }

    /// Central differences in the interior, second-order one-sided at the
    /// box faces.
    pub fn gradient(&self, f: &[f64]) -> [Vec<f64>; 3] {
        let n = self.n;
        let st = self.strides();
        let inv2 = 1.0 / (2.0 * self.dv);
        let mut out = [vec![0.0; f.len()], vec![0.0; f.len()], vec![0.0; f.len()]];
        for lin in 0..f.len() {
            let idx = self.idx3(lin);
            for a in 0..3 {
                let s = st[a];
                out[a][lin] = if idx[a] == 0 {
                    (-3.0 * f[lin] + 4.0 * f[lin + s] - f[lin + 2 * s]) * inv2
                } else if idx[a] == n - 1 {
                    (3.0 * f[lin] - 4.0 * f[lin - s] + f[lin - 2 * s]) * inv2
                } else {
                    (f[lin + s] - f[lin - s]) * inv2
                };
            }
        }
        out
    }

    /// Central differences with zero extension outside the box (the gradient
    /// used inside conservative collision fluxes).
    pub fn gradient_compact(&self, f: &[f64]) -> [Vec<f64>; 3] {
        let n = self.n;
        let st = self.strides();
        let inv2 = 1.0 / (2.0 * self.dv);
        let mut out = [vec![0.0; f.len()], vec![0.0; f.len()], vec![0.0; f.len()]];
        for lin in 0..f.len() {
            let idx = self.idx3(lin);
            for a in 0..3 {
                let s = st[a];
                let up = if idx[a] + 1 < n { f[lin + s] } else { 0.0 };
                let dn = if idx[a] > 0 { f[lin - s] } else { 0.0 };
                out[a][lin] = (up - dn) * inv2;
            }
        }
        out
    }

    /// Five-point antisymmetric differences `(8(f_{+1}-f_{-1}) -
    /// (f_{+2}-f_{-2}))/(12 dv)` with zero extension. Used for the gradient
    /// inside collision fluxes: antisymmetry keeps the pairing cancellations
    /// that make the collision moments exact, while the fourth-order
    /// truncation keeps the discrete equilibrium flux at `O(dv^4)`.
    pub fn gradient4(&self, f: &[f64]) -> [Vec<f64>; 3] {
        let n = self.n;
        let st = self.strides();
        let inv12 = 1.0 / (12.0 * self.dv);
        let mut out = [vec![0.0; f.len()], vec![0.0; f.len()], vec![0.0; f.len()]];
        for lin in 0..f.len() {
            let idx = self.idx3(lin);
            for a in 0..3 {
                let s = st[a];
                let g = |d: isize| -> f64 {
                    let c = idx[a] as isize + d;
                    if c >= 0 && c < n as isize {
                        f[(lin as isize + d * s as isize) as usize]
                    } else {
                        0.0
                    }
                };
                out[a][lin] = (8.0 * (g(1) - g(-1)) - (g(2) - g(-2))) * inv12;
            }
        }
        out
    }

    /// Conservative divergence: face fluxes are arithmetic means of adjacent
    /// node fluxes, box-boundary faces carry exactly zero flux, so the
    /// quadrature sum telescopes to 0 for any input.
    pub fn divergence(&self, flux: &[Vec<f64>; 3]) -> Vec<f64> {
        let n = self.n;
        let st = self.strides();
        let inv = 1.0 / self.dv;
        let mut out = vec![0.0; flux[0].len()];
        for lin in 0..out.len() {
            let idx = self.idx3(lin);
            let mut acc = 0.0;
            for a in 0..3 {
                let s = st[a];
                let up = if idx[a] + 1 < n { 0.5 * (flux[a][lin] + flux[a][lin + s]) } else { 0.0 };
                let dn = if idx[a] > 0 { 0.5 * (flux[a][lin - s] + flux[a][lin]) } else { 0.0 };
                acc += (up - dn) * inv;
            }
            out[lin] = acc;
        }
        out
    }

    /// All six second derivatives `(d_00, d_11, d_22, d_01, d_02, d_12)` by
    /// central differences with zero extension.
    pub fn second_derivatives(&self, f: &[f64]) -> [Vec<f64>; 6] {
        let n = self.n;
        let st = self.strides();
        let inv2 = 1.0 / (self.dv * self.dv);
        let inv4 = 0.25 * inv2;
        let mut out: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; f.len()]);
        let get = |f: &[f64], idx: [isize; 3]| -> f64 {
            if idx.iter().all(|&c| c >= 0 && c < n as isize) {
                f[(idx[0] as usize * n + idx[1] as usize) * n + idx[2] as usize]
            } else {
                0.0
            }
        };
        for lin in 0..f.len() {
            let idx = self.idx3(lin);
            let sidx = [idx[0] as isize, idx[1] as isize, idx[2] as isize];
            for a in 0..3 {
                let s = st[a];
                let up = if idx[a] + 1 < n { f[lin + s] } else { 0.0 };
                let dn = if idx[a] > 0 { f[lin - s] } else { 0.0 };
                out[a][lin] = (up - 2.0 * f[lin] + dn) * inv2;
            }
            let pairs = [(0usize, 1usize), (0, 2), (1, 2)];
            for (p, &(a, b)) in pairs.iter().enumerate() {
                let shift = |da: isize, db: isize| {
                    let mut q = sidx;
                    q[a] += da;
                    q[b] += db;
                    get(f, q)
                };
                out[3 + p][lin] =
                    (shift(1, 1) - shift(1, -1) - shift(-1, 1) + shift(-1, -1)) * inv4;
            }
        }
        out
    }
}

/// Spectrum of a centrally symmetric kernel sampled on the doubled
/// difference grid; real-valued because the sampled kernel satisfies
/// `K(-z) = K(z)`.
#[derive(Debug, Clone)]
pub struct KernelSpectrum {
    size: usize,
    re: Vec<f64>,
}

/// Zero-padded FFT convolution on the doubled grid (linear convolution: no
/// periodic aliasing for outputs on the box).
pub struct ConvolutionEngine {
    grid: VelocityGrid,
    size: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// `(8 sin t - sin 2t)/(6 dv)` at `t = 2 pi q / R` per ring bin: the
    /// spectral multiplier of the five-point antisymmetric difference
    /// (shared by all three axes; matches `VelocityGrid::gradient4`).
    dsin: Vec<f64>,
}

fn fft3(buf: &mut [Complex64], s: usize, plan: &Arc<dyn Fft<f64>>) {
    let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
    for row in buf.chunks_exact_mut(s) {
        plan.process_with_scratch(row, &mut scratch);
    }
    let mut pencil = vec![Complex64::default(); s];
    for i in 0..s {
        for k in 0..s {
            let base = i * s * s + k;
            for j in 0..s {
                pencil[j] = buf[base + j * s];
            }
            plan.process_with_scratch(&mut pencil, &mut scratch);
            for j in 0..s {
                buf[base + j * s] = pencil[j];
            }
        }
    }
    for j in 0..s {
        for k in 0..s {
            let base = j * s + k;
            for i in 0..s {
                pencil[i] = buf[base + i * s * s];
            }
            plan.process_with_scratch(&mut pencil, &mut scratch);
            for i in 0..s {
                buf[base + i * s * s] = pencil[i];
            }
        }
    }
}

impl ConvolutionEngine {
    pub fn new(grid: &VelocityGrid) -> Self {
        // 2N covers box-to-box differences; +4 also covers the two-cell
        // gradient4 spill (offsets down to -(N+2) and up to N+1) with every
        // offset distinct on the ring. Folding any offset would alias it
        // per-axis, which flips the sign of per-axis-odd kernel components
        // such as a_01.
        let size = 2 * grid.n() + 4;
        let mut planner = FftPlanner::new();
        let dsin = (0..size)
            .map(|q| {
                let t = 2.0 * std::f64::consts::PI * q as f64 / size as f64;
                (8.0 * t.sin() - (2.0 * t).sin()) / (6.0 * grid.dv())
            })
            .collect();
        Self {
            grid: *grid,
            size,
            fwd: planner.plan_fft_forward(size),
            inv: planner.plan_fft_inverse(size),
            dsin,
        }
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    /// Sample a centrally symmetric kernel at all pairwise differences
    /// `d*dv`, `d in [-(N+2), N+1]` per axis, fold in the quadrature weight
    /// `dv^3`, and transform. The caller's sampler decides the value at
    /// `z = 0` (conventionally 0 for the singular kernels).
    pub fn kernel_spectrum(&self, sampler: impl Fn([f64; 3]) -> f64) -> KernelSpectrum {
        let s = self.size;
        let n = self.grid.n() as isize;
        let dv = self.grid.dv();
        let w = self.grid.weight();
        let mut buf = vec![Complex64::default(); s * s * s];
        for di in -(n + 2)..=(n + 1) {
            let ci = ((di + s as isize) % s as isize) as usize;
            for dj in -(n + 2)..=(n + 1) {
                let cj = ((dj + s as isize) % s as isize) as usize;
                for dk in -(n + 2)..=(n + 1) {
                    let ck = ((dk + s as isize) % s as isize) as usize;
                    let z = [di as f64 * dv, dj as f64 * dv, dk as f64 * dv];
                    buf[(ci * s + cj) * s + ck] = Complex64::new(sampler(z) * w, 0.0);
                }
            }
        }
        fft3(&mut buf, s, &self.fwd);
        // K(-z) = K(z) and the lone unpaired difference -(N+2) sits on the
        // self-conjugate bin mod 2N+4, so the spectrum is real; imaginary
        // parts are roundoff.
        let re: Vec<f64> = buf.iter().map(|c| c.re).collect();
        KernelSpectrum { size: s, re }
    }

    fn forward_field(&self, g: &[f64]) -> Vec<Complex64> {
        let s = self.size;
        let n = self.grid.n();
        debug_assert_eq!(g.len(), n * n * n);
        let mut buf = vec![Complex64::default(); s * s * s];
        for i in 0..n {
            for j in 0..n {
                let src = (i * n + j) * n;
                let dst = (i * s + j) * s;
                for k in 0..n {
                    buf[dst + k] = Complex64::new(g[src + k], 0.0);
                }
            }
        }
        fft3(&mut buf, s, &self.fwd);
        buf
    }

    fn extract_box(&self, buf: &[Complex64], scale: f64, re: bool) -> Vec<f64> {
        let s = self.size;
        let n = self.grid.n();
        let mut out = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                let base = (i * s + j) * s;
                for k in 0..n {
                    let c = buf[base + k];
                    out.push(if re { c.re } else { c.im } * scale);
                }
            }
        }
        out
    }

    fn inverse_pair(
        &self,
        buf: &mut [Complex64],
        out: &mut Vec<Vec<f64>>,
        second: bool,
    ) {
        let scale = 1.0 / (buf.len() as f64);
        fft3(buf, self.size, &self.inv);
        out.push(self.extract_box(buf, scale, true));
        if second {
            out.push(self.extract_box(buf, scale, false));
        }
    }

    /// Forward transform of a zero-padded field, for reuse across kernels.
    pub fn field_spectrum(&self, g: &[f64]) -> Vec<Complex64> {
        self.forward_field(g)
    }

    /// Convolutions of one transformed field against several kernel spectra.
    /// Costs one inverse transform per *pair* of kernels: the spectra are
    /// real, so two real outputs ride one complex transform.
    pub fn convolve_many_from_spectrum(
        &self,
        kernels: &[&KernelSpectrum],
        ghat: &[Complex64],
    ) -> Vec<Vec<f64>> {
        let total = ghat.len();
        let mut out = Vec::with_capacity(kernels.len());
        let mut buf = vec![Complex64::default(); total];
        for chunk in kernels.chunks(2) {
            debug_assert_eq!(chunk[0].size, self.size);
            match chunk {
                [k1, k2] => {
                    for q in 0..total {
                        buf[q] = Complex64::new(k1.re[q], k2.re[q]) * ghat[q];
                    }
                    self.inverse_pair(&mut buf, &mut out, true);
                }
                [k1] => {
                    for q in 0..total {
                        buf[q] = Complex64::new(k1.re[q] * ghat[q].re, k1.re[q] * ghat[q].im);
                    }
                    self.inverse_pair(&mut buf, &mut out, false);
                }
                _ => unreachable!(),
            }
        }
        out
    }

    /// Gradient-contracted convolutions: for each kernel row
    /// `(K_0, K_1, K_2)`, computes `sum_j K_j * (d_j g)` where `d_j` is the
    /// zero-extension five-point difference of `gradient4` (including its
    /// spill up to two cells outside the box). The difference acts as a
    /// diagonal spectral multiplier, so this costs one inverse transform per
    /// pair of rows and no extra forward transform.
    pub fn convolve_grad_many_from_spectrum(
        &self,
        rows: &[[&KernelSpectrum; 3]],
        ghat: &[Complex64],
    ) -> Vec<Vec<f64>> {
        let s = self.size;
        let total = ghat.len();
        let mut out = Vec::with_capacity(rows.len());
        let mut buf = vec![Complex64::default(); total];
        // multiplier of row r at bin q: i * sum_j dsin[q_j] K_rj[q]
        let row_mult = |row: &[&KernelSpectrum; 3], q: usize, qi: usize, qj: usize, qk: usize| {
            self.dsin[qi] * row[0].re[q] + self.dsin[qj] * row[1].re[q] + self.dsin[qk] * row[2].re[q]
        };
        for chunk in rows.chunks(2) {
            let mut q = 0usize;
            for qi in 0..s {
                for qj in 0..s {
                    for qk in 0..s {
                        let m1 = row_mult(&chunk[0], q, qi, qj, qk);
                        let m2 = if chunk.len() == 2 {
                            row_mult(&chunk[1], q, qi, qj, qk)
                        } else {
                            0.0
                        };
                        // (i*m1 + i*i*m2) ghat = (-m2 + i m1) ghat
                        buf[q] = Complex64::new(-m2, m1) * ghat[q];
                        q += 1;
                    }
                }
            }
            self.inverse_pair(&mut buf, &mut out, chunk.len() == 2);
        }
        out
    }

    /// Single convolution restricted to the box.
    pub fn convolve(&self, kernel: &KernelSpectrum, g: &[f64]) -> Vec<f64> {
        let ghat = self.forward_field(g);
        self.convolve_many_from_spectrum(&[kernel], &ghat).remove(0)
    }
}

/// Periodic spatial domain of volume one: a single point (space-homogeneous),
/// a 1D slab of length 1, or the unit 3-torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpatialGrid {
    Homogeneous,
    Slab { nx: usize },
    Box3 { nx: usize },
}

impl SpatialGrid {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SpatialGrid::Homogeneous => Ok(()),
            SpatialGrid::Slab { nx } | SpatialGrid::Box3 { nx } => {
                if nx < 2 {
                    return Err(Error::GridMismatch(format!(
                        "spatial grid needs at least 2 nodes per dimension, got {nx}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SpatialGrid::Homogeneous => 0,
            SpatialGrid::Slab { .. } => 1,
            SpatialGrid::Box3 { .. } => 3,
        }
    }

    pub fn nx(&self) -> usize {
        match *self {
            SpatialGrid::Homogeneous => 1,
            SpatialGrid::Slab { nx } | SpatialGrid::Box3 { nx } => nx,
        }
    }

    pub fn node_count(&self) -> usize {
        match *self {
            SpatialGrid::Homogeneous => 1,
            SpatialGrid::Slab { nx } => nx,
            SpatialGrid::Box3 { nx } => nx * nx * nx,
        }
    }

    /// Per-node quadrature weight; the torus has volume 1 in every mode.
    pub fn x_weight(&self) -> f64 {
        1.0 / self.node_count() as f64
    }

    /// Coordinates of spatial node `m` (unused axes are 0).
    pub fn x_coord(&self, m: usize) -> [f64; 3] {
        match *self {
            SpatialGrid::Homogeneous => [0.0; 3],
            SpatialGrid::Slab { nx } => [m as f64 / nx as f64, 0.0, 0.0],
            SpatialGrid::Box3 { nx } => {
                let k = m % nx;
                let j = (m / nx) % nx;
                let i = m / (nx * nx);
                [i as f64 / nx as f64, j as f64 / nx as f64, k as f64 / nx as f64]
            }
        }
    }

    /// Signed integer frequency for FFT bin `m` of an `nx`-point transform.
    pub fn signed_freq(nx: usize, m: usize) -> i64 {
        if m <= nx / 2 {
            m as i64
        } else {
            m as i64 - nx as i64
        }
    }
}

/// Real-valued samples `f(x, v)`, stored x-major, with a generation counter
/// bumped on every mutable access so caches can detect staleness.
#[derive(Debug, Clone)]
pub struct DistributionField {
    space: SpatialGrid,
    grid: VelocityGrid,
    values: Vec<f64>,
    generation: u64,
}

/// Quadrature moments over both x and v.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mass: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
}

impl DistributionField {
    pub fn zeros(space: SpatialGrid, grid: VelocityGrid) -> Self {
        let len = space.node_count() * grid.len();
        Self { space, grid, values: vec![0.0; len], generation: 0 }
    }

    pub fn from_fn(
        space: SpatialGrid,
        grid: VelocityGrid,
        f: impl Fn([f64; 3], [f64; 3]) -> f64,
    ) -> Self {
        let nv = grid.len();
        let mut field = Self::zeros(space, grid);
        for xm in 0..space.node_count() {
            let x = space.x_coord(xm);
            for m in 0..nv {
                field.values[xm * nv + m] = f(x, grid.node(m));
            }
        }
        field
    }

    /// Space-homogeneous field from a single velocity slice.
    pub fn homogeneous(grid: VelocityGrid, slice: Vec<f64>) -> Result<Self> {
        if slice.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "slice length {} does not match grid size {}",
                slice.len(),
                grid.len()
            )));
        }
        Ok(Self { space: SpatialGrid::Homogeneous, grid, values: slice, generation: 0 })
    }

    pub fn space(&self) -> SpatialGrid {
        self.space
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.values
    }

    pub fn slice(&self, xm: usize) -> &[f64] {
        let nv = self.grid.len();
        &self.values[xm * nv..(xm + 1) * nv]
    }

    pub fn slice_mut(&mut self, xm: usize) -> &mut [f64] {
        self.generation += 1;
        let nv = self.grid.len();
        &mut self.values[xm * nv..(xm + 1) * nv]
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
    }

    pub fn moments(&self) -> Moments {
        let xw = self.space.x_weight();
        let mut mass = 0.0;
        let mut momentum = [0.0; 3];
        let mut energy = 0.0;
        for xm in 0..self.space.node_count() {
            let (m, p, e) = self.grid.moments_slice(self.slice(xm));
            mass += m * xw;
            for d in 0..3 {
                momentum[d] += p[d] * xw;
            }
            energy += e * xw;
        }
        Moments { mass, momentum, energy }
    }

    /// Transport generator `v . grad_x f`, one spectral derivative per
    /// spatial axis contracted with the matching velocity coordinate.
    /// Spectral differentiation is exact for trigonometric polynomials on
    /// the unit torus; the Nyquist mode of an even-length axis gets a zero
    /// multiplier so real fields stay real. Homogeneous fields return zero.
    pub fn v_dot_grad_x(&self) -> DistributionField {
        let mut out = DistributionField::zeros(self.space, self.grid);
        let nx = self.space.nx();
        if self.space.dim() == 0 {
            return out;
        }
        let nv = self.grid.len();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(nx);
        let inv = planner.plan_fft_inverse(nx);
        // derivative multipliers i 2 pi k per bin, Nyquist zeroed
        let mult: Vec<Complex64> = (0..nx)
            .map(|m| {
                if nx % 2 == 0 && m == nx / 2 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, 2.0 * std::f64::consts::PI * SpatialGrid::signed_freq(nx, m) as f64)
                }
            })
            .collect();
        // value-index strides of each spatial axis in x-major storage
        let axis_strides: &[(usize, usize)] = match self.space {
            SpatialGrid::Homogeneous => &[],
            SpatialGrid::Slab { .. } => &[(0, 1)],
            SpatialGrid::Box3 { nx } => &[(0, nx * nx), (1, nx), (2, 1)],
        };
        let mut line = vec![Complex64::default(); nx];
        let scale = 1.0 / nx as f64;
        for &(axis, xstride) in axis_strides {
            let stride = xstride * nv;
            for base in 0..self.values.len() {
                if (base / stride) % nx != 0 {
                    continue;
                }
                for (t, c) in line.iter_mut().enumerate() {
                    *c = Complex64::new(self.values[base + t * stride], 0.0);
                }
                fwd.process(&mut line);
                for (c, m) in line.iter_mut().zip(&mult) {
                    *c *= m;
                }
                inv.process(&mut line);
                for (t, c) in line.iter().enumerate() {
                    let idx = base + t * stride;
                    let vd = self.grid.node(idx % nv)[axis];
                    out.values[idx] += vd * c.re * scale;
                }
            }
        }
        out
    }

    /// Self-describing binary snapshot (exact round trip).
    pub fn write_snapshot(&self, path: &std::path::Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(b"LNDFLD01")?;
        let (dim, nx) = (self.space.dim() as u64, self.space.nx() as u64);
        w.write_all(&dim.to_le_bytes())?;
        w.write_all(&nx.to_le_bytes())?;
        w.write_all(&self.grid.l().to_le_bytes())?;
        w.write_all(&(self.grid.n() as u64).to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot(path: &std::path::Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"LNDFLD01" {
            return Err(Error::BadCache("snapshot magic mismatch".into()));
        }
        let mut u = [0u8; 8];
        let mut read_u64 = |r: &mut dyn IoRead| -> Result<u64> {
            r.read_exact(&mut u)?;
            Ok(u64::from_le_bytes(u))
        };
        let dim = read_u64(&mut r)?;
        let nx = read_u64(&mut r)? as usize;
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let l = f64::from_le_bytes(b);
        let mut u2 = [0u8; 8];
        r.read_exact(&mut u2)?;
        let n = u64::from_le_bytes(u2) as usize;
        r.read_exact(&mut u2)?;
        let count = u64::from_le_bytes(u2) as usize;
        let space = match dim {
            0 => SpatialGrid::Homogeneous,
            1 => SpatialGrid::Slab { nx },
            3 => SpatialGrid::Box3 { nx },
            other => return Err(Error::BadCache(format!("snapshot has dim {other}"))),
        };
        let grid = VelocityGrid::new(l, n)?;
        if count != space.node_count() * grid.len() {
            return Err(Error::BadCache("snapshot length mismatch".into()));
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b)?;
            values.push(f64::from_le_bytes(b));
        }
        Ok(Self { space, grid, values, generation: 0 })
    }

    /// Lossy CSV export for plotting (6 significant digits).
    pub fn export_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "x1,x2,x3,v1,v2,v3,f")?;
        let nv = self.grid.len();
        for xm in 0..self.space.node_count() {
            let x = self.space.x_coord(xm);
            for m in 0..nv {
                let v = self.grid.node(m);
                writeln!(
                    w,
                    "{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
                    x[0], x[1], x[2], v[0], v[1], v[2], self.values[xm * nv + m]
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{maxwellian, Potential};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn grid_construction_and_node_layout() {
        assert!(VelocityGrid::new(8.0, 23).is_err());
        assert!(VelocityGrid::new(8.0, 2).is_err());
        assert!(VelocityGrid::new(-1.0, 24).is_err());
        let g = VelocityGrid::new(8.0, 24).unwrap();
        assert_relative_eq!(g.dv(), 2.0 / 3.0, max_relative = 1e-15);
        // no node at the origin: nearest coordinate is dv/2
        let closest = (0..24).map(|i| g.coord(i).abs()).fold(f64::MAX, f64::min);
        assert_relative_eq!(closest, g.dv() / 2.0, max_relative = 1e-14);
        // node set symmetric under v -> -v
        for i in 0..24 {
            assert_relative_eq!(g.coord(i), -g.coord(23 - i), max_relative = 1e-14, epsilon = 1e-15);
        }
    }

    #[test]
    fn maxwellian_quadrature_is_unit_mass() {
        for (l, n) in [(8.0, 24), (8.0, 20), (10.0, 32)] {
            let g = VelocityGrid::new(l, n).unwrap();
            let (mass, _, _) = g.moments_slice(&g.maxwellian());
            assert!((mass - 1.0).abs() < 1e-10, "L={l} N={n}: mass = {mass}");
        }
    }

    #[test]
    fn moments_match_gaussian_identities() {
        let g = VelocityGrid::new(8.0, 24).unwrap();
        let mu = g.maxwellian();
        let f = DistributionField::homogeneous(g, mu.clone()).unwrap();
        let m = f.moments();
        assert!((m.mass - 1.0).abs() < 1e-10);
        assert!(m.momentum.iter().all(|p| p.abs() < 1e-12));
        assert!((m.energy - 3.0).abs() < 1e-9);

        let v1mu: Vec<f64> = (0..g.len()).map(|i| g.node(i)[0] * mu[i]).collect();
        let (mass, mom, energy) = g.moments_slice(&v1mu);
        assert!(mass.abs() < 1e-12);
        assert!((mom[0] - 1.0).abs() < 1e-10 && mom[1].abs() < 1e-12 && mom[2].abs() < 1e-12);
        assert!(energy.abs() < 1e-11);

        // (|v|^2 - 3) mu: energy = <|v|^4> - 3<|v|^2> = 15 - 9 = 6
        let q: Vec<f64> = (0..g.len())
            .map(|i| {
                let v = g.node(i);
                (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] - 3.0) * mu[i]
            })
            .collect();
        let (mass, mom, energy) = g.moments_slice(&q);
        assert!(mass.abs() < 1e-10);
        assert!(mom.iter().all(|p| p.abs() < 1e-12));
        assert!((energy - 6.0).abs() < 1e-8, "energy = {energy}");
    }

    #[test]
    fn gradient_converges_at_second_order_on_gaussian() {
        let err_for = |n: usize| {
            let g = VelocityGrid::new(8.0, n).unwrap();
            let mu = g.maxwellian();
            let grad = g.gradient(&mu);
            let mut worst = 0.0f64;
            for m in 0..g.len() {
                let v = g.node(m);
                for a in 0..3 {
                    worst = worst.max((grad[a][m] + v[a] * mu[m]).abs());
                }
            }
            worst
        };
        // N=16 (dv=1) is outside the asymptotic regime for the Gaussian's
        // fifth-derivative correction; measure the order on the finer pair.
        let (e32, e64) = (err_for(32), err_for(64));
        let order = (e32 / e64).log2();
        assert!(order >= 1.9, "order = {order} (e32 = {e32}, e64 = {e64})");
    }

    #[test]
    fn divergence_is_exactly_mass_neutral_for_random_flux() {
        let g = VelocityGrid::new(4.0, 12).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let flux: [Vec<f64>; 3] = std::array::from_fn(|_| {
            (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()
        });
        let div = g.divergence(&flux);
        let total = csum(div.iter().copied());
        let scale: f64 = div.iter().map(|d| d.abs()).sum();
        assert!(total.abs() <= 1e-14 * scale.max(1.0), "sum = {total}, scale = {scale}");
    }

    #[test]
    fn constant_flux_has_zero_interior_divergence() {
        let g = VelocityGrid::new(4.0, 10).unwrap();
        let flux: [Vec<f64>; 3] = std::array::from_fn(|_| vec![1.0; g.len()]);
        let div = g.divergence(&flux);
        for lin in 0..g.len() {
            let idx = g.idx3(lin);
            if idx.iter().all(|&c| c > 0 && c < 9) {
                assert!(div[lin].abs() < 1e-14);
            }
        }
    }

    #[test]
    fn convolution_matches_direct_summation() {
        // N = 8 oracle: brute-force O(N^6) sums over the box, for a
        // per-axis-even component, a per-axis-odd (off-diagonal) component,
        // and a singular kernel.
        let g = VelocityGrid::new(4.0, 8).unwrap();
        let engine = ConvolutionEngine::new(&g);
        let field: Vec<f64> = g.sample(|v| maxwellian(v) * (1.0 + v[0] - 0.5 * v[2]));

        let hard = Potential::new(1.0).unwrap();
        let soft = Potential::new(-1.0).unwrap();
        let samplers: Vec<Box<dyn Fn([f64; 3]) -> f64>> = vec![
            Box::new(move |z| hard.kernel_a(z)[0][0]),
            Box::new(move |z| hard.kernel_a(z)[0][1]),
            Box::new(move |z| {
                if z == [0.0; 3] {
                    0.0 // singular node omitted (integrable singularity)
                } else {
                    soft.kernel_c(z).unwrap()
                }
            }),
        ];
        for sampler in samplers {
            let spec = engine.kernel_spectrum(&sampler);
            let fast = engine.convolve(&spec, &field);
            let mut worst = 0.0f64;
            let mut scale = 0.0f64;
            for q in 0..g.len() {
                let vq = g.node(q);
                let mut direct = 0.0;
                for m in 0..g.len() {
                    let vm = g.node(m);
                    direct += sampler([vq[0] - vm[0], vq[1] - vm[1], vq[2] - vm[2]]) * field[m];
                }
                direct *= g.weight();
                worst = worst.max((fast[q] - direct).abs());
                scale = scale.max(direct.abs());
            }
            assert!(worst <= 1e-12 * scale.max(1.0), "worst = {worst:e}, scale = {scale:e}");
        }
    }

    #[test]
    fn gradient_convolution_matches_direct_summation() {
        // sum_j K_j * (d_j g) with the zero-extension five-point difference,
        // whose support spills two cells outside the box; the oracle sums
        // over that extended support explicitly, exercising the extreme
        // lattice offsets -(N+2) and N+1 that the enlarged ring keeps
        // distinct (a fold would flip per-axis-odd kernel components).
        let g = VelocityGrid::new(4.0, 8).unwrap();
        let n = g.n() as isize;
        let engine = ConvolutionEngine::new(&g);
        let field: Vec<f64> = g.sample(|v| maxwellian(v) * (1.0 - v[1] + 0.3 * v[0] * v[2]));
        let p = Potential::new(1.0).unwrap();
        let specs: Vec<KernelSpectrum> =
            (0..3).map(|j| engine.kernel_spectrum(|z| p.kernel_a(z)[1][j])).collect();
        let row = [&specs[0], &specs[1], &specs[2]];

        let ghat = engine.field_spectrum(&field);
        let fast = engine.convolve_grad_many_from_spectrum(&[row], &ghat).remove(0);

        let at = |i: isize, j: isize, k: isize| -> f64 {
            if i >= 0 && i < n && j >= 0 && j < n && k >= 0 && k < n {
                field[((i * n + j) * n + k) as usize]
            } else {
                0.0
            }
        };
        let d4 =
            |p1: f64, m1: f64, p2: f64, m2: f64| (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * g.dv());
        let coord = |i: isize| -4.0 + (i as f64 + 0.5) * g.dv();
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for q in 0..g.len() {
            let vq = g.node(q);
            let mut direct = 0.0;
            for mi in -2..=(n + 1) {
                for mj in -2..=(n + 1) {
                    for mk in -2..=(n + 1) {
                        let vm = [coord(mi), coord(mj), coord(mk)];
                        let z = [vq[0] - vm[0], vq[1] - vm[1], vq[2] - vm[2]];
                        let a = p.kernel_a(z);
                        let grad = [
                            d4(
                                at(mi + 1, mj, mk),
                                at(mi - 1, mj, mk),
                                at(mi + 2, mj, mk),
                                at(mi - 2, mj, mk),
                            ),
                            d4(
                                at(mi, mj + 1, mk),
                                at(mi, mj - 1, mk),
                                at(mi, mj + 2, mk),
                                at(mi, mj - 2, mk),
                            ),
                            d4(
                                at(mi, mj, mk + 1),
                                at(mi, mj, mk - 1),
                                at(mi, mj, mk + 2),
                                at(mi, mj, mk - 2),
                            ),
                        ];
                        direct += a[1][0] * grad[0] + a[1][1] * grad[1] + a[1][2] * grad[2];
                    }
                }
            }
            direct *= g.weight();
            worst = worst.max((fast[q] - direct).abs());
            scale = scale.max(direct.abs());
        }
        assert!(worst <= 1e-12 * scale.max(1.0), "worst = {worst:e}, scale = {scale:e}");
    }

    #[test]
    fn convolution_delta_and_unit_kernel() {
        let g = VelocityGrid::new(4.0, 8).unwrap();
        let engine = ConvolutionEngine::new(&g);
        let p = Potential::new(1.0).unwrap();
        let spec = engine.kernel_spectrum(|z| p.kernel_a(z)[1][1]);

        // delta at node v0 (value 1 at one node) -> kernel translated, * dv^3
        let v0_lin = g.lin([2, 5, 3]);
        let v0 = g.node(v0_lin);
        let mut delta = vec![0.0; g.len()];
        delta[v0_lin] = 1.0;
        let conv = engine.convolve(&spec, &delta);
        for m in (0..g.len()).step_by(7) {
            let vm = g.node(m);
            let z = [vm[0] - v0[0], vm[1] - v0[1], vm[2] - v0[2]];
            // absolute floor: FFT roundoff against kernel values up to ~5e2
            assert_relative_eq!(
                conv[m],
                p.kernel_a(z)[1][1] * g.weight(),
                max_relative = 1e-12,
                epsilon = 1e-11
            );
        }

        // kernel = 1: convolution returns total mass everywhere
        let ones = engine.kernel_spectrum(|_| 1.0);
        let mu = g.maxwellian();
        let conv = engine.convolve(&ones, &mu);
        let (mass, _, _) = g.moments_slice(&mu);
        for m in (0..g.len()).step_by(11) {
            assert_relative_eq!(conv[m], mass, max_relative = 1e-12);
        }
    }

    #[test]
    fn paired_transforms_match_single_transforms() {
        let g = VelocityGrid::new(4.0, 8).unwrap();
        let engine = ConvolutionEngine::new(&g);
        let p = Potential::new(0.0).unwrap();
        let s1 = engine.kernel_spectrum(|z| p.kernel_a(z)[0][0]);
        let s2 = engine.kernel_spectrum(|z| p.kernel_a(z)[0][1]);
        let s3 = engine.kernel_spectrum(|z| p.kernel_a(z)[2][2]);
        let field = g.sample(|v| maxwellian(v) * v[1]);
        let ghat = engine.field_spectrum(&field);
        let batch = engine.convolve_many_from_spectrum(&[&s1, &s2, &s3], &ghat);
        for (spec, out) in [(&s1, &batch[0]), (&s2, &batch[1]), (&s3, &batch[2])] {
            let single = engine.convolve(spec, &field);
            for m in 0..g.len() {
                assert_relative_eq!(out[m], single[m], max_relative = 1e-12, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn gradient_convolution_reproduces_gaussian_mean_identity() {
        // sum_j a_1j * (d_j mu) should approach (b * mu)_1 = -2 v_1 at
        // gamma = 0 (Gaussian mean identity), with O(dv^2) stencil error.
        let g = VelocityGrid::new(6.0, 16).unwrap();
        let engine = ConvolutionEngine::new(&g);
        let p = Potential::new(0.0).unwrap();
        let field = g.maxwellian();
        let specs: Vec<KernelSpectrum> =
            (0..3).map(|j| engine.kernel_spectrum(|z| p.kernel_a(z)[0][j])).collect();
        let ghat = engine.field_spectrum(&field);
        let derived = engine
            .convolve_grad_many_from_spectrum(&[[&specs[0], &specs[1], &specs[2]]], &ghat)
            .remove(0);
        for m in (0..g.len()).step_by(13) {
            let v = g.node(m);
            assert_relative_eq!(derived[m], -2.0 * v[0], max_relative = 2e-3, epsilon = 2e-3);
        }
    }

    #[test]
    fn field_snapshot_roundtrip_and_generation() {
        let g = VelocityGrid::new(2.0, 4).unwrap();
        let mut f = DistributionField::from_fn(SpatialGrid::Slab { nx: 3 }, g, |x, v| {
            (x[0] + v[0] * v[1] - v[2]).sin()
        });
        assert_eq!(f.generation(), 0);
        f.slice_mut(1)[0] = 42.0;
        assert_eq!(f.generation(), 1);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.bin");
        f.write_snapshot(&path).unwrap();
        let back = DistributionField::read_snapshot(&path).unwrap();
        assert_eq!(back.space(), f.space());
        assert_eq!(back.values(), f.values());

        let csv = dir.path().join("field.csv");
        f.export_csv(&csv).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("x1,x2,x3,v1,v2,v3,f"));
        assert_eq!(text.lines().count(), 1 + 3 * g.len());
    }

    #[test]
    fn spatial_grid_frequencies_and_weights() {
        let s = SpatialGrid::Box3 { nx: 4 };
        assert_eq!(s.node_count(), 64);
        assert_relative_eq!(s.x_weight() * 64.0, 1.0);
        assert_eq!(SpatialGrid::signed_freq(8, 0), 0);
        assert_eq!(SpatialGrid::signed_freq(8, 3), 3);
        assert_eq!(SpatialGrid::signed_freq(8, 4), 4);
        assert_eq!(SpatialGrid::signed_freq(8, 5), -3);
        assert_eq!(SpatialGrid::signed_freq(8, 7), -1);
        assert!(SpatialGrid::Slab { nx: 1 }.validate().is_err());
    }
}
