//! Weighted norms and the scalar dissipativity functionals attached to the
//! velocity weights: the hypothesis table of admissible (potential, weight,
//! exponent) combinations with its decay abscissas, the radial multiplier
//! functions `phi_{m,p}`, `phi~_{m,p}` and `psi_{m,1}` built from the
//! mollified coefficients, the constructive search for an absorption cutoff
//! `(M, R)` making those multipliers uniformly negative, and quadrature
//! evaluation of the weighted `L^p` / anisotropic `H^1` / graded
//! space-regularity norms.
//!
//! All multiplier evaluations go through the radial quadrature profile of
//! the mollified coefficients, so they are defined at any radius, not just
//! on a velocity grid; the weight enters only through its logarithmic
//! derivatives. The cutoff search follows the constructive proof shape:
//! first a radius beyond which the multiplier is asymptotically below the
//! target, then an amplitude handling the core, then a final radius making
//! the commutator term `M |grad chi_R|` small; the returned witness records
//! the margins measured on a dense radial check grid, and `verify_cutoff`
//! re-measures them at any resolution.

use crate::coefficients::{radial_coeffs, RadialCoeffs};
use crate::error::{Error, Result};
use crate::grids::{DistributionField, SpatialGrid};
use crate::kernels::{chi_sup_grad, split_radial, CutoffSpec, Potential, Weight};

/// Outcome of the hypothesis-table lookup for `(gamma, m, p)`.
///
/// `value` is the decay abscissa of the table row (`f64::INFINITY` for the
/// rows that impose no finite limit). `phi_value` is the abscissa that
/// applies when working with `phi_{m,p}` instead of `phi~_{m,p}`: identical
/// for polynomial and stretched weights, but Gaussian-type weights need the
/// stronger restriction `r < 1/(2p)`, and at the soft endpoint the value
/// degrades to `4r(1-2rp)`; `None` means the `phi` route is unavailable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbscissaResult {
    pub value: f64,
    pub phi_value: Option<f64>,
    pub branch: &'static str,
}

/// Decay abscissa of the weighted space `L^p(m)` for the given potential.
///
/// Errors with `InadmissibleWeight` when the combination is outside the
/// hypothesis table (polynomial weights at soft potentials, polynomial tails
/// too thin, stretched exponents not compensating the potential).
pub fn abscissa(pot: Potential, weight: Weight, p: f64) -> Result<AbscissaResult> {
    weight.validate()?;
    if !(p >= 1.0) {
        return Err(Error::Config(format!("Lebesgue exponent must satisfy p >= 1, got {p}")));
    }
    let gamma = pot.gamma();
    let q = 1.0 - 1.0 / p; // p may be +infinity, then q = 1
    let inf = f64::INFINITY;
    match weight {
        Weight::Polynomial { k } => {
            if gamma < 0.0 {
                return Err(Error::InadmissibleWeight(format!(
                    "polynomial weights are not admissible for soft potentials (gamma = {gamma})"
                )));
            }
            let gate = gamma + 2.0 + 3.0 * q;
            if !(k > gate) {
                return Err(Error::InadmissibleWeight(format!(
                    "polynomial weight needs k > gamma + 2 + 3(1 - 1/p) = {gate}, got k = {k}"
                )));
            }
            if gamma > 0.0 {
                Ok(AbscissaResult { value: inf, phi_value: Some(inf), branch: "H1(i)" })
            } else {
                let v = 2.0 * (k - (gamma + 3.0) * q);
                Ok(AbscissaResult { value: v, phi_value: Some(v), branch: "H2(i)" })
            }
        }
        Weight::Stretched { r: _, s } => {
            if gamma > 0.0 {
                Ok(AbscissaResult { value: inf, phi_value: Some(inf), branch: "H1(ii)" })
            } else if gamma == 0.0 {
                Ok(AbscissaResult { value: inf, phi_value: Some(inf), branch: "H2(ii)" })
            } else if gamma > -2.0 {
                if !(s + gamma > 0.0) {
                    return Err(Error::InadmissibleWeight(format!(
                        "stretched weight at gamma = {gamma} needs s + gamma > 0, got s = {s}"
                    )));
                }
                Ok(AbscissaResult { value: inf, phi_value: Some(inf), branch: "H3(i)" })
            } else {
                Err(Error::InadmissibleWeight(
                    "the soft endpoint gamma = -2 admits only Gaussian-type weights".into(),
                ))
            }
        }
        Weight::Gaussian { r } => {
            // the phi route needs r < 1/(2p) in every Gaussian row
            let phi_ok = r < 0.5 / p;
            let (branch, value) = if gamma > 0.0 {
                ("H1(iii)", inf)
            } else if gamma == 0.0 {
                ("H2(iii)", inf)
            } else if gamma > -2.0 {
                ("H3(ii)", inf)
            } else {
                ("H3(iii)", 4.0 * r * (1.0 - 2.0 * r))
            };
            let phi_value = if !phi_ok {
                None
            } else if branch == "H3(iii)" {
                Some(4.0 * r * (1.0 - 2.0 * r * p))
            } else {
                Some(inf)
            };
            Ok(AbscissaResult { value, phi_value, branch })
        }
    }
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `x . abar(v) y` from the radial profile (`ell1` along `v`, `ell2`
/// transverse); isotropic at the origin where the eigenvalues coincide.
fn abar_pair(rc: &RadialCoeffs, v: [f64; 3], x: [f64; 3], y: [f64; 3]) -> f64 {
    let r2 = dot3(v, v);
    if r2 == 0.0 {
        return rc.ell2 * dot3(x, y);
    }
    let xv = dot3(x, v);
    let yv = dot3(y, v);
    rc.ell1 * xv * yv / r2 + rc.ell2 * (dot3(x, y) - xv * yv / r2)
}

struct WeightDerivs {
    a_hess: f64,
    a_lg_lg: f64,
    b_lg: f64,
}

fn weight_derivs(rc: &RadialCoeffs, weight: Weight, v: [f64; 3]) -> WeightDerivs {
    let lg = weight.log_grad(v);
    let (hd, hq) = weight.log_hess_coeffs(v);
    let r2 = dot3(v, v);
    let tra = rc.ell1 + 2.0 * rc.ell2;
    let a_hess = hd * tra + hq * rc.ell1 * r2;
    let a_lg_lg = abar_pair(rc, v, lg, lg);
    let r = r2.sqrt();
    let b_lg = if r == 0.0 { 0.0 } else { rc.beta * dot3(lg, v) / r };
    WeightDerivs { a_hess, a_lg_lg, b_lg }
}

/// `phi_{m,p}(v)`: multiplier controlling `d/dt ||f||_{L^p(m)}` before
/// absorption, `abar : (d2 m / m) + (p-1) abar : (dm/m)^2 + 2 bbar . dm/m
/// + (1/p - 1) cbar`. Requires finite `p`.
pub fn phi_mp(pot: Potential, weight: Weight, p: f64, v: [f64; 3]) -> Result<f64> {
    weight.validate()?;
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::Config(format!(
            "phi evaluation needs a finite exponent p >= 1, got {p}"
        )));
    }
    let rc = radial_coeffs(pot, dot3(v, v).sqrt());
    let w = weight_derivs(&rc, weight, v);
    Ok(w.a_hess + (p - 1.0) * w.a_lg_lg + 2.0 * w.b_lg + (1.0 / p - 1.0) * rc.cbar)
}

/// `phi~_{m,p}(v)`: the variant with coefficients `(2/p - 1, 2 - 2/p, 2/p)`,
/// which stays meaningful up to `p = infinity` and carries the better
/// Gaussian-weight asymptotic `-4r(1-2r)<v>^{gamma+2}`.
pub fn phi_tilde_mp(pot: Potential, weight: Weight, p: f64, v: [f64; 3]) -> Result<f64> {
    weight.validate()?;
    if !(p >= 1.0) {
        return Err(Error::Config(format!("Lebesgue exponent must satisfy p >= 1, got {p}")));
    }
    let rc = radial_coeffs(pot, dot3(v, v).sqrt());
    let w = weight_derivs(&rc, weight, v);
    Ok((2.0 / p - 1.0) * w.a_hess
        + (2.0 - 2.0 / p) * w.a_lg_lg
        + (2.0 / p) * w.b_lg
        + (1.0 / p - 1.0) * rc.cbar)
}

/// `psi_{m,1}(v)`: the first-order multiplier appearing in the weighted
/// `W^{1,1}` energy estimate; defined for exponential-type weights only
/// (`sigma = s` or `2`), where it reads `bbar . dm/m + rs ell2 <v>^{s-2}
/// + rs ell1 <v>^{s-2} + rs(s-2) ell1 |v|^2 <v>^{s-4}
/// + r^2 s^2 ell1 |v|^2 <v>^{2s-4}`.
pub fn psi_m1(pot: Potential, weight: Weight, v: [f64; 3]) -> Result<f64> {
    weight.validate()?;
    let (r, s) = match weight {
        Weight::Polynomial { .. } => {
            return Err(Error::InadmissibleWeight(
                "psi_{m,1} is defined for exponential-type weights only".into(),
            ));
        }
        Weight::Stretched { r, s } => (r, s),
        Weight::Gaussian { r } => (r, 2.0),
    };
    let r2 = dot3(v, v);
    let w2 = 1.0 + r2;
    let rc = radial_coeffs(pot, r2.sqrt());
    let lg = weight.log_grad(v);
    let u = r2.sqrt();
    let b_lg = if u == 0.0 { 0.0 } else { rc.beta * dot3(lg, v) / u };
    Ok(b_lg
        + r * s * rc.ell2 * w2.powf(0.5 * s - 1.0)
        + r * s * rc.ell1 * w2.powf(0.5 * s - 1.0)
        + r * s * (s - 2.0) * rc.ell1 * r2 * w2.powf(0.5 * s - 2.0)
        + r * r * s * s * rc.ell1 * r2 * w2.powf(s - 2.0))
}

/// Cutoff search result: the `(M, R)` pair together with the margins it was
/// verified with. Margins are the maxima over the radial check grid of
/// `multiplier - M chi_R + lambda + delta <v>^{gamma+sigma}` (plain) and the
/// same plus `M |grad chi_R|` (commutator); both must be <= 0.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CutoffWitness {
    pub spec: CutoffSpec,
    pub lambda: f64,
    pub delta: f64,
    /// Exponent `gamma + sigma` of the coercive tail term.
    pub sigma_power: f64,
    pub margin_plain: f64,
    pub margin_commutator: f64,
    /// Outer edge of the dense check grid (`4R`).
    pub check_radius: f64,
    pub check_points: usize,
}

/// Largest enforced multiplier value at radius `u`: always `phi~_{m,p}`,
/// and also `phi_{m,p}` whenever that route is admissible for this target
/// (finite `p`; Gaussian weights additionally need `lambda` below the
/// `phi` abscissa).
fn multiplier_max(pot: Potential, weight: Weight, p: f64, enforce_phi: bool, u: f64) -> f64 {
    let v = [u, 0.0, 0.0];
    let mut val = phi_tilde_mp(pot, weight, p, v).expect("validated earlier");
    if enforce_phi {
        val = val.max(phi_mp(pot, weight, p, v).expect("validated earlier"));
    }
    val
}

fn margins_on_grid(
    pot: Potential,
    weight: Weight,
    p: f64,
    enforce_phi: bool,
    lambda: f64,
    delta: f64,
    spec: CutoffSpec,
    points: usize,
) -> (f64, f64) {
    let sp = pot.gamma() + weight.sigma();
    let top = 4.0 * spec.r;
    let mut plain = f64::NEG_INFINITY;
    let mut comm = f64::NEG_INFINITY;
    let mut check = |u: f64| {
        let base = multiplier_max(pot, weight, p, enforce_phi, u)
            - spec.eval([u, 0.0, 0.0])
            + lambda
            + delta * (1.0 + u * u).powf(0.5 * sp);
        plain = plain.max(base);
        comm = comm.max(base + spec.grad_bound(u));
    };
    check(0.0);
    // log-spaced radii covering [4R * 1e-6, 4R]
    for j in 1..points {
        let t = j as f64 / (points - 1) as f64;
        check(top * 10f64.powf(-6.0 * (1.0 - t)));
    }
    // asymptotic spot checks beyond the grid
    for mult in [2.0, 4.0, 8.0] {
        check(top * mult);
    }
    (plain, comm)
}

/// Re-measure a witness's margins on a `points`-node check grid (the search
/// itself uses 512). Returns `(plain, commutator)` margins.
pub fn verify_cutoff(
    pot: Potential,
    weight: Weight,
    p: f64,
    lambda: f64,
    delta: f64,
    spec: CutoffSpec,
    points: usize,
) -> Result<(f64, f64)> {
    let absc = abscissa(pot, weight, p)?;
    if points < 2 || spec.r <= 0.0 {
        return Err(Error::Config("cutoff verification needs R > 0 and >= 2 points".into()));
    }
    let enforce_phi =
        p.is_finite() && absc.phi_value.map_or(false, |pv| lambda < pv);
    Ok(margins_on_grid(pot, weight, p, enforce_phi, lambda, delta, spec, points))
}

/// Constructive search for an absorption cutoff `(M, R)` such that both
/// multiplier routes satisfy
/// `multiplier(v) - M chi_R(v) <= -lambda - delta <v>^{gamma+sigma}`,
/// and remain so after adding the commutator term `M |grad chi_R|`.
///
/// Fails with `Infeasible` when `lambda` is at or above the abscissa, and
/// with `SearchExhausted` (carrying the best margin seen) when the doubling
/// search hits its caps, which happens when `delta` exceeds the asymptotic
/// coefficient left over at the requested `lambda`.
pub fn find_cutoff(
    pot: Potential,
    weight: Weight,
    p: f64,
    lambda: f64,
    delta: f64,
) -> Result<CutoffWitness> {
    let absc = abscissa(pot, weight, p)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("target rate must be positive, got lambda = {lambda}")));
    }
    if lambda >= absc.value {
        return Err(Error::Infeasible { lambda, abscissa: absc.value });
    }
    if !(delta > 0.0) || delta >= absc.value - lambda {
        return Err(Error::Config(format!(
            "margin delta must lie in (0, abscissa - lambda), got delta = {delta}"
        )));
    }
    let enforce_phi = p.is_finite() && absc.phi_value.map_or(false, |pv| lambda < pv);
    let sp = pot.gamma() + weight.sigma();
    // intermediate rate between lambda and the abscissa, leaving room for
    // both the delta tail and the commutator allowance
    let lbar = if absc.value.is_finite() {
        lambda + 0.5 * (absc.value - lambda - delta)
    } else {
        lambda + 0.5 * delta
    };
    let mul = |u: f64| multiplier_max(pot, weight, p, enforce_phi, u);
    let tail = |u: f64| mul(u) + lbar + delta * (1.0 + u * u).powf(0.5 * sp);

    // Step 1: radius beyond which the multiplier sits below -lbar - delta tail
    let mut r1 = 2.0f64;
    let mut best = f64::INFINITY;
    loop {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..=96 {
            let u = r1 * 2f64.powf(6.0 * j as f64 / 96.0); // [r1, 64 r1]
            worst = worst.max(tail(u));
        }
        if worst <= 0.0 {
            break;
        }
        best = best.min(worst);
        r1 *= 2.0;
        if r1 > 1e7 {
            return Err(Error::SearchExhausted(format!(
                "no asymptotic radius below 1e7 (best margin {best:.3e}); \
                 delta may exceed the asymptotic coefficient"
            )));
        }
    }
    // Step 2: amplitude handling the core [0, r1], sized against chi_{r1}
    let mut core = 0.0f64;
    for j in 0..=256 {
        let u = r1 * j as f64 / 256.0;
        core = core.max(tail(u));
    }
    let mut m_amp = 2f64.powf(core.max(1.0).log2().ceil());
    // Step 3: radius making the commutator allowance M C_chi / R small
    let mut r_out = r1.max(chi_sup_grad() * m_amp / (lbar - lambda));
    r_out = r1 * 2f64.powf(((r_out / r1).log2()).ceil().max(0.0));
    // final verification on the dense check grid, growing on failure
    for _ in 0..40 {
        let spec = CutoffSpec { m: m_amp, r: r_out };
        let (plain, comm) =
            margins_on_grid(pot, weight, p, enforce_phi, lambda, delta, spec, 512);
        if plain <= 0.0 && comm <= 0.0 {
            return Ok(CutoffWitness {
                spec,
                lambda,
                delta,
                sigma_power: sp,
                margin_plain: plain,
                margin_commutator: comm,
                check_radius: 4.0 * r_out,
                check_points: 512,
            });
        }
        best = best.min(plain.max(comm));
        if plain > 0.0 {
            m_amp *= 2.0;
        }
        if comm > 0.0 {
            r_out *= 2.0;
        }
        if m_amp > 1e12 || r_out > 1e7 {
            break;
        }
    }
    Err(Error::SearchExhausted(format!(
        "cutoff doubling search hit its caps (best margin {best:.3e})"
    )))
}

/// Norm selector for `norm_eval`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "space", rename_all = "kebab-case")]
pub enum SpaceTag {
    /// `||m f||_{L^p_{x,v}}`; `p = infinity` takes the sup.
    Lp { p: f64 },
    /// Anisotropic `H^1_{v,*}(m)`: tail-weighted value plus split gradient
    /// with weights `<v>^{gamma/2}` along `v` and `<v>^{(gamma+2)/2}`
    /// transverse, integrated over x.
    H1Star,
    /// The stronger `H^1_{v,**}(m)` with `<v>^{(gamma+2)/2}` on the value
    /// term.
    H1StarStar,
    /// Graded `H^3_x L^2_v`: j-th x-derivatives weighted by
    /// `m <v>^{-j(1-sigma/2)}`.
    HH3xL2,
    /// Graded `H^3_x (H^1_{v,*})` with the same per-order weight downgrade.
    HH3xH1Star,
}

fn weight_pow(v: [f64; 3], e: f64) -> f64 {
    (1.0 + v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).powf(0.5 * e)
}

/// Velocity-space `H^1_*`-type square at one spatial slice.
/// `value_pow` selects the weight exponent on the undifferentiated term:
/// `gamma + sigma` for the `*` norm, `gamma + 2` for the `**` norm.
fn h1_square(
    slice: &[f64],
    grid: &crate::grids::VelocityGrid,
    pot: Potential,
    mval: &dyn Fn([f64; 3]) -> f64,
    value_pow: f64,
) -> f64 {
    let gamma = pot.gamma();
    let grad = grid.gradient_compact(slice);
    let dv3 = grid.weight();
    let mut acc = 0.0;
    for i in 0..slice.len() {
        let v = grid.node(i);
        let m = mval(v);
        let g = [grad[0][i], grad[1][i], grad[2][i]];
        let (par, perp) = split_radial(v, g);
        let val = m * weight_pow(v, 0.5 * value_pow) * slice[i];
        let pv = m * weight_pow(v, 0.5 * gamma);
        let tv = m * weight_pow(v, 0.5 * (gamma + 2.0));
        acc += dv3
            * (val * val
                + pv * pv * dot3(par, par)
                + tv * tv * dot3(perp, perp));
    }
    acc
}

/// Iterated central x-derivative of order along the listed axes, periodic.
fn x_derivative(field: &DistributionField, axes: &[usize]) -> Vec<f64> {
    let space = field.space();
    let nx = space.nx();
    let nv = field.grid().len();
    let mut cur = field.values().to_vec();
    let scale = nx as f64 / 2.0; // 1/(2 dx)
    for &ax in axes {
        let mut next = vec![0.0; cur.len()];
        let node_count = space.node_count();
        for m in 0..node_count {
            let (i, j, k) = match space {
                SpatialGrid::Homogeneous => (0, 0, 0),
                SpatialGrid::Slab { .. } => (m, 0, 0),
                SpatialGrid::Box3 { nx } => (m / (nx * nx), (m / nx) % nx, m % nx),
            };
            let idx = [i, j, k];
            let mut up = idx;
            up[ax] = (idx[ax] + 1) % nx;
            let mut dn = idx;
            dn[ax] = (idx[ax] + nx - 1) % nx;
            let lin = |d: [usize; 3]| match space {
                SpatialGrid::Homogeneous => 0,
                SpatialGrid::Slab { .. } => d[0],
                SpatialGrid::Box3 { nx } => (d[0] * nx + d[1]) * nx + d[2],
            };
            let (u, d) = (lin(up), lin(dn));
            for q in 0..nv {
                next[m * nv + q] = (cur[u * nv + q] - cur[d * nv + q]) * scale;
            }
        }
        cur = next;
    }
    cur
}

/// Multi-indices of total order `ord` over the active spatial axes, with
/// their multinomial multiplicities.
fn x_multi_indices(dim: usize, ord: usize) -> Vec<(Vec<usize>, f64)> {
    if ord == 0 {
        return vec![(vec![], 1.0)];
    }
    let axes: Vec<usize> = match dim {
        1 => vec![0],
        3 => vec![0, 1, 2],
        _ => vec![],
    };
    let mut out: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut stack: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..ord {
        let mut nxt = Vec::new();
        for pre in &stack {
            let start = pre.last().copied().unwrap_or(0);
            for &a in axes.iter().filter(|&&a| a >= start) {
                let mut e = pre.clone();
                e.push(a);
                nxt.push(e);
            }
        }
        stack = nxt;
    }
    for comb in stack {
        // multiplicity ord! / (prod count_a!)
        let mut counts = [0usize; 3];
        for &a in &comb {
            counts[a] += 1;
        }
        let fact = |n: usize| (1..=n).product::<usize>() as f64;
        let mult = fact(ord) / (fact(counts[0]) * fact(counts[1]) * fact(counts[2]));
        out.push((comb, mult));
    }
    out
}

/// Weighted-space norm of a phase-space field.
///
/// The graded `H^3_x` tags require at least 8 spatial nodes per dimension;
/// on a homogeneous field they reduce exactly to their velocity-only parts.
pub fn norm_eval(
    f: &DistributionField,
    tag: SpaceTag,
    pot: Potential,
    weight: Weight,
) -> Result<f64> {
    let grid = *f.grid();
    let space = f.space();
    let nv = grid.len();
    let dv3 = grid.weight();
    let xw = space.x_weight();
    let sigma = weight.sigma();
    let gamma = pot.gamma();
    match tag {
        SpaceTag::Lp { p } => {
            if !(p >= 1.0) {
                return Err(Error::Config(format!(
                    "Lebesgue exponent must satisfy p >= 1, got {p}"
                )));
            }
            if p.is_infinite() {
                let mut best = 0.0f64;
                for xm in 0..space.node_count() {
                    let s = f.slice(xm);
                    for i in 0..nv {
                        best = best.max((weight.eval(grid.node(i)) * s[i]).abs());
                    }
                }
                return Ok(best);
            }
            let mut acc = 0.0;
            for xm in 0..space.node_count() {
                let s = f.slice(xm);
                for i in 0..nv {
                    acc += xw * dv3 * (weight.eval(grid.node(i)) * s[i]).abs().powf(p);
                }
            }
            Ok(acc.powf(1.0 / p))
        }
        SpaceTag::H1Star | SpaceTag::H1StarStar => {
            let vp = match tag {
                SpaceTag::H1Star => gamma + sigma,
                _ => gamma + 2.0,
            };
            let mut acc = 0.0;
            for xm in 0..space.node_count() {
                acc += xw * h1_square(f.slice(xm), &grid, pot, &|v| weight.eval(v), vp);
            }
            Ok(acc.sqrt())
        }
        SpaceTag::HH3xL2 | SpaceTag::HH3xH1Star => {
            if space.dim() > 0 && space.nx() < 8 {
                return Err(Error::Config(format!(
                    "graded x-regularity norms need at least 8 spatial nodes per dimension, got {}",
                    space.nx()
                )));
            }
            let mut acc = 0.0;
            for ord in 0..=3usize {
                if ord > 0 && space.dim() == 0 {
                    break;
                }
                let down = -(ord as f64) * (1.0 - 0.5 * sigma);
                for (axes, mult) in x_multi_indices(space.dim(), ord) {
                    let der = x_derivative(f, &axes);
                    for xm in 0..space.node_count() {
                        let s = &der[xm * nv..(xm + 1) * nv];
                        match tag {
                            SpaceTag::HH3xL2 => {
                                for i in 0..nv {
                                    let v = grid.node(i);
                                    let m = weight.eval(v) * weight_pow(v, down);
                                    acc += mult * xw * dv3 * (m * s[i]) * (m * s[i]);
                                }
                            }
                            _ => {
                                acc += mult
                                    * xw
                                    * h1_square(
                                        s,
                                        &grid,
                                        pot,
                                        &|v| weight.eval(v) * weight_pow(v, down),
                                        gamma + sigma,
                                    );
                            }
                        }
                    }
                }
            }
            Ok(acc.sqrt())
        }
    }
}
