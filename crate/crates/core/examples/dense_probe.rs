//! Temporary measurement harness for the linearized module; prints the
//! numbers used to pin test tolerances. Not part of the shipped surface.

use landau::grids::VelocityGrid;
use landau::kernels::{maxwellian, CutoffSpec, Potential, Weight};
use landau::linearized::{
    assemble_operator, expm, null_candidates, project_pi0_slice, spectral_report,
    LinearizedOperator, OperatorTag,
};
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use std::time::Instant;

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn mixture(grid: &VelocityGrid, seed: u64, terms: usize) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut parts = Vec::new();
    for _ in 0..terms {
        let c = [
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        ];
        let s = rng.gen_range(0.6..1.4);
        let amp = rng.gen_range(-1.0..1.0);
        parts.push((c, s, amp));
    }
    grid.sample(|v| {
        parts
            .iter()
            .map(|(c, s, amp)| {
                let d2 = (v[0] - c[0]).powi(2) + (v[1] - c[1]).powi(2) + (v[2] - c[2]).powi(2);
                amp * (-d2 / (2.0 * s * s)).exp()
            })
            .sum()
    })
}

fn noise(nv: usize, seed: u64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..nv).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn main() {
    let pot05 = Potential::new(0.5).unwrap();

    println!("== 1. apply_l equilibrium residuals (gamma=0.5, L=5) ==");
    for n in [16usize, 24] {
        let grid = VelocityGrid::new(5.0, n).unwrap();
        let lin = LinearizedOperator::new(&grid, pot05).unwrap();
        let mu = grid.maxwellian();
        let e2: Vec<f64> = (0..grid.len())
            .map(|i| {
                let v = grid.node(i);
                (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) * mu[i]
            })
            .collect();
        let r1 = linf(&lin.apply_l(&mu));
        let r2 = linf(&lin.apply_l(&e2));
        println!("  N={n}: |L mu|_inf = {r1:.6e}   |L(|v|^2 mu)|_inf = {r2:.6e}");
    }

    println!("== 2. collision invariants of L(v1^3 mu) (gamma=0.5, L=6, N=16) ==");
    {
        let grid = VelocityGrid::new(6.0, 16).unwrap();
        let lin = LinearizedOperator::new(&grid, pot05).unwrap();
        let f: Vec<f64> = (0..grid.len())
            .map(|i| {
                let v = grid.node(i);
                v[0].powi(3) * maxwellian(v)
            })
            .collect();
        let lf = lin.apply_l(&f);
        let (mass, mom, en) = grid.moments_slice(&lf);
        println!(
            "  mass={:.3e} mom=({:.3e},{:.3e},{:.3e}) energy={:.3e} |Lf|_inf={:.3e}",
            mass, mom[0], mom[1], mom[2], en, linf(&lf)
        );
    }

    println!("== 3. split reassembly (gamma=-1, L=6, N=12, M=4, R=1.5) ==");
    {
        let grid = VelocityGrid::new(6.0, 12).unwrap();
        let lin = LinearizedOperator::new(&grid, Potential::new(-1.0).unwrap()).unwrap();
        let cut = CutoffSpec { m: 4.0, r: 1.5 };
        let f = noise(grid.len(), 7);
        let a = lin.apply_a(&f, &cut);
        let b = lin.apply_b(&f, &cut);
        let lam = lin.apply_lambda(&f);
        let mut d = 0.0f64;
        for i in 0..f.len() {
            d = d.max((a[i] + b[i] - lam[i]).abs());
        }
        println!("  |(A+B)f - Lambda f|_inf = {:.3e}  |Lambda f|_inf = {:.3e}  rel = {:.3e}",
            d, linf(&lam), d / linf(&lam));
    }

    println!("== 4. apply_lambda vs apply_l on smooth mixture (gamma=0.5, L=5) ==");
    for n in [16usize, 24] {
        let grid = VelocityGrid::new(5.0, n).unwrap();
        let lin = LinearizedOperator::new(&grid, pot05).unwrap();
        let f = mixture(&grid, 11, 4);
        let l1 = lin.apply_l(&f);
        let l2 = lin.apply_lambda(&f);
        let mut d = 0.0f64;
        for i in 0..f.len() {
            d = d.max((l1[i] - l2[i]).abs());
        }
        println!("  N={n}: |L - (A0+B0)|_inf = {d:.6e}  |Lf|_inf = {:.3e}", linf(&l1));
    }

    println!("== 5. dense A0 vs FFT applier after conjugation (gamma=-1, L=4, N=8) ==");
    {
        let grid = VelocityGrid::new(4.0, 8).unwrap();
        let pot = Potential::new(-1.0).unwrap();
        let lin = LinearizedOperator::new(&grid, pot).unwrap();
        let am = assemble_operator(&grid, pot, OperatorTag::A, CutoffSpec::ZERO, [0; 3], Weight::Gaussian { r: 0.25 }).unwrap();
        let mu = grid.maxwellian();
        let h = noise(grid.len(), 3);
        let f: Vec<f64> = (0..grid.len()).map(|i| mu[i].sqrt() * h[i]).collect();
        let dense: Vec<f64> = {
            let hv = Array1::from(h.iter().map(|&x| Complex64::new(x, 0.0)).collect::<Vec<_>>());
            am.mat.dot(&hv).iter().map(|c| c.re).collect()
        };
        let direct = lin.apply_a0(&f);
        let mut d = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..f.len() {
            let want = direct[i] / mu[i].sqrt();
            d = d.max((dense[i] - want).abs());
            scale = scale.max(want.abs());
        }
        println!("  max abs diff = {d:.3e}, scale = {scale:.3e}, rel = {:.3e}", d / scale);
        let mut sym = 0.0f64;
        for r in 0..grid.len() {
            for c in 0..r {
                sym = sym.max((am.mat[[r, c]] - am.mat[[c, r]]).norm());
            }
        }
        println!("  dense A0 symmetry defect = {sym:.3e}");
    }

    println!("== 6/7. Dirichlet matrix spectra (gamma=0) ==");
    for (l, n) in [(6.0, 12usize), (5.0, 12), (6.0, 16), (5.0, 16)] {
        let grid = VelocityGrid::new(l, n).unwrap();
        let pot = Potential::new(0.0).unwrap();
        let t0 = Instant::now();
        let lm = assemble_operator(&grid, pot, OperatorTag::L, CutoffSpec::ZERO, [0; 3], Weight::Gaussian { r: 0.25 }).unwrap();
        let t_asm = t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let rep = spectral_report(&lm).unwrap();
        let t_eig = t0.elapsed().as_secs_f64();
        let small: Vec<String> = {
            let mut mods: Vec<f64> = rep.eigenvalues.iter().map(|x| x.norm()).collect();
            mods.sort_by(f64::total_cmp);
            mods.iter().take(7).map(|m| format!("{m:.2e}")).collect()
        };
        println!(
            "  L={l} N={n}: asm {t_asm:.1}s eig {t_eig:.1}s method={} defect={:.1e} null_count={} null_tol={:.3e} gap={:?}",
            rep.method, rep.hermitian_defect, rep.null_count, rep.null_tol, rep.gap
        );
        println!("    7 smallest |lambda|: {}", small.join(" "));
        println!("    null residuals: {:?}", rep.null_residuals.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>());
        // Rayleigh quotients against the Maxwell closed forms
        let mu = grid.maxwellian();
        let polys: [(&str, Box<dyn Fn([f64; 3]) -> f64>, f64); 4] = [
            ("v1 v2", Box::new(|v: [f64; 3]| v[0] * v[1]), -12.0),
            ("|v|^4-10|v|^2+15", Box::new(|v: [f64; 3]| {
                let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
                r2 * r2 - 10.0 * r2 + 15.0
            }), -8.0),
            ("v1(|v|^2-5)", Box::new(|v: [f64; 3]| {
                let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
                v[0] * (r2 - 5.0)
            }), -8.0),
            ("v1(v2^2-v3^2)", Box::new(|v: [f64; 3]| v[0] * (v[1] * v[1] - v[2] * v[2])), -18.0),
        ];
        for (name, p, lam) in &polys {
            let mut h = vec![0.0f64; grid.len()];
            for i in 0..grid.len() {
                h[i] = mu[i].sqrt() * p(grid.node(i));
            }
            let nrm: f64 = h.iter().map(|x| x * x).sum::<f64>().sqrt();
            let hv = Array1::from(h.iter().map(|&x| Complex64::new(x / nrm, 0.0)).collect::<Vec<_>>());
            let mh = lm.mat.dot(&hv);
            let rq: f64 = hv.iter().zip(mh.iter()).map(|(a, b)| (a.conj() * b).re).sum();
            let res: f64 = hv
                .iter()
                .zip(mh.iter())
                .map(|(a, b)| (b - a * Complex64::new(rq, 0.0)).norm_sqr())
                .sum::<f64>()
                .sqrt();
            println!("    RQ[{name}] = {rq:.4} (want {lam})  eigres = {res:.3e}");
        }
    }

    println!("== 8. hard-end null space (gamma=1, L=5, N=10) ==");
    {
        let grid = VelocityGrid::new(5.0, 10).unwrap();
        let pot = Potential::new(1.0).unwrap();
        let lm = assemble_operator(&grid, pot, OperatorTag::L, CutoffSpec::ZERO, [0; 3], Weight::Gaussian { r: 0.25 }).unwrap();
        let rep = spectral_report(&lm).unwrap();
        println!(
            "  null_count={} null_tol={:.3e} gap={:?} residuals={:?}",
            rep.null_count,
            rep.null_tol,
            rep.gap,
            rep.null_residuals.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>()
        );
    }

    println!("== 9. zgeev timings for mode-shifted generator (gamma=0, L=6) ==");
    for n in [8usize, 10, 12] {
        let grid = VelocityGrid::new(6.0, n).unwrap();
        let pot = Potential::new(0.0).unwrap();
        let lm = assemble_operator(&grid, pot, OperatorTag::Lambda, CutoffSpec::ZERO, [1, 0, 0], Weight::Gaussian { r: 0.25 }).unwrap();
        let t0 = Instant::now();
        let rep = spectral_report(&lm).unwrap();
        let t = t0.elapsed().as_secs_f64();
        println!(
            "  N={n} ({} nodes): eig {t:.1}s method={} null_count={} gap={:?}",
            grid.len(),
            rep.method,
            rep.null_count,
            rep.gap
        );
    }

    println!("== 10. Bm matvec vs stencil composition + adjoint pairing (N=8, L=4) ==");
    {
        let grid = VelocityGrid::new(4.0, 8).unwrap();
        let pot = Potential::new(-0.5).unwrap();
        let w = Weight::Polynomial { k: 6.0 };
        let cut = CutoffSpec { m: 2.0, r: 1.3 };
        let bm = assemble_operator(&grid, pot, OperatorTag::Bm, cut, [0, 1, 0], w).unwrap();
        let bs = assemble_operator(&grid, pot, OperatorTag::BmStar, cut, [0, 1, 0], w).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let h: Vec<Complex64> = (0..grid.len())
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let p: Vec<Complex64> = (0..grid.len())
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let hv = Array1::from(h.clone());
            let pv = Array1::from(p.clone());
            let bh = bm.mat.dot(&hv);
            let bsp = bs.mat.dot(&pv);
            let lhs: Complex64 = pv.iter().zip(bh.iter()).map(|(a, b)| a.conj() * b).sum();
            let rhs: Complex64 = bsp.iter().zip(hv.iter()).map(|(a, b)| a.conj() * b).sum();
            let scale: f64 = bh.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
                * pv.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            worst = worst.max((lhs - rhs).norm() / scale);
        }
        println!("  adjoint pairing worst rel defect over 100 pairs = {worst:.3e}");
    }

    println!("== 11. BmStar vs integration-by-parts formula on interior data (gamma=0, L=4) ==");
    for n in [8usize, 12, 16] {
        let grid = VelocityGrid::new(4.0, n).unwrap();
        let pot = Potential::new(0.0).unwrap();
        let w = Weight::Gaussian { r: 0.2 };
        let cut = CutoffSpec { m: 1.5, r: 1.0 };
        let bs = assemble_operator(&grid, pot, OperatorTag::BmStar, cut, [1, 0, 0], w).unwrap();
        let coeffs = landau::coefficients::mollify_coefficients(&grid, pot).unwrap();
        let phi: Vec<f64> = grid.sample(|v| {
            let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            (1.0 + v[0] + 0.5 * v[1] * v[2]) * (-2.0 * r2).exp()
        });
        let phiv = Array1::from(phi.iter().map(|&x| Complex64::new(x, 0.0)).collect::<Vec<_>>());
        let got = bs.mat.dot(&phiv);
        // adjoint formula: abar_ij d_ij phi + (2 bbar_j + 2 abar_ij lg_i) d_j phi
        //   + (abar_ij hess_m_ij/m + 2 bbar_j lg_j - M chi) phi + i (v.xi) phi
        let hess = grid.second_derivatives(&phi);
        let gradp = grid.gradient_compact(&phi);
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..grid.len() {
            let v = grid.node(i);
            let a = coeffs.abar_matrix(i);
            let lg = w.log_grad(v);
            let (hd, hq) = w.log_hess_coeffs(v);
            let mut s = 0.0;
            s += a[0][0] * hess[0][i] + a[1][1] * hess[1][i] + a[2][2] * hess[2][i];
            s += 2.0 * (a[0][1] * hess[3][i] + a[0][2] * hess[4][i] + a[1][2] * hess[5][i]);
            for j in 0..3 {
                let mut alg = 0.0;
                for k in 0..3 {
                    alg += a[k][j] * lg[k];
                }
                s += (2.0 * coeffs.bbar[j][i] + 2.0 * alg) * gradp[j][i];
            }
            let hessm = hd * (a[0][0] + a[1][1] + a[2][2]) + hq * coeffs.quadratic_form(i, v);
            let blg = coeffs.bbar[0][i] * lg[0] + coeffs.bbar[1][i] * lg[1] + coeffs.bbar[2][i] * lg[2];
            s += (hessm + 2.0 * blg - cut.eval(v)) * phi[i];
            let vxi = v[0] * 2.0 * std::f64::consts::PI;
            let want = Complex64::new(s, vxi * phi[i]);
            err = err.max((got[i] - want).norm());
            scale = scale.max(want.norm());
        }
        println!("  N={n}: |BmStar phi - formula|_inf = {err:.6e} (scale {scale:.3e})");
    }

    println!("== 12. projector idempotency + annihilation (L=6) ==");
    for n in [16usize, 24] {
        let grid = VelocityGrid::new(6.0, n).unwrap();
        let lin = LinearizedOperator::new(&grid, pot05).unwrap();
        let f = mixture(&grid, 23, 4);
        let p1 = project_pi0_slice(&grid, &f);
        let p2 = project_pi0_slice(&grid, &p1);
        let mut idem = 0.0f64;
        for i in 0..f.len() {
            idem = idem.max((p2[i] - p1[i]).abs());
        }
        let lf = lin.apply_l(&f);
        let plf = project_pi0_slice(&grid, &lf);
        let lam = lin.apply_lambda(&f);
        let plam = project_pi0_slice(&grid, &lam);
        println!(
            "  N={n}: idem={:.3e} (|P f|={:.3e})  |P L f|/|Lf| = {:.3e}  |P (A0+B0) f|/|.| = {:.3e}",
            idem,
            linf(&p1),
            linf(&plf) / linf(&lf),
            linf(&plam) / linf(&lam)
        );
        // projector reproduces kernel and cubic image
        let mu = grid.maxwellian();
        let v1mu: Vec<f64> = (0..grid.len()).map(|i| grid.node(i)[0] * mu[i]).collect();
        let v13mu: Vec<f64> = (0..grid.len()).map(|i| grid.node(i)[0].powi(3) * mu[i]).collect();
        let pmu = project_pi0_slice(&grid, &mu);
        let pv1 = project_pi0_slice(&grid, &v1mu);
        let pv13 = project_pi0_slice(&grid, &v13mu);
        let mut d1 = 0.0f64;
        let mut d2 = 0.0f64;
        let mut d3 = 0.0f64;
        for i in 0..grid.len() {
            d1 = d1.max((pmu[i] - mu[i]).abs());
            d2 = d2.max((pv1[i] - v1mu[i]).abs());
            d3 = d3.max((pv13[i] - 3.0 * v1mu[i]).abs());
        }
        println!("    |P mu - mu|={d1:.3e}  |P v1mu - v1mu|={d2:.3e}  |P v1^3mu - 3v1mu|={d3:.3e}");
    }

    println!("== 13. expm closed forms ==");
    {
        // rotation
        let th = 0.7f64;
        let mut m = Array2::<Complex64>::zeros((2, 2));
        m[[0, 1]] = Complex64::new(-th, 0.0);
        m[[1, 0]] = Complex64::new(th, 0.0);
        let e = expm(&m).unwrap();
        let err = (e[[0, 0]].re - th.cos()).abs().max((e[[1, 0]].re - th.sin()).abs());
        println!("  rotation err = {err:.3e}");
        // big-norm: 50 I + nilpotent
        let mut m2 = Array2::<Complex64>::zeros((2, 2));
        m2[[0, 0]] = Complex64::new(50.0, 0.0);
        m2[[1, 1]] = Complex64::new(50.0, 0.0);
        m2[[0, 1]] = Complex64::new(1.0, 0.0);
        let e2 = expm(&m2).unwrap();
        let want = 50f64.exp();
        let err2 = ((e2[[0, 0]].re - want) / want)
            .abs()
            .max(((e2[[0, 1]].re - want) / want).abs());
        println!("  e^50 upper-triangular rel err = {err2:.3e}");
        // time a 1728-dim expm on a scaled generator
        let grid = VelocityGrid::new(6.0, 12).unwrap();
        let pot = Potential::new(0.0).unwrap();
        let lm = assemble_operator(&grid, pot, OperatorTag::L, CutoffSpec::ZERO, [0; 3], Weight::Gaussian { r: 0.25 }).unwrap();
        let small = lm.mat.mapv(|x| x * Complex64::new(0.1, 0.0));
        let t0 = Instant::now();
        let e3 = expm(&small).unwrap();
        println!("  expm(0.1 L) at n=1728: {:.1}s, |result[0,0]|={:.3e}", t0.elapsed().as_secs_f64(), e3[[0, 0]].norm());
        // spot-check against eigendecomposition on the null directions:
        // e^{0.1 L} h0 = h0 for null candidates
        let cands = null_candidates(&grid);
        let hv = Array1::from(cands[4].iter().map(|&x| Complex64::new(x, 0.0)).collect::<Vec<_>>());
        let eh = e3.dot(&hv);
        let mut d = 0.0f64;
        for i in 0..grid.len() {
            d = d.max((eh[i] - hv[i]).norm());
        }
        println!("  |expm(0.1L) h_energy - h_energy|_inf = {d:.3e}");
    }
}
