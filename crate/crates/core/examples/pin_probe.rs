//! Temporary diagnostic: does pinning the outer layer(s) to zero lift the
//! free-edge quasi-modes of the box-truncated Dirichlet form?

use landau::grids::VelocityGrid;
use landau::kernels::{CutoffSpec, Potential, Weight};
use landau::linearized::{assemble_operator, null_candidates, OperatorTag};
use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64;

fn main() {
    for (l, n, layers) in [
        (6.0f64, 12usize, 1usize),
        (6.0, 12, 2),
        (5.0, 12, 1),
        (5.0, 12, 2),
        (6.0, 16, 2),
    ] {
        let grid = VelocityGrid::new(l, n).unwrap();
        let pot = Potential::new(0.0).unwrap();
        let lm = assemble_operator(
            &grid,
            pot,
            OperatorTag::L,
            CutoffSpec::ZERO,
            [0; 3],
            Weight::Gaussian { r: 0.25 },
        )
        .unwrap();
        let nv = grid.len();
        let mut mat: Array2<Complex64> = lm.mat.clone();
        // pin: zero rows/cols of nodes within `layers` of any face, keep
        // the original diagonal so the parked states stay deep in the
        // spectrum
        let mut pinned = 0usize;
        for i in 0..nv {
            let idx = grid.idx3(i);
            let bd = idx.iter().any(|&j| j < layers || j >= n - layers);
            if bd {
                pinned += 1;
                for c in 0..nv {
                    if c != i {
                        mat[[i, c]] = Complex64::new(0.0, 0.0);
                        mat[[c, i]] = Complex64::new(0.0, 0.0);
                    }
                }
            }
        }
        let (vals, _) = mat.eigh(UPLO::Lower).unwrap();
        let maxmod = vals.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        let tol = 1e-6 * maxmod;
        let nulls = vals.iter().filter(|&&x| x.abs() < tol).count();
        let edge = vals
            .iter()
            .filter(|&&x| x.abs() >= tol)
            .fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        // residuals of the boundary-masked candidates under the pinned matrix
        let cands = null_candidates(&grid);
        let mut worst = 0.0f64;
        for c in &cands {
            let masked: Vec<Complex64> = (0..nv)
                .map(|i| {
                    let idx = grid.idx3(i);
                    let bd = idx.iter().any(|&j| j < layers || j >= n - layers);
                    if bd { Complex64::new(0.0, 0.0) } else { Complex64::new(c[i], 0.0) }
                })
                .collect();
            let hv = ndarray::Array1::from(masked);
            let nrm = hv.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let r = mat.dot(&hv);
            let num = r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            worst = worst.max(num / nrm);
        }
        println!(
            "L={l} N={n} layers={layers}: pinned={pinned}/{nv} max|lam|={maxmod:.3e} tol={tol:.3e} nulls={nulls} gap={:.4} worst-resid={worst:.3e}",
            -edge
        );
        // ten eigenvalues nearest zero from above (ascending order: tail)
        let show: Vec<String> = vals.iter().rev().take(10).map(|x| format!("{x:+.3e}")).collect();
        println!("  top of spectrum: {}", show.join(" "));
    }
}
