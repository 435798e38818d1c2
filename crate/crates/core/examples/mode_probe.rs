//! Temporary diagnostic: where do the spurious near-null modes of the
//! Dirichlet-form matrix live?

use landau::grids::VelocityGrid;
use landau::kernels::{CutoffSpec, Potential, Weight};
use landau::linearized::{assemble_operator, OperatorTag};
use ndarray_linalg::{Eigh, UPLO};

fn main() {
    for (l, n) in [(6.0f64, 12usize), (5.0, 12)] {
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
        let (vals, vecs) = lm.mat.eigh(UPLO::Lower).unwrap();
        let nv = grid.len();
        // eigh ascending: most negative first; near-nulls at the end
        println!("== L={l} N={n}: last 16 eigenvalues ==");
        for k in (nv - 16)..nv {
            let lam = vals[k];
            let col = vecs.column(k);
            // shell masses by sup-norm radius
            let mut shells = [0.0f64; 4];
            // shell masses by euclidean radius
            let mut rshell = [0.0f64; 4];
            let mut boundary = 0.0f64;
            let mut total = 0.0f64;
            // oscillation measure along axis 3 (unit stride)
            let mut osc = 0.0f64;
            let mut oscn = 0.0f64;
            for i in 0..nv {
                let v = grid.node(i);
                let idx = grid.idx3(i);
                let h2 = col[i].norm_sqr();
                total += h2;
                let sup = v[0].abs().max(v[1].abs()).max(v[2].abs());
                let s = ((sup / l) * 4.0).min(3.999) as usize;
                shells[s] += h2;
                let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                let rs = ((r / (1.7321 * l)) * 4.0).min(3.999) as usize;
                rshell[rs] += h2;
                if idx.iter().any(|&j| j == 0 || j == n - 1) {
                    boundary += h2;
                }
                if idx[2] + 1 < n {
                    osc += (col[i].conj() * col[i + 1]).re;
                    oscn += h2;
                }
            }
            println!(
                "  lam={:+.4e}  sup-shells=[{:.2} {:.2} {:.2} {:.2}] r-shells=[{:.2} {:.2} {:.2} {:.2}] bdry={:.2} osc={:+.2}",
                lam,
                shells[0] / total,
                shells[1] / total,
                shells[2] / total,
                shells[3] / total,
                rshell[0] / total,
                rshell[1] / total,
                rshell[2] / total,
                rshell[3] / total,
                boundary / total,
                osc / oscn
            );
        }
    }
}
