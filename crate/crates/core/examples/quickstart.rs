//! End-to-end smoke drive of the collision stack: build a velocity grid,
//! evaluate the collision operator at equilibrium and off it, and print the
//! conserved moments, entropy, and dissipation.

use landau::coefficients::radial_coeffs;
use landau::collision::{entropy_and_dissipation, CollisionOperator, EntropyOptions};
use landau::grids::{DistributionField, VelocityGrid};
use landau::kernels::{maxwellian, Potential};

fn main() -> landau::Result<()> {
    let grid = VelocityGrid::new(8.0, 24)?;
    let pot = Potential::new(0.0)?;
    let op = CollisionOperator::new(&grid, pot);

    let mu = grid.maxwellian();
    let q_eq = op.q_divergence_form(&mu, &mu);
    let linf = q_eq.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    println!("equilibrium residual  |Q(mu,mu)|_inf = {linf:.3e}");

    // a drifted two-Maxwellian mixture, well inside the box
    let f = grid.sample(|v| {
        let shifted = [v[0] - 1.2, v[1], v[2]];
        0.9 * maxwellian(v) + 0.1 * maxwellian(shifted)
    });
    let q = op.q_divergence_form(&f, &f);
    let (mass, mom, energy) = grid.moments_slice(&q);
    println!("collision moment defects: mass {mass:.2e}, momentum [{:.2e}, {:.2e}, {:.2e}], energy {energy:.2e}",
        mom[0], mom[1], mom[2]);

    let field = DistributionField::homogeneous(grid, f)?;
    let (h, d) = entropy_and_dissipation(&field, pot, &EntropyOptions::default())?;
    println!("mixture entropy H = {h:.6}, dissipation D = {d:.3e} (must be >= 0)");

    let rc = radial_coeffs(pot, 2.0);
    println!("radial coefficients at |v| = 2, gamma = 0: ell1 = {:.6}, ell2 = {:.6}",
        rc.ell1, rc.ell2);
    Ok(())
}
