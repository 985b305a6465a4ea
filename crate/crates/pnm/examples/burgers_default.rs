//! Solves the homogeneous Burgers problem with the default Matern tensor
//! prior and prints accuracy (E_inf) and calibration (Z) against the
//! closed-form solution for a sweep of temporal grid sizes.

use pnm::metrics::{sup_error, z_score};
use pnm::{
    burgers_homogeneous, default_prior, solve_pnm, Grid, LinearisationStrategy, SolveOptions,
};
use std::time::Instant;

fn main() -> pnm::Result<()> {
    let prior = default_prior((1, 2), 6.0, 3.0)?;
    let options = SolveOptions::default();
    let m = 65;
    println!("homogeneous Burgers, Matern 3/2 x 5/2 prior, m = {m}");
    println!("{:>4} {:>12} {:>10} {:>10} {:>8}", "n", "E_inf", "Z", "sigma^", "secs");
    for n in [9, 17, 33, 65] {
        let start = Instant::now();
        let problem = burgers_homogeneous();
        let grid = Grid::for_problem(&problem, n, m)?;
        let report = solve_pnm(
            &problem,
            &grid,
            &prior,
            &LinearisationStrategy::LagMean,
            &options,
        )?;
        let truth = report.truth_field(|t, x| problem.truth(t, x).unwrap());
        let e_inf = sup_error(&report.mean_field, &truth)?;
        let z = z_score(
            &report.mean_field,
            &report.unit_std_field,
            report.sigma_hat,
            &truth,
            options.z_floor,
        )?;
        println!(
            "{:>4} {:>12.5e} {:>10.4} {:>10.4} {:>8.1}",
            n,
            e_inf,
            z.value,
            report.sigma_hat,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
