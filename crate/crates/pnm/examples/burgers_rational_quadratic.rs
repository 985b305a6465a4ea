//! Contrasts the default Matern tensor prior against an over-smooth
//! rational-quadratic prior on the homogeneous Burgers problem. The rational
//! quadratic gives a smaller error but badly over-confident uncertainty:
//! its Z-scores blow up as the temporal grid is refined.

use pnm::metrics::{sup_error, z_score};
use pnm::{
    burgers_homogeneous, default_prior, solve_pnm, Grid, LinearisationStrategy, SolveOptions,
    TensorKernel, UnivariateKernel,
};

fn main() -> pnm::Result<()> {
    let matern = default_prior((1, 2), 6.0, 3.0)?;
    let s3 = 3.0f64.sqrt();
    let rq = TensorKernel::new(
        UnivariateKernel::rational_quadratic(1.0, s3)?,
        UnivariateKernel::rational_quadratic(1.0, s3)?,
    );
    let options = SolveOptions::default();
    let m = 33;
    println!("homogeneous Burgers at m = {m}: Matern 3/2 x 5/2 vs rational quadratic");
    println!(
        "{:>4} {:>12} {:>10} {:>14} {:>12}",
        "n", "E_inf(Mat)", "Z(Mat)", "E_inf(RQ)", "Z(RQ)"
    );
    for n in [17, 33, 65] {
        let mut row = (0.0, 0.0, 0.0, 0.0);
        for (which, prior) in [(0, &matern), (1, &rq)] {
            let problem = burgers_homogeneous();
            let grid = Grid::for_problem(&problem, n, m)?;
            let report = solve_pnm(
                &problem,
                &grid,
                prior,
                &LinearisationStrategy::LagMean,
                &options,
            )?;
            let truth = report.truth_field(|t, x| problem.truth(t, x).unwrap());
            let e = sup_error(&report.mean_field, &truth)?;
            let z = z_score(
                &report.mean_field,
                &report.unit_std_field,
                report.sigma_hat,
                &truth,
                options.z_floor,
            )?
            .value;
            if which == 0 {
                row.0 = e;
                row.1 = z;
            } else {
                row.2 = e;
                row.3 = z;
            }
        }
        println!(
            "{:>4} {:>12.4e} {:>10.4} {:>14.4e} {:>12.4}",
            n, row.0, row.1, row.2, row.3
        );
    }
    Ok(())
}
