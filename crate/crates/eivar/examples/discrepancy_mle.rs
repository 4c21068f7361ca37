//! Calibration with an unknown error covariance: jointly estimates the
//! ancillary parameters (observation noise, discrepancy amplitude and range)
//! and the simulator parameter on the 1-d discrepancy toy, where the data
//! were generated with a polynomial bias plus noise.

use eivar::design::make_initial_design;
use eivar::emulator::{emu_fit, Dataset, QPolicy};
use eivar::posterior::{fit_ancillary, AncillaryBounds};
use eivar::problems::get_problem;

fn main() {
    let problem = get_problem("discrepancy-toy").expect("built-in");
    let design = make_initial_design(&problem.bounds, 40, 0);
    let outputs: Vec<Vec<f64>> = design
        .iter()
        .map(|theta| problem.evaluate(theta).expect("in bounds"))
        .collect();
    let data = Dataset::new(design, outputs).expect("consistent");
    let emu = emu_fit(&data, QPolicy::default(), 0).expect("fit");

    let design_points: Vec<Vec<f64>> = problem
        .design_points()
        .expect("toy has design points")
        .iter()
        .map(|&x| vec![x])
        .collect();
    let (ancillary, theta_hat) = fit_ancillary(
        &data,
        &emu,
        &problem.obs.data,
        design_points,
        &AncillaryBounds::default(),
        &problem.bounds,
        0,
    )
    .expect("mle");

    println!("truth:     sigma_eps^2 = 0.0400, theta = {:.4}", std::f64::consts::PI / 5.0);
    println!(
        "estimated: sigma_eps^2 = {:.4}, sigma_b^2 = {:.4}, lambda = {:.4}, theta = {:.4}",
        ancillary.sigma_eps_sq, ancillary.sigma_b_sq, ancillary.lambda, theta_hat[0]
    );
}
