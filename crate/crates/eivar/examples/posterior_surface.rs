//! Closed-form posterior-height moments under the emulator: prints an ASCII
//! heat map of the estimated unnormalized posterior mean for the banana
//! problem next to the analytic truth.

use eivar::design::make_initial_design;
use eivar::emulator::{emu_fit, Dataset, QPolicy};
use eivar::posterior::post_at;
use eivar::problems::get_problem;

const GLYPHS: &[u8] = b" .:-=+*#%@";

fn main() {
    let problem = get_problem("banana").expect("built-in");
    let design = make_initial_design(&problem.bounds, 40, 2);
    let outputs: Vec<Vec<f64>> = design
        .iter()
        .map(|theta| problem.evaluate(theta).expect("in bounds"))
        .collect();
    let data = Dataset::new(design, outputs).expect("consistent");
    let emu = emu_fit(&data, QPolicy::default(), 2).expect("fit");

    let rows = 18;
    let cols = 44;
    let mut estimate = vec![vec![0.0; cols]; rows];
    let mut truth = vec![vec![0.0; cols]; rows];
    let mut peak: f64 = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let t1 = problem.bounds.lower[0]
                + (c as f64 + 0.5) / cols as f64
                    * (problem.bounds.upper[0] - problem.bounds.lower[0]);
            let t2 = problem.bounds.upper[1]
                - (r as f64 + 0.5) / rows as f64
                    * (problem.bounds.upper[1] - problem.bounds.lower[1]);
            let theta = [t1, t2];
            estimate[r][c] = post_at(&emu, &problem.obs, &problem.prior, &theta)
                .expect("moments")
                .mean;
            truth[r][c] = problem.true_unnorm_posterior(&theta).expect("analytic");
            peak = peak.max(estimate[r][c]).max(truth[r][c]);
        }
    }

    let shade = |v: f64| {
        let i = ((v / peak) * (GLYPHS.len() - 1) as f64).round() as usize;
        GLYPHS[i.min(GLYPHS.len() - 1)] as char
    };
    println!("emulator posterior mean (40 runs)        analytic truth");
    for r in 0..rows {
        let left: String = (0..cols).map(|c| shade(estimate[r][c])).collect();
        let right: String = (0..cols).map(|c| shade(truth[r][c])).collect();
        println!("{left}  |  {right}");
    }
}
