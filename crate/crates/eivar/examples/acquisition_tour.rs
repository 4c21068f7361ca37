//! Scores one candidate list under every acquisition criterion and shows
//! which parameter each one would pick.

use eivar::acquisition::{select_with_score, AcquisitionContext, AcquisitionKind};
use eivar::design::{make_initial_design, reference_set, ReferenceSpec};
use eivar::emulator::{emu_fit, Dataset, QPolicy};
use eivar::problems::get_problem;

fn main() {
    let problem = get_problem("bimodal").expect("built-in");
    let design = make_initial_design(&problem.bounds, 15, 0);
    let outputs: Vec<Vec<f64>> = design
        .iter()
        .map(|theta| problem.evaluate(theta).expect("in bounds"))
        .collect();
    let data = Dataset::new(design, outputs).expect("consistent");
    let emu = emu_fit(&data, QPolicy::default(), 0).expect("fit");

    let reference = reference_set(&problem.bounds, &ReferenceSpec::Grid { per_dim: 20 }, 0);
    let candidates = reference_set(&problem.bounds, &ReferenceSpec::Sample { count: 50 }, 99);
    let ctx = AcquisitionContext::new(
        &emu,
        &problem.obs,
        &problem.prior,
        candidates,
        reference,
        &data,
    )
    .expect("context");

    // IMSE is 1-d only, so it is skipped for this 2-d problem
    for kind in [
        AcquisitionKind::Eivar,
        AcquisitionKind::Maxvar,
        AcquisitionKind::Maxexp,
        AcquisitionKind::Ei,
        AcquisitionKind::Rnd,
    ] {
        let (idx, score) = select_with_score(&ctx, kind, 123).expect("select");
        let theta = &ctx.candidates[idx];
        println!(
            "{kind:<7} picks candidate {idx:>2} at ({:>7.3}, {:>7.3}) with score {score:.4e}",
            theta[0], theta[1]
        );
    }
}
