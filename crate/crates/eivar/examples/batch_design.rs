//! Batch-synchronous design with the kriging-believer heuristic: each stage
//! refits the emulator, picks b parameters by chaining believer updates, and
//! runs all b simulations in parallel before the next stage.

use eivar::acquisition::AcquisitionKind;
use eivar::design::{run_batch, ReferenceSpec, RunConfig};

fn main() {
    for b in [2, 4, 8] {
        let mut cfg = RunConfig::new("banana", AcquisitionKind::Eivar);
        cfg.n0 = 10;
        cfg.n = 24;
        cfg.batch = b;
        cfg.candidates = 40;
        cfg.reference = ReferenceSpec::Sample { count: 200 };
        cfg.seed = 7;

        let result = run_batch(&cfg).expect("run");
        let stages = result.acquisitions.iter().map(|a| a.stage).max().unwrap();
        println!(
            "b={b:>2}: {} acquisitions over {} stages, final MAD {:.4e}, makespan {:.1}s",
            result.acquisitions.len(),
            stages,
            result.final_mad().unwrap(),
            result.job_trace.iter().map(|j| j.end_time).fold(0.0, f64::max),
        );
    }
}
