//! Asynchronous (k, c, a) design: k simulated workers run jobs with
//! heterogeneous durations; every c completions trigger a refit that
//! acquires a new parameters, imputing still-running jobs with believer
//! updates. Compare the idle time against the synchronous batch run.

use eivar::acquisition::AcquisitionKind;
use eivar::design::{run_async, run_batch, ReferenceSpec, RunConfig};
use eivar::scheduler::idle_time;

fn main() {
    let mut cfg = RunConfig::new("frescolike", AcquisitionKind::Eivar);
    cfg.n0 = 12;
    cfg.n = 16;
    cfg.candidates = 30;
    cfg.reference = ReferenceSpec::Sample { count: 150 };
    cfg.seed = 3;
    cfg.workers = 4;

    cfg.batch = 4;
    let sync = run_batch(&cfg).expect("batch run");

    cfg.trigger = 2;
    cfg.per_trigger = 2;
    let async_ = run_async(&cfg).expect("async run");

    println!(
        "sync  (b=4):      final MAD {:.4e}, idle {:.2} worker-seconds",
        sync.final_mad().unwrap(),
        idle_time(&sync.job_trace, cfg.workers)
    );
    println!(
        "async (c=2, a=2): final MAD {:.4e}, idle {:.2} worker-seconds",
        async_.final_mad().unwrap(),
        idle_time(&async_.job_trace, cfg.workers)
    );
    let gens = async_.job_trace.iter().map(|j| j.generation_id).max().unwrap();
    println!("async run used {gens} acquisition generations");
}
