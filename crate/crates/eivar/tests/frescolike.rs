//! Batch-size insensitivity on the fresco-like surrogate (p = 3, d = 15):
//! acquiring in large batches should not cost much final accuracy relative
//! to fully sequential acquisition.

use eivar::acquisition::AcquisitionKind;
use eivar::design::{run_batch, run_sequential, ReferenceSpec, RunConfig};

fn final_mad(n0: usize, n: usize, batch: usize, seed: u64) -> f64 {
    let mut cfg = RunConfig::new("frescolike", AcquisitionKind::Eivar);
    cfg.n0 = n0;
    cfg.n = n;
    cfg.batch = batch;
    cfg.workers = batch.max(1);
    cfg.candidates = 50;
    cfg.reference = ReferenceSpec::Sample { count: 200 };
    cfg.seed = seed;
    let result = if batch > 1 {
        run_batch(&cfg).expect("batch run")
    } else {
        run_sequential(&cfg).expect("sequential run")
    };
    result.final_mad().expect("non-empty trace")
}

#[test]
fn batching_costs_little_accuracy_scaled() {
    let mad_seq = final_mad(16, 32, 1, 7);
    let mad_batched = final_mad(16, 32, 8, 7);
    assert!(
        mad_seq <= 1.5 * mad_batched,
        "sequential MAD {mad_seq:.3e} vs batched {mad_batched:.3e}"
    );
}

// full-scale replica of the batch comparison; takes hours on one core
// (400 sequential refits), run with `cargo test --test frescolike -- --ignored`
#[test]
#[ignore]
fn batching_costs_little_accuracy_full_scale() {
    let mad_seq = final_mad(32, 400, 1, 7);
    let mad_batched = final_mad(32, 400, 32, 7);
    assert!(
        mad_seq <= 1.5 * mad_batched,
        "sequential MAD {mad_seq:.3e} vs batched {mad_batched:.3e}"
    );
}
