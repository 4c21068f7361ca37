//! Sequential, batch, and asynchronous design drivers: fit the emulator,
//! score candidates, dispatch simulations through the scheduler, and track
//! posterior accuracy (MAD) per completed acquisition.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acquisition::{select_with_score, AcquisitionContext, AcquisitionKind};
use crate::emulator::{emu_fit_warm, Dataset, PcgpEmulator, QPolicy};
use crate::error::Error;
use crate::gp::lhs_in_box;
use crate::posterior::post_at;
use crate::problems::{get_problem, Problem};
use crate::scheduler::{Evaluator, Job, JobStatus, WorkerPool};
use crate::Bounds;

/// Reference set over which posterior accuracy is measured and EIVAR
/// integrates.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReferenceSpec {
    /// Full tensor grid, `per_dim` points per dimension.
    Grid { per_dim: usize },
    /// Uniform prior sample of the given size.
    Sample { count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Believer {
    /// Pending points imputed with the emulator's predictive mean.
    Believer,
    /// Pending points imputed with the training-output mean.
    Liar,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StoppingRule {
    /// Stop after `n` completed acquisitions (the default).
    Count,
    /// Stop early once the reference MAD drops below the threshold.
    Mad { threshold: f64 },
}

fn default_n0() -> usize { 10 }
fn default_n() -> usize { 50 }
fn default_one() -> usize { 1 }
fn default_candidates() -> usize { 100 }
fn default_reference() -> ReferenceSpec { ReferenceSpec::Sample { count: 500 } }
fn default_believer() -> Believer { Believer::Believer }
fn default_stopping() -> StoppingRule { StoppingRule::Count }

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    pub acquisition: AcquisitionKind,
    #[serde(default = "default_n0")]
    pub n0: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    /// batch size b for the batch driver
    #[serde(default = "default_one")]
    pub batch: usize,
    /// async worker count k
    #[serde(default = "default_one")]
    pub workers: usize,
    /// completions per acquisition trigger c
    #[serde(default = "default_one")]
    pub trigger: usize,
    /// parameters acquired per trigger a
    #[serde(default = "default_one")]
    pub per_trigger: usize,
    /// candidate list size L
    #[serde(default = "default_candidates")]
    pub candidates: usize,
    #[serde(default = "default_reference")]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_believer")]
    pub believer: Believer,
    #[serde(default = "default_stopping")]
    pub stopping: StoppingRule,
}

impl RunConfig {
    pub fn new(problem: &str, acquisition: AcquisitionKind) -> Self {
        Self {
            problem: problem.to_string(),
            acquisition,
            n0: 10,
            n: 50,
            batch: 1,
            workers: 1,
            trigger: 1,
            per_trigger: 1,
            candidates: 100,
            reference: ReferenceSpec::Sample { count: 500 },
            seed: 0,
            believer: Believer::Believer,
            stopping: StoppingRule::Count,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.n0 < 2 {
            return Err(Error::ConfigInvalid("n0 must be at least 2".into()));
        }
        if self.batch < 1 {
            return Err(Error::ConfigInvalid("batch must be at least 1".into()));
        }
        if self.batch > 1 && self.n % self.batch != 0 {
            return Err(Error::ConfigInvalid(
                "n must be divisible by the batch size".into(),
            ));
        }
        if self.workers < 1 || self.trigger < 1 || self.per_trigger < 1 {
            return Err(Error::ConfigInvalid(
                "workers, trigger, and per_trigger must be at least 1".into(),
            ));
        }
        if self.trigger > self.workers {
            return Err(Error::ConfigInvalid(
                "trigger cannot exceed the worker count".into(),
            ));
        }
        if self.candidates == 0 {
            return Err(Error::ConfigInvalid("candidate size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Acquisition {
    pub stage: usize,
    pub theta: Vec<f64>,
    pub eta: Vec<f64>,
    pub score: f64,
    pub t_start: f64,
    pub t_end: f64,
}

pub struct RunResult {
    pub acquisitions: Vec<Acquisition>,
    /// MAD against the analytic truth after each completed acquisition.
    pub mad_trace: Vec<f64>,
    pub job_trace: Vec<Job>,
    pub reference: Vec<Vec<f64>>,
    pub truth: Vec<f64>,
    pub final_emulator: Option<PcgpEmulator>,
    /// true when a simulator failure forced an early stop
    pub aborted: bool,
}

impl RunResult {
    pub fn final_mad(&self) -> Option<f64> {
        self.mad_trace.last().copied()
    }
}

/// Mean absolute difference between two density vectors.
pub fn mad(reference_truth: &[f64], estimate: &[f64]) -> Result<f64, Error> {
    if reference_truth.len() != estimate.len() {
        return Err(Error::LengthMismatch {
            left: reference_truth.len(),
            right: estimate.len(),
        });
    }
    let n = reference_truth.len().max(1);
    Ok(reference_truth
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n as f64)
}

/// Seeded Latin hypercube over the prior box.
pub fn make_initial_design(bounds: &Bounds, n0: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lhs_in_box(&bounds.lower, &bounds.upper, n0, &mut rng)
}

pub fn reference_set(bounds: &Bounds, spec: &ReferenceSpec, seed: u64) -> Vec<Vec<f64>> {
    match spec {
        ReferenceSpec::Grid { per_dim } => {
            let p = bounds.dim();
            let m = (*per_dim).max(1);
            let total = m.pow(p as u32);
            let mut out = Vec::with_capacity(total);
            for flat in 0..total {
                let mut idx = flat;
                let mut theta = Vec::with_capacity(p);
                for dim in 0..p {
                    let i = idx % m;
                    idx /= m;
                    let frac = if m == 1 { 0.5 } else { i as f64 / (m - 1) as f64 };
                    theta.push(bounds.lower[dim] + frac * (bounds.upper[dim] - bounds.lower[dim]));
                }
                out.push(theta);
            }
            out
        }
        ReferenceSpec::Sample { count } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e1f);
            (0..*count).map(|_| bounds.sample_uniform(&mut rng)).collect()
        }
    }
}

struct Driver<'a> {
    problem: &'a Problem,
    cfg: &'a RunConfig,
    pool: WorkerPool,
    data: Dataset,
    emulator: Option<PcgpEmulator>,
    reference: Vec<Vec<f64>>,
    truth: Vec<f64>,
    rng: ChaCha8Rng,
    acquisitions: Vec<Acquisition>,
    mad_trace: Vec<f64>,
    stage: usize,
    aborted: bool,
}

impl<'a> Driver<'a> {
    fn new(
        problem: &'a Problem,
        cfg: &'a RunConfig,
        workers: usize,
        evaluator: Option<Evaluator>,
    ) -> Result<Self, Error> {
        cfg.validate()?;
        let evaluator = evaluator.unwrap_or_else(|| {
            let p = problem.clone();
            Arc::new(move |theta: &[f64]| p.evaluate(theta).map_err(|e| e.to_string()))
        });
        let pool = WorkerPool::simulated(
            workers,
            problem.duration_model.clone(),
            cfg.seed,
            Some(evaluator),
        );
        let reference = reference_set(&problem.bounds, &cfg.reference, cfg.seed);
        let truth = reference
            .iter()
            .map(|theta| problem.true_unnorm_posterior(theta))
            .collect::<Result<Vec<f64>, Error>>()?;
        Ok(Self {
            problem,
            cfg,
            pool,
            data: Dataset::new(Vec::new(), Vec::new())?,
            emulator: None,
            reference,
            truth,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed)),
            acquisitions: Vec::new(),
            mad_trace: Vec::new(),
            stage: 0,
            aborted: false,
        })
    }

    /// Evaluates the seeded LHS initial design as generation 0 and waits for
    /// all of it before the first fit.
    fn run_initial(&mut self) -> Result<(), Error> {
        let design = make_initial_design(&self.problem.bounds, self.cfg.n0, self.cfg.seed);
        for theta in design {
            self.pool.submit(theta, 0)?;
        }
        let jobs = self.pool.await_completions(self.cfg.n0)?;
        for job in jobs {
            match job.status {
                JobStatus::Done => self.data.push(job.theta, job.output.unwrap()),
                _ => {
                    // a failed initial point is dropped; fitting needs >= 2
                    if self.data.len() + self.pool.outstanding() < 2 {
                        self.aborted = true;
                    }
                }
            }
        }
        if self.data.len() < 2 {
            return Err(Error::DegenerateData);
        }
        self.refit()?;
        Ok(())
    }

    fn refit(&mut self) -> Result<(), Error> {
        let emu = emu_fit_warm(
            &self.data,
            QPolicy::default(),
            self.cfg.seed.wrapping_add(self.stage as u64),
            self.emulator.as_ref(),
        )?;
        self.emulator = Some(emu);
        Ok(())
    }

    fn current_mad(&self) -> Result<f64, Error> {
        let emu = self.emulator.as_ref().expect("fitted");
        let estimate = self
            .reference
            .iter()
            .map(|theta| {
                post_at(emu, &self.problem.obs, &self.problem.prior, theta).map(|m| m.mean)
            })
            .collect::<Result<Vec<f64>, Error>>()?;
        mad(&self.truth, &estimate)
    }

    fn sample_candidates(&mut self) -> Vec<Vec<f64>> {
        (0..self.cfg.candidates)
            .map(|_| self.problem.bounds.sample_uniform(&mut self.rng))
            .collect()
    }

    /// Picks `count` parameters from one candidate list, chaining
    /// believer/liar updates between picks; pending points are already
    /// imputed in `emu`.
    fn acquire_chain(
        &mut self,
        emu: PcgpEmulator,
        count: usize,
        pending: &Dataset,
    ) -> Result<Vec<(Vec<f64>, f64)>, Error> {
        let mut emu = emu;
        let mut candidates = self.sample_candidates();
        let mut picked = Vec::with_capacity(count);
        for pick in 0..count {
            let ctx = AcquisitionContext::new(
                &emu,
                &self.problem.obs,
                &self.problem.prior,
                candidates.clone(),
                self.reference.clone(),
                pending,
            )?;
            let seed = self
                .cfg
                .seed
                .wrapping_add((self.stage as u64) << 16)
                .wrapping_add(pick as u64);
            let (idx, score) = select_with_score(&ctx, self.cfg.acquisition, seed)?;
            let theta = candidates.remove(idx);
            if pick + 1 < count {
                emu = match self.cfg.believer {
                    Believer::Believer => emu.believe(&theta),
                    Believer::Liar => {
                        let lie = emu.center().to_vec();
                        emu.liar(&theta, &lie)?
                    }
                };
            }
            picked.push((theta, score));
        }
        Ok(picked)
    }

    /// Imputes all pending (dispatched, incomplete) parameters into a clone
    /// of the fitted emulator.
    fn emulator_with_pending(&self) -> Result<PcgpEmulator, Error> {
        let emu = self.emulator.as_ref().expect("fitted").clone();
        let mut out = emu;
        for theta in &self.data.pending {
            out = match self.cfg.believer {
                Believer::Believer => out.believe(theta),
                Believer::Liar => {
                    let lie = out.center().to_vec();
                    out.liar(theta, &lie)?
                }
            };
        }
        Ok(out)
    }

    fn record_completion(&mut self, job: Job, score: f64) {
        self.acquisitions.push(Acquisition {
            stage: self.stage,
            theta: job.theta.clone(),
            eta: job.output.clone().unwrap_or_default(),
            score,
            t_start: job.start_time,
            t_end: job.end_time,
        });
        self.data.push(job.theta, job.output.unwrap());
    }

    fn should_stop(&self) -> bool {
        match &self.cfg.stopping {
            StoppingRule::Count => false,
            StoppingRule::Mad { threshold } => self
                .mad_trace
                .last()
                .is_some_and(|&m| m <= *threshold),
        }
    }

    fn finish(mut self) -> RunResult {
        let job_trace = self.pool.trace().to_vec();
        self.pool.close();
        RunResult {
            acquisitions: self.acquisitions,
            mad_trace: self.mad_trace,
            job_trace,
            reference: self.reference,
            truth: self.truth,
            final_emulator: self.emulator,
            aborted: self.aborted,
        }
    }
}

/// One-at-a-time sequential design.
pub fn run_sequential(cfg: &RunConfig) -> Result<RunResult, Error> {
    let problem = get_problem(&cfg.problem)?;
    run_sequential_on(&problem, cfg, None)
}

pub fn run_sequential_on(
    problem: &Problem,
    cfg: &RunConfig,
    evaluator: Option<Evaluator>,
) -> Result<RunResult, Error> {
    let mut driver = Driver::new(problem, cfg, 1, evaluator)?;
    driver.run_initial()?;
    let mut completed = 0;
    let mut failures = 0;
    while completed < cfg.n && !driver.should_stop() {
        driver.stage += 1;
        // budget conservation: completed + pending + remaining == n
        debug_assert_eq!(completed + driver.pool.outstanding() + (cfg.n - completed), cfg.n);
        let emu = driver.emulator.as_ref().unwrap().clone();
        let history = driver.data.clone();
        let picked = driver.acquire_chain(emu, 1, &history)?;
        let (theta, score) = picked.into_iter().next().unwrap();
        driver.pool.submit(theta, driver.stage)?;
        let job = driver.pool.await_completions(1)?.pop().unwrap();
        match job.status {
            JobStatus::Done => {
                driver.record_completion(job, score);
                completed += 1;
                driver.refit()?;
                let m = driver.current_mad()?;
                driver.mad_trace.push(m);
            }
            _ => {
                // failed job: parameter dropped, budget not consumed
                failures += 1;
                if failures > 10 * cfg.n.max(1) {
                    driver.aborted = true;
                    break;
                }
            }
        }
    }
    Ok(driver.finish())
}

/// Synchronous batch design with believer/liar multi-acquisition.
pub fn run_batch(cfg: &RunConfig) -> Result<RunResult, Error> {
    let problem = get_problem(&cfg.problem)?;
    run_batch_on(&problem, cfg, None)
}

pub fn run_batch_on(
    problem: &Problem,
    cfg: &RunConfig,
    evaluator: Option<Evaluator>,
) -> Result<RunResult, Error> {
    let b = cfg.batch;
    let mut driver = Driver::new(problem, cfg, b.max(1), evaluator)?;
    driver.run_initial()?;
    let mut completed = 0;
    while completed < cfg.n && !driver.should_stop() {
        driver.stage += 1;
        let take = b.min(cfg.n - completed);
        let emu = driver.emulator.as_ref().unwrap().clone();
        let history = driver.data.clone();
        let picked = driver.acquire_chain(emu, take, &history)?;
        let mut scores = std::collections::HashMap::new();
        for (theta, score) in picked {
            let id = driver.pool.submit(theta, driver.stage)?;
            scores.insert(id, score);
        }
        let jobs = driver.pool.await_completions(take)?;
        let mut newly = 0;
        for job in jobs {
            if job.status == JobStatus::Done {
                let score = scores[&job.id];
                driver.record_completion(job, score);
                newly += 1;
            }
        }
        if newly > 0 {
            completed += newly;
            driver.refit()?;
            let m = driver.current_mad()?;
            for _ in 0..newly {
                driver.mad_trace.push(m);
            }
        } else if driver.stage > 10 * (cfg.n / b.max(1)).max(1) {
            driver.aborted = true;
            break;
        }
    }
    Ok(driver.finish())
}

/// Asynchronous design: after the initial design completes, every `trigger`
/// completions refit and acquire `per_trigger` new parameters, imputing
/// still-pending jobs with believer/liar updates.
pub fn run_async(cfg: &RunConfig) -> Result<RunResult, Error> {
    let problem = get_problem(&cfg.problem)?;
    run_async_on(&problem, cfg, None)
}

pub fn run_async_on(
    problem: &Problem,
    cfg: &RunConfig,
    evaluator: Option<Evaluator>,
) -> Result<RunResult, Error> {
    let (k, c, a) = (cfg.workers, cfg.trigger, cfg.per_trigger);
    let mut driver = Driver::new(problem, cfg, k, evaluator)?;
    driver.run_initial()?;
    let mut completed = 0; // completed acquisitions
    let mut submitted = 0; // dispatched acquisitions (incl. pending)
    let mut scores: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
    let mut since_trigger = 0;

    // first trigger fires immediately after the initial design
    while completed < cfg.n && !driver.should_stop() {
        // conservation: completed + pending + remaining-to-dispatch == n
        debug_assert_eq!(completed + driver.data.pending.len(), submitted);
        let can_submit = cfg.n - submitted;
        if can_submit > 0 && (since_trigger >= c || submitted == 0) {
            since_trigger = 0;
            driver.stage += 1;
            let take = a.min(can_submit);
            let emu = driver.emulator_with_pending()?;
            let history = driver.data.clone();
            let picked = driver.acquire_chain(emu, take, &history)?;
            for (theta, score) in picked {
                driver.data.pending.push(theta.clone());
                let id = driver.pool.submit(theta, driver.stage)?;
                scores.insert(id, score);
                submitted += 1;
            }
        }
        let want = c.min(driver.pool.outstanding());
        if want == 0 {
            break;
        }
        let jobs = driver.pool.await_completions(want)?;
        since_trigger += jobs.len();
        let mut newly = 0;
        for job in jobs {
            driver
                .data
                .pending
                .retain(|theta| theta != &job.theta);
            match job.status {
                JobStatus::Done => {
                    let score = scores[&job.id];
                    driver.record_completion(job, score);
                    newly += 1;
                }
                _ => {
                    // failed job releases its budget slot
                    submitted -= 1;
                }
            }
        }
        if newly > 0 {
            completed += newly;
            driver.refit()?;
            let m = driver.current_mad()?;
            for _ in 0..newly {
                driver.mad_trace.push(m);
            }
        }
    }
    Ok(driver.finish())
}
