//! Acquisition criteria for choosing the next simulation parameters: the
//! expected-integrated-variance criterion plus the MAXVAR, MAXEXP, EI, IMSE,
//! and RND competitors, all evaluated over a candidate set against a fixed
//! reference set.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::emulator::{Dataset, EmulatorPrediction, PcgpEmulator};
use crate::error::Error;
use crate::gp::GpState;
use crate::posterior::{chol_with_jitter, mvn_logpdf, post_mean_var, ObsModel, Prior};

/// Which acquisition criterion to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionKind {
    Eivar,
    Maxvar,
    Maxexp,
    Ei,
    Imse,
    Rnd,
}

impl std::fmt::Display for AcquisitionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AcquisitionKind::Eivar => "eivar",
            AcquisitionKind::Maxvar => "maxvar",
            AcquisitionKind::Maxexp => "maxexp",
            AcquisitionKind::Ei => "ei",
            AcquisitionKind::Imse => "imse",
            AcquisitionKind::Rnd => "rnd",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for AcquisitionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "eivar" => Ok(AcquisitionKind::Eivar),
            "maxvar" => Ok(AcquisitionKind::Maxvar),
            "maxexp" => Ok(AcquisitionKind::Maxexp),
            "ei" => Ok(AcquisitionKind::Ei),
            "imse" => Ok(AcquisitionKind::Imse),
            "rnd" => Ok(AcquisitionKind::Rnd),
            other => Err(Error::ConfigInvalid(format!(
                "unknown acquisition kind {other:?}"
            ))),
        }
    }
}

struct RefCache {
    pred: EmulatorPrediction,
    prior_sq: f64,
    /// `L^-1 k(X, theta_ref)` per component GP.
    solved: Vec<DVector<f64>>,
    /// Candidate-independent first term of the EIVAR decomposition (already includes the
    /// normalizing constant but not the prior weight).
    term1: f64,
}

/// Precomputed scoring state shared across all candidates of one stage.
pub struct AcquisitionContext<'a> {
    pub emulator: &'a PcgpEmulator,
    pub obs: &'a ObsModel,
    pub prior: &'a Prior,
    pub candidates: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
    pub history: &'a Dataset,
    refs: Vec<RefCache>,
    log_norm: f64,
}

impl<'a> AcquisitionContext<'a> {
    pub fn new(
        emulator: &'a PcgpEmulator,
        obs: &'a ObsModel,
        prior: &'a Prior,
        candidates: Vec<Vec<f64>>,
        reference: Vec<Vec<f64>>,
        history: &'a Dataset,
    ) -> Result<Self, Error> {
        let d = obs.dim() as f64;
        // 1 / (2^d pi^{d/2} |Sigma|^{1/2}), in log space
        let log_norm = -d * std::f64::consts::LN_2
            - 0.5 * d * std::f64::consts::PI.ln()
            - 0.5 * obs.sigma_logdet()?;
        let mut refs = Vec::with_capacity(reference.len());
        for theta in &reference {
            let pred = emulator.predict(theta);
            let p = prior.density(theta);
            let solved = emulator
                .gps()
                .iter()
                .map(|gp| gp.solved_kvec(theta))
                .collect();
            let half_sum = &obs.sigma * 0.5 + &pred.cov;
            let term1 = (mvn_logpdf(&obs.data, &pred.mean, &half_sum)? + log_norm).exp();
            refs.push(RefCache {
                pred,
                prior_sq: p * p,
                solved,
                term1,
            });
        }
        Ok(Self {
            emulator,
            obs,
            prior,
            candidates,
            reference,
            history,
            refs,
            log_norm,
        })
    }

    /// Expected integrated posterior variance after a hypothetical
    /// evaluation at the candidate; lower is better. Each reference term is
    /// clamped at zero before averaging.
    pub fn eivar_score(&self, candidate_index: usize) -> Result<f64, Error> {
        let cand = &self.candidates[candidate_index];
        let gps = self.emulator.gps();
        // per-component half-solves at the candidate, shared across refs
        let solved_cand: Vec<DVector<f64>> =
            gps.iter().map(|gp| gp.solved_kvec(cand)).collect();
        let var_cand: Vec<f64> = gps
            .iter()
            .zip(&solved_cand)
            .map(|(gp, s)| (gp.params().scale() - s.norm_squared()).max(0.0))
            .collect();

        let mut total = 0.0;
        for (theta, rc) in self.reference.iter().zip(&self.refs) {
            if rc.prior_sq == 0.0 {
                continue;
            }
            let reductions: Vec<f64> = gps
                .iter()
                .enumerate()
                .map(|(j, gp)| {
                    gp.fantasy_cached(&rc.solved[j], theta, &solved_cand[j], cand, var_cand[j])
                })
                .collect();
            let phi = self.emulator.output_cov(&reductions);
            // f_N(y; mu, (Sigma + S + phi)/2) / (2^d pi^{d/2} |Sigma + S - phi|^{1/2})
            let num_cov = (&self.obs.sigma + &rc.pred.cov + &phi) * 0.5;
            let log_f = mvn_logpdf(&self.obs.data, &rc.pred.mean, &num_cov)?;
            let det_m = &self.obs.sigma + &rc.pred.cov - &phi;
            let l = chol_with_jitter(&det_m)?;
            let half_logdet: f64 = (0..l.nrows()).map(|i| l[(i, i)].ln()).sum();
            let d = self.obs.dim() as f64;
            let term2 = (log_f
                - d * std::f64::consts::LN_2
                - 0.5 * d * std::f64::consts::PI.ln()
                - half_logdet)
                .exp();
            total += rc.prior_sq * (rc.term1 - term2).max(0.0);
        }
        Ok(total / self.reference.len() as f64)
    }

    /// Variance of the posterior height at the candidate; higher is better.
    pub fn maxvar_score(&self, candidate_index: usize) -> Result<f64, Error> {
        let cand = &self.candidates[candidate_index];
        let pred = self.emulator.predict(cand);
        let m = post_mean_var(&pred, self.obs, self.prior.density(cand))?;
        Ok(m.var)
    }

    /// Expected posterior height times the distance (in the unit hypercube)
    /// to the nearest evaluated or pending parameter; higher is better.
    pub fn maxexp_score(&self, candidate_index: usize) -> Result<f64, Error> {
        if self.history.is_empty() && self.history.pending.is_empty() {
            return Err(Error::EmptyHistory);
        }
        let cand = &self.candidates[candidate_index];
        let pred = self.emulator.predict(cand);
        let m = post_mean_var(&pred, self.obs, self.prior.density(cand))?;
        let bounds = self.prior.bounds();
        let u_cand = bounds.to_unit(cand);
        let min_dist = self
            .history
            .params
            .iter()
            .chain(&self.history.pending)
            .map(|other| {
                let u = bounds.to_unit(other);
                u_cand
                    .iter()
                    .zip(&u)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        Ok(m.mean * min_dist)
    }

    /// Sum over the reference set of the one-step-ahead emulator variance;
    /// lower is better. Only defined for scalar simulator output.
    pub fn imse_score(&self, candidate_index: usize) -> Result<f64, Error> {
        let d = self.emulator.output_dim();
        if d != 1 {
            return Err(Error::UnsupportedDimension(d));
        }
        let cand = &self.candidates[candidate_index];
        let gp = &self.emulator.gps()[0];
        let solved_cand = gp.solved_kvec(cand);
        let var_cand = (gp.params().scale() - solved_cand.norm_squared()).max(0.0);
        let s = self.emulator.scale()[0];
        let mut total = 0.0;
        for (theta, rc) in self.reference.iter().zip(&self.refs) {
            let red = gp.fantasy_cached(&rc.solved[0], theta, &solved_cand, cand, var_cand);
            let next = (rc.pred.latent_vars[0] - red).max(0.0);
            total += s * s * next;
        }
        Ok(total)
    }

    /// Current integrated posterior variance over the reference set (the
    /// candidate-independent part of the EIVAR objective).
    pub fn integrated_variance(&self) -> Result<f64, Error> {
        let mut total = 0.0;
        for rc in &self.refs {
            let m = post_mean_var(&rc.pred, self.obs, rc.prior_sq.sqrt())?;
            total += m.var;
        }
        Ok(total / self.refs.len() as f64)
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }
}

/// Single-output GP fitted directly on posterior heights, used by EI.
pub struct PosteriorSurrogate {
    gp: GpState,
    p_max: f64,
}

impl PosteriorSurrogate {
    /// Fits on (theta_i, p~(theta_i | y)) pairs from the evaluated history,
    /// where the posterior height uses the stored simulator outputs exactly.
    pub fn fit(
        history: &Dataset,
        obs: &ObsModel,
        prior: &Prior,
        seed: u64,
    ) -> Result<Self, Error> {
        if history.is_empty() {
            return Err(Error::EmptyHistory);
        }
        let n = history.len();
        let targets: Vec<f64> = history
            .params
            .iter()
            .zip(&history.outputs)
            .map(|(t, eta)| {
                Ok(mvn_logpdf(&obs.data, eta, &obs.sigma)?.exp() * prior.density(t))
            })
            .collect::<Result<_, Error>>()?;
        let p_max = targets.iter().cloned().fold(0.0f64, f64::max);
        let inputs = DMatrix::from_fn(n, history.param_dim(), |i, j| history.params[i][j]);
        let tv = DVector::from_column_slice(&targets);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gp = crate::gp::gp_fit(inputs, tv, None, false, 4, &mut rng)?;
        Ok(Self { gp, p_max })
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    /// Expected improvement of the surrogate posterior height over the best
    /// evaluated height; always nonnegative.
    pub fn ei_score(&self, candidate: &[f64]) -> f64 {
        let (mean, var) = self.gp.predict(candidate);
        ei_formula(mean, var.max(0.0).sqrt(), self.p_max)
    }
}

/// `(m - best) Phi(z) + s phi(z)` with `z = (m - best)/s`; zero in the
/// degenerate no-uncertainty, no-improvement case.
pub fn ei_formula(mean: f64, sd: f64, best: f64) -> f64 {
    if sd <= 1e-12 {
        return (mean - best).max(0.0);
    }
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let z = (mean - best) / sd;
    ((mean - best) * std_normal.cdf(z) + sd * std_normal.pdf(z)).max(0.0)
}

/// Chooses a candidate index under the given criterion. Ties break to the
/// lowest index; RND draws uniformly using the seed.
pub fn select(ctx: &AcquisitionContext, kind: AcquisitionKind, seed: u64) -> Result<usize, Error> {
    let count = ctx.candidates.len();
    if count == 0 {
        return Err(Error::EmptyCandidates);
    }
    match kind {
        AcquisitionKind::Rnd => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(rng.gen_range(0..count))
        }
        AcquisitionKind::Eivar => argopt(count, false, |i| ctx.eivar_score(i)),
        AcquisitionKind::Maxvar => argopt(count, true, |i| ctx.maxvar_score(i)),
        AcquisitionKind::Maxexp => argopt(count, true, |i| ctx.maxexp_score(i)),
        AcquisitionKind::Imse => argopt(count, false, |i| ctx.imse_score(i)),
        AcquisitionKind::Ei => {
            let surrogate = PosteriorSurrogate::fit(ctx.history, ctx.obs, ctx.prior, seed)?;
            argopt(count, true, |i| Ok(surrogate.ei_score(&ctx.candidates[i])))
        }
    }
}

/// The winning score alongside the index, for logging.
pub fn select_with_score(
    ctx: &AcquisitionContext,
    kind: AcquisitionKind,
    seed: u64,
) -> Result<(usize, f64), Error> {
    let idx = select(ctx, kind, seed)?;
    let score = match kind {
        AcquisitionKind::Eivar => ctx.eivar_score(idx)?,
        AcquisitionKind::Maxvar => ctx.maxvar_score(idx)?,
        AcquisitionKind::Maxexp => ctx.maxexp_score(idx)?,
        AcquisitionKind::Imse => ctx.imse_score(idx)?,
        AcquisitionKind::Ei => {
            let surrogate = PosteriorSurrogate::fit(ctx.history, ctx.obs, ctx.prior, seed)?;
            surrogate.ei_score(&ctx.candidates[idx])
        }
        AcquisitionKind::Rnd => 0.0,
    };
    Ok((idx, score))
}

fn argopt<F: Fn(usize) -> Result<f64, Error>>(
    count: usize,
    maximize: bool,
    score: F,
) -> Result<usize, Error> {
    let mut best_idx = 0;
    let mut best = score(0)?;
    for i in 1..count {
        let v = score(i)?;
        let better = if maximize { v > best } else { v < best };
        if better {
            best = v;
            best_idx = i;
        }
    }
    Ok(best_idx)
}
