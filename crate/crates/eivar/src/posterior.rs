//! Priors, multivariate-normal density arithmetic, closed-form posterior
//! mean/variance under the emulator, and maximum-likelihood estimation of
//! ancillary covariance parameters for the model-discrepancy extension.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::emulator::{Dataset, EmulatorPrediction, PcgpEmulator};
use crate::error::Error;
use crate::gp::lhs_in_box;
use crate::Bounds;

const LN_2PI: f64 = 1.8378770664093453;

/// Prior on the calibration parameters, supported on a box.
#[derive(Debug, Clone)]
pub enum Prior {
    UniformBox(Bounds),
    /// Independent per-coordinate Gaussians truncated to the box.
    TruncatedGaussian {
        bounds: Bounds,
        mean: Vec<f64>,
        sd: Vec<f64>,
    },
}

impl Prior {
    pub fn bounds(&self) -> &Bounds {
        match self {
            Prior::UniformBox(b) => b,
            Prior::TruncatedGaussian { bounds, .. } => bounds,
        }
    }

    /// Density at `theta`; zero outside the box.
    pub fn density(&self, theta: &[f64]) -> f64 {
        match self {
            Prior::UniformBox(b) => {
                if b.contains(theta) {
                    1.0 / b.volume()
                } else {
                    0.0
                }
            }
            Prior::TruncatedGaussian { bounds, mean, sd } => {
                if !bounds.contains(theta) {
                    return 0.0;
                }
                let std_normal = Normal::new(0.0, 1.0).unwrap();
                theta
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        let z = (x - mean[i]) / sd[i];
                        let lo = (bounds.lower[i] - mean[i]) / sd[i];
                        let hi = (bounds.upper[i] - mean[i]) / sd[i];
                        let norm = std_normal.cdf(hi) - std_normal.cdf(lo);
                        let pdf = (-0.5 * z * z).exp() / (sd[i] * (2.0 * std::f64::consts::PI).sqrt());
                        pdf / norm
                    })
                    .product()
            }
        }
    }
}

/// Field observations and their residual-error covariance.
#[derive(Debug, Clone)]
pub struct ObsModel {
    pub data: Vec<f64>,
    pub sigma: DMatrix<f64>,
}

impl ObsModel {
    pub fn new(data: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self, Error> {
        if sigma.nrows() != data.len() || sigma.ncols() != data.len() {
            return Err(Error::DimensionMismatch {
                expected: data.len(),
                got: sigma.nrows(),
            });
        }
        // must be PD after at most the jitter ladder
        chol_with_jitter(&sigma)?;
        Ok(Self { data, sigma })
    }

    pub fn diagonal(data: Vec<f64>, variances: &[f64]) -> Result<Self, Error> {
        let d = data.len();
        let sigma = DMatrix::from_fn(d, d, |i, j| if i == j { variances[i] } else { 0.0 });
        Self::new(data, sigma)
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    /// `ln |Sigma|` via Cholesky (with jitter if needed).
    pub fn sigma_logdet(&self) -> Result<f64, Error> {
        let l = chol_with_jitter(&self.sigma)?;
        Ok(2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
    }
}

/// Covariance parameters of the observation-error model
/// `Sigma^e_{ij} = sigma_eps_sq * delta_{ij} + sigma_b_sq * exp(-lambda |x_i - x_j|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AncillaryParams {
    pub sigma_eps_sq: f64,
    pub sigma_b_sq: f64,
    pub lambda: f64,
    /// Controllable inputs at which the field data were taken, one row per
    /// observation coordinate.
    pub design_points: Vec<Vec<f64>>,
}

impl AncillaryParams {
    /// The induced observation-error covariance matrix.
    pub fn sigma(&self) -> DMatrix<f64> {
        let d = self.design_points.len();
        DMatrix::from_fn(d, d, |i, j| {
            let dist: f64 = self.design_points[i]
                .iter()
                .zip(&self.design_points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let bias = self.sigma_b_sq * (-self.lambda * dist).exp();
            if i == j {
                self.sigma_eps_sq + bias
            } else {
                bias
            }
        })
    }
}

/// Box constraints for the ancillary parameters; a degenerate interval
/// (lower == upper) pins that parameter.
#[derive(Debug, Clone)]
pub struct AncillaryBounds {
    pub sigma_eps_sq: (f64, f64),
    pub sigma_b_sq: (f64, f64),
    pub lambda: (f64, f64),
}

impl Default for AncillaryBounds {
    fn default() -> Self {
        Self {
            sigma_eps_sq: (1e-6, 10.0),
            sigma_b_sq: (0.0, 10.0),
            lambda: (1e-3, 100.0),
        }
    }
}

/// Lower Cholesky with an escalating ridge of 1e-10..=1e-4 times the mean
/// diagonal when the matrix is not positive definite as given.
pub fn chol_with_jitter(m: &DMatrix<f64>) -> Result<DMatrix<f64>, Error> {
    let d = m.nrows();
    let mean_diag = (0..d).map(|i| m[(i, i)].abs()).sum::<f64>() / d as f64;
    let mut jitter = 0.0;
    loop {
        let mut a = m.clone();
        for i in 0..d {
            a[(i, i)] += jitter;
        }
        if let Some(chol) = nalgebra::Cholesky::new(a) {
            return Ok(chol.unpack());
        }
        jitter = if jitter == 0.0 {
            1e-10 * mean_diag.max(1e-300)
        } else {
            jitter * 10.0
        };
        if jitter > 1e-4 * mean_diag.max(1e-300) {
            return Err(Error::NotPositiveDefinite);
        }
    }
}

/// Log density of a multivariate normal, computed via Cholesky.
pub fn mvn_logpdf(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> Result<f64, Error> {
    let d = x.len();
    let l = chol_with_jitter(cov)?;
    let r = DVector::from_fn(d, |i, _| x[i] - mean[i]);
    // solve L z = r
    let mut z = r;
    for i in 0..d {
        for k in 0..i {
            let t = z[k];
            z[i] -= l[(i, k)] * t;
        }
        z[i] /= l[(i, i)];
    }
    let logdet: f64 = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
    Ok(-0.5 * (d as f64 * LN_2PI + logdet + z.norm_squared()))
}

/// Closed-form mean and variance of the unnormalized posterior height at one
/// parameter vector, given the emulator's predictive moments there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorMoments {
    pub mean: f64,
    pub var: f64,
}

/// The posterior height `p~(theta | y)` is a random variable under the
/// emulator; its mean is `f_N(y; mu, Sigma + S) p(theta)` and its variance is
/// `(2^-d pi^{-d/2} |Sigma|^{-1/2} f_N(y; mu, Sigma/2 + S) - f_N(y; mu, Sigma + S)^2) p(theta)^2`,
/// clamped at zero from below. All densities are assembled in log space.
pub fn post_mean_var(
    pred: &EmulatorPrediction,
    obs: &ObsModel,
    prior_density: f64,
) -> Result<PosteriorMoments, Error> {
    assert!(prior_density >= 0.0);
    let d = obs.dim();
    let sum = &obs.sigma + &pred.cov;
    let log_f = mvn_logpdf(&obs.data, &pred.mean, &sum)?;
    let mean = log_f.exp() * prior_density;

    let half_sum = &obs.sigma * 0.5 + &pred.cov;
    let log_g = mvn_logpdf(&obs.data, &pred.mean, &half_sum)?;
    let log_sigma_det = obs.sigma_logdet()?;
    let log_t1 = -(d as f64) * std::f64::consts::LN_2
        - 0.5 * (d as f64) * std::f64::consts::PI.ln()
        - 0.5 * log_sigma_det
        + log_g;
    let var = (log_t1.exp() - (2.0 * log_f).exp()) * prior_density * prior_density;
    Ok(PosteriorMoments {
        mean,
        var: var.max(0.0),
    })
}

/// Convenience: posterior-height moments at `theta` under a prior.
pub fn post_at(
    emu: &PcgpEmulator,
    obs: &ObsModel,
    prior: &Prior,
    theta: &[f64],
) -> Result<PosteriorMoments, Error> {
    let pred = emu.predict(theta);
    post_mean_var(&pred, obs, prior.density(theta))
}

/// Nelder-Mead simplex minimizer on a box; reflections are clamped to the
/// box, which is adequate for the smooth likelihoods optimized here.
fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let clamp = |x: &mut Vec<f64>| {
        for i in 0..n {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        let step = 0.1 * (hi[i] - lo[i]).max(1e-8);
        v[i] = if v[i] + step <= hi[i] { v[i] + step } else { v[i] - step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];
        if (values[worst] - values[best]).abs()
            < 1e-10 * (values[best].abs() + values[worst].abs() + 1e-10)
        {
            break;
        }
        // centroid of all but the worst
        let mut centroid = vec![0.0; n];
        for (k, x) in simplex.iter().enumerate() {
            if k == worst {
                continue;
            }
            for i in 0..n {
                centroid[i] += x[i] / n as f64;
            }
        }
        let mut reflect: Vec<f64> = (0..n)
            .map(|i| centroid[i] + (centroid[i] - simplex[worst][i]))
            .collect();
        clamp(&mut reflect);
        let fr = f(&reflect);
        if fr < values[best] {
            let mut expand: Vec<f64> = (0..n)
                .map(|i| centroid[i] + 2.0 * (centroid[i] - simplex[worst][i]))
                .collect();
            clamp(&mut expand);
            let fe = f(&expand);
            if fe < fr {
                simplex[worst] = expand;
                values[worst] = fe;
            } else {
                simplex[worst] = reflect;
                values[worst] = fr;
            }
        } else if fr < values[second_worst] {
            simplex[worst] = reflect;
            values[worst] = fr;
        } else {
            let mut contract: Vec<f64> = (0..n)
                .map(|i| centroid[i] + 0.5 * (simplex[worst][i] - centroid[i]))
                .collect();
            clamp(&mut contract);
            let fc = f(&contract);
            if fc < values[worst] {
                simplex[worst] = contract;
                values[worst] = fc;
            } else {
                // shrink toward the best vertex
                let best_x = simplex[best].clone();
                for (k, x) in simplex.iter_mut().enumerate() {
                    if k == best {
                        continue;
                    }
                    for i in 0..n {
                        x[i] = best_x[i] + 0.5 * (x[i] - best_x[i]);
                    }
                    values[k] = f(x);
                }
            }
        }
    }
    let mut best_idx = 0;
    for k in 1..=n {
        if values[k] < values[best_idx] {
            best_idx = k;
        }
    }
    (simplex[best_idx].clone(), values[best_idx])
}

/// Log likelihood of the field data under ancillary parameters `anc` and
/// calibration parameter `theta`.
pub fn ancillary_loglik(
    emu: &PcgpEmulator,
    obs_data: &[f64],
    anc: &AncillaryParams,
    theta: &[f64],
) -> Result<f64, Error> {
    let pred = emu.predict(theta);
    let cov = anc.sigma() + &pred.cov;
    mvn_logpdf(obs_data, &pred.mean, &cov)
}

/// Jointly maximizes the likelihood of the field data over the ancillary
/// covariance parameters and the calibration parameter by multi-start
/// Nelder-Mead; deterministic given the seed. `sigma_eps_sq` and `lambda`
/// are searched in log space, `sigma_b_sq` in linear space so it can pin to
/// zero. Returns the fitted parameters and the maximizing theta.
pub fn fit_ancillary(
    _data: &Dataset,
    emu: &PcgpEmulator,
    obs_data: &[f64],
    design_points: Vec<Vec<f64>>,
    anc_bounds: &AncillaryBounds,
    theta_bounds: &Bounds,
    seed: u64,
) -> Result<(AncillaryParams, Vec<f64>), Error> {
    assert_eq!(design_points.len(), obs_data.len());
    let p = theta_bounds.dim();

    // free coordinates: [log s2e?, s2b?, log lambda?, theta...]
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let eps_free = anc_bounds.sigma_eps_sq.0 < anc_bounds.sigma_eps_sq.1;
    let b_free = anc_bounds.sigma_b_sq.0 < anc_bounds.sigma_b_sq.1;
    let lam_free = anc_bounds.lambda.0 < anc_bounds.lambda.1;
    if eps_free {
        lo.push(anc_bounds.sigma_eps_sq.0.ln());
        hi.push(anc_bounds.sigma_eps_sq.1.ln());
    }
    if b_free {
        lo.push(anc_bounds.sigma_b_sq.0);
        hi.push(anc_bounds.sigma_b_sq.1);
    }
    if lam_free {
        lo.push(anc_bounds.lambda.0.ln());
        hi.push(anc_bounds.lambda.1.ln());
    }
    for l in 0..p {
        lo.push(theta_bounds.lower[l]);
        hi.push(theta_bounds.upper[l]);
    }

    let unpack = |x: &[f64]| -> (AncillaryParams, Vec<f64>) {
        let mut i = 0;
        let sigma_eps_sq = if eps_free {
            i += 1;
            x[i - 1].exp()
        } else {
            anc_bounds.sigma_eps_sq.0
        };
        let sigma_b_sq = if b_free {
            i += 1;
            x[i - 1]
        } else {
            anc_bounds.sigma_b_sq.0
        };
        let lambda = if lam_free {
            i += 1;
            x[i - 1].exp()
        } else {
            anc_bounds.lambda.0
        };
        let theta = x[i..].to_vec();
        (
            AncillaryParams {
                sigma_eps_sq,
                sigma_b_sq,
                lambda,
                design_points: design_points.clone(),
            },
            theta,
        )
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = lhs_in_box(&lo, &hi, 8, &mut rng);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut any_ok = false;
    for s in starts {
        let mut objective = |x: &[f64]| -> f64 {
            let (anc, theta) = unpack(x);
            match ancillary_loglik(emu, obs_data, &anc, &theta) {
                Ok(v) if v.is_finite() => -v,
                _ => f64::INFINITY,
            }
        };
        let (x, v) = nelder_mead(&mut objective, &s, &lo, &hi, 400);
        if v.is_finite() {
            any_ok = true;
            if best.as_ref().map_or(true, |(_, bv)| v < *bv) {
                best = Some((x, v));
            }
        }
    }
    if !any_ok {
        return Err(Error::OptimFailure(
            "all ancillary optimization starts failed".into(),
        ));
    }
    let (x, _) = best.unwrap();
    Ok(unpack(&x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::{emu_fit, QPolicy};
    use rand::Rng;

    fn dm(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn standard_normal_at_mode() {
        let v = mvn_logpdf(&[0.0], &[0.0], &dm(&[&[1.0]])).unwrap().exp();
        assert!((v - 0.398942).abs() < 1e-6);
    }

    #[test]
    fn bivariate_standard_normal_at_mode() {
        let v = mvn_logpdf(&[0.0, 0.0], &[0.0, 0.0], &dm(&[&[1.0, 0.0], &[0.0, 1.0]]))
            .unwrap()
            .exp();
        assert!((v - 0.159155).abs() < 1e-6);
    }

    #[test]
    fn scalar_gaussian_with_variance_four() {
        // sigma = 2: phi(0.5)/2 = exp(-1/8)/(2 sqrt(2 pi))
        let v = mvn_logpdf(&[1.0], &[0.0], &dm(&[&[4.0]])).unwrap().exp();
        let oracle = (-0.125f64).exp() / (2.0 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((v - 0.176033).abs() < 1e-6);
        assert!((v - oracle).abs() < 1e-12);
    }

    #[test]
    fn jitter_rescues_singular_covariance() {
        let cov = dm(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert!(mvn_logpdf(&[0.0, 0.0], &[0.0, 0.0], &cov).is_ok());
    }

    #[test]
    fn square_density_identity() {
        // 2^-d pi^{-d/2} |M|^{-1/2} f(y; mu, M/2) = f(y; mu, M)^2 for PD M
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let d = rng.gen_range(1..=4usize);
            let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0f64));
            let m = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
            let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mu: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let logdet = 2.0
                * (0..d)
                    .map(|i| chol_with_jitter(&m).unwrap()[(i, i)].ln())
                    .sum::<f64>();
            let lhs = -(d as f64) * std::f64::consts::LN_2
                - 0.5 * (d as f64) * std::f64::consts::PI.ln()
                - 0.5 * logdet
                + mvn_logpdf(&y, &mu, &(&m * 0.5)).unwrap();
            let rhs = 2.0 * mvn_logpdf(&y, &mu, &m).unwrap();
            assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn zero_emulator_variance_gives_zero_posterior_variance() {
        let pred = EmulatorPrediction {
            mean: vec![0.5],
            latent_means: vec![0.0],
            latent_vars: vec![0.0],
            cov: dm(&[&[0.0]]),
        };
        let obs = ObsModel::new(vec![0.0], dm(&[&[1.0]])).unwrap();
        let m = post_mean_var(&pred, &obs, 2.0).unwrap();
        let lik = mvn_logpdf(&[0.0], &[0.5], &dm(&[&[1.0]])).unwrap().exp();
        assert!((m.mean - 2.0 * lik).abs() < 1e-12);
        assert!(m.var.abs() < 1e-12);
    }

    #[test]
    fn closed_form_mean_matches_convolution() {
        // y=0, mu=0, Sigma=1, S=1 -> mean = f_N(0; 0, 2)
        let pred = EmulatorPrediction {
            mean: vec![0.0],
            latent_means: vec![0.0],
            latent_vars: vec![1.0],
            cov: dm(&[&[1.0]]),
        };
        let obs = ObsModel::new(vec![0.0], dm(&[&[1.0]])).unwrap();
        let m = post_mean_var(&pred, &obs, 1.0).unwrap();
        let expect = mvn_logpdf(&[0.0], &[0.0], &dm(&[&[2.0]])).unwrap().exp();
        assert!((m.mean - expect).abs() < 1e-12);
        assert!((m.mean - 0.282095).abs() < 1e-6);
    }

    #[test]
    fn closed_form_matches_monte_carlo_simple() {
        // eta ~ N(0, 1); statistic f_N(0; eta, 1)
        let pred = EmulatorPrediction {
            mean: vec![0.0],
            latent_means: vec![0.0],
            latent_vars: vec![1.0],
            cov: dm(&[&[1.0]]),
        };
        let obs = ObsModel::new(vec![0.0], dm(&[&[1.0]])).unwrap();
        let m = post_mean_var(&pred, &obs, 1.0).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..draws {
            let z: f64 =
                rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            let f = mvn_logpdf(&[0.0], &[z], &dm(&[&[1.0]])).unwrap().exp();
            sum += f;
            sumsq += f * f;
        }
        let mc_mean = sum / draws as f64;
        let mc_var = sumsq / draws as f64 - mc_mean * mc_mean;
        let se_mean = (mc_var / draws as f64).sqrt();
        assert!((m.mean - mc_mean).abs() < 3.0 * se_mean);
        // variance of the squared statistic for its standard error
        let se_var = mc_var * (2.0f64 / draws as f64).sqrt() * 3.0;
        assert!((m.var - mc_var).abs() < 3.0 * se_var.max(1e-6));
    }

    #[test]
    fn closed_form_matches_monte_carlo_random_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 200_000;
        for _ in 0..20 {
            let d = rng.gen_range(1..=3usize);
            let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.5..0.5f64));
            let sigma = &a * a.transpose() + DMatrix::identity(d, d) * 0.5;
            let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mu: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let svals: Vec<f64> = (0..d).map(|_| rng.gen_range(0.05..0.8)).collect();
            let s_cov = DMatrix::from_fn(d, d, |i, j| if i == j { svals[i] } else { 0.0 });
            let pred = EmulatorPrediction {
                mean: mu.clone(),
                latent_means: vec![0.0; d],
                latent_vars: svals.clone(),
                cov: s_cov,
            };
            let obs = ObsModel::new(y.clone(), sigma.clone()).unwrap();
            let m = post_mean_var(&pred, &obs, 1.0).unwrap();

            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..draws {
                // eta ~ N(mu, S) with diagonal S
                let eta: Vec<f64> = (0..d)
                    .map(|i| {
                        let z: f64 = rand_distr::Distribution::sample(
                            &rand_distr::StandardNormal,
                            &mut rng,
                        );
                        mu[i] + svals[i].sqrt() * z
                    })
                    .collect();
                let f = mvn_logpdf(&y, &eta, &sigma).unwrap().exp();
                sum += f;
                sumsq += f * f;
            }
            let mc_mean = sum / draws as f64;
            let mc_var = (sumsq / draws as f64 - mc_mean * mc_mean).max(0.0);
            let se_mean = (mc_var / draws as f64).sqrt();
            assert!(
                (m.mean - mc_mean).abs() < 3.0 * se_mean.max(1e-9),
                "mean {} vs MC {}",
                m.mean,
                mc_mean
            );
            let se_var = mc_var * (2.0f64 / draws as f64).sqrt();
            assert!(
                (m.var - mc_var).abs() < 5.0 * se_var.max(1e-9),
                "var {} vs MC {}",
                m.var,
                mc_var
            );
        }
    }

    #[test]
    fn prior_scaling_is_exact() {
        let pred = EmulatorPrediction {
            mean: vec![0.3, -0.2],
            latent_means: vec![0.0, 0.0],
            latent_vars: vec![0.4, 0.1],
            cov: dm(&[&[0.4, 0.0], &[0.0, 0.1]]),
        };
        let obs = ObsModel::new(vec![0.0, 0.5], dm(&[&[1.0, 0.2], &[0.2, 2.0]])).unwrap();
        let base = post_mean_var(&pred, &obs, 1.0).unwrap();
        let scaled = post_mean_var(&pred, &obs, 3.0).unwrap();
        assert!((scaled.mean - 3.0 * base.mean).abs() < 1e-15);
        assert!((scaled.var - 9.0 * base.var).abs() < 1e-15);
    }

    #[test]
    fn variance_nonnegative_clamp() {
        let pred = EmulatorPrediction {
            mean: vec![10.0],
            latent_means: vec![0.0],
            latent_vars: vec![0.0],
            cov: dm(&[&[0.0]]),
        };
        let obs = ObsModel::new(vec![0.0], dm(&[&[1.0]])).unwrap();
        let m = post_mean_var(&pred, &obs, 1.0).unwrap();
        assert!(m.var >= 0.0);
    }

    #[test]
    fn uniform_prior_integrates_to_one() {
        let b = Bounds::new(vec![-1.0, 0.0], vec![3.0, 2.0]).unwrap();
        let prior = Prior::UniformBox(b.clone());
        // midpoint quadrature on a 200 x 200 grid
        let n = 200;
        let mut total = 0.0;
        let cell = b.volume() / (n * n) as f64;
        for i in 0..n {
            for j in 0..n {
                let x = b.lower[0] + (i as f64 + 0.5) / n as f64 * (b.upper[0] - b.lower[0]);
                let y = b.lower[1] + (j as f64 + 0.5) / n as f64 * (b.upper[1] - b.lower[1]);
                total += prior.density(&[x, y]) * cell;
            }
        }
        assert!((total - 1.0).abs() < 1e-3);
        assert_eq!(prior.density(&[5.0, 1.0]), 0.0);
    }

    #[test]
    fn truncated_gaussian_integrates_to_one() {
        let b = Bounds::new(vec![-1.0], vec![2.0]).unwrap();
        let prior = Prior::TruncatedGaussian {
            bounds: b.clone(),
            mean: vec![0.5],
            sd: vec![1.2],
        };
        let n = 20_000;
        let mut total = 0.0;
        let cell = (b.upper[0] - b.lower[0]) / n as f64;
        for i in 0..n {
            let x = b.lower[0] + (i as f64 + 0.5) * cell;
            total += prior.density(&[x]) * cell;
        }
        assert!((total - 1.0).abs() < 1e-3);
        assert_eq!(prior.density(&[-1.5]), 0.0);
    }

    #[test]
    fn ancillary_sigma_is_pd() {
        let anc = AncillaryParams {
            sigma_eps_sq: 0.1,
            sigma_b_sq: 2.0,
            lambda: 0.5,
            design_points: (0..6).map(|i| vec![i as f64 / 5.0]).collect(),
        };
        assert!(chol_with_jitter(&anc.sigma()).is_ok());
    }

    fn toy_emulator(seed: u64) -> (PcgpEmulator, Vec<Vec<f64>>, Vec<f64>) {
        // eta_i(theta) = sin(10 x_i theta) on a 5-point x grid, theta in [0,1]
        let xs: Vec<f64> = (0..5).map(|i| i as f64 / 4.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<Vec<f64>> = (0..25).map(|_| vec![rng.gen_range(0.0..1.0)]).collect();
        let outputs: Vec<Vec<f64>> = params
            .iter()
            .map(|t| xs.iter().map(|x| (10.0 * x * t[0]).sin()).collect())
            .collect();
        let data = Dataset::new(params, outputs).unwrap();
        let emu = emu_fit(&data, QPolicy::default(), 0).unwrap();
        let design: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
        (emu, design, xs)
    }

    #[test]
    fn zero_residual_pins_noise_at_lower_bound() {
        let (emu, design, _) = toy_emulator(4);
        let theta0 = 0.63;
        let y = emu.predict(&[theta0]).mean;
        let anc_bounds = AncillaryBounds {
            sigma_b_sq: (0.0, 0.0),
            ..Default::default()
        };
        let theta_bounds = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let data = Dataset::default();
        let (anc, _) =
            fit_ancillary(&data, &emu, &y, design, &anc_bounds, &theta_bounds, 7).unwrap();
        assert!(anc.sigma_eps_sq < 3e-6, "sigma_eps_sq {}", anc.sigma_eps_sq);
        assert_eq!(anc.sigma_b_sq, 0.0);
    }

    #[test]
    fn noise_variance_recovery_median_within_twenty_percent() {
        // d = 15 grid, known sigma_eps_sq, sigma_b_sq pinned at zero
        let xs: Vec<f64> = (0..15).map(|i| i as f64 / 14.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen_range(0.0..1.0)]).collect();
        let outputs: Vec<Vec<f64>> = params
            .iter()
            .map(|t| xs.iter().map(|x| t[0] * (1.0 + x) + 0.3 * (3.0 * x).sin()).collect())
            .collect();
        let data = Dataset::new(params, outputs).unwrap();
        let emu = emu_fit(&data, QPolicy::default(), 0).unwrap();
        let design: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
        let anc_bounds = AncillaryBounds {
            sigma_b_sq: (0.0, 0.0),
            ..Default::default()
        };
        let theta_bounds = Bounds::new(vec![0.40], vec![0.48]).unwrap();

        let truth: f64 = 0.09; // sd 0.3
        let theta_star = 0.44;
        let clean = emu.predict(&[theta_star]).mean;
        let mut estimates = Vec::new();
        for rep in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + rep);
            let y: Vec<f64> = clean
                .iter()
                .map(|m| {
                    let z: f64 = rand_distr::Distribution::sample(
                        &rand_distr::StandardNormal,
                        &mut rng,
                    );
                    m + truth.sqrt() * z
                })
                .collect();
            let (anc, theta_hat) = fit_ancillary(
                &data,
                &emu,
                &y,
                design.clone(),
                &anc_bounds,
                &theta_bounds,
                rep,
            )
            .unwrap();
            estimates.push(anc.sigma_eps_sq);

            // grid-search oracle over sigma_eps_sq at the fitted theta
            if rep < 5 {
                let mut best_grid = f64::NEG_INFINITY;
                for k in 0..200 {
                    let s2 = 1e-4 * (10.0f64 / 1e-4).powf(k as f64 / 199.0);
                    let trial = AncillaryParams {
                        sigma_eps_sq: s2,
                        sigma_b_sq: 0.0,
                        lambda: anc.lambda,
                        design_points: design.clone(),
                    };
                    let v = ancillary_loglik(&emu, &y, &trial, &theta_hat).unwrap();
                    best_grid = best_grid.max(v);
                }
                let at_mle = ancillary_loglik(&emu, &y, &anc, &theta_hat).unwrap();
                assert!(at_mle >= best_grid - 1e-3, "{at_mle} vs grid {best_grid}");
            }
        }
        estimates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = estimates[estimates.len() / 2];
        assert!(
            (median - truth).abs() / truth < 0.2,
            "median {median} vs truth {truth}"
        );
    }

    #[test]
    fn discrepancy_toy_likelihood_optimality() {
        // eta = sin(10 x theta), bias b(x) = 1 - x/3 - 2x^2/3, noise sd 0.2
        let (emu, design, xs) = toy_emulator(6);
        let theta_true = std::f64::consts::PI / 5.0;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y: Vec<f64> = xs
            .iter()
            .map(|x| {
                let z: f64 =
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                (10.0 * x * theta_true).sin() + 1.0 - x / 3.0 - 2.0 * x * x / 3.0 + 0.2 * z
            })
            .collect();
        let anc_bounds = AncillaryBounds::default();
        let theta_bounds = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let data = Dataset::default();
        let (anc, theta_hat) = fit_ancillary(
            &data,
            &emu,
            &y,
            design.clone(),
            &anc_bounds,
            &theta_bounds,
            9,
        )
        .unwrap();
        let at_mle = ancillary_loglik(&emu, &y, &anc, &theta_hat).unwrap();
        for _ in 0..20 {
            let trial = AncillaryParams {
                sigma_eps_sq: (rng.gen_range((1e-6f64).ln()..(10f64).ln())).exp(),
                sigma_b_sq: rng.gen_range(0.0..10.0),
                lambda: (rng.gen_range((1e-3f64).ln()..(100f64).ln())).exp(),
                design_points: design.clone(),
            };
            let v = ancillary_loglik(&emu, &y, &trial, &theta_hat).unwrap();
            assert!(at_mle >= v - 1e-6, "random draw beat MLE: {v} > {at_mle}");
        }
    }
}
