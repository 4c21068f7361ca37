//! Principal-component multi-output emulator: standardize the simulation
//! outputs, project onto an orthonormal PCA basis, and fit one GP per
//! retained component.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::gp::{gp_fit, GpState};

/// Floor for the per-coordinate output standard deviation.
pub const SCALE_FLOOR: f64 = 1e-12;

/// Default cumulative variance fraction for selecting the number of
/// principal components.
pub const DEFAULT_VARIANCE_FRACTION: f64 = 0.995;

/// Evaluated simulation runs plus any acquired-but-unevaluated parameters.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// One row per evaluated parameter vector.
    pub params: Vec<Vec<f64>>,
    /// Simulation output per evaluated parameter, all the same length.
    pub outputs: Vec<Vec<f64>>,
    /// Parameters acquired but not yet evaluated.
    pub pending: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(params: Vec<Vec<f64>>, outputs: Vec<Vec<f64>>) -> Result<Self, Error> {
        if params.len() != outputs.len() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: outputs.len(),
            });
        }
        if let Some(first) = outputs.first() {
            let d = first.len();
            for row in &outputs {
                if row.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: row.len(),
                    });
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::SimulatorFailure(
                        "non-finite simulation output".into(),
                    ));
                }
            }
        }
        Ok(Self {
            params,
            outputs,
            pending: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.first().map_or(0, |r| r.len())
    }

    pub fn param_dim(&self) -> usize {
        self.params.first().map_or(0, |r| r.len())
    }

    pub fn push(&mut self, param: Vec<f64>, output: Vec<f64>) {
        self.params.push(param);
        self.outputs.push(output);
    }
}

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QPolicy {
    Explicit(usize),
    /// Smallest q capturing at least this fraction of the standardized
    /// variance, capped at min(d, n).
    VarianceFraction(f64),
}

impl Default for QPolicy {
    fn default() -> Self {
        QPolicy::VarianceFraction(DEFAULT_VARIANCE_FRACTION)
    }
}

/// Fitted PCGP emulator. Immutable; believe/liar return new values.
#[derive(Debug, Clone)]
pub struct PcgpEmulator {
    center: Vec<f64>,
    scale: Vec<f64>,
    /// d x q, orthonormal columns.
    basis: DMatrix<f64>,
    gps: Vec<GpState>,
}

/// Predictive moments of the emulator at one parameter vector.
#[derive(Debug, Clone)]
pub struct EmulatorPrediction {
    pub mean: Vec<f64>,
    pub latent_means: Vec<f64>,
    pub latent_vars: Vec<f64>,
    /// Dense output-space covariance `G B diag(latent_vars) B^T G`.
    pub cov: DMatrix<f64>,
}

/// Fits the emulator: standardizes outputs per coordinate (scale floor
/// [`SCALE_FLOOR`]), picks the basis by SVD with a sign convention that makes
/// each column's largest-magnitude entry positive, and fits one GP per score
/// column. Deterministic for a given seed.
pub fn emu_fit(data: &Dataset, q_policy: QPolicy, seed: u64) -> Result<PcgpEmulator, Error> {
    emu_fit_warm(data, q_policy, seed, None)
}

/// Same as [`emu_fit`] but seeds each component's hyperparameter search with
/// the corresponding GP from a previous fit, which speeds up refits during a
/// sequential run.
pub fn emu_fit_warm(
    data: &Dataset,
    q_policy: QPolicy,
    seed: u64,
    warm: Option<&PcgpEmulator>,
) -> Result<PcgpEmulator, Error> {
    let n = data.len();
    assert!(n >= 2, "emulator fit requires at least two runs");
    let d = data.output_dim();
    assert!(d >= 1);

    let mut center = vec![0.0; d];
    for row in &data.outputs {
        for (c, v) in center.iter_mut().zip(row) {
            *c += v / n as f64;
        }
    }
    let mut scale = vec![0.0; d];
    for row in &data.outputs {
        for i in 0..d {
            scale[i] += (row[i] - center[i]).powi(2) / n as f64;
        }
    }
    let mut floored = 0;
    for s in scale.iter_mut() {
        *s = s.sqrt();
        if *s < SCALE_FLOOR {
            *s = SCALE_FLOOR;
            floored += 1;
        }
    }
    if floored == d {
        return Err(Error::DegenerateData);
    }

    // standardized runs as rows, n x d
    let std_rows = DMatrix::from_fn(n, d, |i, j| (data.outputs[i][j] - center[j]) / scale[j]);
    let svd = std_rows.clone().svd(false, true);
    let v_t = svd.v_t.expect("svd with v requested");
    let sv = &svd.singular_values;

    let total: f64 = sv.iter().map(|s| s * s).sum();
    let cap = d.min(n);
    let q = match q_policy {
        QPolicy::Explicit(q) => {
            assert!(q >= 1 && q <= cap, "explicit q out of range");
            q
        }
        QPolicy::VarianceFraction(gamma) => {
            let mut acc = 0.0;
            let mut q = cap;
            for (i, s) in sv.iter().take(cap).enumerate() {
                acc += s * s;
                if acc >= gamma * total {
                    q = i + 1;
                    break;
                }
            }
            q
        }
    };

    let mut basis = DMatrix::zeros(d, q);
    for j in 0..q {
        // sign convention: largest-magnitude entry positive
        let col = v_t.row(j);
        let mut max_abs = 0.0;
        let mut sign = 1.0;
        for v in col.iter() {
            if v.abs() > max_abs {
                max_abs = v.abs();
                sign = v.signum();
            }
        }
        for i in 0..d {
            basis[(i, j)] = sign * col[i];
        }
    }

    // scores n x q
    let scores = &std_rows * &basis;
    let inputs = DMatrix::from_fn(n, data.param_dim(), |i, j| data.params[i][j]);
    let mut gps = Vec::with_capacity(q);
    for j in 0..q {
        let targets = DVector::from_fn(n, |i, _| scores[(i, j)]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(j as u64));
        let init = warm
            .and_then(|w| w.gps.get(j))
            .map(|g| g.params().clone());
        let starts = if init.is_some() { 1 } else { 4 };
        gps.push(gp_fit(inputs.clone(), targets, init, false, starts, &mut rng)?);
    }

    Ok(PcgpEmulator {
        center,
        scale,
        basis,
        gps,
    })
}

impl PcgpEmulator {
    /// Assembles an emulator from explicit pieces; `basis` must be d x q
    /// with orthonormal columns and the GPs must share a training design.
    pub fn from_parts(
        center: Vec<f64>,
        scale: Vec<f64>,
        basis: DMatrix<f64>,
        gps: Vec<GpState>,
    ) -> Self {
        assert_eq!(center.len(), scale.len());
        assert_eq!(basis.nrows(), center.len());
        assert_eq!(basis.ncols(), gps.len());
        Self {
            center,
            scale,
            basis,
            gps,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.center.len()
    }

    pub fn param_dim(&self) -> usize {
        self.gps[0].input_dim()
    }

    pub fn q(&self) -> usize {
        self.gps.len()
    }

    pub fn n_train(&self) -> usize {
        self.gps[0].len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn gps(&self) -> &[GpState] {
        &self.gps
    }

    /// `G B`, the map from latent scores to centered outputs.
    pub fn scaled_basis(&self) -> DMatrix<f64> {
        let mut a = self.basis.clone();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                a[(i, j)] *= self.scale[i];
            }
        }
        a
    }

    /// Assembles `G B diag(latent) B^T G` for a vector of latent variances
    /// or variance reductions.
    pub fn output_cov(&self, latent: &[f64]) -> DMatrix<f64> {
        let a = self.scaled_basis();
        let d = self.output_dim();
        let mut m = DMatrix::zeros(d, d);
        for (j, v) in latent.iter().enumerate() {
            let col = a.column(j);
            for r in 0..d {
                for c in 0..d {
                    m[(r, c)] += v * col[r] * col[c];
                }
            }
        }
        m
    }

    pub fn predict(&self, query: &[f64]) -> EmulatorPrediction {
        let q = self.q();
        let mut latent_means = Vec::with_capacity(q);
        let mut latent_vars = Vec::with_capacity(q);
        for gp in &self.gps {
            let (m, v) = gp.predict(query);
            latent_means.push(m);
            latent_vars.push(v);
        }
        let d = self.output_dim();
        let mut mean = self.center.clone();
        for i in 0..d {
            for j in 0..q {
                mean[i] += self.scale[i] * self.basis[(i, j)] * latent_means[j];
            }
        }
        let cov = self.output_cov(&latent_vars);
        EmulatorPrediction {
            mean,
            latent_means,
            latent_vars,
            cov,
        }
    }

    /// Per-query latent variance reductions from a hypothetical evaluation at
    /// `candidate`; row i holds the q reductions at `queries[i]`. The output
    /// covariance reduction at query theta is `output_cov(&row)`.
    pub fn fantasy(&self, candidate: &[f64], queries: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut per_gp: Vec<(Vec<f64>, f64)> = Vec::with_capacity(self.q());
        for gp in &self.gps {
            per_gp.push(gp.fantasy(candidate, queries));
        }
        (0..queries.len())
            .map(|i| per_gp.iter().map(|(red, _)| red[i]).collect())
            .collect()
    }

    /// Kriging believer: appends `new_param` with its own predictive mean as
    /// a pseudo-observation; hyperparameters, basis, center, and scale stay
    /// frozen, so the predictive mean function is unchanged everywhere.
    pub fn believe(&self, new_param: &[f64]) -> Self {
        let gps = self
            .gps
            .iter()
            .map(|gp| {
                let (m, _) = gp.predict(new_param);
                gp.extend(new_param, m)
            })
            .collect();
        Self {
            center: self.center.clone(),
            scale: self.scale.clone(),
            basis: self.basis.clone(),
            gps,
        }
    }

    /// Constant liar: like believe but with a caller-supplied pseudo-output.
    pub fn liar(&self, new_param: &[f64], lie: &[f64]) -> Result<Self, Error> {
        if lie.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: lie.len(),
            });
        }
        let std_lie: Vec<f64> = lie
            .iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(v, (h, s))| (v - h) / s)
            .collect();
        let gps = self
            .gps
            .iter()
            .enumerate()
            .map(|(j, gp)| {
                let target: f64 = (0..self.output_dim())
                    .map(|i| self.basis[(i, j)] * std_lie[i])
                    .sum();
                gp.extend(new_param, target)
            })
            .collect();
        Ok(Self {
            center: self.center.clone(),
            scale: self.scale.clone(),
            basis: self.basis.clone(),
            gps,
        })
    }
}

/// Uniform random dataset helper used by tests and examples.
pub fn random_params<R: Rng>(bounds: &crate::Bounds, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count).map(|_| bounds.sample_uniform(rng)).collect()
}
