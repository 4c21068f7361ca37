//! Built-in calibration problems with analytic unnormalized posteriors, plus
//! an adapter for driving external simulator processes over a line-oriented
//! JSON protocol.

use std::io::{BufRead, Write};
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::posterior::{mvn_logpdf, ObsModel, Prior};
use crate::scheduler::DurationModel;
use crate::Bounds;

#[derive(Debug, Clone)]
enum Kind {
    Banana,
    Bimodal,
    Unimodal,
    Unidentifiable,
    /// eta_i = theta_i^2 + 0.5 theta_i * sum_{j != i} theta_j
    Quadratic,
    /// sin(theta) + drift*theta
    Sine { drift: f64 },
    /// eta(x, theta) = sin(10 x theta) at fixed design points
    Discrepancy { design_points: Vec<f64> },
    FrescoLike(FrescoConstants),
}

#[derive(Debug, Clone, serde::Deserialize)]
struct FrescoConstants {
    angles: Vec<f64>,
    theta_star: Vec<f64>,
    amp1: f64,
    decay1: f64,
    freq1: f64,
    phase1: f64,
    amp2: f64,
    decay2: f64,
    freq2: f64,
    phase2: f64,
    offset_scale: f64,
    sigma_diag: f64,
}

impl FrescoConstants {
    fn eval(&self, theta: &[f64]) -> Vec<f64> {
        let (v, r, ws) = (theta[0], theta[1], theta[2]);
        self.angles
            .iter()
            .map(|&angle| {
                let x = angle / 180.0;
                self.amp1 * (-self.decay1 * x * r).exp() * (self.freq1 * x * v + self.phase1).sin()
                    + self.amp2
                        * (-self.decay2 * x * r).exp()
                        * (self.freq2 * x * ws + self.phase2).sin()
                    + self.offset_scale * v / 60.0 * (1.0 - x)
            })
            .collect()
    }
}

/// A calibration target: simulator, bounds, observation model, prior, and a
/// runtime law for the simulated scheduler mode.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub p: usize,
    pub d: usize,
    pub bounds: Bounds,
    pub obs: ObsModel,
    pub prior: Prior,
    pub duration_model: DurationModel,
    kind: Kind,
}

impl Problem {
    pub fn evaluate(&self, theta: &[f64]) -> Result<Vec<f64>, Error> {
        if theta.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: theta.len(),
            });
        }
        if !self.bounds.contains(theta) {
            return Err(Error::OutOfBounds(theta.to_vec()));
        }
        Ok(match &self.kind {
            Kind::Banana => vec![theta[0], theta[1] + 0.03 * theta[0] * theta[0]],
            Kind::Bimodal => vec![theta[1] - theta[0] * theta[0], theta[1] - theta[0]],
            Kind::Unimodal => {
                vec![theta[0] * theta[0] + theta[0] * theta[1] + theta[1] * theta[1]]
            }
            Kind::Unidentifiable => theta.to_vec(),
            Kind::Quadratic => {
                let total: f64 = theta.iter().sum();
                theta
                    .iter()
                    .map(|&ti| ti * ti + 0.5 * ti * (total - ti))
                    .collect()
            }
            Kind::Sine { drift } => vec![theta[0].sin() + drift * theta[0]],
            Kind::Discrepancy { design_points } => design_points
                .iter()
                .map(|&x| (10.0 * x * theta[0]).sin())
                .collect(),
            Kind::FrescoLike(c) => c.eval(theta),
        })
    }

    /// Unnormalized posterior density f_N(y; eta(theta), Sigma) * p(theta).
    pub fn true_unnorm_posterior(&self, theta: &[f64]) -> Result<f64, Error> {
        let eta = self.evaluate(theta)?;
        let log_pdf = mvn_logpdf(&self.obs.data, &eta, &self.obs.sigma)?;
        Ok(log_pdf.exp() * self.prior.density(theta))
    }

    /// The discrepancy toy's design points (observation locations), if any.
    pub fn design_points(&self) -> Option<&[f64]> {
        match &self.kind {
            Kind::Discrepancy { design_points } => Some(design_points),
            Kind::FrescoLike(c) => Some(&c.angles),
            _ => None,
        }
    }
}

fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(values))
}

fn quadratic_problem(name: &str, p: usize, half_width: f64, sigma: f64) -> Problem {
    let bounds = Bounds::new(vec![-half_width; p], vec![half_width; p]).unwrap();
    Problem {
        name: name.to_string(),
        p,
        d: p,
        obs: ObsModel::new(vec![0.0; p], diag(&vec![sigma; p])).unwrap(),
        prior: Prior::UniformBox(bounds.clone()),
        bounds,
        duration_model: DurationModel::Constant { seconds: 1.0 },
        kind: Kind::Quadratic,
    }
}

/// Looks up a built-in problem by name. Names: banana, bimodal, unimodal,
/// unidentifiable, 3d, 6d, 10d, sine, sine-shifted, discrepancy-toy,
/// frescolike.
pub fn get_problem(name: &str) -> Result<Problem, Error> {
    let problem = match name {
        "banana" => {
            let bounds = Bounds::new(vec![-20.0, -10.0], vec![20.0, 5.0]).unwrap();
            Problem {
                name: name.to_string(),
                p: 2,
                d: 2,
                obs: ObsModel::new(vec![0.0, 3.0], diag(&[100.0, 1.0])).unwrap(),
                prior: Prior::UniformBox(bounds.clone()),
                bounds,
                duration_model: DurationModel::Constant { seconds: 1.0 },
                kind: Kind::Banana,
            }
        }
        "bimodal" => {
            let bounds = Bounds::new(vec![-6.0, -4.0], vec![6.0, 8.0]).unwrap();
            Problem {
                name: name.to_string(),
                p: 2,
                d: 2,
                obs: ObsModel::new(
                    vec![0.0, 2.0],
                    diag(&[1.0 / 0.2f64.sqrt(), 1.0 / 0.75f64.sqrt()]),
                )
                .unwrap(),
                prior: Prior::UniformBox(bounds.clone()),
                bounds,
                duration_model: DurationModel::Constant { seconds: 1.0 },
                kind: Kind::Bimodal,
            }
        }
        "unimodal" => {
            let bounds = Bounds::new(vec![-4.0, -4.0], vec![4.0, 4.0]).unwrap();
            Problem {
                name: name.to_string(),
                p: 2,
                d: 1,
                obs: ObsModel::new(vec![-6.0], diag(&[4.0])).unwrap(),
                prior: Prior::UniformBox(bounds.clone()),
                bounds,
                duration_model: DurationModel::Constant { seconds: 1.0 },
                kind: Kind::Unimodal,
            }
        }
        "unidentifiable" => {
            let bounds = Bounds::new(vec![-8.0, -8.0], vec![8.0, 8.0]).unwrap();
            Problem {
                name: name.to_string(),
                p: 2,
                d: 2,
                obs: ObsModel::new(vec![0.0, 0.0], diag(&[100.0, 1.0])).unwrap(),
                prior: Prior::UniformBox(bounds.clone()),
                bounds,
                duration_model: DurationModel::Constant { seconds: 1.0 },
                kind: Kind::Unidentifiable,
            }
        }
        "3d" => quadratic_problem(name, 3, 4.0, 0.5),
        "6d" => quadratic_problem(name, 6, 4.0, 0.5),
        "10d" => quadratic_problem(name, 10, 2.0, 0.25),
        "sine" => {
            let bounds = Bounds::new(vec![-10.0], vec![10.0]).unwrap();
            Problem {
                name: name.to_string(),
                p: 1,
                d: 1,
                obs: ObsModel::new(vec![0.0], diag(&[1.0])).unwrap(),
                prior: Prior::UniformBox(bounds.clone()),
                bounds,
                duration_model: DurationModel::Constant { seconds: 1.0 },
                kind: Kind::Sine { drift: 0.1 },
            }
        }
        "sine-shifted" => {
            let bounds = Bounds::new(vec![-10.0], vec![10.0]).unwrap();
            Problem {
                name: name.to_string(),
                p: 1,
                d: 1,
                obs: ObsModel::new(vec![-5.0], diag(&[1.0])).unwrap(),
                prior: Prior::UniformBox(bounds.clone()),
                bounds,
                duration_model: DurationModel::Constant { seconds: 1.0 },
                kind: Kind::Sine { drift: 0.5 },
            }
        }
        "discrepancy-toy" => {
            let design_points = vec![0.0, 0.25, 0.5, 0.75, 1.0];
            let theta_star = std::f64::consts::PI / 5.0;
            let sigma_eps = 0.2;
            // fixed observed data: eta(theta*) + b + noise, one frozen draw
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let data: Vec<f64> = design_points
                .iter()
                .map(|&x| {
                    let bias = 1.0 - x / 3.0 - 2.0 * x * x / 3.0;
                    let noise: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma_eps;
                    (10.0 * x * theta_star).sin() + bias + noise
                })
                .collect();
            let bounds = Bounds::new(vec![0.0], vec![1.0]).unwrap();
            Problem {
                name: name.to_string(),
                p: 1,
                d: design_points.len(),
                obs: ObsModel::new(
                    data,
                    diag(&vec![sigma_eps * sigma_eps; design_points.len()]),
                )
                .unwrap(),
                prior: Prior::UniformBox(bounds.clone()),
                bounds,
                duration_model: DurationModel::Constant { seconds: 1.0 },
                kind: Kind::Discrepancy { design_points },
            }
        }
        "frescolike" => {
            let constants: FrescoConstants =
                serde_json::from_str(include_str!("../assets/frescolike.json"))
                    .expect("bundled constants parse");
            let d = constants.angles.len();
            let data = constants.eval(&constants.theta_star);
            let bounds = Bounds::new(vec![40.0, 0.7, 2.5], vec![60.0, 1.2, 4.5]).unwrap();
            Problem {
                name: name.to_string(),
                p: 3,
                d,
                obs: ObsModel::new(data, diag(&vec![constants.sigma_diag; d])).unwrap(),
                prior: Prior::UniformBox(bounds.clone()),
                bounds,
                duration_model: DurationModel::Lognormal { mu: 0.0, sigma: 0.5 },
                kind: Kind::FrescoLike(constants),
            }
        }
        other => return Err(Error::UnknownProblem(other.to_string())),
    };
    Ok(problem)
}

pub fn problem_names() -> &'static [&'static str] {
    &[
        "banana",
        "bimodal",
        "unimodal",
        "unidentifiable",
        "3d",
        "6d",
        "10d",
        "sine",
        "sine-shifted",
        "discrepancy-toy",
        "frescolike",
    ]
}

pub fn eval_problem(name: &str, theta: &[f64]) -> Result<Vec<f64>, Error> {
    get_problem(name)?.evaluate(theta)
}

pub fn true_posterior(name: &str, theta: &[f64]) -> Result<f64, Error> {
    get_problem(name)?.true_unnorm_posterior(theta)
}

#[derive(Debug, serde::Serialize)]
struct Request<'a> {
    id: usize,
    theta: &'a [f64],
}

#[derive(Debug, serde::Deserialize)]
struct Response {
    id: usize,
    #[serde(default)]
    eta: Option<Vec<f64>>,
    #[serde(default)]
    error: Option<String>,
}

/// Runs an external simulator process for a single evaluation via the
/// line-oriented protocol: one JSON request on stdin, one JSON response on
/// stdout.
#[derive(Debug, Clone)]
pub struct ExternalSimulator {
    pub command: Vec<String>,
    pub timeout: Duration,
}

impl ExternalSimulator {
    pub fn new(command: Vec<String>, timeout: Duration) -> Self {
        Self { command, timeout }
    }

    pub fn evaluate(&self, id: usize, theta: &[f64]) -> Result<Vec<f64>, Error> {
        let mut child = std::process::Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(std::process::Stdio::piped())
            .stdout(std::process::Stdio::piped())
            .stderr(std::process::Stdio::null())
            .spawn()?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let request = serde_json::to_string(&Request { id, theta }).expect("serializable");
        stdin.write_all(request.as_bytes())?;
        stdin.write_all(b"\n")?;
        drop(stdin);

        // read the response off-thread so the timeout can fire
        let (tx, rx) = std::sync::mpsc::channel::<std::io::Result<String>>();
        std::thread::spawn(move || {
            let mut reader = std::io::BufReader::new(stdout);
            let mut line = String::new();
            let result = reader.read_line(&mut line).map(|_| line);
            let _ = tx.send(result);
        });
        let line = match rx.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Error::Io(e)),
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Timeout(self.timeout));
            }
        };
        let status = child.wait()?;
        if !status.success() {
            return Err(Error::NonzeroExit(format!(
                "{} exited with {status}",
                self.command[0]
            )));
        }
        if line.trim().is_empty() {
            return Err(Error::ProtocolViolation("empty response".to_string()));
        }
        let response: Response = serde_json::from_str(line.trim())
            .map_err(|e| Error::ProtocolViolation(format!("bad response JSON: {e}")))?;
        if response.id != id {
            return Err(Error::ProtocolViolation(format!(
                "response id {} does not match request id {id}",
                response.id
            )));
        }
        if let Some(err) = response.error {
            return Err(Error::SimulatorFailure(err));
        }
        response
            .eta
            .ok_or_else(|| Error::ProtocolViolation("response missing eta".to_string()))
    }
}
