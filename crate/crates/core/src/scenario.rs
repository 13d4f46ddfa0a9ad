//! Random MIMO-OFDM instances.
//!
//! Each realization draws `L` complex Gaussian `N x N` tap matrices with
//! exponentially decaying variances, takes their length-`J` DFT to get one
//! channel matrix per subcarrier, and turns the eigenvalues of `H^H H` into
//! per-eigenchannel objectives. The total budget is `J` (unit power per
//! subcarrier) and the noise power follows from `SNR = 1 / (N sigma_n^2)`.
//!
//! Randomness is portable: realization `r` reads ChaCha20 seeded with
//! `seed` on stream `r`, and normals come from Box-Muller on consecutive
//! uniform pairs `u = next_u64 >> 11` scaled by `2^-53`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::boxed::BoxProblem;
use crate::error::{Error, Result};
use crate::instance::ProblemInstance;
use crate::objective::SubchannelObjective;
use crate::problem::Problem;
use crate::simplex::SimplexProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioObjective {
    /// Per-eigenchannel MSE `1 / (1 + lambda p / sigma_n^2)`, minimized.
    InverseMse,
    /// Per-eigenchannel capacity `log(1 + lambda p / sigma_n^2)`.
    LogCapacity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub antennas: usize,
    pub taps: usize,
    pub decay: f64,
    pub subcarriers: usize,
    pub snr_db: f64,
    /// Lower-bound multiplier; no lower bounds when absent.
    pub gamma: Option<f64>,
    /// Upper-bound multiplier; no upper bounds when absent.
    pub tau: Option<f64>,
    /// Bounds are `gamma P / D` and `tau P / D`. Defaults to `N J`, the
    /// uniform share, so `gamma = tau = 1` pins the uniform allocation.
    pub box_denominator: Option<f64>,
    pub realizations: usize,
    pub seed: u64,
    pub objective: ScenarioObjective,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            antennas: 4,
            taps: 7,
            decay: 0.5,
            subcarriers: 256,
            snr_db: 10.0,
            gamma: None,
            tau: None,
            box_denominator: None,
            realizations: 1,
            seed: 0,
            objective: ScenarioObjective::InverseMse,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidProblem(m));
        if self.antennas == 0 || self.taps == 0 || self.subcarriers == 0 {
            return bad("antennas, taps and subcarriers must be at least 1".into());
        }
        if !(self.decay > 0.0) || !self.decay.is_finite() {
            return bad(format!("decay must be positive, got {}", self.decay));
        }
        if !self.snr_db.is_finite() {
            return bad(format!("snr_db must be finite, got {}", self.snr_db));
        }
        let gamma = self.gamma.unwrap_or(0.0);
        let tau = self.tau.unwrap_or(f64::INFINITY);
        if !(gamma >= 0.0) || !(tau > 0.0) || gamma > tau {
            return bad(format!("need 0 <= gamma <= tau and tau > 0, got gamma {gamma}, tau {tau}"));
        }
        if let Some(d) = self.box_denominator {
            if !(d > 0.0) || !d.is_finite() {
                return bad(format!("box_denominator must be positive, got {d}"));
            }
        }
        let lower_sum = self.channels() as f64 * gamma * self.budget() / self.denominator();
        if lower_sum > self.budget() * (1.0 + 1e-12) {
            return Err(Error::InfeasibleBudget {
                lower_sum,
                budget: self.budget(),
            });
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.antennas * self.subcarriers
    }

    pub fn budget(&self) -> f64 {
        self.subcarriers as f64
    }

    pub fn noise_power(&self) -> f64 {
        1.0 / (self.antennas as f64 * 10f64.powf(self.snr_db / 10.0))
    }

    fn denominator(&self) -> f64 {
        self.box_denominator.unwrap_or(self.channels() as f64)
    }

    fn has_boxes(&self) -> bool {
        self.gamma.is_some() || self.tau.is_some()
    }
}

/// Tap variances proportional to `decay^l`, summing to one.
pub fn tap_variances(taps: usize, decay: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..taps).map(|l| decay.powi(l as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

struct Normals {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl Normals {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        self.spare = Some(r * (2.0 * PI * u2).sin());
        r * (2.0 * PI * u2).cos()
    }

    /// Circularly symmetric complex Gaussian with variance `var`.
    fn complex(&mut self, var: f64) -> Complex<f64> {
        let s = (0.5 * var).sqrt();
        let re = self.next();
        let im = self.next();
        Complex::new(s * re, s * im)
    }
}

/// Eigenvalues of `H_j^H H_j` for every subcarrier of realization `r`,
/// subcarrier-major and descending within a subcarrier.
pub fn channel_gains(spec: &ScenarioSpec, realization: usize) -> Vec<f64> {
    let n = spec.antennas;
    let j_count = spec.subcarriers;
    let mut normals = Normals::new(spec.seed, realization as u64);
    let taps: Vec<DMatrix<Complex<f64>>> = tap_variances(spec.taps, spec.decay)
        .into_iter()
        .map(|var| DMatrix::from_fn(n, n, |_, _| normals.complex(var)))
        .collect();
    let mut gains = Vec::with_capacity(n * j_count);
    for j in 0..j_count {
        let mut h = DMatrix::<Complex<f64>>::zeros(n, n);
        for (l, tap) in taps.iter().enumerate() {
            let angle = -2.0 * PI * ((j * l) % j_count) as f64 / j_count as f64;
            h += tap * Complex::from_polar(1.0, angle);
        }
        let gram = h.adjoint() * &h;
        let mut eig: Vec<f64> = gram.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        gains.extend(eig);
    }
    gains
}

/// The problem of one realization.
pub fn realization_problem(spec: &ScenarioSpec, realization: usize) -> Result<Problem> {
    spec.validate()?;
    let sigma2 = spec.noise_power();
    let objectives = channel_gains(spec, realization)
        .into_iter()
        .map(|lambda| {
            let a = lambda.max(f64::MIN_POSITIVE) / sigma2;
            match spec.objective {
                ScenarioObjective::InverseMse => SubchannelObjective::inverse_mse(1.0, a, 1.0),
                ScenarioObjective::LogCapacity => SubchannelObjective::log_capacity(1.0, a, 1.0),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let k = objectives.len();
    let budget = spec.budget();
    if !spec.has_boxes() {
        return Ok(Problem::Simplex(SimplexProblem::new(objectives, budget)?));
    }
    let unit = budget / spec.denominator();
    let lower = vec![spec.gamma.unwrap_or(0.0) * unit; k];
    let upper = vec![spec.tau.map_or(f64::INFINITY, |t| t * unit); k];
    Ok(Problem::Box(BoxProblem::new(objectives, budget, lower, upper)?))
}

/// All realizations of the spec as instance records.
pub fn generate(spec: &ScenarioSpec) -> Result<Vec<ProblemInstance>> {
    spec.validate()?;
    (0..spec.realizations)
        .map(|r| {
            let problem = realization_problem(spec, r)?;
            Ok(ProblemInstance::from_problem(&problem).with_notes(describe(spec, r)))
        })
        .collect()
}

fn describe(spec: &ScenarioSpec, realization: usize) -> String {
    let family = match spec.objective {
        ScenarioObjective::InverseMse => "inverse_mse",
        ScenarioObjective::LogCapacity => "log_capacity",
    };
    format!(
        "MIMO-OFDM realization {realization} of seed {seed}: N={n}, L={l}, decay={d}, J={j}, SNR={snr} dB. \
         Subchannel k = j*N + i is eigenvalue i (descending) of H_j^H H_j; objective {family}(w=1, a=lambda/sigma_n^2, b=1) \
         with sigma_n^2 = 1/(N*10^(SNR/10)) = {s2:e}; budget P = J. Box bounds gamma*P/D and tau*P/D with D = {den}.",
        seed = spec.seed,
        n = spec.antennas,
        l = spec.taps,
        d = spec.decay,
        j = spec.subcarriers,
        snr = spec.snr_db,
        s2 = spec.noise_power(),
        den = spec.denominator(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioSpec {
        ScenarioSpec {
            subcarriers: 16,
            ..ScenarioSpec::default()
        }
    }

    #[test]
    fn tap_profile_halves() {
        let v = tap_variances(7, 0.5);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for l in 1..7 {
            assert!((v[l] / v[0] - 0.5f64.powi(l as i32)).abs() < 1e-15);
        }
    }

    #[test]
    fn single_tap_is_flat() {
        let spec = ScenarioSpec { taps: 1, ..small() };
        let g = channel_gains(&spec, 0);
        for j in 1..16 {
            for i in 0..4 {
                assert!((g[j * 4 + i] - g[i]).abs() <= 1e-12 * g[i].max(1.0));
            }
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let spec = ScenarioSpec {
            realizations: 2,
            gamma: Some(0.4),
            tau: Some(1.6),
            ..small()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_ne!(a[0].objectives, a[1].objectives);
    }

    #[test]
    fn eigenvalue_mass_matches_the_tap_normalization() {
        // Unit total tap variance per entry gives E[tr H^H H] = N^2.
        let spec = ScenarioSpec {
            subcarriers: 8,
            ..ScenarioSpec::default()
        };
        let reps = 1000;
        let mut total = 0.0;
        for r in 0..reps {
            let g = channel_gains(&spec, r);
            total += g.iter().sum::<f64>() / spec.subcarriers as f64;
        }
        let mean = total / reps as f64;
        assert!((mean / 16.0 - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn infeasible_lower_bounds_are_rejected() {
        let spec = ScenarioSpec { gamma: Some(1.5), ..small() };
        assert!(matches!(spec.validate(), Err(Error::InfeasibleBudget { .. })));
    }
}
