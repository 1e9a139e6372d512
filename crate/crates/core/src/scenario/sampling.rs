use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::profile::{Curve, LoadProfile, HOURS_PER_WEEK};
use super::ScenarioError;
use crate::grid::{Grid, LineId};

/// Truncated normal distribution of the q/p ratio of loads.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PqRatio {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for PqRatio {
    fn default() -> Self {
        PqRatio {
            mean: 0.2,
            sd: 0.05,
            min: 0.0,
            max: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Samples per outage configuration.
    pub n_s: usize,
    pub load_profile: LoadProfile,
    pub pq_ratio: PqRatio,
    /// Probability that a non-slack generator is disconnected.
    pub gen_outage_prob: f64,
    /// Standard deviation of the mean-one lognormal noise.
    pub noise_rel: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n_s: 2000,
            load_profile: LoadProfile::default(),
            pq_ratio: PqRatio::default(),
            gen_outage_prob: 0.02,
            noise_rel: 0.05,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::InvalidConfig(m.into()));
        if self.n_s < 1 {
            return bad("n_s must be at least 1");
        }
        if !(0.0..1.0).contains(&self.gen_outage_prob) {
            return bad("gen_outage_prob must lie in [0, 1)");
        }
        if !(self.noise_rel >= 0.0 && self.noise_rel.is_finite()) {
            return bad("noise_rel must be non-negative");
        }
        let pq = &self.pq_ratio;
        if !(pq.sd >= 0.0 && pq.min <= pq.mean && pq.mean <= pq.max) {
            return bad("pq_ratio needs sd >= 0 and min <= mean <= max");
        }
        if !self.load_profile.is_valid() {
            return bad("load profile needs a positive floor and positive widths");
        }
        Ok(())
    }
}

/// Draws operating points around a base grid.
pub struct Sampler {
    curve: Curve,
    noise: Option<LogNormal<f64>>,
    pq: PqRatio,
    pq_normal: Option<Normal<f64>>,
    gen_outage_prob: f64,
}

impl Sampler {
    pub fn new(config: &SamplingConfig) -> Result<Self, ScenarioError> {
        config.validate()?;
        let s = config.noise_rel;
        let noise = (s > 0.0).then(|| LogNormal::new(-0.5 * s * s, s).expect("valid sigma"));
        let pq = config.pq_ratio;
        let pq_normal = (pq.sd > 0.0).then(|| Normal::new(pq.mean, pq.sd).expect("valid sd"));
        Ok(Sampler {
            curve: config.load_profile.curve(),
            noise,
            pq,
            pq_normal,
            gen_outage_prob: config.gen_outage_prob,
        })
    }

    pub fn curve(&self) -> &Curve {
        &self.curve
    }

    fn noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.noise.map_or(1.0, |d| d.sample(rng))
    }

    fn ratio<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let Some(d) = self.pq_normal else {
            return self.pq.mean;
        };
        loop {
            let r = d.sample(rng);
            if (self.pq.min..=self.pq.max).contains(&r) {
                return r;
            }
        }
    }

    /// One sampled state of `grid` with `outage` disconnected.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        grid: &Grid,
        outage: Option<LineId>,
        rng: &mut R,
    ) -> Result<Grid, ScenarioError> {
        let mut g = grid.clone();
        if let Some(k) = outage {
            g.lines
                .get_mut(k.index())
                .ok_or(ScenarioError::UnknownLine(k))?
                .in_service = false;
        }
        if !g.generators.iter().any(|x| x.slack && x.in_service) {
            return Err(ScenarioError::NoSlackSurviving);
        }

        let level = self.curve.at(rng.random::<f64>() * HOURS_PER_WEEK);
        for load in &mut g.loads {
            load.p *= level * self.noise(rng);
            load.q = load.p * self.ratio(rng);
        }
        let total: f64 = g.loads.iter().map(|l| l.p).sum();

        for gen in g.generators.iter_mut().filter(|x| x.in_service && !x.slack) {
            if rng.random::<f64>() < self.gen_outage_prob {
                gen.in_service = false;
                gen.p_set = 0.0;
            }
        }
        let alive: Vec<usize> = (0..g.generators.len())
            .filter(|&i| g.generators[i].in_service)
            .collect();
        if alive.is_empty() {
            return Err(ScenarioError::AllGeneratorsOut);
        }
        dispatch(&mut g, &alive, total, || self.noise(rng));
        Ok(g)
    }
}

/// Shares `total` among the `alive` generators in proportion to their
/// capacity times `noise()`, within `[0, p_max]`.
pub(crate) fn dispatch(g: &mut Grid, alive: &[usize], total: f64, mut noise: impl FnMut() -> f64) {
    let cap: f64 = alive.iter().map(|&i| g.generators[i].p_max.max(0.0)).sum();
    let mut p: Vec<f64> = alive
        .iter()
        .map(|&i| {
            let share = if cap > 0.0 {
                g.generators[i].p_max.max(0.0) / cap
            } else {
                1.0 / alive.len() as f64
            };
            total * share * noise()
        })
        .collect();
    let p_max: Vec<f64> = alive.iter().map(|&i| g.generators[i].p_max.max(0.0)).collect();
    redistribute(&mut p, &p_max, total);
    for (&i, p) in alive.iter().zip(p) {
        g.generators[i].p_set = p;
    }
}

/// Clips every set point to `[0, p_max]` and rescales the unclipped ones so
/// the sum equals `total`, as far as the capacities allow.
fn redistribute(p: &mut [f64], p_max: &[f64], total: f64) {
    for (x, &m) in p.iter_mut().zip(p_max) {
        *x = x.clamp(0.0, m);
    }
    for _ in 0..p.len() {
        let fixed: f64 = p.iter().zip(p_max).filter(|(x, m)| **x >= **m).map(|(x, _)| *x).sum();
        let free: f64 = p.iter().zip(p_max).filter(|(x, m)| **x < **m).map(|(x, _)| *x).sum();
        if free <= 0.0 {
            return;
        }
        let k = ((total - fixed) / free).max(0.0);
        let mut clipped = false;
        for (x, &m) in p.iter_mut().zip(p_max) {
            if *x < m {
                *x *= k;
                if *x > m {
                    *x = m;
                    clipped = true;
                }
            }
        }
        if !clipped {
            return;
        }
    }
}

/// Samples one state; see [`Sampler::sample`].
pub fn sample_case<R: Rng + ?Sized>(
    grid: &Grid,
    outage: Option<LineId>,
    config: &SamplingConfig,
    rng: &mut R,
) -> Result<Grid, ScenarioError> {
    Sampler::new(config)?.sample(grid, outage, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn redistribute_respects_caps() {
        let mut p = vec![60.0, 10.0, 10.0];
        redistribute(&mut p, &[50.0, 100.0, 100.0], 80.0);
        assert_eq!(p[0], 50.0);
        assert!((p.iter().sum::<f64>() - 80.0).abs() < 1e-12);
        let mut p = vec![10.0, 10.0];
        redistribute(&mut p, &[20.0, 20.0], 100.0);
        assert_eq!(p, vec![20.0, 20.0]);
    }
}
