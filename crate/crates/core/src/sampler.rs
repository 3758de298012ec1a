//! Single-site Metropolis sampling of outcome configurations.
//!
//! Each chain owns its configuration, the cached cluster decomposition and a
//! ChaCha8 stream. Flips are evaluated through [`plan_flip`], which only
//! touches the clusters around the flipped vertex.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::CellComplex;
use crate::weights::{
    apply_flip, decompose, plan_flip, ClusterDecomposition, OutcomeConfig, QcMode, Scratch,
    WeightError, WeightModel,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    Hot,
    ColdKeep,
    ColdMerge,
}

impl std::str::FromStr for Start {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "hot" => Ok(Start::Hot),
            "coldkeep" | "cold" => Ok(Start::ColdKeep),
            "coldmerge" => Ok(Start::ColdMerge),
            other => Err(format!("unknown start policy `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerParams {
    pub burn_in_sweeps: u64,
    pub thinning_sweeps: u64,
    pub n_samples: u64,
    pub start: Start,
    pub seed: u64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            burn_in_sweeps: 1000,
            thinning_sweeps: 10,
            n_samples: 2000,
            start: Start::Hot,
            seed: 1,
        }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<(), SamplerError> {
        for (name, value) in [
            ("burn_in_sweeps", self.burn_in_sweeps),
            ("thinning_sweeps", self.thinning_sweeps),
            ("n_samples", self.n_samples),
        ] {
            if value == 0 {
                return Err(SamplerError::InvalidParams(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("invalid sampler parameters: {0}")]
    InvalidParams(String),
    #[error("the starting configuration has zero probability")]
    ZeroWeightStart,
    #[error(transparent)]
    Weight(#[from] WeightError),
}

/// Seed for the `index`-th independent stream under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index.wrapping_add(1));
    rng.next_u64()
}

#[derive(Debug)]
pub struct ChainState {
    dec: ClusterDecomposition,
    rng: ChaCha8Rng,
    scratch: Scratch,
    pub sweeps_done: u64,
    pub accept_count: u64,
    pub propose_count: u64,
}

impl ChainState {
    pub fn config(&self) -> &OutcomeConfig {
        self.dec.config()
    }

    pub fn decomposition(&self) -> &ClusterDecomposition {
        &self.dec
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.propose_count == 0 {
            0.0
        } else {
            self.accept_count as f64 / self.propose_count as f64
        }
    }
}

pub fn init_chain(
    complex: &CellComplex,
    model: &WeightModel,
    params: &SamplerParams,
) -> Result<ChainState, SamplerError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = complex.n_vertices();
    let config = match params.start {
        Start::ColdKeep => OutcomeConfig::all_keep(n),
        Start::ColdMerge => OutcomeConfig::all_merge(n),
        Start::Hot => OutcomeConfig::from_merge_flags((0..n).map(|_| rng.random_bool(0.5)).collect()),
    };
    if config.n_merge() > 0 && model.merge_forbidden() {
        return Err(SamplerError::ZeroWeightStart);
    }
    let dec = decompose(complex, &config)?;
    Ok(ChainState {
        dec,
        rng,
        scratch: Scratch::for_complex(complex),
        sweeps_done: 0,
        accept_count: 0,
        propose_count: 0,
    })
}

/// Proposes toggling `v` and accepts with probability `min(1, ratio)`.
pub fn metropolis_step(
    state: &mut ChainState,
    model: &WeightModel,
    complex: &CellComplex,
    v: usize,
) -> Result<bool, SamplerError> {
    state.propose_count += 1;
    let plan = plan_flip(model, complex, &state.dec, v, &mut state.scratch)?;
    let accept = if plan.log_ratio >= 0.0 {
        true
    } else if plan.log_ratio == f64::NEG_INFINITY {
        false
    } else {
        state.rng.random::<f64>() < plan.log_ratio.exp()
    };
    if accept {
        apply_flip(complex, &mut state.dec, &plan, &mut state.scratch);
        state.accept_count += 1;
    }
    Ok(accept)
}

/// `n_V` proposals at uniformly random vertices.
pub fn sweep(
    state: &mut ChainState,
    model: &WeightModel,
    complex: &CellComplex,
) -> Result<(), SamplerError> {
    let n = complex.n_vertices();
    for _ in 0..n {
        let v = state.rng.random_range(0..n);
        metropolis_step(state, model, complex, v)?;
    }
    state.sweeps_done += 1;
    #[cfg(debug_assertions)]
    {
        let fresh = decompose(complex, state.dec.config())?;
        assert!(
            state.dec.same_as(&fresh),
            "cached decomposition diverged after sweep {}",
            state.sweeps_done
        );
    }
    Ok(())
}

/// Sample-time statistic of a chain.
pub type Observer<'a> = Box<dyn FnMut(&ClusterDecomposition, &CellComplex) -> f64 + 'a>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleStream {
    pub names: Vec<String>,
    /// One row per sample, one column per observer.
    pub rows: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub sweeps: u64,
    /// Samples containing a cluster larger than the exact q_c cap, whose
    /// weight therefore came from the fallback bound.
    pub fallback_samples: u64,
}

impl SampleStream {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// Burn-in, then calls `visit` every `thinning_sweeps` sweeps, `n_samples`
/// times.
pub fn run_with(
    complex: &CellComplex,
    model: &WeightModel,
    params: &SamplerParams,
    mut visit: impl FnMut(&ChainState),
) -> Result<ChainState, SamplerError> {
    let mut state = init_chain(complex, model, params)?;
    for _ in 0..params.burn_in_sweeps {
        sweep(&mut state, model, complex)?;
    }
    for _ in 0..params.n_samples {
        for _ in 0..params.thinning_sweeps {
            sweep(&mut state, model, complex)?;
        }
        visit(&state);
    }
    Ok(state)
}

pub fn run(
    complex: &CellComplex,
    model: &WeightModel,
    params: &SamplerParams,
    observers: Vec<(String, Observer<'_>)>,
) -> Result<SampleStream, SamplerError> {
    let (names, mut fns): (Vec<String>, Vec<Observer<'_>>) = observers.into_iter().unzip();
    let cap = match model.qc_mode() {
        QcMode::Exact { cap, .. } => Some(cap),
        _ => None,
    };
    let mut rows = Vec::with_capacity(params.n_samples as usize);
    let mut fallback_samples = 0;
    let state = run_with(complex, model, params, |s| {
        let dec = s.decomposition();
        if cap.is_some_and(|cap| dec.max_cluster_size() > cap) {
            fallback_samples += 1;
        }
        rows.push(fns.iter_mut().map(|f| f(dec, complex)).collect());
    })?;
    Ok(SampleStream {
        names,
        rows,
        acceptance_rate: state.acceptance_rate(),
        sweeps: state.sweeps_done,
        fallback_samples,
    })
}

pub fn n_merge_observer<'a>() -> (String, Observer<'a>) {
    ("n_merge".into(), Box::new(|dec, _| dec.n_merge() as f64))
}

/// Integrated autocorrelation time `τ = 1/2 + Σ_t ρ(t)` with the
/// self-consistent window `W >= c τ(W)`, `c = 6`. Samples are independent
/// when `τ = 1/2`.
pub fn integrated_autocorr_time(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return 0.5;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0 = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return 0.5;
    }
    let mut tau = 0.5;
    for t in 1..n / 2 {
        let ct = centered[..n - t]
            .iter()
            .zip(&centered[t..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64;
        tau += ct / c0;
        if (t as f64) >= 6.0 * tau {
            break;
        }
    }
    tau.max(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, Boundary, LatticeSpec};
    use crate::weights::{log_weight_ratio, QcMode};

    fn honeycomb(l: usize) -> CellComplex {
        build_lattice(&LatticeSpec::honeycomb(l, Boundary::Torus)).unwrap()
    }

    fn params(start: Start, seed: u64) -> SamplerParams {
        SamplerParams {
            burn_in_sweeps: 10,
            thinning_sweeps: 1,
            n_samples: 50,
            start,
            seed,
        }
    }

    #[test]
    fn cold_keep_starts_empty() {
        let c = honeycomb(3);
        let m = WeightModel::new(0.5, QcMode::LowerBound).unwrap();
        let s = init_chain(&c, &m, &params(Start::ColdKeep, 1)).unwrap();
        assert_eq!(s.config().n_merge(), 0);
    }

    #[test]
    fn hot_start_is_deterministic() {
        let c = honeycomb(4);
        let m = WeightModel::new(0.5, QcMode::LowerBound).unwrap();
        let a = init_chain(&c, &m, &params(Start::Hot, 77)).unwrap();
        let b = init_chain(&c, &m, &params(Start::Hot, 77)).unwrap();
        assert_eq!(a.config(), b.config());
        assert!(a.config().n_merge() > 0);
    }

    #[test]
    fn cold_merge_at_fixed_point_is_rejected() {
        let c = honeycomb(3);
        let m = WeightModel::new(1.0, QcMode::LowerBound).unwrap();
        assert_eq!(
            init_chain(&c, &m, &params(Start::ColdMerge, 1)).unwrap_err(),
            SamplerError::ZeroWeightStart
        );
    }

    #[test]
    fn zero_counts_are_rejected() {
        let mut p = params(Start::Hot, 1);
        p.thinning_sweeps = 0;
        assert!(matches!(p.validate(), Err(SamplerError::InvalidParams(_))));
    }

    #[test]
    fn uphill_moves_are_always_accepted() {
        // At small g merging is strongly favoured.
        let c = honeycomb(4);
        let m = WeightModel::new(0.1, QcMode::LowerBound).unwrap();
        let mut s = init_chain(&c, &m, &params(Start::ColdKeep, 5)).unwrap();
        for v in 0..c.n_vertices() {
            let r = log_weight_ratio(&m, &c, s.decomposition(), v).unwrap();
            if r >= 0.0 {
                assert!(metropolis_step(&mut s, &m, &c, v).unwrap());
            }
        }
    }

    #[test]
    fn fixed_point_never_merges() {
        let c = honeycomb(3);
        let m = WeightModel::new(1.0, QcMode::LowerBound).unwrap();
        let mut s = init_chain(&c, &m, &params(Start::ColdKeep, 2)).unwrap();
        for _ in 0..20 {
            sweep(&mut s, &m, &c).unwrap();
        }
        assert_eq!(s.config().n_merge(), 0);
        assert_eq!(s.accept_count, 0);
        assert_eq!(s.sweeps_done, 20);
    }

    #[test]
    fn acceptance_frequency_matches_ratio() {
        let c = honeycomb(3);
        let m = WeightModel::new(0.8, QcMode::LowerBound).unwrap();
        let mut s = init_chain(&c, &m, &params(Start::ColdKeep, 3)).unwrap();
        let p = log_weight_ratio(&m, &c, s.decomposition(), 0).unwrap().exp();
        assert!(p < 1.0);
        let trials = 100_000;
        let mut hits = 0;
        for _ in 0..trials {
            if metropolis_step(&mut s, &m, &c, 0).unwrap() {
                hits += 1;
                // Undo: Merge → Keep is uphill here and always accepted.
                assert!(metropolis_step(&mut s, &m, &c, 0).unwrap());
            }
        }
        let freq = hits as f64 / trials as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((freq - p).abs() < 3.0 * sigma, "{freq} vs {p}");
    }

    #[test]
    fn runs_are_reproducible_and_fixed_point_is_empty() {
        let c = honeycomb(4);
        let m = WeightModel::new(0.7, QcMode::LowerBound).unwrap();
        let p = params(Start::Hot, 11);
        let a = run(&c, &m, &p, vec![n_merge_observer()]).unwrap();
        let b = run(&c, &m, &p, vec![n_merge_observer()]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 50);
        let fixed = WeightModel::new(1.0, QcMode::LowerBound).unwrap();
        let z = run(&c, &fixed, &params(Start::ColdKeep, 1), vec![n_merge_observer()]).unwrap();
        assert!(z.column("n_merge").unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::BTreeSet<u64> = (0..100).map(|i| derive_seed(42, i)).collect();
        assert_eq!(s.len(), 100);
        assert_eq!(derive_seed(42, 3), derive_seed(42, 3));
    }

    #[test]
    fn autocorrelation_of_white_and_correlated_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let white: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let t = integrated_autocorr_time(&white);
        assert!((t - 0.5).abs() < 0.1, "{t}");
        // AR(1) with ρ = 0.9 has τ = (1 + ρ) / (2 (1 - ρ)) = 9.5.
        let mut x = 0.0;
        let ar: Vec<f64> = (0..200_000)
            .map(|_| {
                x = 0.9 * x + rng.random::<f64>() - 0.5;
                x
            })
            .collect();
        let t = integrated_autocorr_time(&ar);
        assert!((t - 9.5).abs() < 1.5, "{t}");
        assert_eq!(integrated_autocorr_time(&[1.0; 10]), 0.5);
    }
}
