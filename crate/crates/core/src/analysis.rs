//! Spanning-cluster detection, spanning probabilities over `(g, L)` grids
//! and threshold extraction from curve crossings.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{build_lattice, CellComplex, LatticeError, LatticeSpec};
use crate::sampler::{
    derive_seed, integrated_autocorr_time, n_merge_observer, run, SamplerError, SamplerParams,
};
use crate::unionfind::DisplacementSet;
use crate::weights::{ClusterDecomposition, QcMode, Regime, WeightModel};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("complex has neither boundary marks nor torus winding data")]
    MissingBoundaryMarks,
    #[error("curves for L = {l1} and L = {l2} do not cross inside the scanned range")]
    NoCrossing { l1: usize, l2: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Weight(#[from] crate::weights::WeightError),
}

/// What counts as a spanning cluster.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanCriterion {
    /// Boundary contact when the complex has marks, winding otherwise.
    #[default]
    Auto,
    Boundary,
    Winding,
}

impl std::str::FromStr for SpanCriterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(SpanCriterion::Auto),
            "boundary" | "open" => Ok(SpanCriterion::Boundary),
            "winding" | "torus" => Ok(SpanCriterion::Winding),
            other => Err(format!("unknown spanning criterion `{other}`")),
        }
    }
}

/// True when some cluster touches both left and right marked faces, or both
/// top and bottom; on tori without marks, when some cluster winds.
pub fn spans(dec: &ClusterDecomposition, complex: &CellComplex) -> Result<bool, AnalysisError> {
    spans_by(dec, complex, SpanCriterion::Auto)
}

pub fn spans_by(
    dec: &ClusterDecomposition,
    complex: &CellComplex,
    criterion: SpanCriterion,
) -> Result<bool, AnalysisError> {
    let marked = !complex.boundary_marks().is_empty();
    match criterion {
        SpanCriterion::Boundary if marked => Ok(spans_boundary(dec, complex)),
        SpanCriterion::Winding if complex.has_winding_data() => Ok(winds(dec, complex)),
        SpanCriterion::Auto if marked => Ok(spans_boundary(dec, complex)),
        SpanCriterion::Auto if complex.has_winding_data() => Ok(winds(dec, complex)),
        _ => Err(AnalysisError::MissingBoundaryMarks),
    }
}

fn spans_boundary(dec: &ClusterDecomposition, complex: &CellComplex) -> bool {
    let marks = complex.boundary_marks();
    let touching = |side: &[usize]| {
        let mut ids: Vec<usize> = side.iter().map(|&f| dec.cluster_of(f)).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let meets = |a: &[usize], b: &[usize]| {
        let (a, b) = (touching(a), touching(b));
        a.iter().any(|id| b.binary_search(id).is_ok())
    };
    meets(&marks.left, &marks.right) || meets(&marks.bottom, &marks.top)
}

fn winds(dec: &ClusterDecomposition, complex: &CellComplex) -> bool {
    let config = dec.config();
    let mut ds = DisplacementSet::new(complex.n_faces());
    let mut any = false;
    for v in (0..complex.n_vertices()).filter(|&v| config.is_merge(v)) {
        let faces = complex.vertex_faces(v);
        let d0 = complex.incidence_offset(v, 0).unwrap();
        for (slot, &f) in faces.iter().enumerate().skip(1) {
            let d = complex.incidence_offset(v, slot).unwrap();
            any |= ds.union(faces[0], f, [d0[0] - d[0], d0[1] - d[1]]);
        }
    }
    any
}

/// Ids of the clusters that span, for rendering.
pub fn spanning_clusters(
    dec: &ClusterDecomposition,
    complex: &CellComplex,
) -> Result<Vec<usize>, AnalysisError> {
    let mut ids = Vec::new();
    if !complex.boundary_marks().is_empty() {
        let marks = complex.boundary_marks();
        let set = |side: &[usize]| {
            side.iter()
                .map(|&f| dec.cluster_of(f))
                .collect::<std::collections::BTreeSet<_>>()
        };
        let (l, r, b, t) = (set(&marks.left), set(&marks.right), set(&marks.bottom), set(&marks.top));
        ids.extend(l.intersection(&r));
        ids.extend(b.intersection(&t));
    } else if complex.has_winding_data() {
        let config = dec.config();
        let mut ds = DisplacementSet::new(complex.n_faces());
        for v in (0..complex.n_vertices()).filter(|&v| config.is_merge(v)) {
            let faces = complex.vertex_faces(v);
            let d0 = complex.incidence_offset(v, 0).unwrap();
            for (slot, &f) in faces.iter().enumerate().skip(1) {
                let d = complex.incidence_offset(v, slot).unwrap();
                ds.union(faces[0], f, [d0[0] - d[0], d0[1] - d[1]]);
            }
        }
        ids.extend((0..complex.n_faces()).filter(|&f| ds.wraps(f)).map(|f| dec.cluster_of(f)));
    } else {
        return Err(AnalysisError::MissingBoundaryMarks);
    }
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanEstimate {
    pub g: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub n_samples: u64,
    pub p_span: f64,
    pub stderr: f64,
    pub autocorr_time: f64,
}

impl SpanEstimate {
    /// Effective number of independent samples.
    pub fn n_eff(&self) -> f64 {
        (self.n_samples as f64 / (2.0 * self.autocorr_time)).max(1.0)
    }
}

/// Binomial standard error inflated by `sqrt(2 τ)`; never exactly zero when
/// the estimate sits at 0 or 1, so that every point carries some weight.
fn span_stderr(p: f64, n: u64, tau: f64) -> f64 {
    let n = n as f64;
    let var = (p * (1.0 - p)).max(0.25 / n) / n;
    (var * 2.0 * tau.max(0.5)).sqrt()
}

pub fn estimate_p_span(
    complex: &CellComplex,
    model: &WeightModel,
    params: &SamplerParams,
) -> Result<SpanEstimate, AnalysisError> {
    estimate_p_span_by(complex, model, params, SpanCriterion::Auto, 0)
}

/// `l` is only recorded in the estimate.
pub fn estimate_p_span_by(
    complex: &CellComplex,
    model: &WeightModel,
    params: &SamplerParams,
    criterion: SpanCriterion,
    l: usize,
) -> Result<SpanEstimate, AnalysisError> {
    // Fail fast on complexes without a spanning notion.
    let probe = crate::weights::decompose(
        complex,
        &crate::weights::OutcomeConfig::all_keep(complex.n_vertices()),
    )?;
    spans_by(&probe, complex, criterion)?;
    let stream = run(
        complex,
        model,
        params,
        vec![
            n_merge_observer(),
            (
                "spans".into(),
                Box::new(move |dec, c| spans_by(dec, c, criterion).unwrap() as u8 as f64),
            ),
        ],
    )?;
    let span = stream.column("spans").unwrap();
    let n_merge = stream.column("n_merge").unwrap();
    let n = span.len() as u64;
    let p = span.iter().sum::<f64>() / n as f64;
    let tau = integrated_autocorr_time(&span).max(integrated_autocorr_time(&n_merge));
    Ok(SpanEstimate {
        g: model.g(),
        l,
        n_samples: n,
        p_span: p,
        stderr: span_stderr(p, n, tau),
        autocorr_time: tau,
    })
}

/// One `(g, L)` cell of a scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanCell {
    pub g: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub lattice: LatticeSpec,
    pub regime: Option<Regime>,
    pub qc_mode: QcMode,
    pub grid: Vec<f64>,
    pub sizes: Vec<usize>,
    pub sampler: SamplerParams,
    pub criterion: SpanCriterion,
}

impl ScanPlan {
    /// Cells in `(L, g)` order with per-cell seeds derived from the master
    /// seed.
    pub fn cells(&self) -> Vec<ScanCell> {
        let mut out = Vec::new();
        for &l in &self.sizes {
            for &g in &self.grid {
                let seed = derive_seed(self.sampler.seed, out.len() as u64);
                out.push(ScanCell { g, l, seed });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.grid.is_empty() || self.sizes.is_empty() {
            return Err(AnalysisError::InvalidInput("empty g grid or size list".into()));
        }
        for &g in &self.grid {
            self.model(g)?;
        }
        self.sampler.validate()?;
        Ok(())
    }

    pub fn model(&self, g: f64) -> Result<WeightModel, AnalysisError> {
        let regime = self.regime.unwrap_or(Regime::for_g(g));
        Ok(WeightModel::with_regime(g, regime, self.qc_mode)?)
    }
}

/// Runs every cell of the plan on up to `workers` threads. Output order and
/// values do not depend on the worker count.
pub fn run_scan(
    plan: &ScanPlan,
    workers: usize,
    mut on_cell: impl FnMut(&SpanEstimate) + Send,
) -> Result<Vec<SpanEstimate>, AnalysisError> {
    plan.validate()?;
    let mut complexes = BTreeMap::new();
    for &l in &plan.sizes {
        let mut spec = plan.lattice.clone();
        spec.size = l;
        complexes.insert(l, build_lattice(&spec)?);
    }
    let cells = plan.cells();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SpanEstimate, AnalysisError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let progress = Mutex::new(&mut on_cell);
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let cell = &cells[i];
                let params = SamplerParams {
                    seed: cell.seed,
                    ..plan.sampler.clone()
                };
                let res = plan.model(cell.g).and_then(|m| {
                    estimate_p_span_by(&complexes[&cell.l], &m, &params, plan.criterion, cell.l)
                });
                if let Ok(est) = &res {
                    (progress.lock().unwrap())(est);
                }
                results.lock().unwrap()[i] = Some(res);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every cell was run"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub l_pair: (usize, usize),
    pub g_cross: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub g_c: f64,
    pub sigma: f64,
    pub crossings: Vec<Crossing>,
    pub method: String,
    pub qc_mode: Option<QcMode>,
}

#[derive(Clone, Debug)]
pub struct ThresholdOptions {
    pub resamples: usize,
    pub seed: u64,
    pub qc_mode: Option<QcMode>,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        Self {
            resamples: 1000,
            seed: 0x5eed,
            qc_mode: None,
        }
    }
}

/// Curves keyed by `L`, each sorted by `g`.
fn group_curves(points: &[SpanEstimate]) -> Result<BTreeMap<usize, Vec<SpanEstimate>>, AnalysisError> {
    let mut curves: BTreeMap<usize, Vec<SpanEstimate>> = BTreeMap::new();
    for p in points {
        curves.entry(p.l).or_default().push(p.clone());
    }
    if curves.len() < 2 {
        return Err(AnalysisError::InvalidInput(
            "crossings need at least two system sizes".into(),
        ));
    }
    let mut grid: Option<Vec<f64>> = None;
    for (l, c) in curves.iter_mut() {
        c.sort_by(|a, b| a.g.total_cmp(&b.g));
        if c.len() < 4 {
            return Err(AnalysisError::InvalidInput(format!(
                "curve for L = {l} has {} points, need at least 4",
                c.len()
            )));
        }
        let gs: Vec<f64> = c.iter().map(|p| p.g).collect();
        match &grid {
            None => grid = Some(gs),
            Some(g0) if *g0 != gs => {
                return Err(AnalysisError::InvalidInput(
                    "all curves must share the same g grid".into(),
                ))
            }
            _ => {}
        }
    }
    Ok(curves)
}

/// Crossing of two curves on a shared grid. Among several sign changes of
/// the difference (noise near the tails), the one with the largest bracketing
/// `|difference|` wins.
fn crossing(gs: &[f64], a: &[f64], b: &[f64]) -> Option<f64> {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let nonzero: Vec<usize> = (0..d.len()).filter(|&i| d[i] != 0.0).collect();
    let mut best: Option<(f64, f64)> = None;
    for w in nonzero.windows(2) {
        let (i, j) = (w[0], w[1]);
        if d[i].signum() == d[j].signum() {
            continue;
        }
        let score = d[i].abs() + d[j].abs();
        let g = if j == i + 1 {
            gs[i] + (gs[j] - gs[i]) * d[i] / (d[i] - d[j])
        } else {
            // Exact zeros in between: take the middle of the zero run.
            0.5 * (gs[i + 1] + gs[j - 1])
        };
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, g));
        }
    }
    best.map(|(_, g)| g).or_else(|| saturated_meeting(gs, a, b, &d))
}

/// A jump sharper than the grid step can take both curves from apart to
/// tied at P = 0 or 1 with no sign change in between. The meeting point then
/// lies between the last separated and first tied g; take the middle.
fn saturated_meeting(gs: &[f64], a: &[f64], b: &[f64], d: &[f64]) -> Option<f64> {
    let saturated = |i: usize| d[i] == 0.0 && (a[i] == 0.0 || a[i] == 1.0) && (b[i] == 0.0 || b[i] == 1.0);
    let n = d.len();
    let mut best: Option<(f64, f64)> = None;
    let first_tie = (0..n).rev().take_while(|&i| saturated(i)).last();
    if let Some(j) = first_tie.filter(|&j| j > 0) {
        best = Some((d[j - 1].abs(), 0.5 * (gs[j - 1] + gs[j])));
    }
    let last_tie = (0..n).take_while(|&i| saturated(i)).last();
    if let Some(i) = last_tie.filter(|&i| i + 1 < n) {
        let score = d[i + 1].abs();
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, 0.5 * (gs[i] + gs[i + 1])));
        }
    }
    best.map(|(_, g)| g)
}

fn crossings_of(
    curves: &BTreeMap<usize, Vec<f64>>,
    gs: &[f64],
) -> Result<Vec<Crossing>, AnalysisError> {
    let ls: Vec<usize> = curves.keys().copied().collect();
    ls.windows(2)
        .map(|w| {
            crossing(gs, &curves[&w[0]], &curves[&w[1]])
                .map(|g_cross| Crossing {
                    l_pair: (w[0], w[1]),
                    g_cross,
                })
                .ok_or(AnalysisError::NoCrossing { l1: w[0], l2: w[1] })
        })
        .collect()
}

pub fn estimate_threshold(points: &[SpanEstimate]) -> Result<ThresholdEstimate, AnalysisError> {
    estimate_threshold_with(points, &ThresholdOptions::default())
}

/// Pairwise crossings of linearly interpolated curves for consecutive sizes;
/// `g_c` is their mean and `sigma` the bootstrap spread of that mean when
/// every point is redrawn from a binomial with its effective sample count.
pub fn estimate_threshold_with(
    points: &[SpanEstimate],
    opts: &ThresholdOptions,
) -> Result<ThresholdEstimate, AnalysisError> {
    let curves = group_curves(points)?;
    let gs: Vec<f64> = curves.values().next().unwrap().iter().map(|p| p.g).collect();
    let central: BTreeMap<usize, Vec<f64>> = curves
        .iter()
        .map(|(&l, c)| (l, c.iter().map(|p| p.p_span).collect()))
        .collect();
    let crossings = crossings_of(&central, &gs)?;
    let g_c = crossings.iter().map(|c| c.g_cross).sum::<f64>() / crossings.len() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut boot = Vec::with_capacity(opts.resamples);
    for _ in 0..opts.resamples {
        let redrawn: BTreeMap<usize, Vec<f64>> = curves
            .iter()
            .map(|(&l, c)| {
                let ps = c
                    .iter()
                    .map(|p| {
                        let n = p.n_eff().round().max(1.0) as u64;
                        let k = Binomial::new(n, p.p_span.clamp(0.0, 1.0))
                            .unwrap()
                            .sample(&mut rng);
                        k as f64 / n as f64
                    })
                    .collect();
                (l, ps)
            })
            .collect();
        if let Ok(cs) = crossings_of(&redrawn, &gs) {
            boot.push(cs.iter().map(|c| c.g_cross).sum::<f64>() / cs.len() as f64);
        }
    }
    let spread = if boot.len() >= 2 {
        let m = boot.iter().sum::<f64>() / boot.len() as f64;
        (boot.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (boot.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let step = (gs[gs.len() - 1] - gs[0]) / (gs.len() - 1) as f64;
    Ok(ThresholdEstimate {
        g_c,
        sigma: spread.max(1e-3 * step),
        crossings,
        method: format!(
            "linear-interpolation crossings of consecutive sizes; binomial bootstrap ({} resamples, {} with crossings)",
            opts.resamples,
            boot.len()
        ),
        qc_mode: opts.qc_mode,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopSizeStats {
    /// Cluster size → number of clusters of that size.
    pub histogram: BTreeMap<usize, usize>,
    pub n_clusters: usize,
    pub largest_fraction: f64,
    /// Clusters per face.
    pub loop_density: f64,
}

pub fn loop_size_stats(dec: &ClusterDecomposition) -> LoopSizeStats {
    let mut histogram = BTreeMap::new();
    for (_, info) in dec.live() {
        *histogram.entry(info.size).or_insert(0) += 1;
    }
    let n_f = dec.n_faces().max(1) as f64;
    LoopSizeStats {
        histogram,
        n_clusters: dec.n_clusters(),
        largest_fraction: dec.max_cluster_size() as f64 / n_f,
        loop_density: dec.n_clusters() as f64 / n_f,
    }
}

pub const SPAN_CSV_HEADER: &str = "g,L,n_samples,p_span,stderr,autocorr_time";

pub fn write_span_csv(mut w: impl Write, estimates: &[SpanEstimate]) -> std::io::Result<()> {
    writeln!(w, "{SPAN_CSV_HEADER}")?;
    for e in estimates {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            e.g, e.l, e.n_samples, e.p_span, e.stderr, e.autocorr_time
        )?;
    }
    Ok(())
}

/// Reads rows written by [`write_span_csv`]; `#` lines are skipped.
pub fn read_span_csv(text: &str) -> Result<Vec<SpanEstimate>, AnalysisError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == SPAN_CSV_HEADER {
            continue;
        }
        let bad = || AnalysisError::InvalidInput(format!("bad CSV row {}: `{line}`", i + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(bad());
        }
        out.push(SpanEstimate {
            g: cols[0].parse().map_err(|_| bad())?,
            l: cols[1].parse().map_err(|_| bad())?,
            n_samples: cols[2].parse().map_err(|_| bad())?,
            p_span: cols[3].parse().map_err(|_| bad())?,
            stderr: cols[4].parse().map_err(|_| bad())?,
            autocorr_time: cols[5].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub lattice: String,
    pub regime: String,
    pub qc_mode: String,
    pub g_c: f64,
    pub sigma: f64,
    pub crossings: Vec<Crossing>,
    pub grid: Vec<f64>,
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub method: String,
    /// Which side of the true threshold a bound mode approximates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_role: Option<String>,
}
