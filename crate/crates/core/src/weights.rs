//! Outcome configurations, their cluster decompositions and the
//! (unnormalized) probability weights of POVM outcomes.
//!
//! Every vertex carries a two-outcome POVM. `Keep` restores the fixed-point
//! tensor at the vertex; `Merge` fuses the GHZ loops of all incident faces.
//! For `|g| <= 1` a configuration has weight
//!
//! ```text
//! g^(2 n_keep) (1 - g^2)^n_merge  2^Σ_c (1 - |c|)
//! ```
//!
//! and for `|g| > 1`
//!
//! ```text
//! g^(-2 n_keep) ((g^2 - 1) / g^2)^n_merge  Π_c q_c 2^-|c|
//! ```
//!
//! where `c` runs over clusters of merged faces and `q_c` is the number of
//! face colorings of the cluster that avoid an all-equal pattern at every
//! merge vertex. Only ratios and unnormalized log-weights are exposed.

use std::collections::HashMap;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::CellComplex;
use crate::unionfind::DisjointSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Keep,
    Merge,
}

/// One POVM outcome per vertex.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OutcomeConfig {
    merge: Vec<bool>,
}

impl OutcomeConfig {
    pub fn all_keep(n_vertices: usize) -> Self {
        Self {
            merge: vec![false; n_vertices],
        }
    }

    pub fn all_merge(n_vertices: usize) -> Self {
        Self {
            merge: vec![true; n_vertices],
        }
    }

    pub fn from_merge_flags(merge: Vec<bool>) -> Self {
        Self { merge }
    }

    /// Bit `v` of `bits` set means vertex `v` has outcome `Merge`.
    pub fn from_bits(n_vertices: usize, bits: u64) -> Self {
        Self {
            merge: (0..n_vertices).map(|v| (bits >> v) & 1 == 1).collect(),
        }
    }

    pub fn to_bits(&self) -> Option<u64> {
        if self.merge.len() > 64 {
            return None;
        }
        Some(
            self.merge
                .iter()
                .enumerate()
                .fold(0u64, |acc, (v, &m)| acc | ((m as u64) << v)),
        )
    }

    pub fn len(&self) -> usize {
        self.merge.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merge.is_empty()
    }

    #[inline]
    pub fn is_merge(&self, v: usize) -> bool {
        self.merge[v]
    }

    pub fn outcome(&self, v: usize) -> Outcome {
        if self.merge[v] {
            Outcome::Merge
        } else {
            Outcome::Keep
        }
    }

    pub fn set(&mut self, v: usize, outcome: Outcome) {
        self.merge[v] = outcome == Outcome::Merge;
    }

    pub fn toggle(&mut self, v: usize) {
        self.merge[v] = !self.merge[v];
    }

    pub fn n_merge(&self) -> usize {
        self.merge.iter().filter(|&&m| m).count()
    }

    pub fn n_keep(&self) -> usize {
        self.len() - self.n_merge()
    }

    pub fn merge_flags(&self) -> &[bool] {
        &self.merge
    }
}

/// Which POVM is used: `{E1, E2}` for `|g| <= 1`, `{E3, E4}` beyond.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Sub,
    Super,
}

impl Regime {
    pub fn for_g(g: f64) -> Self {
        if g.abs() <= 1.0 {
            Regime::Sub
        } else {
            Regime::Super
        }
    }

    pub fn admits(self, g: f64) -> bool {
        Regime::for_g(g) == self
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sub" => Ok(Regime::Sub),
            "super" => Ok(Regime::Super),
            other => Err(format!("unknown regime `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QcBound {
    Lower,
    Upper,
}

/// How the component count of a multi-face cluster is evaluated in the
/// `|g| > 1` regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum QcMode {
    /// `q_c = b`, the smallest per-vertex component count in the cluster.
    #[serde(rename = "lower")]
    LowerBound,
    /// `q_c = b^(|c|/k)`.
    #[serde(rename = "upper")]
    UpperBound,
    /// Enumerate colorings for clusters up to `cap` faces. Larger clusters
    /// use `fallback`, or fail when there is none.
    Exact {
        cap: usize,
        fallback: Option<QcBound>,
    },
}

pub const DEFAULT_EXACT_CAP: usize = 24;

impl QcMode {
    pub fn exact() -> Self {
        QcMode::Exact {
            cap: DEFAULT_EXACT_CAP,
            fallback: None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            QcMode::LowerBound => "lower".into(),
            QcMode::UpperBound => "upper".into(),
            QcMode::Exact { cap, .. } => format!("exact(cap={cap})"),
        }
    }
}

impl std::str::FromStr for QcMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lower" | "lowerbound" | "lower_bound" => Ok(QcMode::LowerBound),
            "upper" | "upperbound" | "upper_bound" => Ok(QcMode::UpperBound),
            "exact" => Ok(QcMode::Exact {
                cap: DEFAULT_EXACT_CAP,
                fallback: Some(QcBound::Lower),
            }),
            other => Err(format!("unknown q_c mode `{other}`")),
        }
    }
}

/// Sign of the `n_merge` exponent in the `|g| > 1` weight. The printed form
/// of the formula carries `-n_merge`; the derivation from the POVM gives
/// `+n_merge`. `AsPrinted` only exists to demonstrate the discrepancy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExponentConvention {
    Corrected,
    AsPrinted,
}

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("g = {g} is outside the {regime:?} regime")]
    RegimeMismatch { g: f64, regime: Regime },
    #[error("cluster of {size} faces exceeds the exact q_c cap of {cap}")]
    ClusterTooLarge { size: usize, cap: usize },
    #[error("configuration has zero probability")]
    ZeroWeight,
    #[error("configuration covers {got} vertices, complex has {expected}")]
    ConfigMismatch { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightModel {
    g: f64,
    regime: Regime,
    qc_mode: QcMode,
    exponent: ExponentConvention,
    keep_lw: f64,
    merge_lw: f64,
}

impl WeightModel {
    /// Model with the regime derived from `|g|`.
    pub fn new(g: f64, qc_mode: QcMode) -> Result<Self, WeightError> {
        Self::with_regime(g, Regime::for_g(g), qc_mode)
    }

    pub fn with_regime(g: f64, regime: Regime, qc_mode: QcMode) -> Result<Self, WeightError> {
        Self::build(g, regime, qc_mode, ExponentConvention::Corrected)
    }

    pub fn with_exponent(self, exponent: ExponentConvention) -> Result<Self, WeightError> {
        Self::build(self.g, self.regime, self.qc_mode, exponent)
    }

    fn build(
        g: f64,
        regime: Regime,
        qc_mode: QcMode,
        exponent: ExponentConvention,
    ) -> Result<Self, WeightError> {
        if !g.is_finite() || g == 0.0 {
            return Err(WeightError::InvalidParameter(format!(
                "g must be finite and non-zero, got {g}"
            )));
        }
        if !regime.admits(g) {
            return Err(WeightError::RegimeMismatch { g, regime });
        }
        if let QcMode::Exact { cap, .. } = qc_mode {
            if cap == 0 || cap > 40 {
                return Err(WeightError::InvalidParameter(format!(
                    "exact q_c cap must be in 1..=40, got {cap}"
                )));
            }
        }
        let g2 = g * g;
        let (keep_lw, merge_lw) = match regime {
            Regime::Sub => (g2.ln(), (1.0 - g2).ln()),
            Regime::Super => {
                let m = ((g2 - 1.0) / g2).ln();
                (
                    -g2.ln(),
                    match exponent {
                        ExponentConvention::Corrected => m,
                        ExponentConvention::AsPrinted => -m,
                    },
                )
            }
        };
        Ok(Self {
            g,
            regime,
            qc_mode,
            exponent,
            keep_lw,
            merge_lw,
        })
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn qc_mode(&self) -> QcMode {
        self.qc_mode
    }

    pub fn exponent(&self) -> ExponentConvention {
        self.exponent
    }

    /// Log-weight contributed by one `Keep` vertex.
    pub fn keep_log_weight(&self) -> f64 {
        self.keep_lw
    }

    /// Log-weight contributed by one `Merge` vertex; `-inf` at `|g| = 1` in
    /// the `Sub` regime.
    pub fn merge_log_weight(&self) -> f64 {
        self.merge_lw
    }

    pub fn merge_forbidden(&self) -> bool {
        self.merge_lw == f64::NEG_INFINITY
    }

    fn exact_cap(&self) -> Option<(usize, Option<QcBound>)> {
        match self.qc_mode {
            QcMode::Exact { cap, fallback } if self.regime == Regime::Super => Some((cap, fallback)),
            _ => None,
        }
    }

    /// `ln q̂_c` from cluster statistics alone, for bound modes.
    fn bound_log_q(&self, info: &ClusterInfo, bound: QcBound) -> f64 {
        let has3 = info.merges > info.merges_deg4;
        let has4 = info.merges_deg4 > 0;
        match bound {
            QcBound::Lower => {
                if has3 {
                    6f64.ln()
                } else {
                    14f64.ln()
                }
            }
            QcBound::Upper => {
                let per_face = if has4 { 14f64.ln() / 4.0 } else { 6f64.ln() / 3.0 };
                info.size as f64 * per_face
            }
        }
    }
}

/// Size and merge-vertex counts of one cluster.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ClusterInfo {
    pub size: usize,
    pub merges: usize,
    pub merges_deg4: usize,
}

impl ClusterInfo {
    fn add(&mut self, other: &ClusterInfo) {
        self.size += other.size;
        self.merges += other.merges;
        self.merges_deg4 += other.merges_deg4;
    }

    fn sub(&mut self, other: &ClusterInfo) {
        self.size -= other.size;
        self.merges -= other.merges;
        self.merges_deg4 -= other.merges_deg4;
    }
}

/// Explicit description of one cluster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cluster {
    pub id: usize,
    pub faces: Vec<usize>,
    pub merge_vertices: Vec<usize>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.faces.len()
    }
}

/// Partition of the faces into merged clusters, owning the configuration it
/// was built from.
#[derive(Clone, Debug)]
pub struct ClusterDecomposition {
    config: OutcomeConfig,
    degree4: Vec<bool>,
    cluster_of: Vec<usize>,
    slots: Vec<ClusterInfo>,
    free: Vec<usize>,
    n_clusters: usize,
}

pub fn decompose(
    complex: &CellComplex,
    config: &OutcomeConfig,
) -> Result<ClusterDecomposition, WeightError> {
    if config.len() != complex.n_vertices() {
        return Err(WeightError::ConfigMismatch {
            expected: complex.n_vertices(),
            got: config.len(),
        });
    }
    let n_f = complex.n_faces();
    let mut ds = DisjointSet::new(n_f);
    for v in (0..config.len()).filter(|&v| config.is_merge(v)) {
        let faces = complex.vertex_faces(v);
        for &f in &faces[1..] {
            ds.union(faces[0], f);
        }
    }
    let mut slot_of_root = vec![usize::MAX; n_f];
    let mut cluster_of = vec![0; n_f];
    let mut slots: Vec<ClusterInfo> = Vec::new();
    for f in 0..n_f {
        let r = ds.find(f);
        if slot_of_root[r] == usize::MAX {
            slot_of_root[r] = slots.len();
            slots.push(ClusterInfo::default());
        }
        cluster_of[f] = slot_of_root[r];
        slots[cluster_of[f]].size += 1;
    }
    let degree4: Vec<bool> = (0..complex.n_vertices()).map(|v| complex.degree(v) == 4).collect();
    for v in (0..config.len()).filter(|&v| config.is_merge(v)) {
        let info = &mut slots[cluster_of[complex.vertex_faces(v)[0]]];
        info.merges += 1;
        if degree4[v] {
            info.merges_deg4 += 1;
        }
    }
    let n_clusters = slots.len();
    Ok(ClusterDecomposition {
        config: config.clone(),
        degree4,
        cluster_of,
        slots,
        free: Vec::new(),
        n_clusters,
    })
}

impl ClusterDecomposition {
    pub fn config(&self) -> &OutcomeConfig {
        &self.config
    }

    #[inline]
    pub fn cluster_of(&self, f: usize) -> usize {
        self.cluster_of[f]
    }

    pub fn cluster_labels(&self) -> &[usize] {
        &self.cluster_of
    }

    pub fn info(&self, id: usize) -> &ClusterInfo {
        &self.slots[id]
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn n_faces(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn n_merge(&self) -> usize {
        self.config.n_merge()
    }

    pub fn n_keep(&self) -> usize {
        self.config.n_keep()
    }

    /// Live cluster ids with their statistics.
    pub fn live(&self) -> impl Iterator<Item = (usize, &ClusterInfo)> + '_ {
        self.slots.iter().enumerate().filter(|(_, c)| c.size > 0)
    }

    pub fn max_cluster_size(&self) -> usize {
        self.slots.iter().map(|c| c.size).max().unwrap_or(0)
    }

    /// `Σ_c (1 - |c|)`.
    pub fn loop_deficit(&self) -> i64 {
        self.n_clusters as i64 - self.n_faces() as i64
    }

    /// Explicit face and merge-vertex sets of every cluster, ordered by the
    /// smallest face in each.
    pub fn clusters(&self, complex: &CellComplex) -> Vec<Cluster> {
        let mut index: HashMap<usize, usize> = HashMap::new();
        let mut out: Vec<Cluster> = Vec::new();
        for (f, &id) in self.cluster_of.iter().enumerate() {
            let k = *index.entry(id).or_insert_with(|| {
                out.push(Cluster {
                    id,
                    faces: Vec::new(),
                    merge_vertices: Vec::new(),
                });
                out.len() - 1
            });
            out[k].faces.push(f);
        }
        for v in (0..self.config.len()).filter(|&v| self.config.is_merge(v)) {
            let id = self.cluster_of[complex.vertex_faces(v)[0]];
            out[index[&id]].merge_vertices.push(v);
        }
        out
    }

    /// Cluster labels rewritten in order of first appearance, for comparing
    /// partitions.
    pub fn canonical_labels(&self) -> Vec<usize> {
        let mut map = HashMap::new();
        self.cluster_of
            .iter()
            .map(|&id| {
                let next = map.len();
                *map.entry(id).or_insert(next)
            })
            .collect()
    }

    /// Same configuration, same partition and same per-cluster statistics.
    pub fn same_as(&self, other: &ClusterDecomposition) -> bool {
        if self.config != other.config || self.canonical_labels() != other.canonical_labels() {
            return false;
        }
        self.cluster_of
            .iter()
            .zip(&other.cluster_of)
            .all(|(&a, &b)| self.slots[a] == other.slots[b])
    }

    fn alloc(&mut self, info: ClusterInfo) -> usize {
        self.n_clusters += 1;
        if let Some(id) = self.free.pop() {
            self.slots[id] = info;
            id
        } else {
            self.slots.push(info);
            self.slots.len() - 1
        }
    }

    fn release(&mut self, id: usize) {
        self.slots[id] = ClusterInfo::default();
        self.free.push(id);
        self.n_clusters -= 1;
    }
}

/// Chain-local buffers for cluster searches plus the memo of exact
/// component counts.
#[derive(Debug, Default)]
pub struct Scratch {
    epoch: u32,
    face_epoch: Vec<u32>,
    face_search: Vec<u8>,
    vertex_epoch: Vec<u32>,
    queue: [Vec<usize>; 4],
    head: [usize; 4],
    stats: [ClusterInfo; 4],
    parent: [usize; 4],
    n_search: usize,
    qc_memo: HashMap<Vec<usize>, u64>,
}

impl Scratch {
    pub fn for_complex(complex: &CellComplex) -> Self {
        Self {
            face_epoch: vec![0; complex.n_faces()],
            face_search: vec![0; complex.n_faces()],
            vertex_epoch: vec![0; complex.n_vertices()],
            ..Default::default()
        }
    }

    fn next_epoch(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.face_epoch.iter_mut().for_each(|e| *e = 0);
            self.vertex_epoch.iter_mut().for_each(|e| *e = 0);
            self.epoch = 1;
        }
    }

    fn root(&self, mut i: usize) -> usize {
        while self.parent[i] != i {
            i = self.parent[i];
        }
        i
    }

    fn memo_len(&self) -> usize {
        self.qc_memo.len()
    }

    /// Faces of the cluster containing `start`, walking through merge
    /// vertices. `skip` is treated as Keep, `extra` as Merge.
    fn collect_cluster(
        &mut self,
        complex: &CellComplex,
        config: &OutcomeConfig,
        start: usize,
        skip: Option<usize>,
        extra: Option<usize>,
    ) -> (Vec<usize>, Vec<usize>) {
        self.next_epoch();
        let epoch = self.epoch;
        let mut faces = vec![start];
        let mut merges = Vec::new();
        self.face_epoch[start] = epoch;
        let mut head = 0;
        while head < faces.len() {
            let f = faces[head];
            head += 1;
            for &u in complex.face_vertices(f) {
                let is_merge = (config.is_merge(u) || Some(u) == extra) && Some(u) != skip;
                if !is_merge || self.vertex_epoch[u] == epoch {
                    continue;
                }
                self.vertex_epoch[u] = epoch;
                merges.push(u);
                for &f2 in complex.vertex_faces(u) {
                    if self.face_epoch[f2] != epoch {
                        self.face_epoch[f2] = epoch;
                        faces.push(f2);
                    }
                }
            }
        }
        faces.sort_unstable();
        merges.sort_unstable();
        (faces, merges)
    }
}

/// Number of colorings of `faces` in which no merge vertex sees all of its
/// incident faces with the same color. Panics if a merge vertex touches a
/// face outside `faces` or there are more than 40 faces.
pub fn count_colorings(complex: &CellComplex, faces: &[usize], merge_vertices: &[usize]) -> u64 {
    let n = faces.len();
    assert!(n <= 40, "enumeration over {n} faces");
    let local = |f: usize| -> usize {
        faces
            .iter()
            .position(|&g| g == f)
            .expect("merge vertex touches a face outside the cluster")
    };
    let masks: Vec<u64> = merge_vertices
        .iter()
        .map(|&v| {
            complex
                .vertex_faces(v)
                .iter()
                .fold(0u64, |m, &f| m | 1 << local(f))
        })
        .collect();
    if n == 0 {
        return 1;
    }
    // Colorings come in complementary pairs; fix the first face to 0.
    let half = 1u64 << (n - 1);
    let mut count = 0u64;
    for x in 0..half {
        let x = x << 1;
        if masks.iter().all(|&m| {
            let s = x & m;
            s != 0 && s != m
        }) {
            count += 1;
        }
    }
    2 * count
}

fn memo_key(faces: &[usize], merges: &[usize]) -> Vec<usize> {
    let mut key = Vec::with_capacity(faces.len() + merges.len() + 1);
    key.extend_from_slice(faces);
    key.push(usize::MAX);
    key.extend_from_slice(merges);
    key
}

fn memo_count(scratch: &mut Scratch, complex: &CellComplex, faces: &[usize], merges: &[usize]) -> u64 {
    let key = memo_key(faces, merges);
    if let Some(&q) = scratch.qc_memo.get(&key) {
        return q;
    }
    let q = count_colorings(complex, faces, merges);
    scratch.qc_memo.insert(key, q);
    q
}

/// Exact component count of cluster `id`. In the `Sub` regime every cluster
/// has exactly two components.
pub fn count_components(
    complex: &CellComplex,
    dec: &ClusterDecomposition,
    id: usize,
    regime: Regime,
    cap: usize,
) -> Result<u64, WeightError> {
    let info = dec.info(id);
    if regime == Regime::Sub || info.merges == 0 {
        return Ok(2);
    }
    if info.size > cap {
        return Err(WeightError::ClusterTooLarge {
            size: info.size,
            cap,
        });
    }
    let start = (0..dec.n_faces()).find(|&f| dec.cluster_of(f) == id).unwrap();
    let mut scratch = Scratch::for_complex(complex);
    let (faces, merges) = scratch.collect_cluster(complex, dec.config(), start, None, None);
    Ok(count_colorings(complex, &faces, &merges))
}

/// `ln q̂_c - |c| ln 2` for one cluster. `faces_of` lazily produces the
/// explicit face/merge sets when the exact count is needed.
fn cluster_log_factor(
    model: &WeightModel,
    info: &ClusterInfo,
    scratch: &mut Scratch,
    complex: &CellComplex,
    faces_of: impl FnOnce(&mut Scratch) -> (Vec<usize>, Vec<usize>),
) -> Result<f64, WeightError> {
    let size_term = -(info.size as f64) * LN_2;
    if info.merges == 0 || model.regime == Regime::Sub {
        return Ok(LN_2 + size_term);
    }
    let log_q = match model.qc_mode {
        QcMode::LowerBound => model.bound_log_q(info, QcBound::Lower),
        QcMode::UpperBound => model.bound_log_q(info, QcBound::Upper),
        QcMode::Exact { cap, fallback } => {
            if info.size > cap {
                match fallback {
                    Some(b) => model.bound_log_q(info, b),
                    None => {
                        return Err(WeightError::ClusterTooLarge {
                            size: info.size,
                            cap,
                        })
                    }
                }
            } else {
                let (faces, merges) = faces_of(scratch);
                (memo_count(scratch, complex, &faces, &merges) as f64).ln()
            }
        }
    };
    Ok(log_q + size_term)
}

fn check_regime(model: &WeightModel) -> Result<(), WeightError> {
    if !model.regime.admits(model.g) {
        return Err(WeightError::RegimeMismatch {
            g: model.g,
            regime: model.regime,
        });
    }
    Ok(())
}

/// Unnormalized log-probability of the decomposition's configuration.
pub fn log_weight(
    model: &WeightModel,
    dec: &ClusterDecomposition,
    complex: &CellComplex,
) -> Result<f64, WeightError> {
    let mut scratch = Scratch::for_complex(complex);
    log_weight_with(model, dec, complex, &mut scratch)
}

pub fn log_weight_with(
    model: &WeightModel,
    dec: &ClusterDecomposition,
    complex: &CellComplex,
    scratch: &mut Scratch,
) -> Result<f64, WeightError> {
    check_regime(model)?;
    let n_merge = dec.n_merge();
    if n_merge > 0 && model.merge_forbidden() {
        return Err(WeightError::ZeroWeight);
    }
    let mut total = dec.n_keep() as f64 * model.keep_lw;
    if n_merge > 0 {
        total += n_merge as f64 * model.merge_lw;
    }
    let mut first_face = vec![usize::MAX; dec.slots.len()];
    if model.exact_cap().is_some() {
        for f in (0..dec.n_faces()).rev() {
            first_face[dec.cluster_of(f)] = f;
        }
    }
    for (id, info) in dec.live() {
        let start = first_face[id];
        total += cluster_log_factor(model, info, scratch, complex, |s| {
            s.collect_cluster(complex, dec.config(), start, None, None)
        })?;
    }
    Ok(total)
}

/// The three-term energy form of the `Sub` regime weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyView {
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub u2: f64,
}

pub fn energy_view(model: &WeightModel, dec: &ClusterDecomposition) -> Result<EnergyView, WeightError> {
    if model.regime != Regime::Sub {
        return Err(WeightError::RegimeMismatch {
            g: model.g,
            regime: Regime::Sub,
        });
    }
    let g2 = model.g * model.g;
    Ok(EnergyView {
        epsilon1: (1.0 / g2).ln(),
        epsilon2: (1.0 / (1.0 - g2)).ln(),
        u2: -LN_2 * dec.loop_deficit() as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Piece {
    /// Bitmask of search indices whose visited faces form the piece.
    members: u8,
    info: ClusterInfo,
}

#[derive(Clone, Debug, PartialEq)]
enum Change {
    Join {
        clusters: [usize; 4],
        n: usize,
        merged: ClusterInfo,
    },
    Split {
        old: usize,
        pieces: Vec<Piece>,
        rest: Option<ClusterInfo>,
    },
}

/// A single-vertex flip together with its weight ratio and the bookkeeping
/// needed to commit it.
#[derive(Clone, Debug, PartialEq)]
pub struct FlipPlan {
    pub vertex: usize,
    /// `log_weight(after) - log_weight(before)`; `-inf` when the flip lands
    /// on a zero-weight configuration.
    pub log_ratio: f64,
    change: Change,
}

/// Evaluates flipping vertex `v` using only the clusters touching it.
pub fn plan_flip(
    model: &WeightModel,
    complex: &CellComplex,
    dec: &ClusterDecomposition,
    v: usize,
    scratch: &mut Scratch,
) -> Result<FlipPlan, WeightError> {
    let faces = complex.vertex_faces(v);
    if !dec.config.is_merge(v) {
        let mut clusters = [usize::MAX; 4];
        let mut n = 0;
        for &f in faces {
            let c = dec.cluster_of[f];
            if !clusters[..n].contains(&c) {
                clusters[n] = c;
                n += 1;
            }
        }
        let mut merged = ClusterInfo {
            size: 0,
            merges: 1,
            merges_deg4: dec.degree4[v] as usize,
        };
        for &c in &clusters[..n] {
            merged.add(&dec.slots[c]);
        }
        let change = Change::Join {
            clusters,
            n,
            merged,
        };
        if model.merge_forbidden() {
            return Ok(FlipPlan {
                vertex: v,
                log_ratio: f64::NEG_INFINITY,
                change,
            });
        }
        let mut ratio = model.merge_lw - model.keep_lw;
        ratio += cluster_log_factor(model, &merged, scratch, complex, |s| {
            s.collect_cluster(complex, &dec.config, faces[0], None, Some(v))
        })?;
        for &c in &clusters[..n] {
            let start = *faces.iter().find(|&&f| dec.cluster_of[f] == c).unwrap();
            ratio -= cluster_log_factor(model, &dec.slots[c], scratch, complex, |s| {
                s.collect_cluster(complex, &dec.config, start, None, None)
            })?;
        }
        return Ok(FlipPlan {
            vertex: v,
            log_ratio: ratio,
            change,
        });
    }

    if model.merge_forbidden() {
        return Err(WeightError::ZeroWeight);
    }
    let exact = model.exact_cap().is_some();
    let old = dec.cluster_of[faces[0]];
    let (pieces, rest) = split_search(complex, dec, v, exact, scratch);
    let mut ratio = model.keep_lw - model.merge_lw;
    let old_start = faces[0];
    ratio -= cluster_log_factor(model, &dec.slots[old], scratch, complex, |s| {
        s.collect_cluster(complex, &dec.config, old_start, None, None)
    })?;
    for piece in &pieces {
        let start = faces[piece.members.trailing_zeros() as usize];
        ratio += cluster_log_factor(model, &piece.info, scratch, complex, |s| {
            s.collect_cluster(complex, &dec.config, start, Some(v), None)
        })?;
    }
    if let Some(rest) = &rest {
        // The rest is only left unexplored outside exact mode, where the
        // factor needs statistics alone.
        ratio += cluster_log_factor(model, rest, scratch, complex, |_| unreachable!())?;
    }
    Ok(FlipPlan {
        vertex: v,
        log_ratio: ratio,
        change: Change::Split { old, pieces, rest },
    })
}

/// Interleaved breadth-first searches from the faces around `v`, walking
/// merge vertices other than `v`. Searches that meet are fused. Outside
/// `full` mode the search stops as soon as at most one fused group is still
/// growing, so the cost is set by the smaller pieces.
fn split_search(
    complex: &CellComplex,
    dec: &ClusterDecomposition,
    v: usize,
    full: bool,
    scratch: &mut Scratch,
) -> (Vec<Piece>, Option<ClusterInfo>) {
    let starts = complex.vertex_faces(v);
    let k = starts.len();
    scratch.next_epoch();
    let epoch = scratch.epoch;
    scratch.n_search = k;
    for (i, &f) in starts.iter().enumerate() {
        scratch.queue[i].clear();
        scratch.queue[i].push(f);
        scratch.head[i] = 0;
        scratch.parent[i] = i;
        scratch.stats[i] = ClusterInfo {
            size: 1,
            merges: 0,
            merges_deg4: 0,
        };
        scratch.face_epoch[f] = epoch;
        scratch.face_search[f] = i as u8;
    }
    let config = &dec.config;
    loop {
        let mut roots = [usize::MAX; 4];
        let mut unfinished = [false; 4];
        let mut n_roots = 0;
        for i in 0..k {
            let r = scratch.root(i);
            if !roots[..n_roots].contains(&r) {
                roots[n_roots] = r;
                n_roots += 1;
            }
            if scratch.head[i] < scratch.queue[i].len() {
                unfinished[r] = true;
            }
        }
        let n_unfinished = roots[..n_roots].iter().filter(|&&r| unfinished[r]).count();
        if n_unfinished == 0 || (!full && (n_roots == 1 || n_unfinished <= 1)) {
            let mut pieces = Vec::new();
            let mut rest = None;
            for &r in &roots[..n_roots] {
                let mut members = 0u8;
                let mut info = ClusterInfo::default();
                for i in 0..k {
                    if scratch.root(i) == r {
                        members |= 1 << i;
                        info.add(&scratch.stats[i]);
                    }
                }
                if unfinished[r] {
                    rest = Some(r);
                } else {
                    pieces.push(Piece { members, info });
                }
            }
            let rest = rest.map(|_| {
                let mut info = dec.slots[dec.cluster_of[starts[0]]];
                info.merges -= 1;
                info.merges_deg4 -= dec.degree4[v] as usize;
                for p in &pieces {
                    info.sub(&p.info);
                }
                info
            });
            return (pieces, rest);
        }
        for i in 0..k {
            let r = scratch.root(i);
            if !unfinished[r] || scratch.head[i] >= scratch.queue[i].len() {
                continue;
            }
            let f = scratch.queue[i][scratch.head[i]];
            scratch.head[i] += 1;
            for &u in complex.face_vertices(f) {
                if u == v || !config.is_merge(u) || scratch.vertex_epoch[u] == epoch {
                    continue;
                }
                scratch.vertex_epoch[u] = epoch;
                scratch.stats[i].merges += 1;
                scratch.stats[i].merges_deg4 += dec.degree4[u] as usize;
                for &f2 in complex.vertex_faces(u) {
                    if scratch.face_epoch[f2] != epoch {
                        scratch.face_epoch[f2] = epoch;
                        scratch.face_search[f2] = i as u8;
                        scratch.queue[i].push(f2);
                        scratch.stats[i].size += 1;
                    } else {
                        let j = scratch.face_search[f2] as usize;
                        let (ri, rj) = (scratch.root(i), scratch.root(j));
                        if ri != rj {
                            scratch.parent[ri.max(rj)] = ri.min(rj);
                        }
                    }
                }
            }
        }
    }
}

/// Commits a plan produced by [`plan_flip`] on the same decomposition. The
/// scratch must not have been used for another search in between.
pub fn apply_flip(
    complex: &CellComplex,
    dec: &mut ClusterDecomposition,
    plan: &FlipPlan,
    scratch: &mut Scratch,
) {
    let v = plan.vertex;
    match &plan.change {
        Change::Join {
            clusters,
            n,
            merged,
        } => {
            let clusters = &clusters[..*n];
            let target = *clusters
                .iter()
                .max_by_key(|&&c| (dec.slots[c].size, std::cmp::Reverse(c)))
                .unwrap();
            for &c in clusters.iter().filter(|&&c| c != target) {
                let start = *complex
                    .vertex_faces(v)
                    .iter()
                    .find(|&&f| dec.cluster_of[f] == c)
                    .unwrap();
                let (faces, _) = scratch.collect_cluster(complex, &dec.config, start, None, None);
                for f in faces {
                    dec.cluster_of[f] = target;
                }
                dec.release(c);
            }
            dec.slots[target] = *merged;
        }
        Change::Split { old, pieces, rest } => {
            let keep_in_old = if rest.is_some() {
                None
            } else {
                (0..pieces.len()).max_by_key(|&p| pieces[p].info.size)
            };
            match rest {
                Some(info) => dec.slots[*old] = *info,
                None => dec.slots[*old] = pieces[keep_in_old.unwrap()].info,
            }
            for (p, piece) in pieces.iter().enumerate() {
                if Some(p) == keep_in_old {
                    continue;
                }
                let id = dec.alloc(piece.info);
                for i in 0..scratch.n_search {
                    if piece.members & (1 << i) != 0 {
                        for &f in &scratch.queue[i] {
                            dec.cluster_of[f] = id;
                        }
                    }
                }
            }
        }
    }
    dec.config.toggle(v);
}

/// `log_weight(flipped at v) - log_weight(current)`.
pub fn log_weight_ratio(
    model: &WeightModel,
    complex: &CellComplex,
    dec: &ClusterDecomposition,
    v: usize,
) -> Result<f64, WeightError> {
    let mut scratch = Scratch::for_complex(complex);
    Ok(plan_flip(model, complex, dec, v, &mut scratch)?.log_ratio)
}

#[doc(hidden)]
pub fn memo_entries(scratch: &Scratch) -> usize {
    scratch.memo_len()
}
