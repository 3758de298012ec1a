//! Structure of the post-measurement state: merged GHZ loops, their
//! components, the follow-up projections that split a generalized GHZ state
//! into ordinary ones, and aggregate loop statistics.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::loop_size_stats;
use crate::lattice::CellComplex;
use crate::sampler::{run_with, SamplerError, SamplerParams};
use crate::weights::{ClusterDecomposition, Regime, WeightModel};

#[derive(Debug, Error, PartialEq)]
pub enum ReductionError {
    #[error("component list unavailable (cluster of {size} faces above the cap, or Sub regime)")]
    ComponentsUnavailable { size: usize },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// One cluster seen as a (generalized) GHZ state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub faces: Vec<usize>,
    pub merge_vertices: Vec<usize>,
    /// One parton per bounding vertex of every face.
    pub qubit_count: usize,
    pub regime: Regime,
    /// Number of components; a lower bound when `q_exact` is false.
    pub q: u64,
    pub q_exact: bool,
    /// Valid colorings as bit masks over `faces` (bit `i` ↔ `faces[i]`).
    pub components: Option<Vec<u64>>,
}

/// Colorings of `faces` that are not monochromatic at any merge vertex.
fn enumerate_components(complex: &CellComplex, faces: &[usize], merges: &[usize]) -> Vec<u64> {
    let local = |f: usize| faces.binary_search(&f).expect("face outside the cluster");
    let masks: Vec<u64> = merges
        .iter()
        .map(|&v| complex.vertex_faces(v).iter().fold(0u64, |m, &f| m | 1 << local(f)))
        .collect();
    (0..1u64 << faces.len())
        .filter(|&x| {
            masks.iter().all(|&m| {
                let s = x & m;
                s != 0 && s != m
            })
        })
        .collect()
}

/// One [`LoopState`] per cluster. Super-regime clusters above `cap` faces
/// get no component list and `q` from the per-vertex lower bound.
pub fn merged_loops(
    dec: &ClusterDecomposition,
    complex: &CellComplex,
    regime: Regime,
    cap: usize,
) -> Vec<LoopState> {
    let cap = cap.min(30);
    dec.clusters(complex)
        .into_iter()
        .map(|c| {
            let qubit_count = c.faces.iter().map(|&f| complex.face_vertices(f).len()).sum();
            let n = c.faces.len();
            let (q, q_exact, components) = if regime == Regime::Sub || c.merge_vertices.is_empty() {
                let all = if n >= 64 { u64::MAX } else { (1u64 << n) - 1 };
                (2, true, (n < 64).then(|| vec![0, all]))
            } else if n <= cap {
                let comps = enumerate_components(complex, &c.faces, &c.merge_vertices);
                (comps.len() as u64, true, Some(comps))
            } else {
                let lower = c
                    .merge_vertices
                    .iter()
                    .map(|&v| (1u64 << complex.degree(v)) - 2)
                    .min()
                    .unwrap();
                (lower, false, None)
            };
            LoopState {
                faces: c.faces,
                merge_vertices: c.merge_vertices,
                qubit_count,
                regime,
                q,
                q_exact,
                components,
            }
        })
        .collect()
}

/// Local pattern class at a vertex, modulo the global flip: bit `k` set
/// means the `k`-th parton (cyclic order) differs from the first. Class 0
/// is the all-equal projector `P0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProjectionClass {
    pub degree: u8,
    pub pattern: u8,
}

impl ProjectionClass {
    fn of(colors: &[bool]) -> Self {
        let pattern = colors
            .iter()
            .enumerate()
            .fold(0u8, |p, (k, &c)| p | (((c != colors[0]) as u8) << k));
        Self {
            degree: colors.len() as u8,
            pattern,
        }
    }

    pub fn is_p0(&self) -> bool {
        self.pattern == 0
    }

    /// `Some(k)` when only parton `k` disagrees with the rest.
    pub fn lone_parton(&self) -> Option<usize> {
        let full = (1u8 << self.degree) - 1;
        let complement = full & !self.pattern;
        if self.pattern.count_ones() == 1 {
            Some(self.pattern.trailing_zeros() as usize)
        } else if complement.count_ones() == 1 {
            Some(complement.trailing_zeros() as usize)
        } else {
            None
        }
    }
}

impl fmt::Display for ProjectionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_p0() {
            write!(f, "P0")
        } else if let Some(k) = self.lone_parton() {
            write!(f, "P{}", k + 1)
        } else {
            write!(f, "P[{:0w$b}]", self.pattern, w = self.degree as usize)
        }
    }
}

/// One branch of the sequential follow-up measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FollowUpLeaf {
    pub outcomes: Vec<ProjectionClass>,
    pub probability: f64,
    pub components: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FollowUp {
    /// Merge vertices in measurement order.
    pub vertices: Vec<usize>,
    pub leaves: Vec<FollowUpLeaf>,
}

impl FollowUp {
    /// Outcome probabilities at the `step`-th measured vertex, including
    /// classes that never occur (`P0`).
    pub fn marginal(&self, step: usize, degree: usize) -> BTreeMap<ProjectionClass, f64> {
        let mut out: BTreeMap<ProjectionClass, f64> = (0..1u8 << (degree - 1))
            .map(|half| {
                (
                    ProjectionClass {
                        degree: degree as u8,
                        pattern: half << 1,
                    },
                    0.0,
                )
            })
            .collect();
        for leaf in &self.leaves {
            *out.entry(leaf.outcomes[step]).or_insert(0.0) += leaf.probability;
        }
        out
    }

    /// Outcome distribution of the first projection.
    pub fn first_step(&self, complex: &CellComplex) -> BTreeMap<ProjectionClass, f64> {
        match self.vertices.first() {
            Some(&v) => self.marginal(0, complex.degree(v)),
            None => BTreeMap::new(),
        }
    }
}

/// Measures the four-projector follow-up at every merge vertex of the
/// cluster in ascending vertex order. Each outcome keeps the components whose
/// local pattern falls into its class, with probability proportional to
/// their number. A Sub-regime cluster is already a two-component GHZ state
/// and is returned unchanged.
pub fn followup_projection(
    cluster: &LoopState,
    complex: &CellComplex,
) -> Result<FollowUp, ReductionError> {
    let comps = cluster
        .components
        .clone()
        .ok_or(ReductionError::ComponentsUnavailable {
            size: cluster.faces.len(),
        })?;
    if cluster.regime == Regime::Sub {
        return Ok(FollowUp {
            vertices: Vec::new(),
            leaves: vec![FollowUpLeaf {
                outcomes: Vec::new(),
                probability: 1.0,
                components: comps,
            }],
        });
    }
    let mut vertices = cluster.merge_vertices.clone();
    vertices.sort_unstable();
    let local: Vec<Vec<usize>> = vertices
        .iter()
        .map(|&v| {
            complex
                .vertex_faces(v)
                .iter()
                .map(|f| cluster.faces.binary_search(f).expect("face outside the cluster"))
                .collect()
        })
        .collect();
    let mut leaves = vec![FollowUpLeaf {
        outcomes: Vec::new(),
        probability: 1.0,
        components: comps,
    }];
    for idx in &local {
        let mut next = Vec::new();
        for leaf in leaves {
            let mut classes: BTreeMap<ProjectionClass, Vec<u64>> = BTreeMap::new();
            for &x in &leaf.components {
                let colors: Vec<bool> = idx.iter().map(|&i| (x >> i) & 1 == 1).collect();
                classes.entry(ProjectionClass::of(&colors)).or_default().push(x);
            }
            let total = leaf.components.len() as f64;
            for (class, comps) in classes {
                let mut outcomes = leaf.outcomes.clone();
                outcomes.push(class);
                next.push(FollowUpLeaf {
                    outcomes,
                    probability: leaf.probability * comps.len() as f64 / total,
                    components: comps,
                });
            }
        }
        leaves = next;
    }
    Ok(FollowUp { vertices, leaves })
}

/// Running loop statistics over samples.
#[derive(Clone, Debug, Default)]
pub struct CensusAccumulator {
    n: u64,
    density: (f64, f64),
    largest: (f64, f64),
    histogram: BTreeMap<usize, u64>,
}

impl CensusAccumulator {
    pub fn add(&mut self, dec: &ClusterDecomposition) {
        let st = loop_size_stats(dec);
        self.n += 1;
        self.density.0 += st.loop_density;
        self.density.1 += st.loop_density * st.loop_density;
        self.largest.0 += st.largest_fraction;
        self.largest.1 += st.largest_fraction * st.largest_fraction;
        for (size, count) in st.histogram {
            *self.histogram.entry(size).or_insert(0) += count as u64;
        }
    }

    pub fn finish(&self) -> LoopCensus {
        let n = self.n.max(1) as f64;
        let stats = |(s, s2): (f64, f64)| {
            let mean = s / n;
            let var = (s2 / n - mean * mean).max(0.0);
            (mean, (var / n).sqrt())
        };
        let (mean_loop_density, density_stderr) = stats(self.density);
        let (largest_fraction, largest_stderr) = stats(self.largest);
        LoopCensus {
            n_samples: self.n,
            mean_loop_density,
            density_stderr,
            largest_fraction,
            largest_stderr,
            histogram: self
                .histogram
                .iter()
                .map(|(&k, &v)| (k, v as f64 / n))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopCensus {
    pub n_samples: u64,
    /// Loops per face.
    pub mean_loop_density: f64,
    pub density_stderr: f64,
    /// Mean of `max |c| / n_F`.
    pub largest_fraction: f64,
    pub largest_stderr: f64,
    /// Cluster size → mean number of clusters per sample.
    pub histogram: BTreeMap<usize, f64>,
}

impl LoopCensus {
    /// Many small loops and no macroscopic one.
    pub fn small_loop_regime(&self, largest_cut: f64) -> bool {
        self.largest_fraction < largest_cut && self.mean_loop_density > 0.1
    }
}

pub fn loop_census<'a>(samples: impl IntoIterator<Item = &'a ClusterDecomposition>) -> LoopCensus {
    let mut acc = CensusAccumulator::default();
    for dec in samples {
        acc.add(dec);
    }
    acc.finish()
}

/// Samples a chain and aggregates its loop statistics.
pub fn run_census(
    complex: &CellComplex,
    model: &WeightModel,
    params: &SamplerParams,
) -> Result<LoopCensus, ReductionError> {
    let mut acc = CensusAccumulator::default();
    run_with(complex, model, params, |s| acc.add(s.decomposition()))?;
    Ok(acc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, Boundary, LatticeSpec};
    use crate::sampler::Start;
    use crate::weights::{count_components, decompose, Outcome, OutcomeConfig, QcMode};
    use proptest::prelude::*;

    fn honeycomb(l: usize) -> CellComplex {
        build_lattice(&LatticeSpec::honeycomb(l, Boundary::Torus)).unwrap()
    }

    fn merged_at(c: &CellComplex, vs: &[usize]) -> ClusterDecomposition {
        let mut cfg = OutcomeConfig::all_keep(c.n_vertices());
        for &v in vs {
            cfg.set(v, Outcome::Merge);
        }
        decompose(c, &cfg).unwrap()
    }

    fn big_loop(loops: Vec<LoopState>) -> LoopState {
        loops.into_iter().max_by_key(|l| l.faces.len()).unwrap()
    }

    #[test]
    fn unmerged_hexagons() {
        let c = honeycomb(3);
        let loops = merged_loops(&merged_at(&c, &[]), &c, Regime::Sub, 24);
        assert_eq!(loops.len(), 9);
        assert!(loops.iter().all(|l| l.qubit_count == 6 && l.q == 2));
    }

    #[test]
    fn single_merge_sub_and_super() {
        let c = honeycomb(3);
        let dec = merged_at(&c, &[4]);
        let sub = big_loop(merged_loops(&dec, &c, Regime::Sub, 24));
        assert_eq!((sub.faces.len(), sub.qubit_count, sub.q), (3, 18, 2));
        let sup = big_loop(merged_loops(&dec, &c, Regime::Super, 24));
        assert_eq!(sup.q, 6);
        assert_eq!(sup.components.as_ref().unwrap().len(), 6);
        // Every component is non-monochromatic on the three faces.
        assert!(sup.components.unwrap().iter().all(|&x| x != 0 && x != 0b111));
    }

    #[test]
    fn single_merge_followup_splits_evenly() {
        let c = honeycomb(3);
        let sup = big_loop(merged_loops(&merged_at(&c, &[4]), &c, Regime::Super, 24));
        let fu = followup_projection(&sup, &c).unwrap();
        let first = fu.first_step(&c);
        assert_eq!(first.len(), 4);
        for (class, p) in &first {
            if class.is_p0() {
                assert_eq!(*p, 0.0);
            } else {
                assert!((p - 1.0 / 3.0).abs() < 1e-15, "{class}: {p}");
            }
        }
        let labels: Vec<String> = first.keys().map(|k| k.to_string()).collect();
        assert_eq!(labels, ["P0", "P2", "P3", "P1"]);
        assert!(fu.leaves.iter().all(|l| l.components.len() == 2));
    }

    #[test]
    fn sub_cluster_needs_no_followup() {
        let c = honeycomb(3);
        let sub = big_loop(merged_loops(&merged_at(&c, &[4]), &c, Regime::Sub, 24));
        let fu = followup_projection(&sub, &c).unwrap();
        assert_eq!(fu.leaves.len(), 1);
        assert_eq!(fu.leaves[0].components.len(), 2);
    }

    #[test]
    fn oversized_cluster_has_no_components() {
        let c = honeycomb(3);
        let dec = decompose(&c, &OutcomeConfig::all_merge(c.n_vertices())).unwrap();
        let l = big_loop(merged_loops(&dec, &c, Regime::Super, 4));
        assert!(!l.q_exact && l.components.is_none());
        assert_eq!(
            followup_projection(&l, &c),
            Err(ReductionError::ComponentsUnavailable { size: 9 })
        );
    }

    #[test]
    fn census_at_fixed_point() {
        let c = honeycomb(6);
        let m = WeightModel::new(1.0, QcMode::LowerBound).unwrap();
        let p = SamplerParams {
            burn_in_sweeps: 5,
            thinning_sweeps: 1,
            n_samples: 20,
            start: Start::ColdKeep,
            seed: 1,
        };
        let census = run_census(&c, &m, &p).unwrap();
        assert_eq!(census.mean_loop_density, 1.0);
        assert_eq!(census.histogram, BTreeMap::from([(1, 36.0)]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn followup_ends_in_flip_pairs(bits in any::<u64>(), l in 3usize..5) {
            let c = honeycomb(l);
            let cfg = OutcomeConfig::from_merge_flags(
                (0..c.n_vertices()).map(|v| (bits >> (v % 64)) & 1 == 1 && (bits >> ((v * 7) % 64)) & 1 == 1).collect(),
            );
            let dec = decompose(&c, &cfg).unwrap();
            for lp in merged_loops(&dec, &c, Regime::Super, 14) {
                let id = dec.cluster_of(lp.faces[0]);
                if lp.q_exact {
                    prop_assert_eq!(lp.q, count_components(&c, &dec, id, Regime::Super, 14).unwrap());
                }
                if lp.components.is_none() {
                    continue;
                }
                let fu = followup_projection(&lp, &c).unwrap();
                let total: usize = fu.leaves.iter().map(|x| x.components.len()).sum();
                prop_assert_eq!(total as u64, lp.q);
                let p: f64 = fu.leaves.iter().map(|x| x.probability).sum();
                prop_assert!((p - 1.0).abs() < 1e-12);
                let all = (1u64 << lp.faces.len()) - 1;
                for leaf in &fu.leaves {
                    prop_assert_eq!(leaf.components.len(), 2);
                    prop_assert_eq!(leaf.components[0] ^ leaf.components[1], all);
                    prop_assert!(leaf.outcomes.iter().all(|o| !o.is_p0()));
                }
            }
        }
    }
}
