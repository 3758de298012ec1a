use mbqc_loops::analysis::estimate_p_span;
use mbqc_loops::lattice::{build_lattice, Boundary, LatticeSpec};
use mbqc_loops::oracle::{exact_mean_n_merge, exact_span_prob};
use mbqc_loops::sampler::{integrated_autocorr_time, run, n_merge_observer, SamplerParams, Start};
use mbqc_loops::weights::{QcMode, Regime, WeightModel};

fn params(seed: u64) -> SamplerParams {
    SamplerParams {
        burn_in_sweeps: 500,
        thinning_sweeps: 2,
        n_samples: 40_000,
        start: Start::Hot,
        seed,
    }
}

/// |MC - exact| in units of the autocorrelation-corrected standard error.
fn z_mean_n_merge(spec: LatticeSpec, g: f64, mode: QcMode, seed: u64) -> f64 {
    let c = build_lattice(&spec).unwrap();
    let model = WeightModel::new(g, mode).unwrap();
    let stream = run(&c, &model, &params(seed), vec![n_merge_observer()]).unwrap();
    let xs = stream.column("n_merge").unwrap();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var * 2.0 * integrated_autocorr_time(&xs) / n).sqrt();
    let exact = exact_mean_n_merge(&c, g, Regime::for_g(g)).unwrap();
    (mean - exact).abs() / se
}

#[test]
fn mean_merge_count_matches_enumeration() {
    for (spec, g) in [
        (LatticeSpec::honeycomb(2, Boundary::Torus), 0.7),
        (LatticeSpec::honeycomb(2, Boundary::Torus), -1.3),
        (LatticeSpec::square(3, Boundary::Torus), 0.6),
        (LatticeSpec::square(2, Boundary::Torus), 1.4),
    ] {
        let z = z_mean_n_merge(spec.clone(), g, QcMode::exact(), 21);
        assert!(z < 4.0, "{spec:?} g={g}: {z:.2} sigma");
    }
}

#[test]
fn span_probability_matches_enumeration_in_super_regime() {
    let c = build_lattice(&LatticeSpec::honeycomb(2, Boundary::Torus)).unwrap();
    let g = 1.25;
    let est = estimate_p_span(&c, &WeightModel::new(g, QcMode::exact()).unwrap(), &params(5)).unwrap();
    let exact = exact_span_prob(&c, g, Regime::Super).unwrap();
    assert!((est.p_span - exact).abs() < 4.0 * est.stderr.max(1e-3), "{} vs {exact}", est.p_span);
}
