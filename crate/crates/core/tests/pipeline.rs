mod oracles;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use shiftscope::analysis::{confidence_curve, score_landscape, GridBounds};
use shiftscope::data::{gen_id, gen_shift_sequence, NasCategory, SynthConfig};
use shiftscope::hyperparam::{residual_singular_mass, select_hyperparams, SweepGrid, Verdict};
use shiftscope::losses::LossConfig;
use shiftscope::net::{Activation, DenseNet};
use shiftscope::scorers::{Detector, DetectorConfig, ScorerKind};
use shiftscope::train::{train, TrainConfig};

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::default()
    }
}

fn net(seed: u64) -> DenseNet {
    DenseNet::new(&[2, 16, 16, 3], Activation::Relu, seed).unwrap()
}

#[test]
fn separable_clusters_are_learned() {
    let data = gen_id(&SynthConfig::triangle(12.0, 1.0, 100, 1)).unwrap();
    let test = gen_id(&SynthConfig::triangle(12.0, 1.0, 100, 2)).unwrap();
    let t = train(&net(1), &data, &LossConfig::ce_only(), &quick(60), 1).unwrap();
    assert!(t.net.accuracy(&test.inputs, &test.labels).unwrap() >= 0.99);
    let first = t.log.epochs.first().unwrap().total;
    let last = t.log.epochs.last().unwrap().total;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn zero_weight_terms_train_bit_identically() {
    let data = gen_id(&SynthConfig::triangle(6.0, 1.0, 40, 3)).unwrap();
    let a = train(&net(3), &data, &LossConfig::ce_only(), &quick(5), 3).unwrap();
    let b = train(&net(3), &data, &LossConfig::full(0.0, 0.0, 0.0), &quick(5), 3).unwrap();
    assert_eq!(a.net, b.net);
}

#[test]
fn training_is_reproducible() {
    let data = gen_id(&SynthConfig::triangle(6.0, 1.0, 40, 4)).unwrap();
    let cfg = LossConfig::full(0.1, 0.1, 0.001);
    let a = train(&net(4), &data, &cfg, &quick(5), 9).unwrap();
    let b = train(&net(4), &data, &cfg, &quick(5), 9).unwrap();
    let c = train(&net(4), &data, &cfg, &quick(5), 10).unwrap();
    assert_eq!(a.net, b.net);
    assert_eq!(a.log, b.log);
    assert_ne!(a.net, c.net);
}

fn randn(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

#[test]
fn residual_mass_matches_eigen_oracle() {
    for (i, (n, d)) in [(50, 8), (8, 50), (30, 3), (100, 16)].into_iter().enumerate() {
        let x = randn(n, d, i as u64);
        let got = residual_singular_mass(&x);
        let want = oracles::residual_mass_via_eigen(&x);
        assert!((got - want).abs() <= 1e-8 * want.max(1.0), "{got} vs {want}");
    }
}

#[test]
fn residual_mass_invariances() {
    let x = randn(60, 6, 11);
    let m = residual_singular_mass(&x);
    // Row order does not matter.
    let rev = DMatrix::from_fn(60, 6, |i, j| x[(59 - i, j)]);
    assert!((residual_singular_mass(&rev) - m).abs() < 1e-10);
    // Orthogonal change of feature basis.
    let q = randn(6, 6, 12).qr().q();
    assert!((residual_singular_mass(&(&x * q)) - m).abs() < 1e-10);
    // Homogeneous of degree one.
    assert!((residual_singular_mass(&(&x * -3.0)) - 3.0 * m).abs() < 1e-9);
    // Rank two features carry no residual mass.
    let low = randn(60, 2, 13) * randn(2, 6, 14);
    assert!(residual_singular_mass(&low) < 1e-10);
    assert_eq!(residual_singular_mass(&DMatrix::zeros(0, 3)), 0.0);
}

#[test]
fn small_sweep_runs_end_to_end() {
    let data = gen_id(&SynthConfig::triangle(6.0, 1.0, 40, 5)).unwrap();
    let grid = SweepGrid {
        lambda_var: vec![0.1, 1.0],
        lambda_corr: vec![0.001],
        w_dist: 0.1,
    };
    let train_fn = |cfg: &LossConfig| train(&net(5), &data, cfg, &quick(5), 5).map(|t| t.net);
    let mut seen = 0;
    let out = select_hyperparams(&grid, &data, &data, train_fn, 0.02, |_| seen += 1).unwrap();
    assert_eq!(seen, 2);
    assert_eq!(out.trail.len(), 2);
    assert!(out.trail.windows(2).all(|w| w[0].harmonic_mean <= w[1].harmonic_mean));
    if let Some(acc) = out.accepted_record() {
        assert_eq!(acc.verdict, Verdict::Accepted);
        assert!(acc.residual_mass > out.reference.ce_dist_residual_mass);
    }
    let strict = select_hyperparams(&grid, &data, &data, train_fn, -1.0, |_| {}).unwrap();
    assert!(strict.accepted.is_none());
    assert!(strict.trail.iter().all(|r| r.verdict != Verdict::Accepted));
}

#[test]
fn confidence_curve_covers_every_step() {
    let cfg = SynthConfig::triangle(6.0, 1.0, 40, 6);
    let data = gen_id(&cfg).unwrap();
    let t = train(&net(6), &data, &LossConfig::ce_only(), &quick(20), 6).unwrap();
    let seq = gen_shift_sequence(&cfg, NasCategory::Two, &[0.0, 2.0, 4.0], 90, 7).unwrap();
    let curve = confidence_curve(&t.net, &seq).unwrap();
    assert_eq!(curve.iter().map(|c| c.0).collect::<Vec<_>>(), vec![0.0, 2.0, 4.0]);
    assert!(curve.iter().all(|c| (1.0 / 3.0..=1.0).contains(&c.1)));
}

#[test]
fn mahalanobis_landscape_peaks_near_the_data() {
    let cfg = SynthConfig::triangle(6.0, 0.5, 60, 8);
    let data = gen_id(&cfg).unwrap();
    let t = train(&net(8), &data, &LossConfig::ce_only(), &quick(30), 8).unwrap();
    let det = Detector::fit(&t.net, &data, &[ScorerKind::Mahalanobis], DetectorConfig::default()).unwrap();
    let bounds = GridBounds {
        x_min: -20.0,
        x_max: 20.0,
        y_min: -20.0,
        y_max: 20.0,
    };
    let land = score_landscape(&det, ScorerKind::Mahalanobis, bounds, 41, 41).unwrap();
    assert_eq!(land.scores.len(), 41 * 41);
    let (ix, iy) = land.argmax_cell();
    let p = land.cell_center(ix, iy);
    let near = cfg.centers.iter().any(|c| (p[0] - c[0]).hypot(p[1] - c[1]) < 4.0);
    assert!(near, "peak at {p:?}");
    let csv = land.to_csv();
    assert_eq!(csv.lines().count(), 1 + 41 * 41);
    assert!(score_landscape(&det, ScorerKind::Mahalanobis, bounds, 1, 5).is_err());
}
