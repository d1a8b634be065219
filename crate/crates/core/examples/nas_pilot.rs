//! Pilot sweep over shift degrees for the synthetic three-class world.
//!
//! Trains CE-only, CE + distance and full-loss nets on five seeds and prints
//! mean MSP / Mahalanobis AUROC per category and shift degree, together with
//! accuracy and singular-value mass. The acceptance shift degrees were read
//! off this table.
//!
//! Run: cargo run --release -p shiftscope --example nas_pilot
//!
//! Knobs (environment): PILOT_SIZES (comma list), PILOT_ACT, PILOT_SIDE,
//! PILOT_SPREAD, PILOT_LR, PILOT_EPOCHS, PILOT_WD, PILOT_L2, PILOT_L3,
//! PILOT_D1/D2/D3 (shift lists), PILOT_CATS and PILOT_LOSSES (filters).

use shiftscope::data::{gen_id, gen_nas, NasCategory, SynthConfig};
use shiftscope::hyperparam::residual_singular_mass;
use shiftscope::losses::LossConfig;
use shiftscope::metrics::{auroc, ScoreSample};
use shiftscope::net::{Activation, DenseNet};
use shiftscope::scorers::{Detector, DetectorConfig, ScorerKind};
use shiftscope::train::{train, TrainConfig};

fn main() {
    let seeds: Vec<u64> = (0..5).collect();
    let env = |k: &str, d: f64| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
    let l2 = env("PILOT_L2", 0.1);
    let l3 = env("PILOT_L3", 0.001);
    let sizes: Vec<usize> = match std::env::var("PILOT_SIZES") {
        Ok(v) => v.split(',').map(|x| x.parse().unwrap()).collect(),
        Err(_) => vec![2, 128, 128, 128, 128, 3],
    };
    let side = env("PILOT_SIDE", 9.0);
    let act: Activation = std::env::var("PILOT_ACT").unwrap_or("relu".into()).parse().unwrap();
    let spread = env("PILOT_SPREAD", 1.0);
    let tcfg = TrainConfig {
        weight_decay: env("PILOT_WD", 0.0),
        epochs: env("PILOT_EPOCHS", 200.0) as usize,
        learning_rate: env("PILOT_LR", 1e-3),
        ..TrainConfig::default()
    };
    let losses = [
        ("ce", LossConfig::ce_only()),
        ("ce+dist", LossConfig::ce_dist(0.1)),
        ("full", LossConfig::full(0.1, l2, l3)),
    ];
    let list = |k: &str, d: &[f64]| -> Vec<f64> {
        std::env::var(k)
            .map(|v| v.split(',').map(|x| x.parse().unwrap()).collect())
            .unwrap_or_else(|_| d.to_vec())
    };
    let grid: [(NasCategory, Vec<f64>); 3] = [
        (NasCategory::One, list("PILOT_D1", &[0.25, 0.5, 0.6, 0.7, 1.0])),
        (NasCategory::Two, list("PILOT_D2", &[2.0, 4.0, 6.0])),
        (NasCategory::Three, list("PILOT_D3", &[1.0, 2.0, 4.0])),
    ];
    let kinds = [ScorerKind::Msp, ScorerKind::Mahalanobis];
    let cats = std::env::var("PILOT_CATS").unwrap_or_default();
    let only = std::env::var("PILOT_LOSSES").unwrap_or_default();
    for (name, loss) in losses {
        if !only.is_empty() && !only.split(',').any(|o| o == name) {
            continue;
        }
        let mut acc = 0.0;
        let mut mass = 0.0;
        let mut top2 = 0.0;
        let mut table: Vec<Vec<[f64; 2]>> = grid.iter().map(|(_, d)| vec![[0.0; 2]; d.len()]).collect();
        for &seed in &seeds {
            let train_set = gen_id(&SynthConfig::triangle(side, spread, 200, seed)).unwrap();
            let test_set = gen_id(&SynthConfig::triangle(side, spread, 200, seed + 1000)).unwrap();
            let net = DenseNet::new(&sizes, act, seed).unwrap();
            let trained = train(&net, &train_set, &loss, &tcfg, seed).unwrap().net;
            acc += trained.accuracy(&test_set.inputs, &test_set.labels).unwrap();
            let z = trained.forward(&train_set.inputs).unwrap().penultimate().clone();
            mass += residual_singular_mass(&z);
            let mut sv: Vec<f64> = z.clone().singular_values().iter().copied().collect();
            sv.sort_by(|a, b| b.total_cmp(a));
            top2 += sv[0] + sv[1];
            let det = Detector::fit(&trained, &train_set, &kinds, DetectorConfig::default()).unwrap();
            let id_scores: Vec<Vec<f64>> = kinds.iter().map(|&k| det.score(k, &test_set.inputs).unwrap()).collect();
            for (ci, (cat, deltas)) in grid.iter().enumerate() {
                if !cats.is_empty() && !cats.contains(&cat.number().to_string()) {
                    continue;
                }
                for (di, &d) in deltas.iter().enumerate() {
                    let nas = gen_nas(&SynthConfig::triangle(side, spread, 200, seed), *cat, d, 600, seed + 2000).unwrap();
                    for (ki, &k) in kinds.iter().enumerate() {
                        let s = ScoreSample::new(id_scores[ki].clone(), det.score(k, &nas.inputs).unwrap()).unwrap();
                        table[ci][di][ki] += auroc(&s).unwrap() / seeds.len() as f64;
                    }
                }
            }
        }
        let n = seeds.len() as f64;
        println!("== {name}: accuracy {:.4}, residual mass {:.3}, top-2 mass {:.3}", acc / n, mass / n, top2 / n);
        for (ci, (cat, deltas)) in grid.iter().enumerate() {
            for (di, d) in deltas.iter().enumerate() {
                let [msp, maha] = table[ci][di];
                println!("  {cat} delta {d:>5}: msp {msp:.3}  mahalanobis {maha:.3}");
            }
        }
    }
}
