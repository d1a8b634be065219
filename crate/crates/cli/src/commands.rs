//! Subcommand implementations. Each one resolves and validates its full
//! configuration, loads its inputs, and only then writes anything.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::Serialize;
use shiftscope::analysis::{score_landscape, GridBounds};
use shiftscope::data::{derive_seed, gen_id, gen_nas, read_csv, write_csv, LabeledDataset};
use shiftscope::hyperparam::{evaluate_candidate, rank_and_select, reference_stats, SweepGrid, SweepOutcome, SweepRecord};
use shiftscope::losses::LossConfig;
use shiftscope::net::DenseNet;
use shiftscope::report::{aggregate, aggregate_csv, curve_csv, evaluate, metric_table, EvalReport, ShiftedSet, SCHEMA_VERSION};
use shiftscope::scorers::{Detector, ScorerKind};
use shiftscope::train::{train as fit_net, TrainConfig, TrainLog};

use crate::config::ExperimentConfig;
use crate::{CliError, EvalArgs, GenDataArgs, LandscapeArgs, ReportArgs, SweepArgs, TrainArgs};

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn load_data(path: &Path) -> Result<LabeledDataset, CliError> {
    Ok(read_csv(path)?)
}

fn load_model(path: &Path) -> Result<DenseNet, CliError> {
    Ok(DenseNet::load(path)?)
}

fn needs_training_data(kinds: &[ScorerKind]) -> bool {
    kinds.iter().any(|k| {
        matches!(
            k,
            ScorerKind::Mahalanobis | ScorerKind::MahalanobisEnsemble | ScorerKind::Gram
        )
    })
}

/// Shift degree encoded as a `_d<delta>` suffix of a file stem.
pub fn delta_from_stem(stem: &str) -> Option<f64> {
    let (_, tail) = stem.rsplit_once("_d")?;
    tail.parse().ok().filter(|d: &f64| d.is_finite())
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(a.config.config.as_deref())?;
    if let Some(c) = a.category {
        cfg.category = c;
    }
    if let Some(d) = a.deltas {
        cfg.deltas = d;
    }
    if let Some(s) = a.side {
        cfg.synth.side = s;
    }
    if let Some(s) = a.spread {
        cfg.synth.spread = s;
    }
    if let Some(n) = a.n_per_class {
        cfg.synth.n_per_class = n;
    }
    if let Some(n) = a.n_nas {
        cfg.n_nas = n;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    let seed = match a.seed {
        Some(s) => s,
        None => cfg.first_seed()?,
    };
    let category = cfg.category()?;
    let synth = cfg.synth.to_synth_config(seed)?;
    let test_synth = a.test_seed.map(|s| cfg.synth.to_synth_config(s)).transpose()?;
    if cfg.n_nas == 0 {
        return Err(CliError::Usage("n_nas must be positive".into()));
    }
    for (i, d) in cfg.deltas.iter().enumerate() {
        if cfg.deltas[..i].contains(d) {
            return Err(CliError::Usage(format!("shift degree {d} listed twice")));
        }
    }
    let out = cfg.out_path()?.to_path_buf();

    let id = gen_id(&synth)?;
    let test = test_synth.as_ref().map(gen_id).transpose()?;
    let cat_seed = derive_seed(seed, category.number() as u64);
    let mut nas = Vec::with_capacity(cfg.deltas.len());
    for &d in &cfg.deltas {
        let data = gen_nas(&synth, category, d, cfg.n_nas, derive_seed(cat_seed, d.to_bits()))?;
        nas.push((format!("nas_cat{}_d{d}.csv", category.number()), data));
    }

    create_dir(&out)?;
    write_csv(&id, out.join("id.csv"))?;
    if let Some(t) = &test {
        write_csv(t, out.join("id_test.csv"))?;
    }
    for (name, data) in &nas {
        write_csv(data, out.join(name))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainLogFile<'a> {
    schema_version: u32,
    seed: u64,
    layer_sizes: &'a [usize],
    activation: &'a str,
    loss: LossConfig,
    train: TrainConfig,
    #[serde(flatten)]
    log: &'a TrainLog,
}

fn default_log_path(model: &Path) -> PathBuf {
    model.with_extension("log.json")
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(a.config.config.as_deref())?;
    if let Some(l) = a.loss.loss {
        cfg.loss.kind = l;
    }
    if let Some(w) = a.loss.w_dist {
        cfg.loss.w_dist = w;
    }
    if let Some(v) = a.loss.l2 {
        cfg.loss.lambda_var = v;
    }
    if let Some(v) = a.loss.l3 {
        cfg.loss.lambda_corr = v;
    }
    a.net.apply(&mut cfg);
    if a.out.is_some() {
        cfg.out = a.out;
    }
    let loss = cfg.loss.to_loss_config()?;
    let act = cfg.validate_net()?;
    cfg.validate_train()?;
    let (seeds, per_seed_dir) = match (a.seed, a.seeds) {
        (Some(s), _) => (vec![s], false),
        (None, Some(list)) => (list, true),
        (None, None) => (vec![cfg.first_seed()?], false),
    };
    if seeds.is_empty() {
        return Err(CliError::Usage("seed list is empty".into()));
    }
    let out = cfg.out_path()?.to_path_buf();
    let data = load_data(&a.data)?;
    let sizes = cfg.layer_sizes(data.dim(), data.num_classes);

    let trained = seeds
        .par_iter()
        .map(|&seed| {
            let net = DenseNet::new(&sizes, act, seed)?;
            fit_net(&net, &data, &loss, &cfg.train, seed)
        })
        .collect::<Result<Vec<_>, _>>()?;

    if per_seed_dir {
        create_dir(&out)?;
    }
    for (seed, t) in seeds.iter().zip(&trained) {
        let (model_path, log_path) = if per_seed_dir {
            (
                out.join(format!("model_seed{seed}.txt")),
                out.join(format!("model_seed{seed}.log.json")),
            )
        } else {
            (out.clone(), a.log.clone().unwrap_or_else(|| default_log_path(&out)))
        };
        create_parent(&model_path)?;
        t.net.save(&model_path)?;
        let log = TrainLogFile {
            schema_version: SCHEMA_VERSION,
            seed: *seed,
            layer_sizes: &sizes,
            activation: act.name(),
            loss,
            train: cfg.train,
            log: &t.log,
        };
        create_parent(&log_path)?;
        write_file(&log_path, &to_json(&log)?)?;
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(a.config.config.as_deref())?;
    if let Some(s) = a.scorers {
        cfg.scorers = s;
    }
    if let Some(m) = a.metrics {
        cfg.metrics = m;
    }
    if let Some(t) = a.odin_temperature {
        cfg.scorer_params.odin_temperature = t;
    }
    if let Some(e) = a.odin_epsilon {
        cfg.scorer_params.odin_epsilon = e;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    let kinds = cfg.scorer_kinds()?;
    let metrics = cfg.metric_kinds()?;
    let det_cfg = cfg.detector_config()?;
    if needs_training_data(&kinds) && a.train.is_none() {
        return Err(CliError::Usage(
            "the mahalanobis, mahalanobis-ensemble and gram scorers need --train".into(),
        ));
    }
    let out = cfg.out_path()?.to_path_buf();

    let net = load_model(&a.model)?;
    let id = load_data(&a.id)?;
    let fit_data = match &a.train {
        Some(p) => load_data(p)?,
        None => id.clone(),
    };
    let shifted = a
        .nas
        .iter()
        .map(|p| {
            let stem = file_stem(p);
            Ok(ShiftedSet {
                delta: delta_from_stem(&stem),
                name: stem,
                inputs: load_data(p)?.inputs,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let detector = Detector::fit(&net, &fit_data, &kinds, det_cfg)?;
    let rows = evaluate(&detector, &id.inputs, &shifted, &kinds, &metrics)?;
    let report = EvalReport {
        schema_version: SCHEMA_VERSION,
        model: file_name(&a.model),
        rows,
    };
    create_parent(&out)?;
    write_file(&out, &to_json(&report)?)
}

/// Appends records to the trail strictly in grid order, whatever order the
/// workers finish in, flushing after each line.
struct OrderedTrail {
    file: File,
    path: PathBuf,
    next: usize,
    pending: BTreeMap<usize, SweepRecord>,
}

impl OrderedTrail {
    fn push(&mut self, index: usize, record: SweepRecord) -> Result<(), CliError> {
        self.pending.insert(index, record);
        while let Some(r) = self.pending.remove(&self.next) {
            let line = serde_json::to_string(&r).map_err(|e| CliError::Runtime(e.to_string()))?;
            writeln!(self.file, "{line}").map_err(|e| io_err(&self.path, e))?;
            self.file.flush().map_err(|e| io_err(&self.path, e))?;
            self.next += 1;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct SweepFile<'a> {
    schema_version: u32,
    seed: u64,
    grid: &'a SweepGrid,
    #[serde(flatten)]
    outcome: &'a SweepOutcome,
}

pub fn sweep(a: SweepArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(a.config.config.as_deref())?;
    if let Some(v) = a.l2 {
        cfg.sweep.lambda_var = v;
    }
    if let Some(v) = a.l3 {
        cfg.sweep.lambda_corr = v;
    }
    if let Some(w) = a.w_dist {
        cfg.loss.w_dist = w;
    }
    if let Some(f) = a.accuracy_floor {
        cfg.sweep.accuracy_floor = f;
    }
    a.net.apply(&mut cfg);
    if a.out.is_some() {
        cfg.out = a.out;
    }
    let grid = cfg.sweep_grid()?;
    let act = cfg.validate_net()?;
    cfg.validate_train()?;
    let seed = match a.seed {
        Some(s) => s,
        None => cfg.first_seed()?,
    };
    let out = cfg.out_path()?.to_path_buf();
    let data = load_data(&a.data)?;
    let eval_data = match &a.eval {
        Some(p) => load_data(p)?,
        None => data.clone(),
    };
    let sizes = cfg.layer_sizes(data.dim(), data.num_classes);
    let train_cfg = cfg.train;
    let train_fn = |loss: &LossConfig| -> shiftscope::Result<DenseNet> {
        let net = DenseNet::new(&sizes, act, seed)?;
        Ok(fit_net(&net, &data, loss, &train_cfg, seed)?.net)
    };

    create_dir(&out)?;
    let trail_path = out.join("trail.jsonl");
    let file = File::create(&trail_path).map_err(|e| io_err(&trail_path, e))?;
    let trail = Mutex::new(OrderedTrail {
        file,
        path: trail_path,
        next: 0,
        pending: BTreeMap::new(),
    });

    let reference = reference_stats(&grid, &data, &eval_data, &train_fn)?;
    let records = grid
        .candidates()
        .into_par_iter()
        .enumerate()
        .map(|(i, (lv, lc))| {
            let r = evaluate_candidate(&grid, lv, lc, &data, &eval_data, &train_fn)?;
            trail.lock().expect("trail lock").push(i, r.clone())?;
            Ok(r)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let outcome = rank_and_select(reference, records, cfg.sweep.accuracy_floor);

    let summary = SweepFile {
        schema_version: SCHEMA_VERSION,
        seed,
        grid: &grid,
        outcome: &outcome,
    };
    write_file(&out.join("sweep.json"), &to_json(&summary)?)?;
    match outcome.accepted {
        Some((lv, lc)) => println!("accepted lambda_var={lv} lambda_corr={lc}"),
        None => println!("no candidate accepted"),
    }
    Ok(())
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let reports = a
        .eval_jsons
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str::<EvalReport>(&text)
                .map_err(|e| CliError::Runtime(format!("{}: not an eval report: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rows = aggregate(&reports).map_err(|e| {
        let files: Vec<String> = a
            .eval_jsons
            .iter()
            .enumerate()
            .map(|(i, p)| format!("report {i} = {}", p.display()))
            .collect();
        CliError::Runtime(format!("{e} [{}]", files.join("; ")))
    })?;

    let mut metrics: Vec<&str> = Vec::new();
    let mut curves: Vec<(&str, &str)> = Vec::new();
    for r in &rows {
        if !metrics.contains(&r.metric.as_str()) {
            metrics.push(&r.metric);
        }
        if r.delta.is_some() && !curves.contains(&(r.scorer.as_str(), r.metric.as_str())) {
            curves.push((&r.scorer, &r.metric));
        }
    }
    create_dir(&a.out)?;
    write_file(&a.out.join("table.csv"), &aggregate_csv(&rows))?;
    for m in &metrics {
        write_file(
            &a.out.join(format!("table_{}.csv", sanitize(m))),
            &metric_table(&rows, m),
        )?;
    }
    for (s, m) in &curves {
        write_file(
            &a.out.join(format!("curve_{}_{}.csv", sanitize(s), sanitize(m))),
            &curve_csv(&rows, s, m),
        )?;
    }
    Ok(())
}

pub fn landscape(a: LandscapeArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(a.config.config.as_deref())?;
    let kind: ScorerKind = a.scorer.parse()?;
    let det_cfg = cfg.detector_config()?;
    let [x_min, x_max, y_min, y_max] = a.bounds[..] else {
        return Err(CliError::Usage(format!(
            "--bounds needs four values x_min,x_max,y_min,y_max, got {}",
            a.bounds.len()
        )));
    };
    let bounds = GridBounds { x_min, x_max, y_min, y_max };
    if !(x_max > x_min && y_max > y_min) || a.nx < 2 || a.ny < 2 {
        return Err(CliError::Usage(
            "landscape needs max > min on both axes and at least 2 cells per axis".into(),
        ));
    }
    if needs_training_data(&[kind]) && a.train.is_none() {
        return Err(CliError::Usage(format!("scorer '{kind}' needs --train")));
    }
    let net = load_model(&a.model)?;
    let fit = match &a.train {
        Some(p) => Some(load_data(p)?),
        None => None,
    };
    let detector = match &fit {
        Some(d) => Detector::fit(&net, d, &[kind], det_cfg)?,
        None => Detector {
            net,
            config: det_cfg,
            mahalanobis: None,
            mahalanobis_ensemble: None,
            gram: None,
        },
    };
    let land = score_landscape(&detector, kind, bounds, a.nx, a.ny)?;
    create_parent(&a.out)?;
    write_file(&a.out, &land.to_csv())
}
