use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use awd_core::distill::{awd_loss_grad, select_best, sweep_from, AwdLoss, AwdRunRecord, Selection};
use awd_core::evalkit::{
    activation_map, cascade, cv_select_ridge, dataset_compression_rate, linear_head_fit, max_coeff_features,
    wavelet_distance, MaxMode,
};
use awd_core::filters::{standard_bank, FilterPair};
use awd_core::io;
use awd_core::nnet::{mse, r2_score, train, Activation, TeacherModel};
use awd_core::peakcount::{generate_maps, BinRange, ClassModel, LabelledMaps, PeakClassifier, PeakFilter};
use awd_core::synth::{generate, Groundtruth, SynthData, TEACHER_R2_GATE};
use awd_core::transform::{dwt1d, idwt1d, TransformConfig};
use awd_core::trim::saliency;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{Config, SelectionKind};
use crate::manifest::Run;

const TRAIN_CSV: &str = "data/train.csv";
const TEST_CSV: &str = "data/test.csv";
const GROUNDTRUTH_JSON: &str = "data/groundtruth.json";
const GROUNDTRUTH_FILTERS: &str = "data/groundtruth.filt.json";
const TEACHER_MODEL: &str = "teacher/model.json";
const SWEEP_JSON: &str = "distill/sweep.json";
const INIT_FILTERS: &str = "distill/init.filt.json";
const BEST_FILTERS: &str = "distill/best.filt.json";

/// Runs one verb and returns the manifest path.
pub fn run(command: &str, config_path: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<PathBuf> {
    let mut cfg = match config_path {
        Some(p) => Config::load(p)?,
        None => Config::parse(crate::config::BUNDLED)?,
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut run = Run::new(out)?;
    match command {
        "gen" => cmd_gen(&cfg, &mut run)?,
        "train-teacher" => cmd_train_teacher(&cfg, &mut run)?,
        "distill" => cmd_distill(&cfg, &mut run)?,
        "eval" => cmd_eval(&cfg, &mut run)?,
        "peakcount" => cmd_peakcount(&cfg, &mut run)?,
        "bench" => cmd_bench(&cfg, &mut run)?,
        other => bail!("unknown command {other}"),
    }
    run.finish(command, config_path, cfg.seed)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn input(run: &Run, rel: &str) -> Result<PathBuf> {
    let p = run.out.join(rel);
    if !p.exists() {
        bail!("missing input {}", p.display());
    }
    Ok(p)
}

/// A configured path, relative ones resolved against the output directory.
fn resolve(run: &Run, p: &str) -> Result<PathBuf> {
    let path = Path::new(p);
    let full = if path.is_absolute() { path.to_path_buf() } else { run.out.join(path) };
    if !full.exists() {
        bail!("missing input {}", full.display());
    }
    Ok(full)
}

fn load_filters(path: &Path) -> Result<FilterPair> {
    FilterPair::load(path).with_context(|| format!("loading filters {}", path.display()))
}

fn load_data(run: &Run) -> Result<SynthData> {
    let train = io::read_dataset(input(run, TRAIN_CSV)?)?;
    let test = io::read_dataset(input(run, TEST_CSV)?)?;
    let groundtruth: Groundtruth = read_json(&input(run, GROUNDTRUTH_JSON)?)?;
    Ok(SynthData { train, test, groundtruth })
}

fn load_teacher(run: &Run) -> Result<TeacherModel> {
    let p = input(run, TEACHER_MODEL)?;
    TeacherModel::load(&p).with_context(|| format!("loading teacher {}", p.display()))
}

fn cmd_gen(cfg: &Config, run: &mut Run) -> Result<()> {
    let spec = cfg.data.spec(cfg.seed);
    let data = run.timed("generate", || Ok(generate(&spec)?))?;
    io::write_dataset(run.artifact(TRAIN_CSV)?, &data.train)?;
    io::write_dataset(run.artifact(TEST_CSV)?, &data.test)?;
    write_json(&run.artifact(GROUNDTRUTH_JSON)?, &data.groundtruth)?;
    data.groundtruth.filters()?.save(run.artifact(GROUNDTRUTH_FILTERS)?)?;
    write_json(&run.artifact("data/spec.json")?, &spec)?;
    Ok(())
}

#[derive(Serialize)]
struct TeacherMetrics {
    train_mse: f64,
    test_mse: f64,
    test_r2: f64,
    r2_gate: f64,
    epoch_losses: Vec<f64>,
}

fn cmd_train_teacher(cfg: &Config, run: &mut Run) -> Result<()> {
    let data = load_data(run)?;
    let dim = data.train.xs.first().map(Vec::len).ok_or_else(|| anyhow!("training set is empty"))?;
    let mut dims = vec![dim];
    dims.extend(&cfg.teacher.hidden);
    dims.push(1);
    let init = TeacherModel::mlp(&dims, Activation::Relu, cfg.seed)?;
    let tc = cfg.teacher.train_config(cfg.seed);
    let outcome = run.timed("train", || Ok(train(&init, &data.train.xs, &data.train.ys, &tc)?))?;
    let pred = outcome.model.predict(&data.test.xs)?;
    let metrics = TeacherMetrics {
        train_mse: outcome.final_mse,
        test_mse: mse(&pred, &data.test.ys),
        test_r2: r2_score(&pred, &data.test.ys),
        r2_gate: TEACHER_R2_GATE,
        epoch_losses: outcome.epoch_losses,
    };
    write_json(&run.artifact("teacher/metrics.json")?, &metrics)?;
    if !(metrics.test_r2 > TEACHER_R2_GATE) {
        bail!("teacher test R² {:.5} does not exceed the {TEACHER_R2_GATE} gate", metrics.test_r2);
    }
    outcome.model.save(run.artifact(TEACHER_MODEL)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub final_loss: AwdLoss,
    pub failure: Option<String>,
    pub score: Option<f64>,
    pub filter_file: PathBuf,
    pub log_file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub selection: SelectionKind,
    pub init_file: PathBuf,
    pub best: usize,
    pub best_file: PathBuf,
    pub cells: Vec<SweepCell>,
}

/// Held-out MSE of a ridge head on the largest coefficients per scale.
fn cv_score(record: &AwdRunRecord, data: &SynthData, cfg: &Config, levels: usize) -> awd_core::Result<f64> {
    let d = &cfg.distill;
    let tc = TransformConfig::new(levels)?;
    let feats = |xs: &[Vec<f64>]| -> awd_core::Result<Vec<Vec<f64>>> {
        xs.iter()
            .map(|x| max_coeff_features(&dwt1d(x, &record.final_filters, tc)?, d.cv_per_scale, MaxMode::Signed))
            .collect()
    };
    let (ftrain, ftest) = (feats(&data.train.xs)?, feats(&data.test.xs)?);
    let ridge = cv_select_ridge(&ftrain, &data.train.ys, &d.cv_ridge_grid, d.cv_folds)?;
    let head = linear_head_fit(&ftrain, &data.train.ys, ridge)?;
    let pred: Vec<f64> = ftest.iter().map(|f| head.predict(f)).collect();
    Ok(mse(&pred, &data.test.ys))
}

fn cmd_distill(cfg: &Config, run: &mut Run) -> Result<()> {
    let data = load_data(run)?;
    let teacher = load_teacher(run)?;
    let mut base = cfg.distill.awd_config(data.groundtruth.levels, cfg.seed);
    if standard_bank(&base.init).is_err() {
        base.init = resolve(run, &base.init)?.to_string_lossy().into_owned();
    }
    base.validate()?;
    let init = base.initial_filters()?;
    init.save(run.artifact(INIT_FILTERS)?)?;
    let d = &cfg.distill;
    let records = run.timed("sweep", || Ok(sweep_from(&data.train.xs, &teacher, &d.lambda_grid, &d.gamma_grid, &base, init)?))?;

    let target = cascade(&data.groundtruth.filters()?, awd_core::evalkit::DEFAULT_CASCADE_ITERATIONS)?.1;
    let cv = |r: &AwdRunRecord| cv_score(r, &data, cfg, base.levels);
    let criterion = match d.selection {
        SelectionKind::GroundtruthDistance => Selection::GroundtruthDistance(&target),
        SelectionKind::CvScore => Selection::CvScore(&cv),
    };
    let (best, _) = run.timed("select", || Ok(select_best(&records, &criterion)?))?;

    let mut cells = Vec::with_capacity(records.len());
    for (k, rec) in records.iter().enumerate() {
        let filter_file = PathBuf::from(format!("distill/cell_{k:02}.filt.json"));
        let log_file = PathBuf::from(format!("distill/cell_{k:02}.log.csv"));
        rec.final_filters.save(run.artifact(&filter_file)?)?;
        io::write_run_log(run.artifact(&log_file)?, &rec.history)?;
        let score = if rec.failed() { None } else { Some(awd_core::distill::score(rec, &criterion)?) };
        cells.push(SweepCell {
            index: k,
            lambda: rec.config.lambda,
            gamma: rec.config.gamma,
            final_loss: rec.final_loss,
            failure: rec.failure.clone(),
            score,
            filter_file,
            log_file,
        });
    }
    records[best].final_filters.save(run.artifact(BEST_FILTERS)?)?;
    let manifest = SweepManifest {
        selection: d.selection,
        init_file: INIT_FILTERS.into(),
        best,
        best_file: BEST_FILTERS.into(),
        cells,
    };
    write_json(&run.artifact(SWEEP_JSON)?, &manifest)?;
    Ok(())
}

fn cmd_eval(cfg: &Config, run: &mut Run) -> Result<()> {
    let e = &cfg.eval;
    let learned_path = resolve(run, e.learned.as_deref().unwrap_or(BEST_FILTERS))?;
    let reference_path = resolve(run, e.reference.as_deref().unwrap_or(GROUNDTRUTH_FILTERS))?;
    let learned = load_filters(&learned_path)?;
    let reference = load_filters(&reference_path)?;

    let (lphi, lpsi) = cascade(&learned, e.cascade_iterations)?;
    let (rphi, rpsi) = cascade(&reference, e.cascade_iterations)?;
    io::write_curve(run.artifact("eval/learned_phi.csv")?, &lphi)?;
    io::write_curve(run.artifact("eval/learned_psi.csv")?, &lpsi)?;
    io::write_curve(run.artifact("eval/reference_phi.csv")?, &rphi)?;
    io::write_curve(run.artifact("eval/reference_psi.csv")?, &rpsi)?;
    let distance = wavelet_distance(&lpsi, &rpsi)?;
    {
        let mut w = csv::Writer::from_path(run.artifact("eval/distance.csv")?)?;
        w.write_record(["learned", "reference", "distance"])?;
        let shown = |p: &Path| p.strip_prefix(&run.out).unwrap_or(p).display().to_string();
        w.write_record([shown(&learned_path), shown(&reference_path), distance.to_string()])?;
        w.flush()?;
    }

    let sweep_path = run.out.join(SWEEP_JSON);
    if sweep_path.exists() {
        let sweep: SweepManifest = read_json(&sweep_path)?;
        let mut w = csv::Writer::from_path(run.artifact("eval/sweep_distances.csv")?)?;
        w.write_record(["lambda", "gamma", "distance", "failed"])?;
        for c in &sweep.cells {
            let f = load_filters(&run.out.join(&c.filter_file))?;
            let d = wavelet_distance(&cascade(&f, e.cascade_iterations)?.1, &rpsi)?;
            w.write_record([c.lambda.to_string(), c.gamma.to_string(), d.to_string(), c.failure.is_some().to_string()])?;
        }
        w.flush()?;
    }

    if e.use_teacher {
        let data = load_data(run)?;
        let teacher = load_teacher(run)?;
        let tc = TransformConfig::new(data.groundtruth.levels)?;
        let mut banks = vec![("learned", learned.clone()), ("reference", reference.clone())];
        let init_path = run.out.join(INIT_FILTERS);
        if init_path.exists() {
            banks.push(("init", load_filters(&init_path)?));
        }
        let rates = run.timed("compression", || {
            banks
                .iter()
                .map(|(name, f)| Ok((*name, dataset_compression_rate(&data.test.xs, &teacher, f, tc, e.compression_threshold)?)))
                .collect::<Result<Vec<_>>>()
        })?;
        let mut w = csv::Writer::from_path(run.artifact("eval/compression.csv")?)?;
        w.write_record(["filters", "threshold", "rate"])?;
        for (name, r) in rates {
            w.write_record([name.to_string(), e.compression_threshold.to_string(), r.to_string()])?;
        }
        w.flush()?;

        let dim = data.test.xs.first().map_or(0, Vec::len);
        let side = (dim as f64).sqrt().round() as usize;
        let square = side > 0 && side * side == dim && side.is_multiple_of(1 << e.activation_levels);
        for (i, x) in data.test.xs.iter().take(e.attribution_samples).enumerate() {
            let c = dwt1d(x, &learned, tc)?;
            let a = saliency(&teacher, &c, &learned)?;
            io::write_coeffs(run.artifact(format!("eval/attribution_{i:02}.csv"))?, &c, Some(&a))?;
            if square {
                let img = DMatrix::from_row_slice(side, side, x);
                let m = activation_map(&img, &teacher, &learned, TransformConfig::new(e.activation_levels)?, e.activation_top_k)?;
                io::write_matrix(run.artifact(format!("eval/activation_{i:02}.csv"))?, &m)?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ClassifierFile<'a> {
    filter: PeakFilter,
    range: BinRange,
    classes: &'a [ClassModel],
}

fn cmd_peakcount(cfg: &Config, run: &mut Run) -> Result<()> {
    let p = &cfg.peakcount;
    if p.classes.len() < 2 {
        bail!("peakcount needs at least two classes");
    }
    let specs = p.class_specs();
    let (train, validation, test) = run.timed("generate", || {
        Ok((
            generate_maps(&specs, p.train_per_class, cfg.seed)?,
            generate_maps(&specs, p.validation_per_class, cfg.seed.wrapping_add(1))?,
            generate_maps(&specs, p.test_per_class, cfg.seed.wrapping_add(2))?,
        ))
    })?;
    let bank = standard_bank(&p.subfilter_bank)?;
    let variants: Vec<(&str, PeakClassifier)> = vec![
        ("laplace", run.timed("fit_laplace", || Ok(PeakClassifier::fit(PeakFilter::Laplace, BinRange::LAPLACE, &train)?))?),
        ("roberts_cross", run.timed("fit_roberts", || Ok(PeakClassifier::fit_tuned(PeakFilter::RobertsCross, &train, &validation)?))?),
        ("subfilter", run.timed("fit_subfilter", || Ok(PeakClassifier::fit_subfilter_tuned(&bank, &train, &validation)?))?),
    ];

    let mut acc = csv::Writer::from_path(run.artifact("peakcount/accuracy.csv")?)?;
    acc.write_record(["variant", "accuracy"])?;
    let mut conf = csv::Writer::from_path(run.artifact("peakcount/confusion.csv")?)?;
    conf.write_record(["variant", "true", "predicted", "count"])?;
    let mut hists = Vec::new();
    for (name, clf) in &variants {
        write_json(
            &run.artifact(format!("peakcount/{name}.classes.json"))?,
            &ClassifierFile { filter: clf.filter, range: clf.range, classes: &clf.classes },
        )?;
        acc.write_record([name.to_string(), clf.accuracy(&test)?.to_string()])?;
        for (row, counts) in confusion(clf, &test)?.into_iter().enumerate() {
            for (col, n) in counts.into_iter().enumerate() {
                conf.write_record([name.to_string(), clf.classes[row].label.clone(), clf.classes[col].label.clone(), n.to_string()])?;
            }
        }
        for (label, maps) in &test {
            let values = awd_core::peakcount::map_steepness(&maps[0], &clf.filter)?;
            hists.push((format!("{name}/{label}"), clf.range.histogram(&values)?));
        }
    }
    acc.flush()?;
    conf.flush()?;
    io::write_histograms(run.artifact("peakcount/histograms.csv")?, &hists)?;
    Ok(())
}

/// Counts indexed `[true][predicted]` in class order.
fn confusion(clf: &PeakClassifier, data: &LabelledMaps) -> Result<Vec<Vec<u64>>> {
    let idx = |l: &str| clf.classes.iter().position(|c| c.label == l).ok_or_else(|| anyhow!("unknown label {l}"));
    let mut m = vec![vec![0u64; clf.classes.len()]; clf.classes.len()];
    for (label, maps) in data {
        let t = idx(label)?;
        for map in maps {
            m[t][idx(clf.predict(map)?)?] += 1;
        }
    }
    Ok(m)
}

fn cmd_bench(cfg: &Config, run: &mut Run) -> Result<()> {
    let reps = cfg.bench.repeats.max(1);
    let dim = cfg.data.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let xs: Vec<Vec<f64>> = (0..reps).map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let filters = standard_bank(&cfg.data.groundtruth)?;
    let tc = TransformConfig::new(cfg.data.levels)?;
    let teacher = match load_teacher(run) {
        Ok(t) => t,
        Err(_) => {
            let mut dims = vec![dim];
            dims.extend(&cfg.teacher.hidden);
            dims.push(1);
            TeacherModel::mlp(&dims, Activation::Relu, cfg.seed)?
        }
    };
    let coeffs: Vec<_> = xs.iter().map(|x| dwt1d(x, &filters, tc)).collect::<awd_core::Result<_>>()?;
    let base = cfg.distill.awd_config(cfg.data.levels, cfg.seed);

    let mut rows: Vec<(&str, f64)> = Vec::new();
    let mut time = |name: &'static str, f: &mut dyn FnMut() -> awd_core::Result<()>| -> Result<()> {
        let t = Instant::now();
        f()?;
        rows.push((name, t.elapsed().as_secs_f64() / reps as f64));
        Ok(())
    };
    time("dwt", &mut || xs.iter().try_for_each(|x| dwt1d(x, &filters, tc).map(drop)))?;
    time("idwt", &mut || coeffs.iter().try_for_each(|c| idwt1d(c, &filters).map(drop)))?;
    time("teacher_forward", &mut || xs.iter().try_for_each(|x| teacher.forward(x).map(drop)))?;
    time("saliency", &mut || coeffs.iter().try_for_each(|c| saliency(&teacher, c, &filters).map(drop)))?;
    time("awd_loss_grad", &mut || awd_loss_grad(&filters, &xs, &teacher, tc, base.lambda, base.gamma).map(drop))?;

    let mut w = csv::Writer::from_path(run.artifact("bench/timings.csv")?)?;
    w.write_record(["stage", "calls", "seconds_per_call"])?;
    for (name, s) in rows {
        w.write_record([name.to_string(), reps.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
