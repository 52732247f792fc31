use std::fmt::Write as _;
use std::io::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};

use desmil::data::{
    export_tsv, ingest_with, read_events, read_vocab, split_classic, split_ood, write_vocab, EvalSet, SequenceDataset,
    Vocabulary,
};
use desmil::decorrelate::SampleWeightTable;
use desmil::evaluate::{evaluate_model, MetricsReport};
use desmil::model::{load_checkpoint, save_checkpoint};
use desmil::synth::generate;
use desmil::train::{train as fit, TraceWriter, TrainOutcome};

use crate::config::{parse_list, Manifest, RunConfig, SplitMode, MANIFEST_FILE};
use crate::{DumpArgs, EvalArgs, SplitArgs, SweepArgs};

const USERS_VOCAB: &str = "users.vocab";
const ITEMS_VOCAB: &str = "items.vocab";
pub const TRACE_FILE: &str = "trace.csv";
pub const WEIGHTS_FILE: &str = "weights.tsv";

pub fn split(args: &SplitArgs, cfg: RunConfig, out: &Path) -> Result<()> {
    let (events, _) = read_events(&args.input)?;
    let test_events = match &args.test_input {
        Some(p) if cfg.mode == SplitMode::Ood => Some(read_events(p)?.0),
        Some(_) => bail!("--test-input applies to the ood mode only"),
        None => None,
    };
    let all = events.iter().chain(test_events.iter().flatten());
    let users = Arc::new(Vocabulary::from_ids(all.clone().map(|e| e.user_id.as_str())));
    let items = Arc::new(Vocabulary::from_ids(all.map(|e| e.item_id.as_str())));
    let ds = SequenceDataset::from_events_with(&events, Arc::clone(&users), Arc::clone(&items))?;

    let mut parts: Vec<(&str, SequenceDataset)> = Vec::new();
    match cfg.mode {
        SplitMode::Ood => {
            let s = split_ood(&ds, cfg.z)?;
            let (inputs, targets) = match &test_events {
                Some(ev) => {
                    let t = SequenceDataset::from_events_with(ev, Arc::clone(&users), Arc::clone(&items))?;
                    let t = split_ood(&t, cfg.z)?;
                    (t.test_inputs, t.test_targets)
                }
                None => (s.test_inputs, s.test_targets),
            };
            parts.extend([("train", s.train), ("valid", s.valid), ("test_inputs", inputs), ("test_targets", targets)]);
        }
        SplitMode::Classic => {
            let train_ratio = 1.0 - cfg.valid_ratio - cfg.test_ratio;
            let s = split_classic(&ds, (train_ratio, cfg.valid_ratio, cfg.test_ratio), cfg.seed)?;
            parts.extend([("train", s.train), ("valid", s.valid), ("test", s.test)]);
        }
    }

    let mut manifest = Manifest::new("split", &cfg).input("input", &args.input)?;
    if let Some(p) = &args.test_input {
        manifest = manifest.input("test_input", p)?;
    }
    let dir = manifest.create_run_dir(out)?;
    write_vocab(&users, &dir.join(USERS_VOCAB))?;
    write_vocab(&items, &dir.join(ITEMS_VOCAB))?;
    for (name, part) in &parts {
        export_tsv(part, &dir.join(format!("{name}.tsv")))?;
    }
    println!("{}", dir.display());
    Ok(())
}

pub fn synth(cfg: RunConfig, out: &Path) -> Result<()> {
    let data = generate(&cfg.synth_config())?;
    let dir = Manifest::new("synth", &cfg).create_run_dir(out)?;
    export_tsv(&data.train, &dir.join("train.tsv"))?;
    export_tsv(&data.test, &dir.join("test.tsv"))?;
    let mut clusters = String::new();
    for (i, c) in data.item_cluster.iter().enumerate() {
        writeln!(clusters, "{}\t{c}", data.train.items.id(i))?;
    }
    fs::write(dir.join("clusters.tsv"), clusters)?;
    let mut primaries = String::new();
    for (u, p) in data.primary.iter().enumerate() {
        writeln!(primaries, "{}\t{p}", data.train.users.id(u))?;
    }
    fs::write(dir.join("primaries.tsv"), primaries)?;
    println!("{}", dir.display());
    Ok(())
}

/// A split directory loaded over its shared vocabularies.
pub struct SplitData {
    pub train: SequenceDataset,
    pub valid: EvalSet,
    pub test: EvalSet,
}

pub fn load_split(dir: &Path, cfg: &RunConfig) -> Result<SplitData> {
    let manifest = Manifest::read(dir).with_context(|| format!("{} is not a split directory", dir.display()))?;
    ensure!(manifest.command == "split", "{} holds a {} run, not a split", dir.display(), manifest.command);
    let users = read_vocab(&dir.join(USERS_VOCAB))?;
    let items = read_vocab(&dir.join(ITEMS_VOCAB))?;
    let part = |name: &str| ingest_with(&dir.join(format!("{name}.tsv")), Arc::clone(&users), Arc::clone(&items));
    let train = part("train")?;
    let valid_part = part("valid")?;
    let (valid, test) = match manifest.config.mode {
        SplitMode::Ood => (
            EvalSet::from_pairs(&train, &valid_part),
            EvalSet::from_pairs(&part("test_inputs")?, &part("test_targets")?),
        ),
        SplitMode::Classic => (
            EvalSet::holdout(&valid_part, cfg.holdout),
            EvalSet::holdout(&part("test")?, cfg.holdout),
        ),
    };
    let (valid, test) = if cfg.expand_targets {
        (valid.expand_targets(), test.expand_targets())
    } else {
        (valid, test)
    };
    Ok(SplitData { train, valid, test })
}

/// Trains into a fresh run directory and returns it with the outcome.
pub fn train(split_dir: &Path, cfg: RunConfig, out: &Path) -> Result<(PathBuf, TrainOutcome)> {
    let data = load_split(split_dir, &cfg)?;
    let train_cfg = cfg.train_config()?;
    let manifest = Manifest::new("train", &cfg).input("split", &split_dir.join(MANIFEST_FILE))?;
    let dir = manifest.create_run_dir(out)?;
    let mut trace = TraceWriter::create(&dir.join(TRACE_FILE))?;
    let outcome = fit(&data.train, &data.valid, &train_cfg, Some(&mut trace))?;
    save_checkpoint(&outcome.params, &dir)?;
    outcome.weights.dump(&dir.join(WEIGHTS_FILE))?;
    fs::write(
        dir.join("best.json"),
        format!(
            "{{\"best_step\":{},\"recall50\":{},\"steps\":{}}}\n",
            outcome.best_step, outcome.best_recall50, outcome.steps
        ),
    )?;
    log::info!("run {}: best recall@50 {:.3} at step {}", dir.display(), outcome.best_recall50, outcome.best_step);
    Ok((dir, outcome))
}

fn evaluate_run(run: &Path, test: &EvalSet) -> Result<MetricsReport> {
    let params = load_checkpoint(run).with_context(|| format!("loading checkpoint from {}", run.display()))?;
    ensure!(
        params.num_items() == test.num_items,
        "checkpoint has {} items but the split has {}",
        params.num_items(),
        test.num_items
    );
    Ok(evaluate_model(&params, test)?)
}

pub fn eval(args: &EvalArgs, cfg: RunConfig, out: &Path) -> Result<()> {
    match (&args.checkpoint, args.seeds) {
        (Some(run), _) => {
            let data = load_split(&args.split, &cfg)?;
            println!("{}", evaluate_run(run, &data.test)?.to_json());
        }
        (None, Some(n)) => {
            ensure!(n >= 1, "--seeds must be at least 1");
            let data = load_split(&args.split, &cfg)?;
            let mut reports = Vec::new();
            for seed in cfg.seed..cfg.seed + n {
                let mut c = cfg.clone();
                c.seed = seed;
                let (dir, _) = train(&args.split, c, out)?;
                let r = evaluate_run(&dir, &data.test)?;
                println!("{seed}\t{}", r.to_json());
                reports.push(r);
            }
            let mean = MetricsReport::mean(&reports).expect("at least one seed");
            println!("mean\t{}", mean.to_json());
        }
        (None, None) => bail!("pass --checkpoint DIR or --seeds N"),
    }
    Ok(())
}

pub const SWEEP_HEADER: &str = "lambda\tinterests\trecall20\trecall50\tndcg20\tndcg50\thr20\thr50\tusers";

pub fn sweep(args: &SweepArgs, cfg: RunConfig, out: &Path) -> Result<()> {
    let lambdas: Vec<f64> = parse_list(&args.lambdas)?;
    let grid: Vec<usize> = parse_list(&args.interest_grid)?;
    let data = load_split(&args.split, &cfg)?;
    let manifest = Manifest::new("sweep", &cfg).input("split", &args.split.join(MANIFEST_FILE))?;
    let dir = manifest.create_run_dir(out)?;
    let mut table = format!("{SWEEP_HEADER}\n");
    println!("{SWEEP_HEADER}");
    for &lambda in &lambdas {
        for &interests in &grid {
            let mut c = cfg.clone();
            c.lambda = lambda;
            c.interests = interests;
            let (run, _) = train(&args.split, c, &dir)?;
            let r = evaluate_run(&run, &data.test)?;
            let row = format!(
                "{lambda}\t{interests}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.recall20, r.recall50, r.ndcg20, r.ndcg50, r.hr20, r.hr50, r.users
            );
            println!("{row}");
            table.push_str(&row);
            table.push('\n');
        }
    }
    fs::write(dir.join("sweep.tsv"), table)?;
    Ok(())
}

pub fn dump_weights(args: &DumpArgs) -> Result<()> {
    ensure!(args.bins >= 1, "--bins must be at least 1");
    let table = SampleWeightTable::load(&args.run.join(WEIGHTS_FILE))?;
    let w = table.weights();
    ensure!(!w.is_empty(), "weight table is empty");
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let low = w.iter().filter(|&&x| x < 0.05).count() as f64 / n;
    let mut text = String::new();
    writeln!(text, "samples\t{}", w.len())?;
    writeln!(text, "mean\t{mean}")?;
    writeln!(text, "min\t{min}")?;
    writeln!(text, "max\t{max}")?;
    writeln!(text, "below_0.05\t{low}")?;
    let mut counts = vec![0usize; args.bins];
    for &x in w {
        counts[((x * args.bins as f64) as usize).min(args.bins - 1)] += 1;
    }
    for (b, c) in counts.iter().enumerate() {
        let lo = b as f64 / args.bins as f64;
        let hi = (b + 1) as f64 / args.bins as f64;
        writeln!(text, "{lo}\t{hi}\t{c}")?;
    }
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}
