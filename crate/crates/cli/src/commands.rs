use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use hiermil::data::{
    generate_mixed_test, generate_synthetic, load_dataset, save_dataset, split, Dataset, Entry, Split,
};
use hiermil::model::{Gate, ModelParams};
use hiermil::remix::{low_success_fraction, success_grid};
use hiermil::trainer::{evaluate, evaluate_priority, train, MetricsReport, PriorityReport, RunHistory};
use serde::Serialize;

use crate::config::RunConfig;
use crate::grid::parse_grid;
use crate::{AblationFlags, CliError, Command, Common};

type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData { common } => gen_data(&common),
        Command::Train {
            common,
            data,
            seeds,
            flags,
        } => cmd_train(&common, data, &seeds, &flags),
        Command::Eval {
            common,
            checkpoint,
            data,
            split,
            no_subsite,
        } => cmd_eval(&common, &checkpoint, data, split, no_subsite),
        Command::RemixProb {
            common,
            n,
            alpha,
            beta,
            data,
            threshold,
        } => remix_prob(&common, &n, &alpha, &beta, data, threshold),
        Command::Ablate { common, data, seeds } => ablate(&common, data, &seeds),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn load_config(common: &Common, data: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if data.is_some() {
        cfg.data = data;
    }
    Ok(cfg)
}

fn apply_flags(cfg: &mut RunConfig, flags: &AblationFlags) {
    let a = &mut cfg.ablation;
    a.use_iha &= !flags.no_iha;
    a.use_uhd &= !flags.no_uhd;
    a.use_subsite &= !flags.no_subsite;
    a.use_remix &= !flags.no_remix;
}

fn gen_data(common: &Common) -> Result<()> {
    let cfg = load_config(common, None)?;
    cfg.generator.validate()?;
    cfg.mixed.validate()?;
    let pure = generate_synthetic(&cfg.generator, cfg.seed)?;
    let mut ds = split(&pure, cfg.split_ratios, cfg.seed)?;
    ds.extend(generate_mixed_test(&cfg.generator, &cfg.mixed, &cfg.taxonomy, cfg.seed)?)?;

    create_dir(&cfg.out)?;
    let manifest = save_dataset(&ds, &cfg.out)?;
    write_file(&cfg.out.join("config.json"), cfg.to_json())?;
    print!("{}", ds.distribution_table());
    println!("manifest: {}", manifest.display());
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    Ok(load_dataset(cfg.data_path()?)?)
}

#[derive(Serialize)]
struct RunSummary<'a> {
    seed: u64,
    best_epoch: usize,
    val: &'a MetricsReport,
}

/// Trains one model into `dir`: checkpoint, history, effective config and a
/// summary. Wall-clock times go to `run.log` only.
fn train_into(cfg: &RunConfig, ds: &Dataset, dir: &Path) -> Result<(ModelParams, RunHistory)> {
    create_dir(dir)?;
    let started = unix_now();
    let clock = Instant::now();
    let train_cfg = cfg.effective_train();
    let (params, history) = train(&train_cfg, ds, &cfg.taxonomy, cfg.seed)?;
    for e in &history.epochs {
        eprintln!(
            "epoch {:>3}/{} loss {:.4} (ce {:.4} iha {:.4} uhd {:.4}) remixed {:>3} val fine {:.3} coarse {:.3}",
            e.epoch,
            history.epochs.len(),
            e.train_loss.total,
            e.train_loss.ce,
            e.train_loss.iha,
            e.train_loss.uhd,
            e.provenance.remixed,
            e.val.fine.accuracy,
            e.val.coarse.accuracy,
        );
    }
    params.save(dir.join("checkpoint.hmp"))?;
    history.write_jsonl(dir.join("history.jsonl"))?;
    let mut effective = cfg.clone();
    effective.train = train_cfg;
    write_file(&dir.join("config.json"), effective.to_json())?;
    let summary = RunSummary {
        seed: cfg.seed,
        best_epoch: history.best_epoch,
        val: &history.best().val,
    };
    write_file(&dir.join("summary.json"), to_json(&summary))?;
    let log = format!(
        "started {started}\nfinished {}\nelapsed_seconds {:.3}\n",
        unix_now(),
        clock.elapsed().as_secs_f64()
    );
    write_file(&dir.join("run.log"), log)?;
    Ok((params, history))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn cmd_train(common: &Common, data: Option<PathBuf>, seeds: &[u64], flags: &AblationFlags) -> Result<()> {
    let mut cfg = load_config(common, data)?;
    apply_flags(&mut cfg, flags);
    cfg.effective_train().validate()?;
    let ds = load_data(&cfg)?;
    if seeds.is_empty() {
        let (_, h) = train_into(&cfg, &ds, &cfg.out)?;
        let best = h.best();
        println!(
            "best epoch {} val fine {:.4} coarse {:.4} -> {}",
            h.best_epoch,
            best.val.fine.accuracy,
            best.val.coarse.accuracy,
            cfg.out.display()
        );
        return Ok(());
    }
    let mut rows = String::from("seed,best_epoch,val_fine_accuracy,val_coarse_accuracy\n");
    let mut fine = Vec::new();
    for &seed in seeds {
        let run = RunConfig { seed, ..cfg.clone() };
        let (_, h) = train_into(&run, &ds, &cfg.out.join(format!("seed-{seed}")))?;
        let v = &h.best().val;
        writeln!(rows, "{seed},{},{},{}", h.best_epoch, v.fine.accuracy, v.coarse.accuracy).unwrap();
        fine.push(v.fine.accuracy);
    }
    write_file(&cfg.out.join("seeds.csv"), rows)?;
    let (m, s) = mean_std(&fine);
    println!("val fine accuracy over {} seeds: {m:.4} ± {s:.4}", seeds.len());
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    split: Split,
    metrics: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    priority: Option<PriorityReport>,
}

fn cmd_eval(common: &Common, checkpoint: &Path, data: Option<PathBuf>, which: Split, no_subsite: bool) -> Result<()> {
    let cfg = load_config(common, data)?;
    let params = ModelParams::load(checkpoint)?;
    let ds = load_data(&cfg)?;
    if params.dim != ds.dim {
        return Err(CliError::Usage(format!(
            "dimension mismatch: checkpoint expects width {}, dataset has {}",
            params.dim, ds.dim
        )));
    }
    let entries: Vec<Entry> = ds.in_split(which).cloned().collect();
    if entries.is_empty() {
        return Err(CliError::Usage(format!("split {which} is empty")));
    }
    let gate = Gate::from_subsite_flag(cfg.ablation.use_subsite && !no_subsite);
    let bags: Vec<_> = entries.iter().map(|e| e.bag.clone()).collect();
    let metrics = evaluate(&params, &bags, &cfg.taxonomy, gate, &cfg.effective_train().loss)?;
    let priority = if which == Split::TestMixed {
        Some(evaluate_priority(&params, &entries, &cfg.taxonomy, gate)?)
    } else {
        None
    };
    let report = EvalReport {
        split: which,
        metrics,
        priority,
    };
    let json = to_json(&report);
    match &common.out {
        Some(dir) => {
            create_dir(dir)?;
            write_file(&dir.join(format!("eval-{which}.json")), &json)?;
            if let Some(p) = &report.priority {
                let mut csv = String::from("id,urgent,other,urgent_fraction,p_urgent,p_other,predicted,win\n");
                for r in &p.rows {
                    writeln!(
                        csv,
                        "{},{},{},{},{},{},{},{}",
                        r.id, r.urgent, r.other, r.urgent_fraction, r.p_urgent, r.p_other, r.predicted, r.win
                    )
                    .unwrap();
                }
                write_file(&dir.join("priority-rows.csv"), csv)?;
            }
            println!(
                "{which}: fine accuracy {:.4}, coarse accuracy {:.4}",
                report.metrics.fine.accuracy, report.metrics.coarse.accuracy
            );
        }
        None => print!("{json}"),
    }
    Ok(())
}

/// Median, rounded mean and max of the dataset's bag sizes.
fn size_summary(ds: &Dataset) -> Vec<(String, usize)> {
    let mut sizes = ds.bag_sizes(None);
    sizes.sort_unstable();
    let k = sizes.len();
    let median = if k % 2 == 1 {
        sizes[k / 2]
    } else {
        ((sizes[k / 2 - 1] + sizes[k / 2]) as f64 / 2.0).round() as usize
    };
    let mean = (sizes.iter().sum::<usize>() as f64 / k as f64).round() as usize;
    vec![
        ("median".into(), median),
        ("mean".into(), mean),
        ("max".into(), sizes[k - 1]),
    ]
}

fn remix_prob(
    common: &Common,
    n: &[usize],
    alpha: &str,
    beta: &str,
    data: Option<PathBuf>,
    threshold: f64,
) -> Result<()> {
    let alphas = parse_grid(alpha)?;
    let betas = parse_grid(beta)?;
    if alphas.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
        return Err(CliError::Usage(format!("alpha values must be in (0, 1], got {alphas:?}")));
    }
    if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
        return Err(CliError::Usage(format!("beta values must be in (0, 1), got {betas:?}")));
    }
    let sizes: Vec<(String, usize)> = if !n.is_empty() {
        n.iter().map(|&v| ("given".to_string(), v)).collect()
    } else if let Some(path) = data {
        size_summary(&load_dataset(path)?)
    } else {
        return Err(CliError::Usage("pass --n or --data".into()));
    };
    if sizes.iter().any(|(_, v)| *v == 0) {
        return Err(CliError::Usage("bag sizes must be at least 1".into()));
    }
    let mut ns: Vec<usize> = sizes.iter().map(|(_, v)| *v).collect();
    ns.sort_unstable();
    ns.dedup();
    let cells = success_grid(&ns, &alphas, &betas)?;

    let mut grid = String::from("n,alpha,beta,p_success\n");
    for c in &cells {
        writeln!(grid, "{},{},{},{}", c.n, c.alpha, c.beta, c.p_success).unwrap();
    }
    let mut summary = String::from("statistic,n,feasible_cells,low_cells,low_percent\n");
    for (label, v) in &sizes {
        let feasible = cells.iter().filter(|c| c.n == *v && c.feasible()).count();
        let low = cells
            .iter()
            .filter(|c| c.n == *v && c.feasible() && c.p_success <= threshold)
            .count();
        let pct = low_success_fraction(&cells, *v, threshold).map_or(String::new(), |f| format!("{:.2}", 100.0 * f));
        writeln!(summary, "{label},{v},{feasible},{low},{pct}").unwrap();
    }
    match &common.out {
        Some(dir) => {
            create_dir(dir)?;
            write_file(&dir.join("remix_prob.csv"), &grid)?;
            write_file(&dir.join("remix_prob_summary.csv"), &summary)?;
            print!("{summary}");
        }
        None => {
            print!("{grid}");
            eprint!("{summary}");
        }
    }
    Ok(())
}

const VARIANTS: [&str; 5] = ["full", "no-iha", "no-uhd", "no-subsite", "no-remix"];

fn variant_config(base: &RunConfig, variant: &str, seed: u64) -> RunConfig {
    let mut cfg = RunConfig { seed, ..base.clone() };
    let a = &mut cfg.ablation;
    match variant {
        "no-iha" => a.use_iha = false,
        "no-uhd" => a.use_uhd = false,
        "no-subsite" => a.use_subsite = false,
        "no-remix" => a.use_remix = false,
        _ => {}
    }
    cfg
}

fn ablate(common: &Common, data: Option<PathBuf>, seeds: &[u64]) -> Result<()> {
    let base = load_config(common, data)?;
    base.effective_train().validate()?;
    let ds = load_data(&base)?;
    let seeds = if seeds.is_empty() { vec![base.seed] } else { seeds.to_vec() };
    let test: Vec<_> = ds.bags_in(Split::Test);
    let mixed: Vec<Entry> = ds.in_split(Split::TestMixed).cloned().collect();

    let mut csv = String::from(
        "variant,seed,best_epoch,val_fine_accuracy,val_iha,test_fine_accuracy,test_coarse_accuracy,\
         test_fine_macro_auroc,test_adenoma_recall,mixed_win_rate,mixed_mean_gap\n",
    );
    let mut table = Vec::new();
    for variant in VARIANTS {
        let mut wins = Vec::new();
        let mut iha = Vec::new();
        let mut acc = Vec::new();
        for &seed in &seeds {
            let cfg = variant_config(&base, variant, seed);
            let dir = base.out.join(variant).join(format!("seed-{seed}"));
            let (params, h) = train_into(&cfg, &ds, &dir)?;
            let gate = cfg.effective_train().gate();
            let loss = cfg.effective_train().loss;
            let t = if test.is_empty() {
                None
            } else {
                Some(evaluate(&params, &test, &cfg.taxonomy, gate, &loss)?)
            };
            let p = if mixed.is_empty() {
                None
            } else {
                Some(evaluate_priority(&params, &mixed, &cfg.taxonomy, gate)?)
            };
            let val = &h.best().val;
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            writeln!(
                csv,
                "{variant},{seed},{},{},{},{},{},{},{},{},{}",
                h.best_epoch,
                val.fine.accuracy,
                val.loss.iha,
                opt(t.as_ref().map(|t| t.fine.accuracy)),
                opt(t.as_ref().map(|t| t.coarse.accuracy)),
                opt(t.as_ref().and_then(|t| t.fine.macro_auroc)),
                opt(t.as_ref().and_then(|t| t.adenoma_recall)),
                opt(p.as_ref().map(|p| p.win_rate)),
                opt(p.as_ref().map(|p| p.mean_gap)),
            )
            .unwrap();
            acc.push(t.as_ref().map_or(val.fine.accuracy, |t| t.fine.accuracy));
            iha.push(val.loss.iha);
            if let Some(p) = p {
                wins.push(p.win_rate);
            }
        }
        table.push((variant, mean_std(&acc).0, mean_std(&iha).0, (!wins.is_empty()).then(|| mean_std(&wins).0)));
    }
    create_dir(&base.out)?;
    write_file(&base.out.join("ablation.csv"), csv)?;
    println!("{:<11} {:>10} {:>10} {:>10}", "variant", "fine acc", "val iha", "win rate");
    for (variant, acc, iha, win) in table {
        let win = win.map_or("-".to_string(), |w| format!("{w:.4}"));
        println!("{variant:<11} {acc:>10.4} {iha:>10.5} {win:>10}");
    }
    Ok(())
}
