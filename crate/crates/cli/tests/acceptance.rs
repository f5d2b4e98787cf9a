//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use hiermil::data::{
    generate_mixed_test, generate_synthetic, split, Bag, Dataset, Entry, GenConfig, MixedConfig, SoftLabel, Split,
    DEFAULT_RATIOS,
};
use hiermil::hierloss::{
    aggregate_fine_to_coarse, cross_entropy_hier, iha_loss, tape_cross_entropy, tape_iha, tape_total_loss, tape_uhd,
    total_loss, uhd_adjust, uhd_loss, LossConfig, UhdDirection,
};
use hiermil::model::{predict, tape_forward, Gate, ModelParams, ParamVars, ProbPair, SUBSITE_SLOTS};
use hiermil::numkernel::gradcheck::{central_difference, relative_error};
use hiermil::numkernel::{Tape, Tensor2, Var};
use hiermil::remix::{remix_success_prob, soften_labels, symptom_counts};
use hiermil::taxonomy::{CoarseClass, FineClass, Subsite, Taxonomy, N_FINE};
use hiermil::trainer::{evaluate_priority, train, RunHistory, TrainConfig};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// One trained model and what it was trained on.
struct Run {
    params: ModelParams,
    history: RunHistory,
    seconds: f64,
    win_rate: f64,
}

/// Training runs shared by several criteria, one entry per seed.
struct Experiments {
    full: Vec<Run>,
    no_remix: Vec<Run>,
    no_iha: Vec<Run>,
    datasets: Vec<Dataset>,
}

fn default_dataset(seed: u64) -> Dataset {
    let tax = Taxonomy::default();
    let cfg = GenConfig::default();
    let mut ds = split(&generate_synthetic(&cfg, seed).unwrap(), DEFAULT_RATIOS, seed).unwrap();
    ds.extend(generate_mixed_test(&cfg, &MixedConfig::default(), &tax, seed).unwrap())
        .unwrap();
    ds
}

fn mixed_entries(ds: &Dataset) -> Vec<Entry> {
    ds.in_split(Split::TestMixed).cloned().collect()
}

fn run(cfg: &TrainConfig, ds: &Dataset, seed: u64) -> Run {
    let tax = Taxonomy::default();
    let clock = Instant::now();
    let (params, history) = train(cfg, ds, &tax, seed).unwrap();
    let seconds = clock.elapsed().as_secs_f64();
    let win_rate = evaluate_priority(&params, &mixed_entries(ds), &tax, cfg.gate()).unwrap().win_rate;
    Run {
        params,
        history,
        seconds,
        win_rate,
    }
}

impl Experiments {
    fn new() -> Self {
        let full_cfg = TrainConfig::default();
        let mut no_remix_cfg = TrainConfig::default();
        no_remix_cfg.remix.remix_probability = 0.0;
        let mut no_iha_cfg = TrainConfig::default();
        no_iha_cfg.loss.use_iha = false;

        let datasets: Vec<Dataset> = SEEDS.iter().map(|&s| default_dataset(s)).collect();
        let mut e = Experiments {
            full: Vec::new(),
            no_remix: Vec::new(),
            no_iha: Vec::new(),
            datasets,
        };
        for (k, &seed) in SEEDS.iter().enumerate() {
            let ds = &e.datasets[k];
            e.full.push(run(&full_cfg, ds, seed));
            e.no_remix.push(run(&no_remix_cfg, ds, seed));
            e.no_iha.push(run(&no_iha_cfg, ds, seed));
        }
        e
    }
}

struct Ctx {
    experiments: Option<Experiments>,
    workdir: tempfile::TempDir,
    data_manifest: Option<PathBuf>,
}

impl Ctx {
    fn experiments(&mut self) -> &Experiments {
        self.experiments.get_or_insert_with(Experiments::new)
    }

    /// Default synthetic dataset written by `gen-data`.
    fn manifest(&mut self) -> PathBuf {
        if let Some(m) = &self.data_manifest {
            return m.clone();
        }
        let dir = self.workdir.path().join("data");
        let out = cli(&["gen-data", "--seed", "0", "--out", dir.to_str().unwrap()]);
        assert!(out.status.success(), "gen-data failed: {}", String::from_utf8_lossy(&out.stderr));
        let m = dir.join("manifest.jsonl");
        self.data_manifest = Some(m.clone());
        m
    }
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hiermil")).args(args).output().unwrap()
}

// ---------------------------------------------------------------- 1

fn random_simplex<const N: usize>(rng: &mut ChaCha8Rng) -> [f64; N] {
    let raw: Vec<f64> = (0..N).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    std::array::from_fn(|k| raw[k] / s)
}

fn random_target(rng: &mut ChaCha8Rng, tax: &Taxonomy) -> SoftLabel {
    let order = tax.fine_priority_order();
    let i = rng.random_range(0..N_FINE - 1);
    let j = rng.random_range(i + 1..N_FINE);
    if rng.random_bool(0.5) {
        SoftLabel::one_hot(order[i], tax)
    } else {
        soften_labels(rng.random_range(0.2..0.9), 15.0, order[i], order[j], tax).unwrap()
    }
}

fn loss_gradient_error(
    points: usize,
    seed: u64,
    tape_loss: &dyn Fn(&mut Tape, Var, Var, &SoftLabel) -> Var,
    plain_loss: &dyn Fn(&ProbPair, &SoftLabel) -> f64,
) -> f64 {
    let tax = Taxonomy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let coarse: [f64; 3] = random_simplex(&mut rng);
        let fine: [f64; 7] = random_simplex(&mut rng);
        let target = random_target(&mut rng, &tax);
        let mut tape = Tape::new();
        let c = tape.param(Tensor2::row_vector(&coarse));
        let f = tape.param(Tensor2::row_vector(&fine));
        let out = tape_loss(&mut tape, c, f, &target);
        let g = tape.backward(out, &Tensor2::scalar(1.0)).unwrap();
        let analytic: Vec<f64> = g.wrt(c).data().iter().chain(g.wrt(f).data()).copied().collect();
        let x: Vec<f64> = coarse.iter().chain(&fine).copied().collect();
        let numeric = central_difference(
            |p| {
                let probs = ProbPair {
                    coarse: p[..3].try_into().unwrap(),
                    fine: p[3..].try_into().unwrap(),
                };
                plain_loss(&probs, &target)
            },
            &x,
            1e-5,
        );
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(relative_error(*a, *n));
        }
    }
    worst
}

fn model_gradient_error(points: usize, seed: u64) -> f64 {
    let tax = Taxonomy::default();
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for point in 0..points {
        let mut params = ModelParams::init(4, 2, rng.random()).unwrap();
        for t in params.tensors_mut() {
            for x in t.data_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
        }
        let data = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let subsite = Subsite::ALL[rng.random_range(0..3)];
        let bag = Bag::new("p", Tensor2::from_vec(5, 4, data).unwrap(), FineClass::HP, subsite).unwrap();
        let target = random_target(&mut rng, &tax);
        let gate = Gate::Fixed(point % 2 == 0);

        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, &params);
        let fwd = tape_forward(&mut tape, &vars, &bag, gate).unwrap();
        let loss = tape_total_loss(&mut tape, fwd.coarse, fwd.fine, &target, &tax, &cfg).unwrap();
        let g = tape.backward(loss.total, &Tensor2::scalar(1.0)).unwrap();
        let analytic: Vec<f64> = vars.vars.iter().flat_map(|&v| g.wrt(v).into_vec()).collect();

        let flat: Vec<f64> = params.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
        let numeric = central_difference(
            |x| {
                let mut p = params.clone();
                let mut off = 0;
                for t in p.tensors_mut() {
                    let len = t.len();
                    t.data_mut().copy_from_slice(&x[off..off + len]);
                    off += len;
                }
                let probs = predict(&p, &bag, gate).unwrap().probs;
                total_loss(&probs, &target, &tax, &cfg).unwrap().total
            },
            &flat,
            1e-5,
        );
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(relative_error(*a, *n));
        }
    }
    worst
}

fn gradient_correctness(_: &mut Ctx) -> Outcome {
    let clock = Instant::now();
    let tax = Taxonomy::default();
    let points = 20;
    let errors = [
        (
            "ce",
            loss_gradient_error(points, 1, &|t, c, f, y| tape_cross_entropy(t, c, f, y).unwrap(), &|p, y| {
                cross_entropy_hier(p, y)
            }),
        ),
        (
            "iha",
            loss_gradient_error(points, 2, &|t, c, f, _| tape_iha(t, c, f, &tax).unwrap(), &|p, _| {
                iha_loss(&p.coarse, &p.fine, &tax)
            }),
        ),
        (
            "uhd",
            loss_gradient_error(
                points,
                3,
                &|t, c, f, y| tape_uhd(t, c, f, &y.fine, &tax, UhdDirection::TargetToAdjusted).unwrap(),
                &|p, y| uhd_loss(&uhd_adjust(&p.fine, &p.coarse, &tax).unwrap(), &y.fine),
            ),
        ),
        ("total/model", model_gradient_error(points, 4)),
    ];
    let secs = clock.elapsed().as_secs_f64();
    let worst = errors.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let listed: Vec<String> = errors.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(
        worst < 1e-4 && secs < 10.0,
        format!("{points} points each, max rel err [{}] < 1e-4, {secs:.2}s < 10s", listed.join(", ")),
    )
}

// ---------------------------------------------------------------- 2

fn binom(n: u64, k: u64) -> BigUint {
    (0..k).fold(BigUint::from(1u32), |acc, t| acc * BigUint::from(n - t) / BigUint::from(t + 1))
}

fn exact_success(n: u64, a: u64, b: u64) -> f64 {
    if b > n - a {
        return 1.0;
    }
    let scale = BigUint::from(10u64).pow(30);
    let q = binom(n - a, b) * &scale / binom(n, b);
    1.0 - q.to_string().parse::<f64>().unwrap() / 1e30
}

/// Share of all `b`-subsets of `n` items that contain one of the first `a`.
fn enumerate_success(n: usize, a: usize, b: usize) -> f64 {
    let marked = (1u32 << a) - 1;
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == b {
            total += 1;
            if mask & marked != 0 {
                hit += 1;
            }
        }
    }
    hit as f64 / total as f64
}

/// Draws without replacement until an urgent instance appears or `b`
/// draws are spent.
fn monte_carlo(n: usize, a: usize, b: usize, draws: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut swaps = Vec::with_capacity(b);
    let mut hits = 0;
    for _ in 0..draws {
        for t in 0..b {
            let j = rng.random_range(t..n);
            perm.swap(t, j);
            swaps.push((t, j));
            if perm[t] < a {
                hits += 1;
                break;
            }
        }
        for &(t, j) in swaps.iter().rev() {
            perm.swap(t, j);
        }
        swaps.clear();
    }
    hits as f64 / draws as f64
}

fn success_probability_oracles(_: &mut Ctx) -> Outcome {
    let clock = Instant::now();
    let grid: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let mut brute_worst = 0.0f64;
    let mut brute_cells = 0;
    let mut boundary_ok = true;
    for n in 1..=12usize {
        for &alpha in &grid {
            for &beta in &grid {
                let p = remix_success_prob(n, alpha, beta).unwrap();
                if alpha + beta >= 1.0 - 1e-12 {
                    boundary_ok &= p == 1.0;
                    continue;
                }
                let (a, b) = symptom_counts(n, alpha, beta);
                brute_worst = brute_worst.max((p - enumerate_success(n, a, b)).abs());
                brute_cells += 1;
            }
        }
    }
    for n in [100, 500, 1000] {
        for (alpha, beta) in [(0.5, 0.5), (0.6, 0.4), (0.2, 0.8), (0.95, 0.3)] {
            boundary_ok &= remix_success_prob(n, alpha, beta).unwrap() == 1.0;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws = 100_000;
    let mut worst_z = 0.0f64;
    let mut mc_cells = 0;
    for n in [100usize, 500] {
        for alpha in [0.01, 0.02, 0.05, 0.1] {
            for beta in [0.1, 0.2, 0.4] {
                let p = remix_success_prob(n, alpha, beta).unwrap();
                let (a, b) = symptom_counts(n, alpha, beta);
                let est = monte_carlo(n, a, b, draws, &mut rng);
                let se = (p * (1.0 - p) / draws as f64).sqrt().max(1e-9);
                worst_z = worst_z.max((est - p).abs() / se);
                mc_cells += 1;
            }
        }
    }

    let spot = remix_success_prob(100, 0.05, 0.4).unwrap();
    let oracle = exact_success(100, 5, 40);
    // The same cell written as the chance that all five symptomatic
    // instances land in the 60 left behind.
    let product = 1.0 - (60u64 * 59 * 58 * 57 * 56) as f64 / (100u64 * 99 * 98 * 97 * 96) as f64;
    let spot_ok = (spot - oracle).abs() <= 1e-6 && (spot - product).abs() <= 1e-6;
    let secs = clock.elapsed().as_secs_f64();
    let pass = brute_worst < 1e-12 && boundary_ok && worst_z <= 3.0 && spot_ok && secs < 30.0;
    outcome(
        pass,
        format!(
            "brute force {brute_cells} cells max |diff| {brute_worst:.1e}; boundary exact {boundary_ok}; \
             Monte-Carlo {mc_cells} cells max {worst_z:.2} SE <= 3; spot {spot:.10} vs exact {oracle:.10}, product form {product:.10} \
             (six-digit reference 0.927459 is off by {:.2e}); {secs:.2}s < 30s",
            (spot - 0.927459f64).abs()
        ),
    )
}

// ---------------------------------------------------------------- 3

fn low_fraction_monotone(ctx: &mut Ctx) -> Outcome {
    let manifest = ctx.manifest();
    let out_dir = ctx.workdir.path().join("remix-prob");
    let out = cli(&[
        "remix-prob",
        "--data",
        manifest.to_str().unwrap(),
        "--alpha",
        "0.05:0.5:0.05",
        "--beta",
        "0.4:0.8:0.05",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    if !out.status.success() {
        return outcome(false, format!("remix-prob failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let summary = std::fs::read_to_string(out_dir.join("remix_prob_summary.csv")).unwrap();
    let mut rows: Vec<(String, usize, f64)> = summary
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let feasible: f64 = f[2].parse().unwrap();
            let low: f64 = f[3].parse().unwrap();
            (f[0].to_string(), f[1].parse().unwrap(), low / feasible)
        })
        .collect();
    rows.sort_by_key(|r| r.1);
    let monotone = rows.windows(2).all(|w| w[1].2 <= w[0].2);

    let grid = std::fs::read_to_string(out_dir.join("remix_prob.csv")).unwrap();
    let boundary_ones = grid.lines().skip(1).all(|l| {
        let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        f[1] + f[2] < 1.0 - 1e-12 || f[3] == 1.0
    });
    let listed: Vec<String> = rows.iter().map(|(s, n, f)| format!("{s} n={n}: {:.2}%", 100.0 * f)).collect();
    outcome(
        monotone && boundary_ones && rows.len() == 3,
        format!("low-probability share [{}] nonincreasing in n: {monotone}", listed.join(", ")),
    )
}

// ---------------------------------------------------------------- 4

fn softening_properties(_: &mut Ctx) -> Outcome {
    let clock = Instant::now();
    let tax = Taxonomy::default();
    let order = tax.fine_priority_order();
    let mut sums_exact = true;
    let mut dominance = true;
    for i in 0..N_FINE {
        for j in i + 1..N_FINE {
            let (ci, cj) = (order[i], order[j]);
            for k in 5..=99 {
                let r = k as f64 / 100.0;
                for tau in [1.0, 2.0, 15.0, 40.0] {
                    let y = soften_labels(r, tau, ci, cj, &tax).unwrap();
                    sums_exact &= y.fine.iter().sum::<f64>() == 1.0 && y.coarse.iter().sum::<f64>() == 1.0;
                    if tau == 15.0 {
                        dominance &= y.fine[ci.index()] > y.fine[cj.index()];
                    }
                }
            }
        }
    }
    let half = soften_labels(0.5, 1.0, FineClass::TA, FineClass::LP, &tax).unwrap();
    let halves = half.fine[FineClass::TA.index()] == 0.5 && half.fine[FineClass::LP.index()] == 0.5;
    let secs = clock.elapsed().as_secs_f64();
    outcome(
        sums_exact && dominance && halves && secs < 1.0,
        format!("sums exactly 1: {sums_exact}; dominance at tau=15 on r=0.05..0.99: {dominance}; tau=1, r=0.5 -> (0.5, 0.5): {halves}; {secs:.3}s < 1s"),
    )
}

// ---------------------------------------------------------------- 5

fn loss_identities(_: &mut Ctx) -> Outcome {
    let clock = Instant::now();
    let tax = Taxonomy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut iha_zero = true;
    let mut identity = true;
    let mut mass = true;
    for _ in 0..1000 {
        let fine: [f64; 7] = random_simplex(&mut rng);
        let agg = aggregate_fine_to_coarse(&fine, &tax);
        iha_zero &= iha_loss(&agg, &fine, &tax) == 0.0;
        let adj = uhd_adjust(&fine, &[1.0 / 3.0; 3], &tax).unwrap();
        let s: f64 = fine.iter().sum();
        identity &= adj.iter().zip(&fine).all(|(a, f)| (a - f / s).abs() <= 1e-15);
        // Dyadic masses add without rounding, so equality must be exact.
        let dyadic: [f64; 7] = std::array::from_fn(|_| rng.random_range(0..1024) as f64 / 1024.0);
        let agg = aggregate_fine_to_coarse(&dyadic, &tax);
        mass &= agg.iter().sum::<f64>() == dyadic.iter().sum::<f64>();
        for c in CoarseClass::ALL {
            let children: f64 = tax.children(c).iter().map(|f| dyadic[f.index()]).sum();
            mass &= agg[c.index()] == children;
        }
    }
    let ln2 = iha_loss(&[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0], &tax);
    let disjoint = (ln2 - std::f64::consts::LN_2).abs() < 1e-15;
    let secs = clock.elapsed().as_secs_f64();
    outcome(
        iha_zero && identity && mass && disjoint && secs < 1.0,
        format!(
            "iha(agg) = 0: {iha_zero}; disjoint iha = {ln2:.15} (ln 2): {disjoint}; uniform-coarse uhd_adjust is identity: {identity}; aggregate mass exact: {mass}; {secs:.3}s < 1s"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn synthetic_convergence(ctx: &mut Ctx) -> Outcome {
    let e = ctx.experiments();
    let ds = &e.datasets[0];
    let per_class_min = *ds.class_counts(Split::Train).iter().min().unwrap();
    let r = &e.full[0];
    let best = r.history.best();
    let (fine, coarse) = (best.val.fine.accuracy, best.val.coarse.accuracy);
    outcome(
        fine >= 0.95 && coarse >= 0.97 && r.history.epochs.len() <= 50 && r.seconds < 300.0 && per_class_min >= 10,
        format!(
            "seed 0, {per_class_min}+ train bags/class: val fine {fine:.3} >= 0.95, coarse {coarse:.3} >= 0.97 (best epoch {} of {}), {:.1}s < 300s",
            r.history.best_epoch,
            r.history.epochs.len(),
            r.seconds
        ),
    )
}

// ---------------------------------------------------------------- 7

fn prioritization(ctx: &mut Ctx) -> Outcome {
    let e = ctx.experiments();
    let mixed = mixed_entries(&e.datasets[0]);
    // The stored share is realized on whole instances, so it may sit half
    // an instance outside the range it was drawn from.
    let fractions_ok = e.datasets.iter().all(|ds| {
        ds.in_split(Split::TestMixed).all(|x| {
            let slack = 0.5 / x.bag.len() as f64;
            (0.1 - slack..=0.5 + slack).contains(&x.mixture.unwrap().urgent_fraction)
        })
    });
    let gaps: Vec<f64> = e.full.iter().zip(&e.no_remix).map(|(a, b)| a.win_rate - b.win_rate).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let per: Vec<String> = e
        .full
        .iter()
        .zip(&e.no_remix)
        .map(|(a, b)| format!("{:.3}/{:.3}", a.win_rate, b.win_rate))
        .collect();
    outcome(
        mean >= 0.15 && mixed.len() >= 100 && fractions_ok,
        format!(
            "{} mixed bags, urgent share in [0.1, 0.5]: {fractions_ok}; win rate remix/no-remix per seed [{}]; mean gain {:.1} pp >= 15 pp",
            mixed.len(),
            per.join(", "),
            100.0 * mean
        ),
    )
}

// ---------------------------------------------------------------- 8

fn ablation_direction(ctx: &mut Ctx) -> Outcome {
    let e = ctx.experiments();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let win_full: Vec<f64> = e.full.iter().map(|r| r.win_rate).collect();
    let win_no_remix: Vec<f64> = e.no_remix.iter().map(|r| r.win_rate).collect();
    let iha_full: Vec<f64> = e.full.iter().map(|r| r.history.best().val.loss.iha).collect();
    let iha_no_iha: Vec<f64> = e.no_iha.iter().map(|r| r.history.best().val.loss.iha).collect();
    let remix_ok = mean(&win_no_remix) < mean(&win_full);
    let iha_ok = mean(&iha_no_iha) > mean(&iha_full);
    outcome(
        remix_ok && iha_ok,
        format!(
            "no-remix win rate {:.3} < full {:.3}: {remix_ok}; no-iha val JS gap {:.5} > full {:.5}: {iha_ok} (means over {} seeds)",
            mean(&win_no_remix),
            mean(&win_full),
            mean(&iha_no_iha),
            mean(&iha_full),
            SEEDS.len()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_default()
}

fn determinism(ctx: &mut Ctx) -> Outcome {
    let manifest = ctx.manifest();
    let cfg_path = ctx.workdir.path().join("det.json");
    std::fs::write(&cfg_path, r#"{"train": {"epochs": 3}}"#).unwrap();
    let dirs: Vec<PathBuf> = ["det-a", "det-b"].iter().map(|d| ctx.workdir.path().join(d)).collect();
    for d in &dirs {
        let out = cli(&[
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--data",
            manifest.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            d.to_str().unwrap(),
        ]);
        if !out.status.success() {
            return outcome(false, format!("train failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    // config.json is excluded: it records the (differing) output directory.
    let files = ["history.jsonl", "checkpoint.hmp", "summary.json"];
    let same: Vec<bool> = files
        .iter()
        .map(|f| {
            let (a, b) = (read(&dirs[0].join(f)), read(&dirs[1].join(f)));
            !a.is_empty() && a == b
        })
        .collect();
    let listed: Vec<String> = files.iter().zip(&same).map(|(f, s)| format!("{f} {s}")).collect();
    outcome(same.iter().all(|&s| s), format!("byte-identical across two runs: {}", listed.join(", ")))
}

// ---------------------------------------------------------------- 10

fn subsite_gating(ctx: &mut Ctx) -> Outcome {
    let e = ctx.experiments();
    let params = &e.full[0].params;
    let ds = &e.datasets[0];
    let gate = TrainConfig::default().gate();
    let slot_rows = params.fine.head_w.rows() - SUBSITE_SLOTS;
    let slot_weights_nonzero = (slot_rows..params.fine.head_w.rows())
        .any(|r| params.fine.head_w.row(r).iter().any(|&w| w != 0.0));

    let with_subsite = |bag: &Bag, s: Subsite| Bag {
        subsite: s,
        ..bag.clone()
    };
    let mut adenoma_checked = 0;
    let mut adenoma_invariant = true;
    let mut serrated_checked = 0;
    let mut serrated_changed = true;
    for entry in ds.entries.iter().filter(|x| x.split != Some(Split::Train)) {
        let base = predict(params, &entry.bag, gate).unwrap();
        match base.probs.coarse_argmax() {
            CoarseClass::Adenoma => {
                for s in Subsite::ALL {
                    let p = predict(params, &with_subsite(&entry.bag, s), gate).unwrap();
                    adenoma_invariant &= p.probs.fine == base.probs.fine;
                }
                adenoma_checked += 1;
            }
            CoarseClass::Serrated => {
                let prox = predict(params, &with_subsite(&entry.bag, Subsite::Proximal), gate).unwrap();
                let dist = predict(params, &with_subsite(&entry.bag, Subsite::Distal), gate).unwrap();
                serrated_changed &= prox.gate_open && dist.gate_open && prox.probs.fine != dist.probs.fine;
                serrated_checked += 1;
            }
            CoarseClass::Others => {}
        }
    }
    outcome(
        adenoma_checked > 0 && serrated_checked > 0 && adenoma_invariant && serrated_changed && slot_weights_nonzero,
        format!(
            "{adenoma_checked} Adenoma-argmax bags bitwise unchanged under subsite permutation: {adenoma_invariant}; \
             {serrated_checked} Serrated-argmax bags change on Proximal<->Distal: {serrated_changed}; subsite weights nonzero: {slot_weights_nonzero}"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn(&mut Ctx) -> Outcome); 10] = [
        ("gradient correctness", gradient_correctness),
        ("success-probability oracles", success_probability_oracles),
        ("low-probability share vs bag size", low_fraction_monotone),
        ("label softening properties", softening_properties),
        ("loss identities", loss_identities),
        ("synthetic convergence", synthetic_convergence),
        ("intra-hierarchy prioritization", prioritization),
        ("ablation direction", ablation_direction),
        ("determinism", determinism),
        ("subsite gating", subsite_gating),
    ];
    let mut ctx = Ctx {
        experiments: None,
        workdir: tempfile::tempdir().unwrap(),
        data_manifest: None,
    };
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let clock = Instant::now();
        let o = check(&mut ctx);
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {:>2} {name} ({:.1}s): {}", k + 1, clock.elapsed().as_secs_f64(), o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
