//! Acceptance criteria 1-11. Each test prints one `criterion N ... PASS|FAIL`
//! line, shown even when test output is captured, before asserting.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use fedbound::analysis::{self, node_usefulness, select_nodes, SelectionPolicy};
use fedbound::bound::{self, BoundParams};
use fedbound::config::DatasetSource;
use fedbound::experiment;
use fedbound::flsim::{self, FLRun, Heterogeneity, RoundRecord, ScenarioConfig};
use fedbound::model::{self, Dataset, ModelSpec, ParamVector};
use fedbound::probe::{self, ConstantsEstimate, GMode, ProbeSampler};
use fedbound::seed;
use rand::Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn verdict(n: u32, name: &str, pass: bool, elapsed: Duration, detail: &str) {
    let line = format!(
        "criterion {n:>2} [{name}]: {} ({:.2}s) {detail}\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    // bypasses libtest output capture so the line is always shown
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

#[test]
fn criterion_01_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut loss_mismatch: f64 = 0.0;
    for c in 0..100u64 {
        let mut rng = seed::rng(1000 + c);
        let d = rng.random_range(1..=8);
        let k = rng.random_range(2..=6);
        let l2 = if c % 5 == 0 {
            0.0
        } else {
            rng.random_range(0.0..0.2)
        };
        let spec = if c % 2 == 0 {
            ModelSpec::softmax(d, k, l2)
        } else {
            ModelSpec::mlp(d, rng.random_range(1..=8), k, l2)
        };
        let n = rng.random_range(1..=12);
        let data = common::random_dataset(&mut rng, n, k, d);
        let scale = rng.random_range(0.5..3.0);
        let w = model::init_params(&spec, rng.random()).scaled(scale);
        let ws = w.as_slice();

        let lib = model::loss(&spec, &w, &data).unwrap();
        let reference = common::reference_loss(&spec, ws, &data);
        loss_mismatch = loss_mismatch.max((lib - reference).abs() / reference.abs().max(1e-300));

        let g = model::gradient(&spec, &w, &data).unwrap();
        let h = 1e-5;
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for i in 0..ws.len() {
            let mut p = ws.to_vec();
            p[i] = ws[i] + h;
            let up = common::reference_loss(&spec, &p, &data);
            p[i] = ws[i] - h;
            let down = common::reference_loss(&spec, &p, &data);
            let fd = (up - down) / (2.0 * h);
            diff = diff.max((fd - g.as_slice()[i]).abs());
            norm = norm.max(fd.abs()).max(g.as_slice()[i].abs());
        }
        worst = worst.max(diff / norm);
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "gradient correctness",
        worst <= 1e-5 && loss_mismatch <= 1e-12 && elapsed < Duration::from_secs(30),
        elapsed,
        &format!(
            "worst relative max-norm error {worst:.2e}, loss vs reference {loss_mismatch:.1e}"
        ),
    );
}

#[test]
fn criterion_02_quadratic_probe_oracle() {
    let start = Instant::now();
    let none = Dataset::empty(1, 1).unwrap();
    let spec = ModelSpec::quadratic(vec![1.0, 4.0]);
    let (est, samples) = probe::estimate_constants_with(
        &spec,
        &none,
        1000,
        &ProbeSampler::InitDistribution,
        GMode::GradientNorm,
        17,
    )
    .unwrap();
    let in_range = samples
        .iter()
        .all(|s| s.m_value >= 1.0 - 1e-9 && s.m_value <= 4.0 + 1e-9);
    let ordered = 1.0 - 1e-9 <= est.mu && est.mu <= est.l_smooth && est.l_smooth <= 4.0 + 1e-9;

    let ident = ModelSpec::quadratic(vec![1.0, 1.0]);
    let id_est =
        probe::estimate_constants(&ident, &none, 1000, &ProbeSampler::InitDistribution, 18)
            .unwrap();
    let unit = (id_est.mu - 1.0).abs() <= 1e-9 && (id_est.l_smooth - 1.0).abs() <= 1e-9;
    let elapsed = start.elapsed();
    verdict(
        2,
        "quadratic probe oracle",
        in_range && ordered && unit && samples.len() == 1000 && elapsed < Duration::from_secs(10),
        elapsed,
        &format!(
            "diag(1,4): mu={:.10} L={:.10}; identity: mu={:.12} L={:.12}",
            est.mu, est.l_smooth, id_est.mu, id_est.l_smooth
        ),
    );
}

#[test]
fn criterion_03_bound_algebra() {
    let start = Instant::now();
    let mut rng = seed::rng(3);
    let mut ok = true;
    let (mut worst_first, mut worst_const) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let mu = rng.random_range(0.01..2.0);
        let p = BoundParams::new(
            mu,
            mu * rng.random_range(1.0..50.0),
            rng.random_range(0.0..5.0),
            rng.random_range(0.0..10.0),
        )
        .unwrap();
        let expected = 16.0 * p.g_max * p.g_max / p.mu + 4.0 * p.l_smooth * p.dist;
        let first = bound::convergence_bound(1, &p).unwrap();
        worst_first = worst_first.max((first - expected).abs() / expected);

        let curve = bound::bound_curve(10_000, &p).unwrap();
        let k = 8.0 * p.l_smooth / p.mu;
        let c0 = curve.values[0].1 * k;
        for &(t, b) in &curve.values {
            worst_const = worst_const.max((b * ((t - 1) as f64 + k) - c0).abs() / c0);
        }
        ok &= curve.values.windows(2).all(|w| w[1].1 < w[0].1);
    }
    let elapsed = start.elapsed();
    verdict(
        3,
        "bound algebra",
        ok && worst_first <= 1e-12 && worst_const <= 1e-9 && elapsed < Duration::from_secs(1),
        elapsed,
        &format!("B(1) rel err {worst_first:.1e}, invariant rel err {worst_const:.1e}, strictly decreasing: {ok}"),
    );
}

#[test]
fn criterion_04_single_node_equals_centralized_sgd() {
    let start = Instant::now();
    let spec = common::synthetic(4, 8, 100);
    let (data, _) = experiment::load_dataset(&DatasetSource::Synthetic(spec), 4).unwrap();
    let mut worst = 0.0f64;
    for (m, lr) in [
        (ModelSpec::softmax(8, 4, 0.001), 0.5),
        (ModelSpec::mlp(8, 6, 4, 0.001), 0.2),
    ] {
        let mut cfg = ScenarioConfig::new(m.clone());
        cfg.n_nodes = 1;
        cfg.samples_per_node = 300;
        cfg.rounds = 5;
        cfg.lr = lr;
        cfg.batch_size = 16;
        cfg.probe.n_probes = 4;
        cfg.seed = 44;
        let run = flsim::run_federated(&cfg, &data).unwrap();

        let (_, parts) = flsim::partition_dataset(&data, &cfg, cfg.seed).unwrap();
        let mut w = flsim::initial_params(&cfg);
        for t in 1..=cfg.rounds {
            w = model::sgd_epoch(
                &m,
                &w,
                &parts[0],
                lr,
                cfg.batch_size,
                flsim::local_epoch_seed(cfg.seed, t, 0, 0),
            )
            .unwrap();
        }
        for (a, b) in w.as_slice().iter().zip(run.final_params.as_slice()) {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    verdict(
        4,
        "fedavg degeneracy",
        worst <= 1e-9 && elapsed < Duration::from_secs(30),
        elapsed,
        &format!("max per-coordinate difference after 5 rounds {worst:.1e}"),
    );
}

fn missing_class_scenario(missing: bool, seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(ModelSpec::softmax(8, 4, 0.001));
    cfg.name = if missing {
        "missing".into()
    } else {
        "baseline".into()
    };
    cfg.n_nodes = 5;
    cfg.samples_per_node = 400;
    cfg.rounds = 30;
    cfg.lr = 1.0;
    cfg.batch_size = 20;
    cfg.seed = seed;
    if missing {
        cfg.missing_classes = BTreeSet::from([3]);
    }
    cfg
}

/// Criteria 5, 6 and 7 share one set of baseline/missing-class runs.
fn missing_class_runs() -> &'static (Vec<(FLRun, FLRun)>, Duration) {
    static RUNS: std::sync::OnceLock<(Vec<(FLRun, FLRun)>, Duration)> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let runs = SEEDS
            .iter()
            .map(|&s| {
                let (data, _) = experiment::load_dataset(
                    &DatasetSource::Synthetic(common::synthetic(4, 8, 1000)),
                    s,
                )
                .unwrap();
                (
                    flsim::run_federated(&missing_class_scenario(false, s), &data).unwrap(),
                    flsim::run_federated(&missing_class_scenario(true, s), &data).unwrap(),
                )
            })
            .collect();
        (runs, start.elapsed())
    })
}

fn last(run: &FLRun) -> &RoundRecord {
    run.rounds.last().unwrap()
}

#[test]
fn criterion_05_missing_class_divergence() {
    let (runs, elapsed) = missing_class_runs();
    let mut hits = 0;
    let mut detail = Vec::new();
    for (base, miss) in runs {
        let (b, m) = (last(base), last(miss));
        if m.train_loss < b.train_loss && m.test_loss > b.test_loss {
            hits += 1;
        }
        detail.push(format!(
            "train {:.3}/{:.3} test {:.3}/{:.3}",
            b.train_loss, m.train_loss, b.test_loss, m.test_loss
        ));
    }
    verdict(
        5,
        "missing-class effect",
        hits >= 4 && *elapsed < Duration::from_secs(300),
        *elapsed,
        &format!("{hits}/5 seeds (baseline/missing) {}", detail.join("; ")),
    );
}

#[test]
fn criterion_06_bound_is_loose() {
    let (runs, elapsed) = missing_class_runs();
    let mut ok = true;
    let mut min_ratio = f64::INFINITY;
    let mut min_vs_loss = f64::INFINITY;
    for run in runs.iter().flat_map(|(a, b)| [a, b]) {
        let r = last(run);
        let Some(b) = r.bound_value else {
            ok = false;
            continue;
        };
        let gap = r.train_loss - run.min_train_loss;
        ok &= b >= 10.0 * gap;
        if gap > 0.0 {
            min_ratio = min_ratio.min(b / gap);
        }
        min_vs_loss = min_vs_loss.min(b / r.train_loss);
    }
    verdict(
        6,
        "bound looseness",
        ok,
        *elapsed,
        &format!("all 10 runs: bound >= 10 x gap; smallest bound/gap {min_ratio:.3e}, smallest bound/train loss {min_vs_loss:.3e}"),
    );
}

#[test]
fn criterion_07_probe_gradients_dominate_training() {
    let (runs, elapsed) = missing_class_runs();
    let mut hits = 0;
    let mut detail = Vec::new();
    for (base, _) in runs {
        let probe_g: Vec<f64> = base
            .probe_samples
            .iter()
            .flat_map(|(_, s)| s.iter().map(|p| p.g_value))
            .collect();
        let train_g: Vec<f64> = base
            .rounds
            .iter()
            .flat_map(|r| r.training_g.iter().flat_map(|(_, g)| g.iter().copied()))
            .collect();
        let (p, t) = (
            analysis::median(&probe_g).unwrap(),
            analysis::median(&train_g).unwrap(),
        );
        hits += usize::from(p > t);
        detail.push(format!("{p:.3}>{t:.3}"));
    }
    verdict(
        7,
        "probe vs training gradients",
        hits >= 4,
        *elapsed,
        &format!(
            "{hits}/5 seeds median(probe g) > median(training g): {}",
            detail.join(" ")
        ),
    );
}

const N_HET: usize = 8;

fn heterogeneous_scenario(seed: u64, base_sigma: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(ModelSpec::softmax(8, 4, 0.001));
    cfg.name = "heterogeneous".into();
    cfg.n_nodes = N_HET;
    cfg.samples_per_node = 200;
    cfg.rounds = 20;
    cfg.lr = 1.0;
    cfg.batch_size = 20;
    cfg.seed = seed;
    cfg.heterogeneity = Heterogeneity {
        label_skew: Vec::new(),
        noise_multiplier: vec![1.5, 1.0, 2.0, 1.0, 1.5, 1.0, 2.0, 1.0],
        feature_gain: (0..N_HET).map(|i| 0.3 + 0.1 * i as f64).collect(),
        base_sigma,
    };
    cfg
}

struct HetOutcome {
    spearman_l: f64,
    spearman_g: f64,
    top_test: f64,
    bottom_test: f64,
}

fn heterogeneous_runs() -> &'static (Vec<HetOutcome>, Duration) {
    static RUNS: std::sync::OnceLock<(Vec<HetOutcome>, Duration)> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let k = N_HET.div_ceil(2);
        let out = SEEDS
            .iter()
            .map(|&s| {
                let (data, sigma) = experiment::load_dataset(
                    &DatasetSource::Synthetic(common::synthetic(4, 8, 550)),
                    s,
                )
                .unwrap();
                let cfg = heterogeneous_scenario(s, sigma);
                let run = flsim::run_federated(&cfg, &data).unwrap();
                let corr = analysis::correlate_constants(
                    &run.node_constants,
                    &node_usefulness(&run).unwrap(),
                )
                .unwrap();
                let pick = |policy| {
                    let mut sub = cfg.clone();
                    sub.participants = Some(select_nodes(&run.node_constants, k, policy).unwrap());
                    last(&flsim::run_federated(&sub, &data).unwrap()).test_loss
                };
                HetOutcome {
                    spearman_l: corr
                        .iter()
                        .find(|c| c.quantity == analysis::Quantity::L)
                        .unwrap()
                        .spearman,
                    spearman_g: corr
                        .iter()
                        .find(|c| c.quantity == analysis::Quantity::G)
                        .unwrap()
                        .spearman,
                    top_test: pick(SelectionPolicy::TopL),
                    bottom_test: pick(SelectionPolicy::BottomL),
                }
            })
            .collect();
        (out, start.elapsed())
    })
}

#[test]
fn criterion_08_constants_predict_usefulness() {
    let (runs, elapsed) = heterogeneous_runs();
    let mean_l = runs.iter().map(|r| r.spearman_l).sum::<f64>() / runs.len() as f64;
    let mean_g = runs.iter().map(|r| r.spearman_g).sum::<f64>() / runs.len() as f64;
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.2}/{:.2}", r.spearman_l, r.spearman_g))
        .collect();
    verdict(
        8,
        "L and G correlate with usefulness",
        mean_l >= 0.3 && mean_g > 0.0 && *elapsed < Duration::from_secs(600),
        *elapsed,
        &format!(
            "mean Spearman L {mean_l:.3}, G {mean_g:.3}; per seed L/G {}",
            per_seed.join(" ")
        ),
    );
}

#[test]
fn criterion_09_top_l_selection_pays_off() {
    let (runs, elapsed) = heterogeneous_runs();
    let top = runs.iter().map(|r| r.top_test).sum::<f64>() / runs.len() as f64;
    let bottom = runs.iter().map(|r| r.bottom_test).sum::<f64>() / runs.len() as f64;
    verdict(
        9,
        "selection payoff",
        top <= bottom && *elapsed < Duration::from_secs(600),
        *elapsed,
        &format!("mean final test loss top-4 by L {top:.4} vs bottom-4 {bottom:.4}"),
    );
}

fn constants(l: f64) -> ConstantsEstimate {
    ConstantsEstimate {
        mu: 0.1,
        l_smooth: l,
        g_max: 1.0,
        n_probes: 2,
    }
}

fn run_with_deltas(deltas: &[Vec<(usize, f64)>]) -> FLRun {
    let mut cfg = ScenarioConfig::new(ModelSpec::softmax(1, 2, 0.1));
    cfg.rounds = deltas.len();
    let w = ParamVector::zeros(4);
    FLRun {
        config: cfg,
        rounds: deltas
            .iter()
            .enumerate()
            .map(|(i, d)| RoundRecord {
                t: i + 1,
                train_loss: 1.0,
                test_loss: 1.0,
                bound_value: None,
                usefulness: d.clone(),
                training_g: Vec::new(),
            })
            .collect(),
        initial_params: w.clone(),
        final_params: w,
        node_constants: Vec::new(),
        probe_samples: Vec::new(),
        global_constants: constants(1.0),
        bound_distance: 0.0,
        min_train_loss: 1.0,
        warnings: Vec::new(),
    }
}

#[test]
fn criterion_10_analysis_unit_examples() {
    let start = Instant::now();
    let mut failures: Vec<&str> = Vec::new();
    let mut check = |name: &'static str, ok: bool| {
        if !ok {
            failures.push(name);
        }
    };

    // correlate
    let (p, s) = analysis::correlate(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
    check("correlate linear", p == 1.0 && s == 1.0);
    let (p, s) = analysis::correlate(&[1.0, 2.0, 3.0], &[1.0, 8.0, 27.0]).unwrap();
    check("correlate monotone", p < 1.0 && s == 1.0);
    let (p, s) = analysis::correlate(&[1.0, 2.0, 3.0, 5.0], &[-1.0, -2.0, -3.0, -5.0]).unwrap();
    check("correlate anti", p == -1.0 && s == -1.0);

    // empirical_cdf
    let cdf = analysis::empirical_cdf(&[1.0, 2.0, 3.0]).unwrap();
    check("cdf counting", cdf.eval(2.0) == 2.0 / 3.0);
    let flat = analysis::empirical_cdf(&[4.0; 5]).unwrap();
    check("cdf all-equal", flat.points == vec![(4.0, 1.0)]);
    check(
        "cdf order",
        analysis::empirical_cdf(&[3.0, 1.0, 2.0]).unwrap() == cdf,
    );

    // select_nodes
    let est = vec![(1, constants(0.5)), (2, constants(2.0))];
    check(
        "select argmax",
        select_nodes(&est, 1, SelectionPolicy::TopL).unwrap() == vec![2],
    );
    let four: Vec<_> = (0..4).map(|i| (i, constants(1.0 + i as f64))).collect();
    for policy in [
        SelectionPolicy::TopL,
        SelectionPolicy::TopG,
        SelectionPolicy::BottomMu,
        SelectionPolicy::BottomL,
        SelectionPolicy::Random(9),
        SelectionPolicy::All,
    ] {
        check(
            "select k = n",
            select_nodes(&four, 4, policy).unwrap() == vec![0, 1, 2, 3],
        );
    }
    let tied: Vec<_> = [5, 3, 8, 1].iter().map(|&i| (i, constants(1.0))).collect();
    check(
        "select ties",
        select_nodes(&tied, 2, SelectionPolicy::TopL).unwrap() == vec![1, 3],
    );

    // node_usefulness
    let u = node_usefulness(&run_with_deltas(&[vec![(0, 0.5)], vec![(0, 0.3)]])).unwrap();
    check("usefulness mean", u.len() == 1 && u[0].usefulness == 0.4);
    let u = node_usefulness(&run_with_deltas(&[vec![(0, 0.25), (1, -0.5)]])).unwrap();
    check(
        "usefulness single round",
        u[0].usefulness == 0.25 && u[1].usefulness == -0.5,
    );
    let (data, _) =
        experiment::load_dataset(&DatasetSource::Synthetic(common::synthetic(4, 8, 60)), 10)
            .unwrap();
    let mut cfg = ScenarioConfig::new(ModelSpec::softmax(8, 4, 0.001));
    cfg.samples_per_node = 40;
    cfg.rounds = 3;
    cfg.lr = 0.0;
    cfg.probe.n_probes = 4;
    let frozen = flsim::run_federated(&cfg, &data).unwrap();
    check(
        "usefulness lr = 0",
        node_usefulness(&frozen)
            .unwrap()
            .iter()
            .all(|r| r.usefulness == 0.0),
    );

    // fedavg
    let v = ParamVector::new(vec![0.1, -7.3, 1e-9]).unwrap();
    check(
        "fedavg identity",
        flsim::fedavg(&[v.clone(), v.clone(), v.clone()]).unwrap() == v,
    );
    let a = ParamVector::new(vec![0.0, 2.0]).unwrap();
    let b = ParamVector::new(vec![2.0, 0.0]).unwrap();
    check(
        "fedavg arithmetic",
        flsim::fedavg(&[a, b]).unwrap().as_slice() == [1.0, 1.0],
    );
    let mut rng = seed::rng(10);
    let models: Vec<ParamVector> = (0..5)
        .map(|_| ParamVector::new((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let mut reversed = models.clone();
    reversed.reverse();
    reversed.swap(0, 2);
    check(
        "fedavg permutation",
        flsim::fedavg(&models).unwrap() == flsim::fedavg(&reversed).unwrap(),
    );

    // compute_m / compute_g
    let none = Dataset::empty(1, 1).unwrap();
    let ident = ModelSpec::quadratic(vec![1.0, 1.0]);
    let u2 = ParamVector::new(vec![0.3, -2.0]).unwrap();
    let v2 = ParamVector::new(vec![1.7, 0.4]).unwrap();
    check(
        "m identity",
        (probe::compute_m(&ident, &u2, &v2, &none).unwrap() - 1.0).abs() <= 1e-12,
    );
    let h13 = ModelSpec::quadratic(vec![1.0, 3.0]);
    let one = ParamVector::new(vec![1.0, 1.0]).unwrap();
    let two = ParamVector::new(vec![2.0, 2.0]).unwrap();
    check(
        "m diag(1,3)",
        probe::compute_m(&h13, &two, &one, &none).unwrap() == 2.0,
    );
    let v34 = ParamVector::new(vec![3.0, 4.0]).unwrap();
    check(
        "g norm",
        probe::compute_g(&ident, &v34, &none).unwrap() == 5.0,
    );
    let spec = ModelSpec::softmax(8, 4, 0.01);
    let w = model::init_params(&spec, 3);
    let mut shuffled = data.samples().to_vec();
    shuffled.reverse();
    let shuffled = Dataset::new(shuffled, 4, 8).unwrap();
    let (g1, g2) = (
        probe::compute_g(&spec, &w, &data).unwrap(),
        probe::compute_g(&spec, &w, &shuffled).unwrap(),
    );
    check("g reorder", (g1 - g2).abs() <= 1e-12 * g1);

    let elapsed = start.elapsed();
    let detail = if failures.is_empty() {
        "all examples pass".to_string()
    } else {
        format!("failed: {}", failures.join(", "))
    };
    verdict(
        10,
        "analysis unit suite",
        failures.is_empty() && elapsed < Duration::from_secs(5),
        elapsed,
        &detail,
    );
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, out);
        } else {
            out.push((
                p.strip_prefix(root).unwrap().display().to_string(),
                std::fs::read(&p).unwrap(),
            ));
        }
    }
}

#[test]
fn criterion_11_runs_are_byte_identical() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("exp.conf");
    std::fs::write(
        &config,
        "repeat_seeds = 1, 2\n\
         synthetic.samples_per_class = 150\n\
         scenario.n_nodes = 4\n\
         scenario.samples_per_node = 100\n\
         scenario.rounds = 5\n\
         scenario.lr = 0.5\n\
         scenario.batch_size = 10\n\
         probe.n_probes = 20\n\
         variants = missing\n\
         variant.missing.scenario.missing_classes = 0\n\
         selection.k = 2\n",
    )
    .unwrap();
    let mut trees = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "4")] {
        let out = tmp.path().join(name);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_fedbound"))
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--parallel", threads])
            .env_remove(fedbound::config::SEED_ENV)
            .env("RUST_LOG", "off")
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        let mut files = Vec::new();
        collect_files(&out, &out, &mut files);
        trees.push(files);
    }
    let csvs = trees[0].iter().filter(|(n, _)| n.ends_with(".csv")).count();
    let elapsed = start.elapsed();
    verdict(
        11,
        "determinism",
        csvs > 0 && trees[0] == trees[1],
        elapsed,
        &format!(
            "{} files ({csvs} CSV) identical across 1-thread and 4-thread runs",
            trees[0].len()
        ),
    );
}
