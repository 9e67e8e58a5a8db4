//! Exit criteria. Each criterion prints one PASS/FAIL line; the process
//! fails if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use relscm_core::config::{GenerationConfig, GraphParams, KMeansConfig};
use relscm_core::eval::{run_comparison, EvalConfig, EvalReport, MetricName};
use relscm_core::graph::sample_dag;
use relscm_core::io::sha256_hex;
use relscm_core::pipeline::{build_schema, cmd_generate, cmd_regenerate, generate_dataset, ADD_CSV, MAIN_CSV, MANIFEST_JSON, SCHEMA_JSON};
use relscm_core::presample::{fit_codebook, Codebook, SampleMatrix};
use relscm_core::relational::RelationalSchema;
use relscm_core::sampler::{pool, Pooled};
use relscm_core::scm::{init_propagation_fn, propagate, sample_root, structural_assign, Activation, QuantilePair};
use relscm_core::seed::{stream, SeedStream};
use relscm_core::{ColumnInfo, ColumnKind, PoolingKind, PoolingSpec, Role, RootDistribution};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

const RUNTIME_BUDGET: Duration = Duration::from_secs(60);

fn determinism(work: &Path) -> Outcome {
    let cfg = GenerationConfig { master_seed: 2024, ..Default::default() };
    let start = Instant::now();
    cmd_generate(&cfg, &work.join("a"), 1).map_err(err)?;
    let elapsed = start.elapsed();
    cmd_generate(&cfg, &work.join("b"), 1).map_err(err)?;
    cmd_generate(&cfg, &work.join("c"), 8).map_err(err)?;
    let read = |dir: &str, f: &str| std::fs::read(work.join(dir).join(f)).map_err(err);
    for f in [MAIN_CSV, ADD_CSV, SCHEMA_JSON] {
        ensure(read("a", f)? == read("b", f)?, || format!("{f} differs between identical runs"))?;
    }
    for f in [MAIN_CSV, ADD_CSV] {
        ensure(read("a", f)? == read("c", f)?, || format!("{f} differs between 1 and 8 threads"))?;
    }
    ensure(elapsed < RUNTIME_BUDGET, || format!("default profile took {elapsed:.1?} on one thread"))?;
    Ok(format!("byte-identical reruns and thread counts; default profile {elapsed:.2?} on 1 thread"))
}

fn random_parents(rng: &mut SeedStream, count: usize, n: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..n).map(|_| rng.random_range(-10.0..10.0) * rng.random_range(0.0..1.0f64).powi(3)).collect())
        .collect()
}

fn noiseless_reduction() -> Outcome {
    let mut rng = stream(201);
    for case in 0..10_000 {
        let n = rng.random_range(1..=4);
        let parents = rng.random_range(1..=4);
        let act = Activation::ALL[rng.random_range(0..Activation::ALL.len())];
        let f = init_propagation_fn(parents, n, act, &mut rng).map_err(err)?;
        let inputs = random_parents(&mut rng, parents, n);
        let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..0.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.0..5.0)).collect();
        let q = QuantilePair::new(lo, hi).map_err(err)?;
        let with_noise_path = structural_assign(&refs, &f, &q, &vec![0.0; n]).map_err(err)?;
        let plain = propagate(&refs, &f).map_err(err)?;
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure(bits(&with_noise_path) == bits(&plain), || format!("case {case}: {with_noise_path:?} vs {plain:?}"))?;
    }
    Ok("10000 random cases bit-identical".into())
}

fn categorical_pooling() -> Outcome {
    let mut rng = stream(202);
    let spec = PoolingSpec { kind: PoolingKind::Categorical };
    let mut ties = 0;
    for case in 0..10_000 {
        let dim = rng.random_range(1..=4);
        let k = rng.random_range(2..=8);
        let coarse = case % 2 == 0;
        let draw = |rng: &mut SeedStream| {
            if coarse {
                rng.random_range(-2..=2) as f64
            } else {
                rng.random_range(-3.0..3.0)
            }
        };
        let mut centroids: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| draw(&mut rng)).collect()).collect();
        if case % 5 == 0 {
            let j = rng.random_range(1..k);
            centroids[j] = centroids[rng.random_range(0..j)].clone();
        }
        let x: Vec<f64> = (0..dim).map(|_| if coarse { draw(&mut rng) * 0.5 } else { draw(&mut rng) }).collect();
        let expected = common::brute_nearest(&x, &centroids);
        let dists: Vec<f64> = centroids.iter().map(|c| c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum()).collect();
        if dists.iter().filter(|&&d| d == dists[expected]).count() > 1 {
            ties += 1;
        }
        let cb = Codebook { centroids, fitted_on: 0 };
        let got = pool(&x, &spec, Some(&cb)).map_err(err)?;
        ensure(got == Pooled::Category(expected as u32), || format!("case {case}: {got:?}, expected {expected}"))?;
    }
    ensure(ties > 0, || "no tie cases generated".into())?;
    Ok(format!("10000 random cases agree with a brute-force scan ({ties} with ties)"))
}

fn check_composed(schema: &RelationalSchema, latent: usize) -> Result<(), String> {
    let m = &schema.merged;
    ensure(common::is_acyclic(m.len(), &m.edges), || "merged graph has a cycle".into())?;
    let c = schema.c_index();
    let add: Vec<usize> = (0..c).collect();
    let reach = common::reachable(m.len(), &m.edges, &add, c);
    let main_reached: Vec<usize> = (c + 1..m.len()).filter(|&i| reach[i]).collect();
    if latent == 0 {
        ensure(main_reached.is_empty(), || format!("main nodes {main_reached:?} reachable around C"))?;
        ensure(schema.c_is_only_cut(), || "library disagrees on the C-only cut".into())?;
    } else {
        ensure(schema.latent_edges.len() == latent, || "latent edge count".into())?;
        for &(a, t) in &schema.latent_edges {
            let target = schema.main_offset() + t;
            ensure(reach[target], || format!("latent target {target} not reachable from A{a} around C"))?;
            ensure(schema.g_main.roles[t] == Role::Target, || "latent edge does not end at a target".into())?;
        }
        let lib: Vec<usize> = schema.latently_affected_targets();
        let oracle: Vec<usize> = schema.g_main.targets().iter().map(|&t| schema.main_offset() + t).filter(|&i| reach[i]).collect();
        ensure(lib == oracle, || format!("latently affected targets {lib:?}, oracle {oracle:?}"))?;
    }
    Ok(())
}

fn structure() -> Outcome {
    let mut rng = stream(301);
    for i in 0..1_000u64 {
        let nodes = rng.random_range(3..=25);
        let m = rng.random_range(1..nodes.min(4));
        let dag = sample_dag(&GraphParams::fixed(nodes, m), i, "acceptance").map_err(err)?;
        let (indeg, outdeg) = (dag.in_degrees(), dag.out_degrees());
        ensure(common::is_acyclic(dag.len(), &dag.edges), || format!("dag {i} has a cycle"))?;
        for v in 0..dag.len() {
            ensure(indeg[v] + outdeg[v] > 0, || format!("dag {i}: node {v} isolated"))?;
            ensure((dag.roles[v] == Role::Target) == (outdeg[v] == 0), || format!("dag {i}: node {v} sink/target mismatch"))?;
            ensure((dag.roles[v] == Role::Root) == (indeg[v] == 0 && outdeg[v] > 0), || format!("dag {i}: node {v} root mismatch"))?;
        }
    }
    for i in 0..1_000u64 {
        let latent = (i % 3) as usize;
        let cfg = GenerationConfig { master_seed: 10_000 + i, latent_count: latent, ..Default::default() };
        let schema = build_schema(&cfg).map_err(err)?;
        check_composed(&schema, latent).map_err(|e| format!("schema {i}: {e}"))?;
    }
    Ok("1000 DAGs and 1000 composed schemas pass all graph checks".into())
}

fn statistics() -> Outcome {
    let mut worst = (0.0f64, String::new());
    for seed in 0..20 {
        let dag = common::annotated_dag(seed, 10);
        for (name, below, above) in common::root_quantile_coverage(&dag, seed, 10_000) {
            for share in [below, above] {
                ensure((0.05..=0.15).contains(&share), || format!("seed {seed} {name}: tail share {share}"))?;
                if (share - 0.1).abs() > worst.0 {
                    worst = ((share - 0.1).abs(), name.clone());
                }
            }
        }
    }
    let dists = [
        RootDistribution::Gamma { shape: 2.245, scale: 1.780 },
        RootDistribution::Normal { mean: -0.029, std: 0.816 },
        RootDistribution::PerComponentMixture { p: 0.5, normal_std: 1.0, exp_scale: 0.584 },
    ];
    let mut zs = Vec::new();
    for (i, d) in dists.iter().enumerate() {
        let x = sample_root(d, 100_000, &mut stream(400 + i as u64)).map_err(err)?;
        let (mean, se) = common::sample_mean_and_se(&x);
        let z = (mean - d.mean()) / se;
        ensure(z.abs() <= 3.0, || format!("{d:?}: mean {mean} vs {} ({z:.2} SE)", d.mean()))?;
        zs.push(format!("{z:+.2}"));
    }
    let cfg = KMeansConfig::default();
    for seed in 0..20u64 {
        let mut rng = stream(500 + seed);
        let data: Vec<f64> = (0..1_000).map(|i| (i % 3) as f64 * 2.0 + rng.random_range(-1.5..1.5)).collect();
        let fit = fit_codebook(&SampleMatrix::new(500, 2, data).map_err(err)?, 3 + seed as usize % 4, &cfg, &mut rng).map_err(err)?;
        for w in fit.inertia_history.windows(2) {
            ensure(w[1] <= w[0], || format!("k-means seed {seed}: objective rose {} -> {}", w[0], w[1]))?;
        }
    }
    Ok(format!(
        "tail coverage within [0.05, 0.15] (max |dev| {:.3} at {}); root means z = {}; k-means objective monotone",
        worst.0,
        worst.1,
        zs.join(", ")
    ))
}

fn oracles() -> Outcome {
    use relscm_core::eval::features::FeatureMatrix;
    use relscm_core::eval::knn::{knn_predict, Predictions, Task, TrainTargets};
    use relscm_core::eval::{auc_binary, rmse};
    let mut rng = stream(601);
    let matrix = |rows: &[Vec<f64>]| FeatureMatrix::unlabeled(rows.len(), rows[0].len(), rows.concat());
    let mut worst_knn = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=5);
        let grid = |rng: &mut SeedStream, n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..d).map(|_| rng.random_range(-4..=4) as f64 * 0.25).collect()).collect()
        };
        let train = grid(&mut rng, 100);
        let test = grid(&mut rng, 100);
        let y: Vec<f64> = (0..100).map(|_| rng.random_range(-10.0..10.0)).collect();
        let k = rng.random_range(1..=100);
        let Predictions::Regression(got) =
            knn_predict(&matrix(&train), TrainTargets::Numeric(&y), &matrix(&test), k, Task::Regression).map_err(err)?
        else {
            return Err("wrong prediction kind".into());
        };
        let expected = common::brute_knn_regression(&train, &y, &test, k);
        for (g, e) in got.iter().zip(&expected) {
            worst_knn = worst_knn.max((g - e).abs());
        }
    }
    ensure(worst_knn <= 1e-9, || format!("kNN deviates from brute force by {worst_knn:e}"))?;
    let mut worst_auc = 0.0f64;
    for case in 0..200 {
        let scores: Vec<f64> = (0..200)
            .map(|_| if case % 2 == 0 { rng.random_range(0..10) as f64 } else { rng.random() })
            .collect();
        let mut labels: Vec<bool> = (0..200).map(|_| rng.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        let got = auc_binary(&scores, &labels).map_err(err)?;
        worst_auc = worst_auc.max((got - common::trapezoid_auc(&scores, &labels)).abs());
    }
    ensure(worst_auc <= 1e-9, || format!("AUC deviates from trapezoid ROC by {worst_auc:e}"))?;
    let y: Vec<f64> = (0..500).map(|_| rng.random_range(-1e3..1e3)).collect();
    let r = rmse(&y, &y).map_err(err)?;
    ensure(r == 0.0, || format!("RMSE of perfect predictions is {r}"))?;
    Ok(format!("kNN max |diff| {worst_knn:.1e}, AUC max |diff| {worst_auc:.1e}, perfect RMSE exactly 0"))
}

const LATENT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const AUC_GAIN: f64 = 0.02;
const RMSE_RATIO_GAIN: f64 = 0.98;
const AUC_NEUTRAL: f64 = 0.01;
const RMSE_RATIO_NEUTRAL: f64 = 0.02;

fn latent_cfg(seed: u64, latent: usize) -> GenerationConfig {
    GenerationConfig {
        master_seed: seed,
        main_graph: GraphParams::fixed(8, 2),
        add_graph: GraphParams::fixed(5, 2),
        rows_main: 10_000,
        rows_add: 500,
        latent_count: latent,
        ..Default::default()
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn latent_reports() -> Result<Vec<(EvalReport, EvalReport)>, String> {
    let eval = EvalConfig { k: 10, test_fraction: 0.1, seed: 0 };
    LATENT_SEEDS
        .iter()
        .map(|&s| {
            let with = generate_dataset(&latent_cfg(s, 2), 0).map_err(err)?;
            let without = generate_dataset(&latent_cfg(s, 0), 0).map_err(err)?;
            Ok((run_comparison(&with, &eval).map_err(err)?, run_comparison(&without, &eval).map_err(err)?))
        })
        .collect()
}

/// Per seed, the best latently affected target of each kind; the seed
/// averages must clear the gain threshold for at least one kind.
fn latent_gain(reports: &[(EvalReport, EvalReport)]) -> Outcome {
    let (mut auc_gains, mut rmse_ratios) = (Vec::new(), Vec::new());
    for (with, _) in reports {
        let affected = with.targets.iter().filter(|t| t.latently_affected);
        let mut best_auc: Option<f64> = None;
        let mut best_ratio: Option<f64> = None;
        for t in affected {
            let Some(e) = t.effect() else { continue };
            match t.metric {
                MetricName::Auc => best_auc = Some(best_auc.map_or(e, |b: f64| b.max(e))),
                MetricName::Rmse => best_ratio = Some(best_ratio.map_or(e, |b: f64| b.min(e))),
            }
        }
        auc_gains.extend(best_auc);
        rmse_ratios.extend(best_ratio);
    }
    let auc = mean(&auc_gains);
    let ratio = mean(&rmse_ratios);
    let detail = format!(
        "seed-mean best AUC gain {} over {} seeds, seed-mean best RMSE ratio {} over {} seeds",
        auc.map_or("n/a".into(), |v| format!("{v:+.4}")),
        auc_gains.len(),
        ratio.map_or("n/a".into(), |v| format!("{v:.4}")),
        rmse_ratios.len()
    );
    let pass = auc.is_some_and(|v| v >= AUC_GAIN) || ratio.is_some_and(|v| v <= RMSE_RATIO_GAIN);
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Per seed, the worst target deviation of each kind; the seed averages
/// must stay inside the neutrality band.
fn ablation_neutral(reports: &[(EvalReport, EvalReport)]) -> Outcome {
    let (mut auc_dev, mut ratio_dev) = (Vec::new(), Vec::new());
    let mut per_seed = Vec::new();
    for ((_, without), seed) in reports.iter().zip(LATENT_SEEDS) {
        let mut worst_auc: Option<f64> = None;
        let mut worst_ratio: Option<f64> = None;
        for t in &without.targets {
            let Some(e) = t.effect() else { continue };
            match t.metric {
                MetricName::Auc => worst_auc = Some(worst_auc.unwrap_or(0.0).max(e.abs())),
                MetricName::Rmse => worst_ratio = Some(worst_ratio.unwrap_or(0.0).max((e - 1.0).abs())),
            }
        }
        per_seed.push(format!(
            "s{seed}: auc {} ratio {}",
            worst_auc.map_or("-".into(), |v| format!("{v:.3}")),
            worst_ratio.map_or("-".into(), |v| format!("{v:.3}"))
        ));
        auc_dev.extend(worst_auc);
        ratio_dev.extend(worst_ratio);
    }
    let auc = mean(&auc_dev).unwrap_or(0.0);
    let ratio = mean(&ratio_dev).unwrap_or(0.0);
    let detail = format!(
        "seed-mean worst |dAUC| {auc:.4} (< {AUC_NEUTRAL}), seed-mean worst |RMSE ratio - 1| {ratio:.4} (< {RMSE_RATIO_NEUTRAL}) [{}]",
        per_seed.join("; ")
    );
    if auc < AUC_NEUTRAL && ratio < RMSE_RATIO_NEUTRAL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn check_csv(path: &Path, columns: &[ColumnInfo], prefix: char) -> Result<usize, String> {
    let mut rdr = csv::Reader::from_path(path).map_err(err)?;
    let header: Vec<String> = rdr.headers().map_err(err)?.iter().map(str::to_string).collect();
    let body = header.len() - 1;
    ensure(header.last().map(String::as_str) == Some("C"), || format!("{}: last column is not C", path.display()))?;
    for (i, h) in header[..body].iter().enumerate() {
        ensure(*h == format!("{prefix}{i}"), || format!("{}: column {i} is {h}", path.display()))?;
    }
    ensure(header.iter().zip(columns).all(|(h, c)| *h == c.name), || "header differs from schema.json".into())?;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(err)?;
        for (field, col) in rec.iter().zip(columns) {
            match col.kind {
                ColumnKind::Numeric => {
                    let v: f64 = field.parse().map_err(|_| format!("{}: '{field}' is not a number", col.name))?;
                    ensure(v.is_finite(), || format!("{}: non-finite value", col.name))?;
                }
                ColumnKind::Categorical { categories } => {
                    let v: u32 = field.parse().map_err(|_| format!("{}: '{field}' is not a category id", col.name))?;
                    ensure((v as usize) < categories, || format!("{}: {v} outside [0, {categories})", col.name))?;
                }
            }
        }
        rows += 1;
    }
    Ok(rows)
}

fn format_suite(work: &Path) -> Outcome {
    let dir = work.join("a");
    let doc = relscm_core::io::read_schema_document(&dir.join(SCHEMA_JSON)).map_err(err)?;
    let main_rows = check_csv(&dir.join(MAIN_CSV), &doc.main_columns, 'M')?;
    let add_rows = check_csv(&dir.join(ADD_CSV), &doc.add_columns, 'A')?;
    ensure(main_rows == 100_000 && add_rows == 500, || format!("row counts {main_rows}/{add_rows}"))?;
    let k_c = match doc.main_columns.last().map(|c| c.kind) {
        Some(ColumnKind::Categorical { categories }) => categories,
        _ => return Err("C is not categorical".into()),
    };
    ensure(k_c >= 2 && doc.add_columns.last().map(|c| c.kind) == Some(ColumnKind::Categorical { categories: k_c }), || {
        "C cardinality differs between tables".into()
    })?;
    // Coupling cardinality over many schemas: floor at 2, centred near 100.
    let counts: Vec<f64> = (0..400u64)
        .map(|s| build_schema(&GenerationConfig { master_seed: 90_000 + s, ..Default::default() }).map(|x| x.coupling.category_count as f64))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    ensure(counts.iter().all(|&k| k >= 2.0), || "coupling cardinality below 2".into())?;
    let (m, se) = common::sample_mean_and_se(&counts);
    ensure((m - 100.0).abs() <= 4.0 * se, || format!("coupling cardinality mean {m:.1} (se {se:.1})"))?;

    let manifest = cmd_regenerate(&dir.join(MANIFEST_JSON), Some(&work.join("regen")), 0).map_err(err)?;
    for rec in &manifest.files {
        let bytes = std::fs::read(work.join("regen").join(&rec.name)).map_err(err)?;
        ensure(sha256_hex(&bytes) == rec.sha256, || format!("{} hash mismatch", rec.name))?;
    }
    Ok(format!(
        "main {} cols x {main_rows} rows, additional {} cols x {add_rows} rows, K_C = {k_c}; regenerated hashes match",
        doc.main_columns.len(),
        doc.add_columns.len()
    ))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    let mut report = |label: &str, outcome: Outcome, took: Duration| {
        match &outcome {
            Ok(detail) => println!("PASS  {label}: {detail} ({took:.1?})"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {label}: {detail} ({took:.1?})")
            }
        }
    };
    let timed = |f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        (o, t.elapsed())
    };

    let (o, t) = timed(&|| determinism(work.path()));
    report("1  determinism and runtime", o, t);
    let (o, t) = timed(&noiseless_reduction);
    report("2a noiseless assignment equals propagation", o, t);
    let (o, t) = timed(&categorical_pooling);
    report("2b categorical pooling equals nearest-centroid scan", o, t);
    let (o, t) = timed(&structure);
    report("3  graph structure", o, t);
    let (o, t) = timed(&statistics);
    report("4  statistical checks", o, t);
    let (o, t) = timed(&oracles);
    report("5  evaluation oracles", o, t);
    let start = Instant::now();
    match latent_reports() {
        Ok(reports) => {
            let built = start.elapsed();
            report("6a joined features help latently affected targets", latent_gain(&reports), built);
            report("6b joined features are neutral without latent edges", ablation_neutral(&reports), built);
        }
        Err(e) => {
            report("6a joined features help latently affected targets", Err(e.clone()), start.elapsed());
            report("6b joined features are neutral without latent edges", Err(e), start.elapsed());
        }
    }
    let (o, t) = timed(&|| format_suite(work.path()));
    report("7  file formats and regeneration", o, t);

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
