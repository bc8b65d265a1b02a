//! Batch front-end: one-shot selections, simulator runs, the verification
//! suite, and the reuse benchmark. All output is JSON or CSV; results are
//! deterministic given flags and seed (benchmark wall times excepted).

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use adaptslam::baselines::{make_strategy, strategy_names};
use adaptslam::graph::{parse_stream, EdgeCategory, KeyframeId, PoseGraph};
use adaptslam::oracle::{
    brute_force_select, ratio_floor, spanning_tree_weight, submodularity_ratio, BruteForceMode,
    RatioFloor,
};
use adaptslam::reuse::ReuseState;
use adaptslam::selection::{select_fixed_keyframes, Objective, SelectionTask, TopHConfig};
use adaptslam::sim::{load_trace, SimConfig};
use adaptslam::uncertainty::{global_uncertainty, local_uncertainty, Uncertainty};
use adaptslam::Error;

#[derive(Parser)]
#[command(
    name = "adaptslam",
    version,
    about = "Pose-graph uncertainty, budgeted keyframe selection, and an edge-offload simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one keyframe selection over a stream file and print JSON
    Select(SelectArgs),
    /// Replay a keyframe stream against a bandwidth trace and write CSV
    Simulate(SimulateArgs),
    /// Cross-check the implementation against its oracles
    Verify(VerifyArgs),
    /// Time incremental candidate scoring against scratch factorization
    Bench(BenchArgs),
}

#[derive(ValueEnum, Clone, Copy, PartialEq)]
enum Mode {
    Local,
    Global,
}

#[derive(Args)]
struct SelectArgs {
    /// Keyframe stream file (JSON lines)
    #[arg(long)]
    graph: PathBuf,
    /// Local map around the newest keyframe, or a global map from scratch
    #[arg(long, value_enum)]
    mode: Mode,
    /// Maximum keyframes to select
    #[arg(long)]
    budget: usize,
    /// Also pick up to this many fixed anchors from the unchosen
    /// candidates (local mode only)
    #[arg(long)]
    fixed_budget: Option<usize>,
    #[arg(long, default_value = "adaptslam", value_parser = strategy_names())]
    strategy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weight given to the inertial edge between consecutive keyframes
    #[arg(long, default_value_t = 500.0)]
    imu_weight: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Keyframe stream file (JSON lines)
    #[arg(long)]
    stream: PathBuf,
    /// Bandwidth trace CSV
    #[arg(long)]
    trace: PathBuf,
    /// Simulation config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Report CSV path
    #[arg(long)]
    out: PathBuf,
    /// Override the configured strategy; repeat or comma-separate to sweep
    /// (each report gets a `-<strategy>` suffix before the extension)
    #[arg(long, value_delimiter = ',', value_parser = strategy_names())]
    strategy: Vec<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Instances per property
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Force one named property to fail (test hook)
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    /// Tracked-set dimension
    #[arg(long, default_value_t = 25)]
    dim: usize,
    #[arg(long, default_value_t = 500)]
    candidates: usize,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Select(args) => cmd_select(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn open(path: &Path) -> Result<File, Error> {
    File::open(path).map_err(|e| Error::in_file(e, path))
}

fn json_uncertainty(u: Uncertainty) -> serde_json::Value {
    if u.is_singular() {
        serde_json::Value::Null
    } else {
        serde_json::json!(u.value())
    }
}

fn cmd_select(args: SelectArgs) -> Result<ExitCode, Error> {
    if args.mode == Mode::Global && args.fixed_budget.is_some() {
        eprintln!("error: --fixed-budget applies only to --mode local");
        return Ok(ExitCode::from(2));
    }
    let graph = PoseGraph::from_stream(BufReader::new(open(&args.graph)?), args.imu_weight)?;
    let mut strategy = make_strategy(&args.strategy, args.seed)?;
    let empty = BTreeSet::new();
    let (objective, candidates, mode_name) = match args.mode {
        Mode::Global => (Objective::Global, graph.nodes().collect(), "global"),
        Mode::Local => {
            let k = graph
                .newest()
                .ok_or_else(|| Error::Config("the stream holds no keyframes".into()))?;
            let candidates: BTreeSet<KeyframeId> = graph.nodes().filter(|n| *n != k).collect();
            (Objective::Local { k }, candidates, "local")
        }
    };
    let task = SelectionTask {
        graph: &graph,
        candidates: &candidates,
        existing: &empty,
        budget: args.budget,
        objective,
        tuning: TopHConfig::default(),
    };
    let result = strategy.select(&task)?;
    let mut report = serde_json::json!({
        "mode": mode_name,
        "strategy": args.strategy,
        "budget": args.budget,
        "chosen": result.chosen,
        "uncertainty": json_uncertainty(result.uncertainty),
        "singular": result.singular,
        "evaluations": result.evaluations,
    });
    if let (Objective::Local { k }, Some(l_f)) = (objective, args.fixed_budget) {
        // Second stage: anchor the chosen local map on keyframes it left
        // out, standing in for a device's copy of the global map.
        let chosen: BTreeSet<KeyframeId> = result.chosen.iter().copied().collect();
        let pool: BTreeSet<KeyframeId> = candidates.difference(&chosen).copied().collect();
        let fixed = select_fixed_keyframes(&graph, &chosen, k, &pool, l_f)?;
        report["fixed_chosen"] = serde_json::json!(fixed.chosen);
        report["combined_uncertainty"] = json_uncertainty(fixed.uncertainty);
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report is valid JSON")
    );
    Ok(ExitCode::SUCCESS)
}

fn suffixed(path: &Path, name: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    path.with_file_name(format!("{stem}-{name}{ext}"))
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode, Error> {
    let config = SimConfig::load(&args.config)?;
    let records = parse_stream(BufReader::new(open(&args.stream)?))?;
    let trace = load_trace(&args.trace)?;
    let fmt_mean = |m: Option<f64>| m.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    let one = |strategy: Option<&str>, out: &Path| -> Result<(), Error> {
        let mut cfg = config.clone();
        if let Some(name) = strategy {
            cfg.strategy = name.to_string();
        }
        let report = adaptslam::sim::run(&cfg, &records, &trace)?;
        fs::write(out, report.to_csv()).map_err(|e| Error::in_file(e, out))?;
        println!(
            "strategy={} slots={} uplinked={} mean_local={} mean_global={} out={}",
            report.strategy,
            report.records.len(),
            report.total_uplinked(),
            fmt_mean(report.mean_local_uncertainty()),
            fmt_mean(report.mean_global_uncertainty()),
            out.display()
        );
        Ok(())
    };
    if args.strategy.is_empty() {
        one(None, &args.out)?;
    } else {
        for name in &args.strategy {
            one(Some(name), &suffixed(&args.out, name))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Connected random graph: a chain plus bounded extra edges.
fn random_connected(
    rng: &mut ChaCha8Rng,
    n: usize,
    extra_p: f64,
    lo: f64,
    hi: f64,
    max_extra: usize,
) -> PoseGraph {
    let mut g = PoseGraph::new();
    for id in 1..=n as u64 {
        g.add_keyframe(id).unwrap();
    }
    for id in 1..n as u64 {
        g.add_edge(id, id + 1, EdgeCategory::Vis, rng.gen_range(lo..=hi))
            .unwrap();
    }
    let mut extras = 0;
    for a in 1..=n as u64 {
        for b in a + 2..=n as u64 {
            if extras < max_extra && rng.gen_bool(extra_p) {
                g.add_edge(a, b, EdgeCategory::Vis, rng.gen_range(lo..=hi))
                    .unwrap();
                extras += 1;
            }
        }
    }
    g
}

struct PropertyFailure {
    property: &'static str,
    detail: String,
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, Error> {
    let n = args.instances;
    let mut failures: Vec<PropertyFailure> = Vec::new();
    let pass = |name: &'static str, count: usize, detail: String| {
        println!("ok {name} ({count} instances, {detail})");
    };

    // Reduced-Laplacian determinant vs enumerated spanning-tree weight.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0xA1);
        let mut worst = 0.0f64;
        let mut bad = 0usize;
        for _ in 0..n {
            let nodes = rng.gen_range(3..=8usize);
            let g = random_connected(&mut rng, nodes, 0.4, 1.0, 500.0, 9);
            let count = spanning_tree_weight(&g).unwrap();
            let all: BTreeSet<KeyframeId> = g.nodes().collect();
            let u = global_uncertainty(&g, &all).unwrap();
            let rel = ((-u.value()).exp() - count).abs() / count;
            worst = worst.max(rel);
            if !(rel <= 1e-9) {
                bad += 1;
            }
        }
        if bad > 0 {
            failures.push(PropertyFailure {
                property: "matrix-tree",
                detail: format!("{bad}/{n} graphs disagree, worst rel err {worst:.2e}"),
            });
        } else {
            pass("matrix-tree", n, format!("worst rel err {worst:.2e}"));
        }
    }

    // Incremental candidate scoring vs scratch factorization.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0xA2);
        let mut worst = 0.0f64;
        let mut bad = 0usize;
        for _ in 0..n {
            let seed_n = rng.gen_range(3..=30usize);
            let total = seed_n + rng.gen_range(2..=6usize);
            let g = random_connected(&mut rng, total, 0.15, 1.0, 100.0, 40);
            let seed: BTreeSet<KeyframeId> = (1..=seed_n as u64).collect();
            let candidate = rng.gen_range(seed_n as u64 + 1..=total as u64);
            let state = ReuseState::for_global(&g, &seed).unwrap();
            let delta = state.delta_for(&g, candidate);
            let incremental = state.candidate_uncertainty(&delta).unwrap();
            let mut union = seed.clone();
            union.insert(candidate);
            let scratch = global_uncertainty(&g, &union).unwrap();
            if incremental.is_singular() != scratch.is_singular() {
                bad += 1;
            } else if !scratch.is_singular() {
                let rel =
                    (incremental.value() - scratch.value()).abs() / scratch.value().abs().max(1.0);
                worst = worst.max(rel);
                if !(rel <= 1e-7) {
                    bad += 1;
                }
            }
        }
        if bad > 0 {
            failures.push(PropertyFailure {
                property: "reuse-vs-scratch",
                detail: format!("{bad}/{n} instances disagree, worst rel err {worst:.2e}"),
            });
        } else {
            pass("reuse-vs-scratch", n, format!("worst rel err {worst:.2e}"));
        }
    }

    // The top-h greedy may never beat exhaustive search.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0xA3);
        let mut bad = 0usize;
        let mut worst_gap = 0.0f64;
        for _ in 0..n {
            let pool_n = rng.gen_range(5..=9usize);
            let base_n = rng.gen_range(2..=3usize);
            let g = random_connected(&mut rng, pool_n + base_n, 0.3, 1.0, 30.0, 25);
            let existing: BTreeSet<KeyframeId> = (1..=base_n as u64).collect();
            let pool: BTreeSet<KeyframeId> =
                (base_n as u64 + 1..=(pool_n + base_n) as u64).collect();
            let budget = rng.gen_range(1..=4usize);
            let mut strategy = make_strategy("adaptslam", 0).unwrap();
            let task = SelectionTask {
                graph: &g,
                candidates: &pool,
                existing: &existing,
                budget,
                objective: Objective::Global,
                tuning: TopHConfig::default(),
            };
            let greedy = strategy.select(&task).unwrap();
            let brute =
                brute_force_select(&g, &pool, &existing, budget, BruteForceMode::Global).unwrap();
            let (gv, bv) = (greedy.uncertainty.value(), brute.uncertainty.value());
            if gv < bv - 1e-9 {
                bad += 1;
            } else if gv.is_finite() && bv.is_finite() {
                worst_gap = worst_gap.max(gv - bv);
            }
        }
        if bad > 0 {
            failures.push(PropertyFailure {
                property: "greedy-never-beats-bruteforce",
                detail: format!("{bad}/{n} impossible wins"),
            });
        } else {
            pass(
                "greedy-never-beats-bruteforce",
                n,
                format!("worst gap {worst_gap:.4}"),
            );
        }
    }

    // Fixed-anchor greedy earns at least (1 - 1/e) of the optimum.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0xA4);
        let factor = 1.0 - 1.0 / std::f64::consts::E;
        let mut bad = 0usize;
        for _ in 0..n {
            let loc_n = rng.gen_range(2..=4usize);
            let total = loc_n + 1 + rng.gen_range(3..=7usize);
            let g = random_connected(&mut rng, total, 0.35, 1.0, 20.0, 30);
            let k = total as u64;
            let k_loc: BTreeSet<KeyframeId> = (k - loc_n as u64..k).collect();
            let pool: BTreeSet<KeyframeId> = (1..k - loc_n as u64).collect();
            let l_f = rng.gen_range(1..=pool.len().min(4));
            let f_of = |fixed: &BTreeSet<KeyframeId>| -> f64 {
                -local_uncertainty(&g, &k_loc, fixed, k).unwrap().value()
            };
            let greedy = select_fixed_keyframes(&g, &k_loc, k, &pool, l_f).unwrap();
            let f_greedy = -greedy.uncertainty.value();
            let pool_vec: Vec<KeyframeId> = pool.iter().copied().collect();
            let mut f_opt = f_of(&BTreeSet::new());
            for mask in 0u32..1 << pool_vec.len() {
                if (mask.count_ones() as usize) > l_f {
                    continue;
                }
                let subset: BTreeSet<KeyframeId> = pool_vec
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, id)| *id)
                    .collect();
                f_opt = f_opt.max(f_of(&subset));
            }
            if f_greedy < factor * f_opt - 1e-9 {
                bad += 1;
            }
        }
        if bad > 0 {
            failures.push(PropertyFailure {
                property: "fixed-greedy-bound",
                detail: format!("{bad}/{n} instances below (1 - 1/e) of optimal"),
            });
        } else {
            pass("fixed-greedy-bound", n, "all above (1 - 1/e)".to_string());
        }
    }

    // Closed-form submodularity-ratio bound is below the measured ratio.
    {
        let count = (n / 2).max(10);
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0xA5);
        let mut bad = 0usize;
        let mut min_margin = f64::INFINITY;
        for _ in 0..count {
            let base_n = rng.gen_range(55..=80usize);
            let total = base_n + 2;
            let mut g = PoseGraph::new();
            for id in 1..=total as u64 {
                g.add_keyframe(id).unwrap();
            }
            for a in 1..=total as u64 {
                for b in a + 1..=total as u64 {
                    g.add_edge(a, b, EdgeCategory::Vis, rng.gen_range(1.2..=1.9))
                        .unwrap();
                }
            }
            let base: BTreeSet<KeyframeId> = (1..=base_n as u64).collect();
            let add: BTreeSet<KeyframeId> = (base_n as u64 + 1..=total as u64).collect();
            let bound = match ratio_floor(&g, &base, &add).unwrap() {
                RatioFloor::Value(b) => b,
                RatioFloor::Vacuous(_) => continue,
            };
            let objective = |s: &BTreeSet<KeyframeId>| -> f64 {
                let full: BTreeSet<KeyframeId> = base.union(s).copied().collect();
                -global_uncertainty(&g, &full).unwrap().value()
            };
            let gamma = submodularity_ratio(objective, &add, add.len()).unwrap();
            min_margin = min_margin.min(gamma - bound);
            if gamma < bound - 1e-9 {
                bad += 1;
            }
        }
        if bad > 0 {
            failures.push(PropertyFailure {
                property: "ratio-floor",
                detail: format!("{bad}/{count} instances with ratio below the bound"),
            });
        } else {
            pass("ratio-floor", count, format!("min margin {min_margin:.3}"));
        }
    }

    if let Some(property) = args.inject_fault {
        failures.push(PropertyFailure {
            property: match property.as_str() {
                "matrix-tree" => "matrix-tree",
                "reuse-vs-scratch" => "reuse-vs-scratch",
                "greedy-never-beats-bruteforce" => "greedy-never-beats-bruteforce",
                "fixed-greedy-bound" => "fixed-greedy-bound",
                _ => "ratio-floor",
            },
            detail: "injected fault (test hook)".to_string(),
        });
    }

    if failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        let list: Vec<serde_json::Value> = failures
            .iter()
            .map(|f| serde_json::json!({"property": f.property, "detail": f.detail}))
            .collect();
        println!(
            "{}",
            serde_json::to_string_pretty(&serde_json::json!({ "failures": list }))
                .expect("failure list is valid JSON")
        );
        Ok(ExitCode::from(1))
    }
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode, Error> {
    if args.dim == 0 || args.candidates == 0 || args.repeats == 0 {
        return Err(Error::Config(
            "dim, candidates, and repeats must all be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1003));
    let tracked = args.dim as u64 + 1;
    let mut g = PoseGraph::new();
    for id in 1..=tracked {
        g.add_keyframe(id).unwrap();
    }
    for id in 1..tracked {
        g.add_edge(id, id + 1, EdgeCategory::Vis, rng.gen_range(1.0..=50.0))
            .unwrap();
    }
    let candidates: Vec<KeyframeId> = (tracked + 1..=tracked + args.candidates as u64).collect();
    let lo = 2.min(tracked as usize);
    let hi = (tracked as usize).min(8);
    for &c in &candidates {
        g.add_keyframe(c).unwrap();
        let nnz = rng.gen_range(lo..=hi);
        let mut picked = BTreeSet::new();
        while picked.len() < nnz {
            picked.insert(rng.gen_range(1..=tracked));
        }
        for j in picked {
            g.add_edge(j, c, EdgeCategory::Vis, rng.gen_range(1.0..=50.0))
                .unwrap();
        }
    }
    let seed: BTreeSet<KeyframeId> = (1..=tracked).collect();
    let state = ReuseState::for_global(&g, &seed)?;

    let mut reuse_medians = Vec::new();
    let mut scratch_medians = Vec::new();
    let mut speedups = Vec::new();
    for _ in 0..args.repeats {
        let t0 = Instant::now();
        let mut acc = 0.0;
        for &c in &candidates {
            let delta = state.delta_for(&g, c);
            acc += state.candidate_uncertainty(&delta)?.value();
        }
        let reuse_time = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let mut acc2 = 0.0;
        for &c in &candidates {
            let mut union = seed.clone();
            union.insert(c);
            acc2 += global_uncertainty(&g, &union)?.value();
        }
        let scratch_time = t1.elapsed().as_secs_f64();
        if (acc - acc2).abs() > 1e-6 * acc2.abs().max(1.0) {
            return Err(Error::Config(format!(
                "benchmark paths disagree: {acc} vs {acc2}"
            )));
        }
        reuse_medians.push(reuse_time / args.candidates as f64 * 1e6);
        scratch_medians.push(scratch_time / args.candidates as f64 * 1e6);
        speedups.push(scratch_time / reuse_time);
    }
    reuse_medians.sort_by(f64::total_cmp);
    scratch_medians.sort_by(f64::total_cmp);
    speedups.sort_by(f64::total_cmp);
    let median = |v: &[f64]| v[v.len() / 2];
    println!(
        "dim={} candidates={} repeats={}",
        args.dim, args.candidates, args.repeats
    );
    println!("reuse:   median {:.2} us/candidate", median(&reuse_medians));
    println!(
        "scratch: median {:.2} us/candidate",
        median(&scratch_medians)
    );
    println!("speedup: {:.1}x", median(&speedups));
    if args.dim == 25 && args.candidates == 500 && median(&speedups) < 3.0 {
        eprintln!(
            "error: speedup {:.1}x below the 3x floor at dim 25 with 500 candidates",
            median(&speedups)
        );
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}
