//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails. Runs sequentially so the timing
//! comparisons are not disturbed by other tests.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use nbb_core::dataset::Dataset;
use nbb_core::frame::{align_frame, smooth_frame, FrameOptions};
use nbb_core::inference::{coverage_run, evaluate_coverage, CoverageConfig, Method};
use nbb_core::kde::{select_bandwidth, KdeModel};
use nbb_core::nbb::{build_bundle, construct, ConstructionMode};
use nbb_core::ridge::{estimate_ridge, newton_refine, ridge_residual, scms_project, NewtonFrame, ScmsSettings};
use nbb_core::stats::ks_two_sample;
use nbb_core::synthetic::{generate, SyntheticModel};
use nbb_core::RandomSource;
use rand::Rng;
use rand_distr::StandardNormal;
use tempfile::TempDir;

type Check = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn circle(n: usize, seed: u64) -> Dataset<f64> {
    generate(&SyntheticModel::circle(0.2).unwrap(), n, RandomSource::new(seed)).unwrap()
}

fn random_frame(n: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q().columns(0, c).into_owned()
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

fn angle(v: &DVector<f64>) -> f64 {
    v[1].atan2(v[0])
}

fn derivative_check() -> Outcome {
    let start = Instant::now();
    let data = circle(128, 1);
    let h = select_bandwidth(&data, 2.0).unwrap();
    let model = KdeModel::new(data, h).unwrap();
    let mut rng = RandomSource::new(101).rng();
    let step = 1e-4 * h;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = DVector::from_fn(2, |_, _| rng.random_range(-1.3..1.3));
        let e = model.eval(&x);
        let mut grad = DVector::zeros(2);
        let mut hess = DMatrix::zeros(2, 2);
        for a in 0..2 {
            let mut d = DVector::zeros(2);
            d[a] = step;
            grad[a] = (model.log_density(&(&x + &d)) - model.log_density(&(&x - &d))) / (2.0 * step);
            let diff = (model.eval(&(&x + &d)).gradient - model.eval(&(&x - &d)).gradient) / (2.0 * step);
            hess.set_column(a, &diff);
        }
        worst = worst
            .max((&grad - &e.gradient).norm() / e.gradient.norm())
            .max((&hess - &e.hessian).norm() / e.hessian.norm());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-5 && secs < 1.0,
        format!("max relative error {worst:.2e} (< 1e-5), {secs:.3} s (< 1 s)"),
    )
}

fn ridge_membership() -> Outcome {
    // alpha = 1.5: see the README (the population ridge at the default
    // oversmoothing sits about 0.11 inside the unit circle)
    let seeds = 20;
    let mut worst_fraction: f64 = 1.0;
    let mut total_dev = 0.0;
    let mut default_dev = 0.0;
    let mut slowest: f64 = 0.0;
    for seed in 0..seeds {
        let data = circle(128, 1000 + seed);
        let start = Instant::now();
        let h = select_bandwidth(&data, 1.5).unwrap();
        let model = KdeModel::new(data.clone(), h).unwrap();
        let ridge = estimate_ridge(&data, &model, &ScmsSettings::new(1)).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let members = ridge
            .iter()
            .filter(|r| r.converged() && r.eigenvalues[0] < 0.0 && ridge_residual(&model, &r.position, 1) < 0.05)
            .count();
        worst_fraction = worst_fraction.min(members as f64 / 128.0);
        total_dev += ridge.iter().map(|r| (r.position.norm() - 1.0).abs()).sum::<f64>() / 128.0;

        let h2 = select_bandwidth(&data, 2.0).unwrap();
        let model2 = KdeModel::new(data.clone(), h2).unwrap();
        let ridge2 = estimate_ridge(&data, &model2, &ScmsSettings::new(1)).unwrap();
        default_dev += ridge2.iter().map(|r| (r.position.norm() - 1.0).abs()).sum::<f64>() / 128.0;
    }
    let dev = total_dev / seeds as f64;
    outcome(
        worst_fraction >= 0.95 && dev < 0.1 && slowest < 30.0,
        format!(
            "members >= {:.1}% per sample (>= 95%), mean |r - 1| = {dev:.4} at alpha 1.5 over {seeds} samples (< 0.1; {:.4} at alpha 2), slowest {slowest:.2} s (< 30 s)",
            100.0 * worst_fraction,
            default_dev / seeds as f64
        ),
    )
}

fn newton_quadratic() -> Outcome {
    let data = circle(128, 7);
    let h = select_bandwidth(&data, 2.0).unwrap();
    let model = KdeModel::new(data.clone(), h).unwrap();
    let mut min_ratio = f64::INFINITY;
    let mut max_gap: f64 = 0.0;
    let mut ok = true;
    for i in 0..10 {
        let start = scms_project(&data.row(i), &model, &ScmsSettings::new(1).with_max_iterations(2)).unwrap();
        let out = newton_refine(&start.position, &model, 1, NewtonFrame::Corrected).unwrap();
        let g = model.eval(&out.point.position).gradient.norm();
        let logs: Vec<f64> = out.residuals.iter().filter(|&&r| r > 1e-13 * g).map(|r| r.log10()).collect();
        if logs.len() < 3 || !out.point.converged() {
            ok = false;
            continue;
        }
        let k = logs.len();
        min_ratio = min_ratio.min((logs[k - 2] - logs[k - 1]) / (logs[k - 3] - logs[k - 2]));
        let oracle = scms_project(&out.point.position, &model, &ScmsSettings::new(1).with_theta0(1e-10)).unwrap();
        max_gap = max_gap.max((&oracle.position - &out.point.position).norm() / h);
    }
    outcome(
        ok && min_ratio >= 1.7 && max_gap < 1e-6,
        format!("min gain ratio {min_ratio:.2} (>= 1.7), max limit gap {max_gap:.2e} h (< 1e-6 h), 10 points"),
    )
}

fn frame_optimality() -> Outcome {
    let mut rng = RandomSource::new(404).rng();
    let mut beaten = 0;
    for _ in 0..50 {
        let e_j = random_frame(5, 2, &mut rng);
        let e_i = random_frame(5, 2, &mut rng);
        let best = (align_frame(&e_j, &e_i).unwrap().frame - &e_i).norm();
        let wins = (0..100).all(|_| {
            let q = random_frame(2, 2, &mut rng);
            best <= (&e_j * q - &e_i).norm()
        });
        beaten += usize::from(wins);
    }
    let data = circle(128, 7);
    let h = select_bandwidth(&data, 2.0).unwrap();
    let model = KdeModel::new(data.clone(), h).unwrap();
    let mut ridge: Vec<_> = estimate_ridge(&data, &model, &ScmsSettings::new(1))
        .unwrap()
        .into_iter()
        .filter(|r| r.converged())
        .collect();
    for r in &mut ridge {
        if rng.random_bool(0.5) {
            r.frame_vc = -&r.frame_vc;
        }
    }
    let field = smooth_frame(&ridge, FrameOptions::default()).unwrap();
    let mut edges = 0;
    let mut positive = 0;
    for (a, reference) in field.references.iter().enumerate() {
        if let Some(b) = reference {
            edges += 1;
            positive += usize::from((field.frames[a].transpose() * &field.frames[*b])[(0, 0)] > 0.0);
        }
    }
    outcome(
        beaten == 50 && positive == edges,
        format!("Procrustes optimal in {beaten}/50 pairs x 100 rotations; {positive}/{edges} traversal neighbors with positive inner product"),
    )
}

fn construction_contracts() -> Outcome {
    let data = circle(128, 7);
    let bundle = build_bundle(&data, 1, 2.0, 16).unwrap();
    let out = construct(&bundle, ConstructionMode::Framed).unwrap();
    let k = bundle.k();
    let count_ok = out.len() == bundle.retained_count() * k;
    let mut worst_tangent: f64 = 0.0;
    let mut multiset_ok = true;
    for a in 0..bundle.retained_count() {
        let rp = bundle.ridge_point(a);
        let vc = &rp.frame_vc;
        let mut used = Vec::with_capacity(k);
        for j in 0..k {
            let offset = out.points.row(a * k + j).transpose() - &rp.position;
            worst_tangent = worst_tangent.max((&offset - vc * (vc.transpose() * &offset)).norm());
            used.push(bundle.normal_coords[(bundle.retained.iter().position(|&i| i == out.donor_index[a * k + j]).unwrap(), 0)].to_bits());
        }
        let mut expected: Vec<u64> = bundle.knn[a].iter().map(|&l| bundle.normal_coords[(l, 0)].to_bits()).collect();
        let mut from_rows: Vec<u64> = (0..k)
            .map(|j| {
                let coord = (bundle.frames.frames[a].transpose() * (out.points.row(a * k + j).transpose() - &rp.position))[0];
                // recovered coordinate must match the donated row to roundoff
                let donated = f64::from_bits(used[j]);
                if (coord - donated).abs() > 1e-12 {
                    multiset_ok = false;
                }
                used[j]
            })
            .collect();
        expected.sort_unstable();
        from_rows.sort_unstable();
        multiset_ok &= expected == from_rows;
    }
    outcome(
        count_ok && worst_tangent < 1e-8 && multiset_ok,
        format!(
            "{} rows = {} retained x {k}; max tangential residual {worst_tangent:.2e} (< 1e-8); donated multisets {}",
            out.len(),
            bundle.retained_count(),
            if multiset_ok { "exact" } else { "differ" }
        ),
    )
}

fn fiber_consistency() -> Outcome {
    let start = Instant::now();
    let data = circle(256, 7);
    let bundle = build_bundle(&data, 1, 2.0, 16).unwrap();
    let out = construct(&bundle, ConstructionMode::Framed).unwrap();
    let reference = circle(4096, 99);
    let ref_angles: Vec<(f64, f64)> = (0..reference.len())
        .map(|i| {
            let x = reference.row(i);
            (angle(&x), x.norm() - 1.0)
        })
        .collect();
    let k = bundle.k();
    let mut passed = 0;
    for a in 0..bundle.retained_count() {
        let centre = angle(&bundle.ridge_point(a).position);
        let rel: Vec<f64> = bundle.knn[a].iter().map(|&l| wrap(angle(&bundle.ridge_point(l).position) - centre)).collect();
        let lo = rel.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pool: Vec<f64> = ref_angles
            .iter()
            .filter(|(t, _)| (lo..=hi).contains(&wrap(t - centre)))
            .map(|&(_, r)| r)
            .collect();
        let constructed: Vec<f64> = (0..k).map(|j| out.points.row(a * k + j).transpose().norm() - 1.0).collect();
        if pool.len() >= 2 && ks_two_sample(&constructed, &pool).1 >= 0.01 {
            passed += 1;
        }
    }
    let fibers = bundle.retained_count();
    let frac = passed as f64 / fibers as f64;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        frac >= 0.95 && secs < 120.0,
        format!("KS at level 0.01 passed in {passed}/{fibers} fibers ({:.1}%, >= 95%), {secs:.1} s (< 120 s)", 100.0 * frac),
    )
}

fn coverage_reproduction() -> Outcome {
    let start = Instant::now();
    let model = SyntheticModel::circle(0.2).unwrap();
    let cfg = CoverageConfig::default();
    let run = |method, n| evaluate_coverage::<f64>(&model, method, n, 50, 0.9, 200, RandomSource::new(2024), &cfg).unwrap();
    let nbb64 = run(Method::Nbb, 64);
    let nbb128 = run(Method::Nbb, 128);
    let boot64 = run(Method::Bootstrap, 64);
    let secs = start.elapsed().as_secs_f64();
    let failed = nbb64.failed_runs + nbb128.failed_runs + boot64.failed_runs;
    outcome(
        nbb64.mean_coverage >= 0.85 && nbb128.mean_coverage >= 0.85 && boot64.mean_coverage < nbb64.mean_coverage && secs < 1200.0,
        format!(
            "NBB coverage {:.3} (N=64), {:.3} (N=128) (>= 0.85); bootstrap {:.3} at N=64 (< NBB); {failed} failed runs; {secs:.0} s (< 1200 s)",
            nbb64.mean_coverage, nbb128.mean_coverage, boot64.mean_coverage
        ),
    )
}

fn timing_ordering() -> Outcome {
    let model = SyntheticModel::circle(0.2).unwrap();
    let cfg = CoverageConfig::default();
    let runs = 5;
    let mut nbb = 0.0;
    let mut boot = 0.0;
    // interleaved so drift in machine load affects both methods alike
    for r in 0..runs {
        let rng = RandomSource::new(77).substream(r);
        nbb += coverage_run::<f64>(&model, Method::Nbb, 128, 0.9, 200, &cfg, rng).unwrap().seconds;
        boot += coverage_run::<f64>(&model, Method::Bootstrap, 128, 0.9, 200, &cfg, rng).unwrap().seconds;
    }
    let (nbb, boot) = (nbb / runs as f64, boot / runs as f64);
    outcome(
        boot > nbb,
        format!("mean seconds at N=128, B=200 over {runs} samples: bootstrap {boot:.3} > NBB {nbb:.3} (ratio {:.2})", boot / nbb),
    )
}

fn nbb_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nbb"))
        .args(args)
        .env("NBB_LOG", "error")
        .output()
        .expect("spawn nbb")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

fn augmentation_path() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let wheel = tmp.path().join("wheel");
    let g = nbb_cli(&["gen", "--kind", "wheel", "--n", "32", "--l", "8", "--sigma", "0.2", "--seed", "5", "-o", s(&wheel)]);
    let data = wheel.join("data.csv");
    let rows = if g.status.success() { data_rows(&data) } else { Vec::new() };
    let shape_ok = rows.len() == 32 && rows.iter().all(|r| r.len() == 17);
    let aug = tmp.path().join("aug");
    let a = nbb_cli(&["augment", "-i", s(&data), "--k", "16", "-o", s(&aug)]);
    let out = if a.status.success() { data_rows(&aug.join("augmented.csv")) } else { Vec::new() };
    let labels_ok = out.len() == 544
        && out[..32].iter().all(|r| r.last().map(String::as_str) == Some("original"))
        && out[32..].iter().all(|r| r.last().map(String::as_str) == Some("nbb"));
    let d = nbb_cli(&["dim", "-i", s(&data), "--alpha", "1", "-o", s(&tmp.path().join("dim"))]);
    let dim = String::from_utf8_lossy(&d.stdout).trim().to_string();
    outcome(
        shape_ok && labels_ok && dim == "1",
        format!(
            "wheel sample {}x{}; augment emitted {} rows (544) with {} labels; eigengap dimension {dim} (1)",
            rows.len(),
            rows.first().map_or(0, Vec::len),
            out.len(),
            if labels_ok { "valid" } else { "invalid" }
        ),
    )
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("input");
    nbb_cli(&["gen", "--kind", "circle", "--n", "96", "--seed", "3", "-o", s(&input)]);
    let wheel = tmp.path().join("wheel");
    nbb_cli(&["gen", "--kind", "wheel", "--n", "32", "--seed", "3", "-o", s(&wheel)]);
    let data = input.join("data.csv");
    let wheel_data = wheel.join("data.csv");
    let mut failures = Vec::new();
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("gen", vec!["gen", "--kind", "wheel", "--n", "32", "--seed", "11"]),
        ("bandwidth", vec!["bandwidth", "-i", s(&data)]),
        ("ridge", vec!["ridge", "-i", s(&data), "--newton", "corrected"]),
        ("nbb", vec!["nbb", "-i", s(&data), "--k", "12"]),
        ("confset", vec!["confset", "-i", s(&data), "--k", "12", "--seed", "8"]),
        ("confset bootstrap", vec!["confset", "-i", s(&data), "--method", "bootstrap", "--b", "60", "--seed", "8"]),
        (
            "coverage",
            vec!["coverage", "--ns", "48", "--runs", "3", "--b", "60", "--seed", "2", "--no-timing"],
        ),
        ("augment", vec!["augment", "-i", s(&wheel_data), "--k", "16"]),
        ("dim", vec!["dim", "-i", s(&wheel_data), "--alpha", "1"]),
    ];
    for (name, args) in &commands {
        let mut trees = Vec::new();
        for (run, threads) in ["1", "1", "4"].iter().enumerate() {
            let out = tmp.path().join(format!("{name}-{run}"));
            let mut full = args.clone();
            full.extend(["--threads", threads, "-o", s(&out)]);
            let res = nbb_cli(&full);
            if !res.status.success() {
                failures.push(format!("{name} failed: {}", String::from_utf8_lossy(&res.stderr).trim()));
            }
            trees.push(tree(&out));
        }
        if trees[0].is_empty() || trees[0] != trees[1] || trees[0] != trees[2] {
            failures.push(format!("{name} differs"));
        }
    }
    let pass = failures.is_empty();
    outcome(
        pass,
        if pass {
            format!("{} commands byte-identical across reruns and --threads 1/4", commands.len())
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let criteria: [Check; 10] = [
        ("derivative correctness", derivative_check),
        ("ridge membership", ridge_membership),
        ("Newton quadratic convergence", newton_quadratic),
        ("frame optimality", frame_optimality),
        ("NBB construction contracts", construction_contracts),
        ("fiber consistency", fiber_consistency),
        ("coverage reproduction", coverage_reproduction),
        ("timing ordering", timing_ordering),
        ("augmentation data path", augmentation_path),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    let mut err = std::io::stderr();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        writeln!(err, "criterion {:>2} {}: {}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, name, o.detail).unwrap();
    }
    writeln!(err, "acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len()).unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}
