//! Helpers shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use dcqr::data::{Dataset, QuantileGrid};
use dcqr::first_stage::cqr_objective;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A small penalized composite quantile problem.
pub struct Instance {
    pub data: Dataset,
    pub grid: QuantileGrid,
    pub lambda: f64,
}

/// Instance `index` of the oracle family: `p ≤ 3`, `K ≤ 2`, `n ≤ 20`.
pub fn random_instance(index: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + index);
    let n = rng.random_range(6..=20);
    let p = rng.random_range(1..=3);
    let k = rng.random_range(1..=2);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta: Vec<f64> = (0..p).map(|j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) }).collect();
    let y = DVector::from_fn(n, |i, _| {
        let signal: f64 = (0..p).map(|j| x[(i, j)] * beta[j]).sum();
        signal + 0.5 * rng.sample::<f64, _>(StandardNormal)
    });
    let taus = if k == 1 {
        vec![rng.random_range(0.2..0.8)]
    } else {
        let a: f64 = rng.random_range(0.1..0.45);
        vec![a, rng.random_range(0.55..0.9)]
    };
    Instance {
        data: Dataset::new(x, y).unwrap(),
        grid: QuantileGrid::new(taus).unwrap(),
        lambda: rng.random_range(0.01..0.3),
    }
}

fn combinations(m: usize, d: usize, visit: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, m: usize, d: usize, cur: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
        if cur.len() == d {
            visit(cur);
            return;
        }
        for i in start..=(m - (d - cur.len())) {
            cur.push(i);
            rec(i + 1, m, d, cur, visit);
            cur.pop();
        }
    }
    rec(0, m, d, &mut Vec::with_capacity(d), visit);
}

/// Exact minimum of the penalized composite check objective.
///
/// The objective is convex and piecewise linear in `(β, b)`, and the kink
/// hyperplanes `x_iᵀβ + b_k = y_i` and `β_j = 0` span the whole space, so a
/// minimizer sits at a vertex of their arrangement. Every vertex is visited.
pub fn brute_force_minimum(inst: &Instance) -> (f64, DVector<f64>, Vec<f64>) {
    let (n, p) = (inst.data.n(), inst.data.p());
    let k = inst.grid.len();
    let d = p + k;
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n * k + p);
    for i in 0..n {
        for level in 0..k {
            let mut row = vec![0.0; d];
            for j in 0..p {
                row[j] = inst.data.x()[(i, j)];
            }
            row[p + level] = 1.0;
            planes.push((row, inst.data.y()[i]));
        }
    }
    for j in 0..p {
        let mut row = vec![0.0; d];
        row[j] = 1.0;
        planes.push((row, 0.0));
    }
    let mut best = (f64::INFINITY, DVector::zeros(p), vec![0.0; k]);
    combinations(planes.len(), d, &mut |subset| {
        let a = DMatrix::from_fn(d, d, |r, c| planes[subset[r]].0[c]);
        let rhs = DVector::from_fn(d, |r, _| planes[subset[r]].1);
        let lu = a.lu();
        if lu.determinant().abs() < 1e-10 {
            return;
        }
        let Some(z) = lu.solve(&rhs) else { return };
        let beta = DVector::from_fn(p, |j, _| z[j]);
        let b: Vec<f64> = (0..k).map(|l| z[p + l]).collect();
        let value = cqr_objective(&inst.data, inst.grid.taus(), inst.lambda, &beta, &b);
        if value < best.0 {
            best = (value, beta, b);
        }
    });
    best
}

/// Small experiment used by the command-line tests.
pub const CLI_CONFIG: &str = r#"
seed = 5
reps = 4
density = "known"

[design]
n = 120
p = 15
s = 3
noise = { kind = "student_t", df = 3.0 }

[[methods]]
first_stage = "plad"
debias = "cq"

[[methods]]
first_stage = "lasso"
debias = "square"
"#;

pub fn dcqr(bin: &str, args: &[&str]) -> Output {
    Command::new(bin).args(args).env("RUST_LOG", "error").output().expect("binary runs")
}

fn must(bin: &str, args: &[&str]) {
    let out = dcqr(bin, args);
    assert!(out.status.success(), "dcqr {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

/// Runs every subcommand once into `root` with `threads` workers.
pub fn run_every_command(bin: &str, root: &Path, threads: usize) {
    let cfg = root.join("experiment.toml");
    std::fs::write(&cfg, CLI_CONFIG).unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (cfg, t) = (s(&cfg), threads.to_string());
    let dir = |name: &str| s(&root.join(name));
    let data = s(&root.join("sim/data.csv"));
    let estimate = s(&root.join("debias/estimate.json"));
    let known = ["--density", "known", "--noise", "t:3"];
    let common = ["--config", cfg.as_str(), "--seed", "11", "--threads", t.as_str()];
    let with = |extra: &[&str]| -> Vec<String> { common.iter().chain(extra).map(|a| a.to_string()).collect() };
    let run = |args: Vec<String>| must(bin, &args.iter().map(String::as_str).collect::<Vec<_>>());

    run(with(&["--out", &dir("sim"), "simulate"]));
    run(with(&["--out", &dir("fit"), "fit", "--data", &data, "--first-stage", "pcqr", "--k", "3"]));
    run(with(&[&["--out", dir("debias").as_str(), "debias", "--data", &data][..], &known].concat()));
    run(with(&["--out", &dir("ci"), "ci", "--estimate", &estimate]));
    run(with(&["--out", &dir("ci_json"), "--format", "json", "ci", "--estimate", &estimate]));
    run(with(&["--out", &dir("test"), "test", "--estimate", &estimate]));
    for mode in ["multiplier", "simulated"] {
        let out = dir(&format!("boot_{mode}"));
        run(with(&[&["--out", out.as_str(), "boot-test", "--data", &data, "--group", "5,6,7,8", "--mode", mode, "--b", "200"][..], &known].concat()));
    }
    run(with(&["--out", &dir("dnc"), "dnc", "split", "--data", &data, "--m", "2"]));
    let plan = s(&root.join("dnc/plan.json"));
    for l in ["0", "1"] {
        run(with(&[&["--out", dir("dnc").as_str(), "dnc", "work", "--data", &data, "--plan", &plan, "--split", l][..], &known].concat()));
    }
    run(with(&["--out", &dir("agg"), "dnc", "aggregate", "--dir", &dir("dnc")]));
    run(with(&["--out", &dir("coverage"), "coverage"]));
    run(with(&["--out", &dir("histogram"), "histogram", "--coords", "0,5", "--bins", "8"]));
}

/// Relative path to contents, for every file under `root`.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
