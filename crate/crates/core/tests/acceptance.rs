//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero when any fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rlsyn::cli::{cmd_benchmark, BenchmarkArgs, BenchmarkVerdict};
use rlsyn::critic::{CriticNet, DiscriminatorParams};
use rlsyn::datastore::{
    benchmark_schema, fit_normalizer, make_benchmark_dataset, normalize, split,
};
use rlsyn::diffcore::{gradient_check, Graph, ParamSet, Tensor2};
use rlsyn::evalsuite::{
    membership_inference_auc, nearest_distance_rows, nmi, wasserstein_1d, RocCurve,
};
use rlsyn::policy::{sample_latent, GeneratorParams, HeadVars, PolicyNet};
use rlsyn::trainer::{
    clipped_surrogate, generator_loss_graph, normalize_advantages, read_loss_log, train_to_dir,
    PPOConfig, PpoBatch, RunLayout,
};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn check(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
    let data = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
    Tensor2::from_vec(rows, cols, data).unwrap()
}

fn jitter(params: &ParamSet, scale: f64, rng: &mut ChaCha8Rng) -> ParamSet {
    let mut p = params.clone();
    let names: Vec<String> = p.names().map(str::to_string).collect();
    for n in names {
        for v in p.get_mut(&n).unwrap() {
            *v += scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    p
}

// 1. Analytic gradients of log-prob, L_G and L_D against central differences.
fn gradient_correctness() -> Outcome {
    const TOL: f64 = 1e-4;
    let schema = benchmark_schema();
    let mut worst = [0.0f64; 3];
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let depth = 1 + (seed % 2) as usize;
        let net = PolicyNet::new(&schema, 3, 5, depth);
        let gen = GeneratorParams::init(net.clone(), &mut rng).unwrap();
        let z = sample_latent(6, 3, &mut rng);
        let s = gen.sample(&z, &mut rng).unwrap();
        // Move away from the sampling parameters so ratios differ from 1.
        let params = jitter(&gen.params, 0.05, &mut rng);

        let lp = gradient_check(
            |g, p| {
                let zv = g.constant(s.z.clone());
                let h = net.heads(g, p, zv)?;
                let lp = net.log_prob_graph(g, &h, &s.u, &s.x_cat)?;
                g.mean(lp)
            },
            &params,
            1e-5,
        )
        .unwrap();

        let rewards: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let raw: Vec<f64> = rewards.iter().zip(&s.v_old).map(|(r, v)| r - v).collect();
        let adv = normalize_advantages(&raw).unwrap();
        let target: Vec<f64> = (0..net.n_cont()).map(|_| rng.random::<f64>()).collect();
        let cfg = PPOConfig {
            clip_epsilon: 0.2,
            entropy_weight: 0.01,
            value_weight: 0.5,
            mean_penalty: 0.3,
            ..PPOConfig::bench_small()
        };
        let batch = PpoBatch {
            sample: &s,
            advantages: &adv,
            rewards: &rewards,
            real_cont_mean: &target,
        };
        let lg = gradient_check(
            |g, p| Ok(generator_loss_graph(g, &net, p, &batch, &cfg)?.total),
            &params,
            1e-5,
        )
        .unwrap();

        let critic = CriticNet::new(schema.width(), 5, depth);
        let d = DiscriminatorParams::init(critic.clone(), &mut rng).unwrap();
        let real = random_tensor(6, schema.width(), &mut rng);
        let fake = s.x.clone();
        let ld = gradient_check(
            |g, p| Ok(critic.loss_graph(g, p, &real, &fake, 5.0)?.total),
            &d.params,
            1e-5,
        )
        .unwrap();

        for (w, r) in worst.iter_mut().zip([&lp, &lg, &ld]) {
            *w = w.max(r.max_rel_error);
        }
    }
    Outcome::check(
        worst.iter().all(|&w| w < TOL),
        format!(
            "max rel error over 20 seeds: log-prob {:.2e}, L_G {:.2e}, L_D {:.2e} (< {TOL:e})",
            worst[0], worst[1], worst[2]
        ),
    )
}

// 2. The squashed-Gaussian density of one feature integrates to 1.
fn density_normalization() -> Outcome {
    // Single continuous column, no binary columns.
    let schema = rlsyn::datastore::FeatureSchema::new(vec![
        rlsyn::datastore::ColumnSpec::continuous("x"),
    ])
    .unwrap();
    let net = PolicyNet::new(&schema, 1, 1, 0);
    let mut worst: f64 = 0.0;
    for mu in [-1.0, 0.0, 1.0] {
        for s in [-2.0, 0.0, 1.0] {
            let sigma = f64::exp(s);
            // Composite Simpson over u = atanh(2x - 1); dx = (1 - tanh(u)^2) / 2 du.
            let (lo, hi) = (mu - 12.0 * sigma, mu + 12.0 * sigma);
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            let u: Vec<f64> = (0..=n).map(|i| lo + h * i as f64).collect();
            let mut g = Graph::new();
            let rows = u.len();
            let heads = HeadVars {
                mu: g.constant(Tensor2::from_vec(rows, 1, vec![mu; rows]).unwrap()),
                log_scale: g.constant(Tensor2::from_vec(rows, 1, vec![s; rows]).unwrap()),
                logits: g.constant(Tensor2::zeros(rows, 0)),
                value: g.constant(Tensor2::zeros(rows, 1)),
            };
            let ut = Tensor2::from_vec(rows, 1, u.clone()).unwrap();
            let lp = net
                .log_prob_graph(&mut g, &heads, &ut, &Tensor2::zeros(rows, 0))
                .unwrap();
            let logp = g.value(lp).data().to_vec();
            let mut total = 0.0;
            for (i, (&ui, &l)) in u.iter().zip(&logp).enumerate() {
                let t = ui.tanh();
                let f = l.exp() * (1.0 - t * t) / 2.0;
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                total += w * f;
            }
            total *= h / 3.0;
            worst = worst.max((total - 1.0).abs());
        }
    }
    Outcome::check(
        worst <= 1e-3,
        format!("max |integral - 1| over 9 (mu, s) pairs: {worst:.2e} (<= 1e-3)"),
    )
}

// 3. Ratio at the sampling parameters, clip pessimism, advantage normalization.
fn ppo_mechanics() -> Outcome {
    let (raw, _) = make_benchmark_dataset(200, 5).unwrap();
    let schema = fit_normalizer(&raw).unwrap();
    let cfg = PPOConfig::bench_small();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = PolicyNet::new(&schema, cfg.noise_dim, cfg.gen_width, cfg.gen_depth);
    let gen = GeneratorParams::init(net.clone(), &mut rng).unwrap();
    let z = sample_latent(256, cfg.noise_dim, &mut rng);
    let s = gen.sample(&z, &mut rng).unwrap();
    let rewards: Vec<f64> = (0..256).map(|_| rng.random::<f64>()).collect();
    let raw_adv: Vec<f64> = rewards.iter().zip(&s.v_old).map(|(r, v)| r - v).collect();
    let adv = normalize_advantages(&raw_adv).unwrap();
    let target = vec![0.5; net.n_cont()];
    let batch = PpoBatch {
        sample: &s,
        advantages: &adv,
        rewards: &rewards,
        real_cont_mean: &target,
    };
    let mut g = Graph::new();
    let loss = generator_loss_graph(&mut g, &net, &gen.params, &batch, &cfg).unwrap();
    let ratio_exact = g.value(loss.ratio).data().iter().all(|&r| r == 1.0);

    let mut violations = 0;
    for _ in 0..10_000 {
        let rho = rng.random_range(0.0..3.0);
        let a = rng.random_range(-3.0..3.0);
        let eps = rng.random_range(0.01..0.5);
        let l = clipped_surrogate(rho, a, eps);
        let clipped = f64::clamp(rho, 1.0 - eps, 1.0 + eps) * a;
        if !(l <= rho * a && l <= clipped) {
            violations += 1;
        }
    }

    // With the fixed 1e-8 offset the output std is exactly sigma / (sigma + 1e-8),
    // so the 1e-6 bound applies to batches whose std is at least 1e-2.
    let mut worst_mean: f64 = 0.0;
    let mut worst_std: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    for trial in 0..100 {
        let mut r = ChaCha8Rng::seed_from_u64(trial);
        let n = r.random_range(16..512);
        let exponent = r.random_range(-3..4);
        let scale = f64::powi(10.0, exponent);
        let x: Vec<f64> = (0..n).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect();
        let xm = x.iter().sum::<f64>() / n as f64;
        let sigma = (x.iter().map(|v| (v - xm) * (v - xm)).sum::<f64>() / n as f64).sqrt();
        let a = normalize_advantages(&x).unwrap();
        let m = a.iter().sum::<f64>() / n as f64;
        let sd = (a.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
        worst_mean = worst_mean.max(m.abs());
        worst_identity = worst_identity.max((sd - sigma / (sigma + 1e-8)).abs());
        if exponent >= -1 {
            worst_std = worst_std.max((sd - 1.0).abs());
        }
    }
    Outcome::check(
        ratio_exact
            && violations == 0
            && worst_mean < 1e-10
            && worst_std < 1e-6
            && worst_identity < 1e-12,
        format!(
            "first-epoch ratio exactly 1: {ratio_exact}; pessimism violations {violations}/10000; \
             advantage |mean| {worst_mean:.1e}, |std - 1| {worst_std:.1e} (batch std >= 0.1), \
             offset identity {worst_identity:.1e}"
        ),
    )
}

/// Min-cost transport between uniform empirical measures by successive
/// shortest paths on integer masses (`a_i = nb`, `b_j = na`).
fn transport_oracle(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len(), b.len());
    // Nodes: source, a-side, b-side, sink.
    let n = na + nb + 2;
    let (src, snk) = (0, n - 1);
    // Edge k and its residual twin k ^ 1: (from, to, capacity, cost).
    let mut edges: Vec<(usize, usize, i64, f64)> = Vec::new();
    let mut add = |u: usize, v: usize, cap: i64, cost: f64| {
        edges.push((u, v, cap, cost));
        edges.push((v, u, 0, -cost));
    };
    for i in 0..na {
        add(src, 1 + i, nb as i64, 0.0);
        for j in 0..nb {
            add(1 + i, 1 + na + j, i64::MAX / 4, (a[i] - b[j]).abs());
        }
    }
    for j in 0..nb {
        add(1 + na + j, snk, na as i64, 0.0);
    }
    let mut remaining = (na * nb) as i64;
    let mut cost = 0.0;
    while remaining > 0 {
        // Bellman-Ford: residual costs may be negative.
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        dist[src] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for (k, &(u, v, cap, c)) in edges.iter().enumerate() {
                if cap > 0 && dist[u] + c < dist[v] - 1e-15 {
                    dist[v] = dist[u] + c;
                    prev[v] = k;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let mut push = remaining;
        let mut v = snk;
        while v != src {
            let k = prev[v];
            push = push.min(edges[k].2);
            v = edges[k].0;
        }
        let mut v = snk;
        while v != src {
            let k = prev[v];
            edges[k].2 -= push;
            edges[k ^ 1].2 += push;
            cost += push as f64 * edges[k].3;
            v = edges[k].0;
        }
        remaining -= push;
    }
    cost / (na * nb) as f64
}

fn pair_count_auc(members: &[f64], non_members: &[f64]) -> f64 {
    // Members are flagged by smaller distances.
    let mut twice = 0u64;
    for &m in members {
        for &q in non_members {
            twice += if m < q {
                2
            } else if m == q {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * members.len() * non_members.len()) as f64
}

fn plug_in_nmi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let h = |xs: &[usize]| -> f64 {
        let mut vals = xs.to_vec();
        vals.sort_unstable();
        vals.dedup();
        vals.iter()
            .map(|v| {
                let p = xs.iter().filter(|x| *x == v).count() as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let (ha, hb) = (h(a), h(b));
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    let joint: Vec<usize> = a.iter().zip(b).map(|(x, y)| x * 1000 + y).collect();
    let mi = ha + hb - h(&joint);
    (mi / (ha * hb).sqrt()).clamp(0.0, 1.0)
}

// 4. Metric implementations against independent oracles.
fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut w_err: f64 = 0.0;
    for _ in 0..100 {
        let na = rng.random_range(1..=8);
        let nb = rng.random_range(1..=8);
        let a: Vec<f64> = (0..na).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.random::<f64>()).collect();
        w_err = w_err.max((wasserstein_1d(&a, &b).unwrap() - transport_oracle(&a, &b)).abs());
    }

    let mut auc_mismatch = 0;
    for _ in 0..50 {
        // Coarse grid values force ties.
        let m: Vec<f64> = (0..rng.random_range(1..40)).map(|_| rng.random_range(0..6) as f64 / 4.0).collect();
        let q: Vec<f64> = (0..rng.random_range(1..40)).map(|_| rng.random_range(0..6) as f64 / 4.0).collect();
        if RocCurve::from_distances(&m, &q).unwrap().auc != pair_count_auc(&m, &q) {
            auc_mismatch += 1;
        }
    }

    let mut nmi_err: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..300);
        let (ka, kb) = (rng.random_range(1..6), rng.random_range(1..6));
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..ka)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..kb)).collect();
        nmi_err = nmi_err.max((nmi(&a, &b).unwrap() - plug_in_nmi(&a, &b)).abs());
    }

    let q = random_tensor(200, 16, &mut rng);
    let r = random_tensor(200, 16, &mut rng);
    let fast = nearest_distance_rows(&q, &r).unwrap();
    let brute: Vec<f64> = (0..200)
        .map(|i| {
            (0..200)
                .map(|j| {
                    q.row(i)
                        .iter()
                        .zip(r.row(j))
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    let nn_exact = fast == brute;
    Outcome::check(
        w_err <= 1e-9 && auc_mismatch == 0 && nmi_err <= 1e-12 && nn_exact,
        format!(
            "W1 vs transport LP {w_err:.1e}; AUC mismatches {auc_mismatch}/50; \
             NMI vs plug-in {nmi_err:.1e}; nearest distance exact: {nn_exact}"
        ),
    )
}

// 5. Membership attack on copied and on independent synthetic data.
fn mia_sanity() -> Outcome {
    let fraction = PPOConfig::bench_small().split_fraction;
    let (raw, _) = make_benchmark_dataset(2000, 50).unwrap();
    let parts = split(&raw, fraction, 50).unwrap();
    let schema = fit_normalizer(&parts.train).unwrap();
    let train = normalize(&parts.train, &schema).unwrap();
    let test = normalize(&parts.test, &schema).unwrap();
    let copy_auc = membership_inference_auc(&train, &test, &train).unwrap().auc;

    let mut independent = Vec::new();
    for seed in 0..10u64 {
        let (fresh, _) = make_benchmark_dataset(parts.train.rows(), 10_000 + seed).unwrap();
        let syn = normalize(&fresh, &schema).unwrap();
        independent.push(membership_inference_auc(&train, &test, &syn).unwrap().auc);
    }
    let lo = independent.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = independent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Outcome::check(
        copy_auc >= 0.99 && lo >= 0.45 && hi <= 0.55,
        format!("copy AUC {copy_auc:.4} (>= 0.99); independent AUC range [{lo:.4}, {hi:.4}] over 10 seeds"),
    )
}

// 6. End-to-end benchmark thresholds.
fn end_to_end(out: &Path) -> Outcome {
    let verdict = cmd_benchmark(&BenchmarkArgs {
        seed: 0,
        out: out.to_path_buf(),
        config: None,
        iterations: None,
    })
    .unwrap();
    let failed: Vec<String> = verdict
        .failures()
        .map(|c| format!("{} = {:.4} ({})", c.name, c.measured, c.bound))
        .collect();
    let pick = |name: &str| {
        verdict
            .criteria
            .iter()
            .find(|c| c.name == name)
            .map_or(f64::NAN, |c| c.measured)
    };
    let detail = format!(
        "{} iterations; S2R gap {:.4}, R2S gap {:.4}, NMI {:.4}, MIA {:.4}, reward [{:.3}, {:.3}]{}",
        verdict.iterations,
        pick("utility.s2r_gap"),
        pick("utility.r2s_gap"),
        pick("fidelity.nmi"),
        pick("privacy.mia_auc"),
        pick("training.reward_min"),
        pick("training.reward_max"),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failing: {}", failed.join(", "))
        }
    );
    Outcome::check(verdict.passed && verdict.iterations <= 5000, detail)
}

fn tree_files(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out.sort();
    out
}

// 7. Two identical runs give byte-identical artifacts.
fn determinism(root: &Path) -> Outcome {
    let run = |name: &str| {
        let out = root.join(name);
        let v: BenchmarkVerdict = cmd_benchmark(&BenchmarkArgs {
            seed: 7,
            out: out.clone(),
            config: None,
            iterations: Some(120),
        })
        .unwrap();
        (out, v)
    };
    let (a, va) = run("first");
    let (b, vb) = run("second");
    // Manifests record wall-clock times and paths by design.
    let files: Vec<String> = tree_files(&a)
        .into_iter()
        .filter(|f| !f.ends_with("manifest.json"))
        .collect();
    let differing: Vec<&String> = files
        .iter()
        .filter(|f| fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok())
        .collect();
    let required = ["train/checkpoint.json", "train/loss_log.csv", "eval/report.json"];
    let covered = required.iter().all(|r| files.iter().any(|f| f == r));
    Outcome::check(
        differing.is_empty() && covered && va == vb,
        format!(
            "{} artifacts compared (checkpoints, loss log, report, CSVs); differing: {differing:?}",
            files.len()
        ),
    )
}

// 8. Every logged iteration satisfies both loss identities.
fn loss_identity(root: &Path) -> Outcome {
    let (raw, _) = make_benchmark_dataset(600, 8).unwrap();
    let schema = fit_normalizer(&raw).unwrap();
    let real = normalize(&raw, &schema).unwrap();
    let mut worst_g: f64 = 0.0;
    let mut worst_d: f64 = 0.0;
    let mut rows = 0;
    for (name, mean_penalty) in [("with_penalty", 0.2), ("without_penalty", 0.0)] {
        let cfg = PPOConfig {
            iterations: 200,
            mean_penalty,
            ..PPOConfig::bench_small()
        };
        let out = root.join(name);
        train_to_dir(&real, &cfg, &out, false).unwrap();
        for row in read_loss_log(RunLayout::new(&out).loss_log()).unwrap() {
            let expected_g = -row.l_clip + cfg.value_weight * row.l_v - cfg.entropy_weight * row.entropy
                + cfg.mean_penalty * row.mean_penalty;
            worst_g = worst_g.max((row.l_g - expected_g).abs());
            worst_d = worst_d.max((row.l_d - (row.l_bce + row.r1)).abs());
            rows += 1;
        }
    }
    Outcome::check(
        rows == 400 && worst_g <= 1e-12 && worst_d <= 1e-12,
        format!("{rows} logged iterations; max L_G residual {worst_g:.1e}, max L_D residual {worst_d:.1e} (<= 1e-12)"),
    )
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 gradient correctness", Box::new(gradient_correctness)),
        ("2 density normalization", Box::new(density_normalization)),
        ("3 PPO mechanics", Box::new(ppo_mechanics)),
        ("4 metric oracles", Box::new(metric_oracles)),
        ("5 MIA sanity", Box::new(mia_sanity)),
        ("6 end-to-end benchmark", {
            let r = root.join("benchmark");
            Box::new(move || end_to_end(&r))
        }),
        ("7 determinism", {
            let r = root.join("determinism");
            Box::new(move || determinism(&r))
        }),
        ("8 loss-identity audit", {
            let r = root.join("identity");
            Box::new(move || loss_identity(&r))
        }),
    ];
    let mut failures = 0;
    for (name, run) in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::check(false, format!("panicked: {msg}"))
        });
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        println!(
            "{tag} criterion {name}: {} [{:.1}s]",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
        failures += usize::from(!outcome.passed);
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
