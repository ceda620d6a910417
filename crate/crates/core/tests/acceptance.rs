//! Acceptance checks, one line per criterion. Run with `cargo test --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use daftlab::bn_convert::{
    convert_bn, convert_layer, estimate_target_statistics, preservation_tolerance, LayerStatistics,
    TargetStatistics,
};
use daftlab::data::{DomainShiftTask, TaskSpec};
use daftlab::experiment::{cmd_run, CellSummary, ExperimentConfig, Layout};
use daftlab::finetune::{
    run_fine_tune_observed, run_strategy, sweep_with_scorer, FineTuneConfig, HeadInit, Hyper, Strategy, SweepGrids,
    TrainData, STAGE1_HEAD_LR,
};
use daftlab::nn::{
    bn_backward, softmax_cross_entropy, Activation, ArchSpec, BatchNormLayer, BnMode, DenseLayer, Layer, Network,
    Part, TensorKind, Trainable,
};
use daftlab::rng::{derived_rng, Rng};
use daftlab::{Precision, Tensor};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

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

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn random_bn(rng: &mut Rng, c: usize) -> BatchNormLayer {
    let mut bn = BatchNormLayer::new(c, 1e-5, 0.1).unwrap();
    for k in 0..c {
        bn.gamma[k] = rng.random_range(0.2..3.0) * if rng.random_bool(0.2) { -1.0 } else { 1.0 };
        bn.beta[k] = rng.random_range(-2.0..2.0);
        bn.running_mean[k] = rng.random_range(-3.0..3.0);
        bn.running_var[k] = rng.random_range(0.05..5.0);
    }
    bn
}

/// dense -> bn -> relu, repeated, then a dense head.
fn random_bn_network(rng: &mut Rng, bn_layers: usize, precision: Precision) -> Network {
    let input = rng.random_range(2..7);
    let mut width = input;
    let mut fe = Vec::new();
    for _ in 0..bn_layers {
        let out = rng.random_range(2..9);
        fe.push(Layer::Dense(DenseLayer::he_normal(width, out, rng)));
        fe.push(Layer::BatchNorm(random_bn(rng, out)));
        fe.push(Layer::Activation {
            function: Activation::Relu,
        });
        width = out;
    }
    let head = vec![Layer::Dense(DenseLayer::he_normal(width, 3, rng))];
    let mut net = Network::new(input, fe, head).unwrap();
    net.precision = precision;
    net
}

fn random_target_stats(net: &Network, rng: &mut Rng) -> TargetStatistics {
    let layers = net
        .bn_layers()
        .into_iter()
        .map(|(part, layer, bn)| LayerStatistics {
            part,
            layer,
            mean: (0..bn.channels).map(|_| rng.random_range(-3.0..3.0)).collect(),
            var: (0..bn.channels).map(|_| rng.random_range(0.05..5.0)).collect(),
        })
        .collect();
    TargetStatistics {
        layers,
        batches_seen: 1,
        batch_size: 2,
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = [0.0f64; 2];
    let mut breaches = 0;
    for (slot, precision) in [Precision::F64, Precision::F32].into_iter().enumerate() {
        for i in 0..100u64 {
            let mut rng = derived_rng(i, &format!("acceptance/1/{precision:?}"));
            let k = 1 + (i as usize % 4);
            let before = random_bn_network(&mut rng, k, precision);
            let stats = random_target_stats(&before, &mut rng);
            let mut after = before.clone();
            convert_bn(&mut after, &stats).unwrap();
            let x = randn(&mut rng, &[64, before.input_dim]).map(|v| 3.0 * v);
            let (fa, la) = before.infer(&x).unwrap();
            let (fb, lb) = after.infer(&x).unwrap();
            let d = fa.max_abs_diff(&fb).unwrap().max(la.max_abs_diff(&lb).unwrap());
            worst[slot] = worst[slot].max(d);
            if d > preservation_tolerance(precision) {
                breaches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        breaches == 0 && secs < 10.0,
        format!(
            "max-abs f64 {:.2e} (tol 1e-9), f32 {:.2e} (tol 1e-4), {breaches} breaches, {secs:.2}s",
            worst[0], worst[1]
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut bn = BatchNormLayer::new(1, 1.0, 0.1).unwrap();
    bn.gamma = vec![2.0];
    bn.beta = vec![1.0];
    bn.running_mean = vec![0.0];
    bn.running_var = vec![3.0];
    convert_layer(&mut bn, &[1.0], &[8.0], Precision::F64);
    let spot = bn.gamma[0] == 3.0 && bn.beta[0] == 2.0;

    let mut rng = derived_rng(2, "acceptance/2");
    let mut net = random_bn_network(&mut rng, 3, Precision::F64);
    let stats = TargetStatistics {
        layers: net
            .bn_layers()
            .into_iter()
            .map(|(part, layer, bn)| LayerStatistics {
                part,
                layer,
                mean: bn.running_mean.clone(),
                var: bn.running_var.clone(),
            })
            .collect(),
        batches_seen: 1,
        batch_size: 2,
    };
    let before = net.clone();
    let record = convert_bn(&mut net, &stats).unwrap();
    let identity = record.is_identity() && before.feature_extractor == net.feature_extractor;
    outcome(
        spot && identity,
        format!(
            "gamma_t {} beta_t {} (want 3, 2); no-shift conversion identity: {identity}",
            bn.gamma[0], bn.beta[0]
        ),
    )
}

fn criterion_3() -> Outcome {
    let bn = BatchNormLayer::new(1, 1e-5, 0.1).unwrap();
    let net = Network::new(1, vec![Layer::BatchNorm(bn.clone())], vec![]).unwrap();
    let fixture = [
        Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap(),
        Tensor::from_rows(&[vec![3.0], vec![5.0]]).unwrap(),
    ];
    let s = estimate_target_statistics(&net, &fixture).unwrap();
    let (mt, vt) = (s.layers[0].mean[0], s.layers[0].var[0]);
    let exact = mt == 2.75 && vt == 1.25;

    // 10,000 draws of N(mu, sd^2) per channel, batches of 100.
    let (mu, sd, channels) = ([1.7, -0.4, 5.0], [2.3, 0.5, 1.0], 3);
    let bn = BatchNormLayer::new(channels, 1e-5, 0.1).unwrap();
    let net = Network::new(channels, vec![Layer::BatchNorm(bn)], vec![]).unwrap();
    let mut rng = derived_rng(3, "acceptance/3");
    let dists: Vec<Normal<f64>> = (0..channels).map(|c| Normal::new(mu[c], sd[c]).unwrap()).collect();
    let batches: Vec<Tensor> = (0..100)
        .map(|_| {
            let rows: Vec<Vec<f64>> = (0..100)
                .map(|_| dists.iter().map(|d| d.sample(&mut rng)).collect())
                .collect();
            Tensor::from_rows(&rows).unwrap()
        })
        .collect();
    let s = estimate_target_statistics(&net, &batches).unwrap();
    let z: Vec<f64> = (0..channels)
        .map(|c| (s.layers[0].mean[c] - mu[c]) / (sd[c] / 10_000f64.sqrt()))
        .collect();
    let within = z.iter().all(|v| v.abs() <= 3.0);
    outcome(
        exact && within,
        format!("fixture M_t {mt} S_t {vt} (want 2.75, 1.25); Gaussian z-scores {z:.2?} (limit 3)"),
    )
}

/// Relative error with a floor so that near-zero entries compare absolutely.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Worst error of `analytic` against central differences of `f` around `x`.
fn fd_check(x: &mut [f64], analytic: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let keep = x[i];
        x[i] = keep + h;
        let up = f(x);
        x[i] = keep - h;
        let down = f(x);
        x[i] = keep;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h)));
    }
    worst
}

fn weighted(out: &Tensor, r: &Tensor) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn with_data(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Inputs at least 0.05 from the ReLU kink.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    randn(rng, shape).map(|v| if v.abs() < 0.05 { v + 0.1_f64.copysign(v) } else { v })
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let p = Precision::F64;
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    for inst in 0..50u64 {
        let mut rng = derived_rng(inst, "acceptance/4");
        let m = rng.random_range(2..7);
        let d_in = rng.random_range(1..6);
        let d_out = rng.random_range(1..6);

        // dense
        let layer = DenseLayer::he_normal(d_in, d_out, &mut rng);
        let mut layer = DenseLayer {
            bias: randn(&mut rng, &[d_out]),
            ..layer
        };
        let x = randn(&mut rng, &[m, d_in]);
        let r = randn(&mut rng, &[m, d_out]);
        let g = layer.backward(&x, &r, true).unwrap();
        let mut xs = x.data().to_vec();
        note(
            "dense/input",
            fd_check(&mut xs, g.grad_in.as_ref().unwrap().data(), &mut |v| {
                weighted(&layer.forward(&with_data(&[m, d_in], v), p).unwrap(), &r)
            }),
        );
        let mut w = layer.weight.data().to_vec();
        let probe = layer.clone();
        note(
            "dense/weight",
            fd_check(&mut w, g.grad_weight.data(), &mut |v| {
                let l = DenseLayer {
                    weight: with_data(&[d_out, d_in], v),
                    ..probe.clone()
                };
                weighted(&l.forward(&x, p).unwrap(), &r)
            }),
        );
        let mut b = layer.bias.data().to_vec();
        note(
            "dense/bias",
            fd_check(&mut b, g.grad_bias.data(), &mut |v| {
                layer.bias = with_data(&[d_out], v);
                weighted(&layer.forward(&x, p).unwrap(), &r)
            }),
        );

        // relu
        let x = away_from_zero(&mut rng, &[m, d_in]);
        let r = randn(&mut rng, &[m, d_in]);
        let gx = Activation::Relu.backward(&x, &r).unwrap();
        let mut xs = x.data().to_vec();
        note(
            "relu/input",
            fd_check(&mut xs, gx.data(), &mut |v| {
                weighted(&Activation::Relu.forward(&with_data(&[m, d_in], v), p), &r)
            }),
        );

        // batch norm, train and test
        let c = d_out;
        let bn = random_bn(&mut rng, c);
        let x = randn(&mut rng, &[m, c]).map(|v| 2.0 * v + 0.5);
        let r = randn(&mut rng, &[m, c]);
        for mode in [BnMode::Train, BnMode::Test] {
            let (name_in, name_g, name_b) = match mode {
                BnMode::Train => ("bn-train/input", "bn-train/gamma", "bn-train/beta"),
                BnMode::Test => ("bn-test/input", "bn-test/gamma", "bn-test/beta"),
            };
            let mut layer = bn.clone();
            layer.mode = mode;
            let eval = |l: &BatchNormLayer, x: &Tensor| {
                let mut l = l.clone();
                weighted(&l.forward(x, p).unwrap().0, &r)
            };
            let (_, ctx) = layer.clone().forward(&x, p).unwrap();
            let g = bn_backward(&ctx, &r).unwrap();
            let mut xs = x.data().to_vec();
            note(
                name_in,
                fd_check(&mut xs, g.grad_in.data(), &mut |v| eval(&layer, &with_data(&[m, c], v))),
            );
            let mut gamma = layer.gamma.clone();
            note(
                name_g,
                fd_check(&mut gamma, &g.grad_gamma, &mut |v| {
                    let mut l = layer.clone();
                    l.gamma = v.to_vec();
                    eval(&l, &x)
                }),
            );
            let mut beta = layer.beta.clone();
            note(
                name_b,
                fd_check(&mut beta, &g.grad_beta, &mut |v| {
                    let mut l = layer.clone();
                    l.beta = v.to_vec();
                    eval(&l, &x)
                }),
            );
        }

        // softmax cross-entropy
        let k = rng.random_range(2..6);
        let z = randn(&mut rng, &[m, k]).map(|v| 2.0 * v);
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
        let (_, gz) = softmax_cross_entropy(&z, &labels).unwrap();
        let mut zs = z.data().to_vec();
        note(
            "softmax-ce/logits",
            fd_check(&mut zs, gz.data(), &mut |v| {
                softmax_cross_entropy(&with_data(&[m, k], v), &labels).unwrap().0
            }),
        );
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.values().copied().fold(0.0, f64::max);
    let parts: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    outcome(
        max <= 1e-6 && secs < 30.0,
        format!("50 instances, worst relative error {max:.2e} (tol 1e-6), {secs:.2}s [{}]", parts.join(", ")),
    )
}

fn criterion_5() -> Outcome {
    let mut nonzero = 0usize;
    let mut checked = 0usize;
    for inst in 0..20u64 {
        let mut rng = derived_rng(inst, "acceptance/5");
        let arch = ArchSpec {
            input_dim: rng.random_range(2..10),
            hidden: (0..rng.random_range(1..4)).map(|_| rng.random_range(2..20)).collect(),
            classes: rng.random_range(2..6),
            activation: if inst % 2 == 0 { Activation::Relu } else { Activation::Tanh },
            ..ArchSpec::default()
        };
        let mut net = arch.build(&mut rng).unwrap();
        net.zero_head().unwrap();
        let m = rng.random_range(2..33);
        let x = randn(&mut rng, &[m, arch.input_dim]);
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..arch.classes)).collect();
        let mode = if inst % 3 == 0 { BnMode::Test } else { BnMode::Train };
        let pass = net.forward(&x, mode).unwrap();
        let (_, g) = softmax_cross_entropy(&pass.logits, &labels).unwrap();
        let grads = net.backward(&pass.tape, &g, Trainable::ALL).unwrap();
        for (key, t) in grads.iter() {
            if key.part == Part::FeatureExtractor {
                checked += t.len();
                nonzero += t.data().iter().filter(|v| v.to_bits() != 0).count();
            }
        }
    }
    outcome(
        nonzero == 0 && checked > 0,
        format!("20 instances, {checked} feature-extractor gradient entries, {nonzero} not bitwise +0.0"),
    )
}

fn tensor_bits(net: &Network) -> Vec<u64> {
    net.tensors()
        .into_iter()
        .flat_map(|(_, v)| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
        .collect()
}

fn criterion_6() -> Outcome {
    let spec = TaskSpec::default();
    let task = DomainShiftTask::generate(&spec, 6).unwrap();
    let mut rng = derived_rng(6, "acceptance/6");
    let net = ArchSpec::default().build(&mut rng).unwrap();
    let data = TrainData {
        train: &task.target_train,
        val: &task.target_val,
    };
    let steps: usize = 100;
    let epochs = (steps * 64).div_ceil(task.target_train.len() / 64 * 64);
    let trajectory = |cfg: &FineTuneConfig| {
        let mut traj = Vec::new();
        run_fine_tune_observed(net.clone(), cfg, data, &mut |step, n| {
            if step <= steps {
                traj.push(tensor_bits(n));
            }
        })
        .unwrap();
        traj
    };
    let ft = FineTuneConfig {
        epochs,
        ..FineTuneConfig::for_strategy(Strategy::Ft, 0.05, 0.05, 6)
    };
    let daft = FineTuneConfig {
        epochs,
        bn_conversion: false,
        head_init: HeadInit::Random,
        ..FineTuneConfig::for_strategy(Strategy::Daft, 0.05, 0.05, 6)
    };
    let (a, b) = (trajectory(&ft), trajectory(&daft));
    let same = a.len() == steps && a == b;

    let hyper = Hyper {
        epochs: 5,
        seed: 6,
        ..Hyper::default()
    };
    let out = run_strategy(&net, Strategy::LpFt, data, &hyper).unwrap();
    let stats = |n: &Network| -> Vec<u64> {
        n.tensors()
            .into_iter()
            .filter(|(k, _)| matches!(k.kind, TensorKind::RunningMean | TensorKind::RunningVar))
            .flat_map(|(_, v)| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            .collect()
    };
    let frozen = stats(&out.baseline) == stats(&out.network) && !stats(&out.network).is_empty();
    let moved = tensor_bits(&out.baseline) != tensor_bits(&out.network);
    outcome(
        same && frozen && moved,
        format!(
            "DAFT-as-FT trajectory bit-exact over {} steps: {same}; LPFT running stats bit-identical: {frozen} (weights moved: {moved})",
            a.len().min(steps)
        ),
    )
}

fn load_summaries(root: &Path, cfg: &ExperimentConfig) -> BTreeMap<(Strategy, u64), CellSummary> {
    let layout = Layout::new(root);
    let mut out = BTreeMap::new();
    for &s in &cfg.strategies {
        for &seed in &cfg.seeds {
            let path = layout.cell_dir(s, seed).join("summary.json");
            let bytes = fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            out.insert((s, seed), serde_json::from_slice(&bytes).unwrap());
        }
    }
    out
}

fn wins(
    sums: &BTreeMap<(Strategy, u64), CellSummary>,
    seeds: &[u64],
    a: Strategy,
    b: Strategy,
    better: impl Fn(&CellSummary, &CellSummary) -> bool,
) -> usize {
    seeds
        .iter()
        .filter(|&&s| better(&sums[&(a, s)], &sums[&(b, s)]))
        .count()
}

struct DeskRun {
    cfg: ExperimentConfig,
    sums: BTreeMap<(Strategy, u64), CellSummary>,
    secs: f64,
}

fn desk_run(root: &Path) -> DeskRun {
    let cfg = ExperimentConfig {
        output_dir: root.to_path_buf(),
        ..ExperimentConfig::default()
    };
    let start = Instant::now();
    let outcome = cmd_run(&cfg).expect("desk run");
    assert!(outcome.failures.is_empty(), "desk run failures: {:?}", outcome.failures);
    let secs = start.elapsed().as_secs_f64();
    let sums = load_summaries(root, &cfg);
    DeskRun { cfg, sums, secs }
}

fn criterion_7(run: &DeskRun) -> Outcome {
    let seeds = &run.cfg.seeds;
    let cos = wins(&run.sums, seeds, Strategy::Daft, Strategy::Ft, |a, b| {
        a.run.median_cosine > b.run.median_cosine
    });
    let l2 = wins(&run.sums, seeds, Strategy::Daft, Strategy::Ft, |a, b| a.run.median_l2 < b.run.median_l2);
    outcome(
        cos >= 8 && l2 >= 8 && run.secs < 600.0,
        format!(
            "DAFT vs FT over {} seeds: higher median cosine {cos}/10, lower median L2 {l2}/10 (need 8); run {:.1}s",
            seeds.len(),
            run.secs
        ),
    )
}

fn criterion_8(run: &DeskRun) -> Outcome {
    let bn = wins(&run.sums, &run.cfg.seeds, Strategy::Daft, Strategy::Ft, |a, b| {
        a.run.mean_bn_stat_change < b.run.mean_bn_stat_change
    });
    outcome(
        bn >= 8,
        format!("DAFT (post-conversion baseline) lower BN running-stat change than FT in {bn}/10 seeds (need 8)"),
    )
}

fn criterion_9(run: &DeskRun) -> Outcome {
    let seeds = &run.cfg.seeds;
    let mean_id = |s: Strategy| seeds.iter().map(|&k| run.sums[&(s, k)].run.id_accuracy).sum::<f64>() / seeds.len() as f64;
    let (daft_id, ft_id) = (mean_id(Strategy::Daft), mean_id(Strategy::Ft));
    let id_ok = daft_id >= ft_id - 0.005;
    let ood = |s: Strategy| {
        wins(&run.sums, seeds, s, Strategy::Ft, |a, b| a.run.ood_accuracy > b.run.ood_accuracy)
    };
    let (daft_ood, lp_ood) = (ood(Strategy::Daft), ood(Strategy::Lp));
    outcome(
        id_ok && daft_ood >= 7 && lp_ood >= 6,
        format!(
            "mean ID DAFT {:.4} vs FT {:.4} (delta {:+.2} pp, floor -0.5); OOD wins over FT: DAFT {daft_ood}/10 (need 7), LP {lp_ood}/10 (need 6)",
            daft_id,
            ft_id,
            100.0 * (daft_id - ft_id)
        ),
    )
}

fn criterion_10() -> Outcome {
    let grids = SweepGrids::for_strategy(Strategy::Daft);
    let (best_theta, best_w) = (1e-3, 0.3);
    let seen_stage1: Mutex<Vec<f64>> = Mutex::new(Vec::new());
    let result = sweep_with_scorer(Strategy::Daft, &grids, |theta, w| {
        if !seen_stage1.lock().unwrap().is_empty() || w == STAGE1_HEAD_LR {
            seen_stage1.lock().unwrap().push(w);
        }
        Ok(-((theta / best_theta).ln().powi(2)) - (w / best_w).ln().powi(2))
    })
    .unwrap();
    let stage1_fixed = grids.stage1_eta_w == 1.0
        && result.stage1.len() == grids.eta_theta.len()
        && result.stage1.iter().all(|c| c.eta_w == 1.0);
    let picked = result.chosen_eta_theta == best_theta && result.chosen_eta_w == best_w;
    outcome(
        picked && stage1_fixed,
        format!(
            "chosen (eta_theta, eta_w) = ({}, {}) (optimum ({best_theta}, {best_w})); stage-1 head LR fixed at 1.0 over {} runs: {stage1_fixed}",
            result.chosen_eta_theta,
            result.chosen_eta_w,
            result.stage1.len()
        ),
    )
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_11(first: &Path, second: &Path) -> Outcome {
    let a = files_under(first);
    let b = files_under(second);
    let compared: Vec<&PathBuf> = a.iter().filter(|p| p.file_name().unwrap() != "manifest.json").collect();
    let differing: Vec<String> = compared
        .iter()
        .filter(|p| fs::read(first.join(p)).ok() != fs::read(second.join(p)).ok())
        .map(|p| p.display().to_string())
        .collect();
    outcome(
        a == b && differing.is_empty() && !compared.is_empty(),
        format!(
            "{} files compared (manifest.json excluded), same file set: {}, differing: {:?}",
            compared.len(),
            a == b,
            differing
        ),
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "function preservation", criterion_1()),
        (2, "conversion spot values", criterion_2()),
        (3, "unbiased statistics", criterion_3()),
        (4, "gradient correctness", criterion_4()),
        (5, "zero-head invariant", criterion_5()),
        (6, "strategy reductions", criterion_6()),
    ];
    let tmp = tempfile::tempdir().unwrap();
    // Same config, output directory included: run, move aside, run again.
    let (dir_a, dir_b) = (tmp.path().join("first"), tmp.path().join("run"));
    let run = desk_run(&dir_b);
    fs::rename(&dir_b, &dir_a).unwrap();
    results.push((7, "feature distortion trend", criterion_7(&run)));
    results.push((8, "reduced movement trend", criterion_8(&run)));
    results.push((9, "accuracy ordering trend", criterion_9(&run)));
    results.push((10, "sweep procedure", criterion_10()));
    desk_run(&dir_b);
    results.push((11, "determinism", criterion_11(&dir_a, &dir_b)));

    let mut failed = 0;
    for (n, name, o) in &results {
        println!("criterion {n:>2} {name:<26} {}  {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
