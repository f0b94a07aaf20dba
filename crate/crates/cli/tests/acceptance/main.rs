//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Exits 0 regardless of outcome so the workspace test run stays green;
//! set `ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

#[path = "../../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use chromattn::data::{restrict_marks, split, split_sizes};
use chromattn::interpret::{mean_attention, saliency, score};
use chromattn::metrics::{auc, auc_scores, pearson};
use chromattn::model::{forward, loss_and_grad};
use chromattn::synth::{synth_generate, SynthSpec, Synthetic};
use chromattn::tape::softmax;
use chromattn::train::{train_from, TrainConfig};
use chromattn::{Dataset, GeneSample, Label, ModelConfig, ParameterStore, SignalMatrix, Tensor, Variant};
use common::*;
use rand::Rng;

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

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = small_config(Variant::LstmAlphaBeta);
    let params = random_params(&cfg, 2024);
    let x = random_signal(cfg.marks, cfg.bins, &mut rng(7));
    let xr = rows(&x);
    let mut worst_rel = 0.0f64;
    let mut worst_abs = 0.0f64;
    let mut entries = 0usize;
    let mut violations = 0usize;
    for label in [Label::Low, Label::High] {
        let sg = loss_and_grad(&x, label, &params, &cfg).unwrap();
        let k = label.class_index();
        let numeric = fd_params(&params, 1e-5, |p| oracle_nll(p, &cfg, &xr, k));
        for ((_, a), (_, n)) in sg.grads.named_tensors().iter().zip(&numeric) {
            for (u, v) in a.data().iter().zip(n) {
                entries += 1;
                let abs = (u - v).abs();
                worst_abs = worst_abs.max(abs);
                if abs > 0.0 {
                    worst_rel = worst_rel.max(abs / u.abs().max(v.abs()));
                }
                if !grad_close(*u, *v) {
                    violations += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        violations == 0 && elapsed < Duration::from_secs(60),
        format!(
            "{entries} entries, {violations} outside tolerance, max abs error {worst_abs:.2e}, max rel error {worst_rel:.2e}, {}",
            secs(elapsed)
        ),
    )
}

fn forward_oracle() -> Outcome {
    let cfg = small_config(Variant::LstmAlphaBeta);
    let params = random_params(&cfg, 2025);
    let mut r = rng(8);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = random_signal(cfg.marks, cfg.bins, &mut r);
        let got = forward(&x, &params, &cfg).unwrap();
        let want = oracle_forward(&params, &cfg, &rows(&x));
        let att = got.attention.unwrap();
        let mut diffs = vec![
            (got.logits[0] - want.logits[0]).abs(),
            (got.logits[1] - want.logits[1]).abs(),
            (got.prob_low - want.probs[0]).abs(),
            (got.prob_high - want.probs[1]).abs(),
        ];
        for (j, row) in want.alpha.iter().enumerate() {
            diffs.extend(att.alpha.row(j).iter().zip(row).map(|(a, b)| (a - b).abs()));
        }
        diffs.extend(att.beta.unwrap().iter().zip(want.beta.unwrap()).map(|(a, b)| (a - b).abs()));
        worst = diffs.into_iter().fold(worst, f64::max);
    }
    outcome(worst <= 1e-12, format!("20 inputs, max abs deviation {worst:.2e}"))
}

fn attention_validity() -> Outcome {
    let mut r = rng(9);
    let mut worst_sum = 0.0f64;
    let mut negative = 0usize;
    let mut shift_mismatch = 0usize;
    for case in 0..1000u64 {
        let marks = r.gen_range(1..=4);
        let bins = r.gen_range(1..=10);
        let cfg = ModelConfig {
            d: r.gen_range(1..=4),
            d_hm: r.gen_range(1..=3),
            share_bin_context: r.gen_bool(0.5),
            ..ModelConfig::new(marks, bins, Variant::LstmAlphaBeta)
        };
        let mut params = ParameterStore::init(&cfg, case).unwrap();
        let scale = r.gen_range(0.1..10.0);
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v *= scale;
            }
        }
        let data = (0..marks * bins).map(|_| r.gen_range(0.0..20.0)).collect();
        let x = SignalMatrix::new(Tensor::matrix(marks, bins, data).unwrap()).unwrap();
        let att = forward(&x, &params, &cfg).unwrap().attention.unwrap();
        let beta = att.beta.unwrap();
        let mut vectors: Vec<Vec<f64>> = (0..marks).map(|j| att.alpha.row(j).to_vec()).collect();
        vectors.push(beta);
        for v in &vectors {
            negative += v.iter().filter(|w| **w < 0.0).count();
            worst_sum = worst_sum.max((v.iter().sum::<f64>() - 1.0).abs());
        }

        // Dyadic logits and integer shifts keep z + c exact.
        let n = r.gen_range(1..=12);
        let z: Vec<f64> = (0..n).map(|_| r.gen_range(-64i32..=64) as f64 / 8.0).collect();
        let c = r.gen_range(-16i32..=16) as f64;
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let (a, b) = (softmax(&z), softmax(&shifted));
        if a.iter().zip(&b).any(|(p, q)| p.to_bits() != q.to_bits()) {
            shift_mismatch += 1;
        }
    }
    outcome(
        negative == 0 && worst_sum <= 1e-9 && shift_mismatch == 0,
        format!(
            "1000 cases, max |sum-1| {worst_sum:.1e}, {negative} negative weights, {shift_mismatch} shift mismatches"
        ),
    )
}

fn pair_count_auc(scores: &[f64], labels: &[Label]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, li) in labels.iter().enumerate() {
        for (j, lj) in labels.iter().enumerate() {
            if *li == Label::High && *lj == Label::Low {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

fn auc_oracle() -> Outcome {
    let mut r = rng(10);
    let mut worst = 0.0f64;
    let mut tied_cases = 0;
    for _ in 0..100 {
        let n = r.gen_range(2..=50);
        let levels = r.gen_range(2..=20);
        let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<Label> = (0..n)
            .map(|_| if r.gen_bool(0.5) { Label::High } else { Label::Low })
            .collect();
        labels[0] = Label::High;
        labels[1] = Label::Low;
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            tied_cases += 1;
        }
        let fast = auc_scores(&scores, &labels).unwrap();
        worst = worst.max((fast - pair_count_auc(&scores, &labels)).abs());
    }
    outcome(
        worst <= 1e-12 && tied_cases > 0,
        format!("100 instances ({tied_cases} with ties), max deviation {worst:.1e}"),
    )
}

fn split_fidelity() -> Outcome {
    let sizes = split_sizes(19802, [1.0 / 3.0; 3]).unwrap();
    let x = SignalMatrix::new(Tensor::zeros(&[1, 1])).unwrap();
    let samples = (0..19802)
        .map(|i| GeneSample {
            gene_id: format!("g{i}"),
            x: x.clone(),
            label: None,
            expression_raw: Some(i as f64),
        })
        .collect();
    let ds = Dataset::new(vec!["m".into()], 1, samples).unwrap();
    let (a, b, c) = split(&ds, [1.0 / 3.0; 3], 0).unwrap();
    let actual = [a.len(), b.len(), c.len()];
    outcome(
        sizes == [6601, 6601, 6600] && actual == sizes,
        format!("sizes {}/{}/{}", actual[0], actual[1], actual[2]),
    )
}

fn acceptance_train_config() -> TrainConfig {
    TrainConfig {
        max_epochs: 20,
        ..TrainConfig::default()
    }
}

struct Trained {
    params: ParameterStore,
    cfg: ModelConfig,
    test: Dataset,
    test_auc: f64,
    epochs: usize,
    elapsed: Duration,
}

fn train_planted(ds: &Dataset, label: &str) -> Trained {
    let start = Instant::now();
    let (tr, va, te) = split(ds, [1.0 / 3.0; 3], 0).unwrap();
    let cfg = ModelConfig::new(ds.marks(), ds.bins(), Variant::LstmAlphaBeta);
    let tcfg = acceptance_train_config();
    let init = ParameterStore::init(&cfg, tcfg.seed).unwrap();
    let (params, history) = train_from(&tcfg, &cfg, init, &tr, &va, |r| {
        eprintln!("  [{label}] epoch {:>2} train_loss {:.5} val_auc {:.4}", r.epoch, r.train_loss, r.val_auc);
    })
    .unwrap();
    let test_auc = auc(&score(&te, &params, &cfg).unwrap()).unwrap();
    Trained {
        params,
        cfg,
        test: te,
        test_auc,
        epochs: history.epochs.len(),
        elapsed: start.elapsed(),
    }
}

fn planted(syn: &Synthetic, run: &Trained) -> Outcome {
    let map = mean_attention(&run.params, &run.cfg, &run.test, Label::High).unwrap();
    let alpha0 = map.alpha_mean.row(0);
    let r = pearson(alpha0, syn.relevance.get("mark0").unwrap()).unwrap();
    let peak = (0..alpha0.len()).max_by(|&a, &b| alpha0[a].total_cmp(&alpha0[b])).unwrap();
    let beta = map.beta_mean.unwrap();
    let beta_arg = (0..beta.len()).max_by(|&a, &b| beta[a].total_cmp(&beta[b])).unwrap();
    let checks = [
        run.test_auc >= 0.95,
        r >= 0.5,
        beta_arg == 0,
        run.elapsed < Duration::from_secs(600),
    ];
    let beta_txt: Vec<String> = beta.iter().map(|b| format!("{b:.3}")).collect();
    outcome(
        checks.iter().all(|c| *c),
        format!(
            "test AUC {:.4} [{}], alpha r {:.3} [{}] (peak bin {peak}), beta argmax mark {beta_arg} [{}] beta=({}), {} epochs, {} [{}]",
            run.test_auc,
            ok(checks[0]),
            r,
            ok(checks[1]),
            ok(checks[2]),
            beta_txt.join(", "),
            run.epochs,
            secs(run.elapsed),
            ok(checks[3]),
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

fn null_control() -> Outcome {
    let syn = synth_generate(&SynthSpec {
        effect: 0.0,
        ..SynthSpec::default()
    })
    .unwrap();
    let run = train_planted(&syn.dataset, "null");
    outcome(
        (run.test_auc - 0.5).abs() <= 0.05,
        format!("test AUC {:.4}, {} epochs, {}", run.test_auc, run.epochs, secs(run.elapsed)),
    )
}

fn saliency_check(run: &Trained) -> Outcome {
    let mut r = rng(11);
    let sample = &run.test.samples()[r.gen_range(0..run.test.len())];
    let x = &sample.x;
    let s = saliency(&run.params, &run.cfg, x).unwrap();
    let k = forward(x, &run.params, &run.cfg).unwrap().predicted().class_index();
    let eps = 1e-5;
    let logit = |v: &Tensor| forward(&SignalMatrix::new(v.clone()).unwrap(), &run.params, &run.cfg).unwrap().logits[k];
    let (mut worst_abs, mut worst_rel) = (0.0f64, 0.0f64);
    let mut violations = 0;
    let mut cells = Vec::new();
    while cells.len() < 5 {
        let (j, b) = (r.gen_range(0..x.marks()), r.gen_range(0..x.bins()));
        if x.get(j, b) <= 10.0 * eps || cells.contains(&(j, b)) {
            continue;
        }
        cells.push((j, b));
        let mut plus = x.values().clone();
        plus.data_mut()[j * x.bins() + b] += eps;
        let mut minus = x.values().clone();
        minus.data_mut()[j * x.bins() + b] -= eps;
        let fd = ((logit(&plus) - logit(&minus)) / (2.0 * eps)).abs();
        let abs = (s.get2(j, b) - fd).abs();
        let rel = if abs > 0.0 { abs / s.get2(j, b).abs().max(fd) } else { 0.0 };
        worst_abs = worst_abs.max(abs);
        worst_rel = worst_rel.max(rel);
        if abs > 1e-8 && rel >= 1e-3 {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("5 cells {cells:?}, max abs error {worst_abs:.2e}, max rel error {worst_rel:.2e}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let data = dir.path().join("planted.csv");
    let argv = |args: &[&str]| {
        let mut all = vec!["chromattn"];
        all.extend_from_slice(args);
        chromattn_cli::run(all)
    };
    let p = |p: &Path| p.to_str().unwrap().to_string();
    let code = argv(&["synth", "--out", &p(&data), "--n-genes", "300", "--marks", "3", "--bins", "20", "--bin-start", "8", "--bin-end", "11"]);
    assert_eq!(code, 0);
    let out = dir.path().join("run");
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "output_dir = {:?}\n[data]\ndataset = {:?}\nbins = 20\n[train]\nmax_epochs = 3\nbatch_size = 8\nseed = 5\n",
            p(&out),
            p(&data)
        ),
    )
    .unwrap();
    let files = ["checkpoint.bin", "history.csv", "resolved_config.toml"];
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        chromattn_cli::cmd_train(&cfg, &[]).unwrap();
        snapshots.push(files.map(|f| std::fs::read(out.join(f)).unwrap()));
    }
    let same: Vec<bool> = (0..files.len()).map(|i| snapshots[0][i] == snapshots[1][i]).collect();
    let detail: Vec<String> = files
        .iter()
        .zip(&same)
        .map(|(f, s)| format!("{f} {}", if *s { "identical" } else { "DIFFERS" }))
        .collect();
    outcome(same.iter().all(|s| *s), detail.join(", "))
}

fn ablation(syn: &Synthetic) -> Outcome {
    let informative = restrict_marks(&syn.dataset, &[0]).unwrap();
    let noise = restrict_marks(&syn.dataset, &[3]).unwrap();
    let a = train_planted(&informative, "mark0 only");
    let b = train_planted(&noise, "mark3 only");
    outcome(
        a.test_auc >= 0.9 && b.test_auc <= 0.6,
        format!(
            "informative mark AUC {:.4} [{}], noise mark AUC {:.4} [{}]",
            a.test_auc,
            ok(a.test_auc >= 0.9),
            b.test_auc,
            ok(b.test_auc <= 0.6)
        ),
    )
}

fn report(results: &mut Vec<bool>, id: usize, name: &str, o: Outcome) {
    println!("{} {:>2}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, id, o.detail);
    results.push(o.pass);
}

fn main() {
    // Ignore libtest flags such as `--nocapture` passed through by cargo.
    let start = Instant::now();
    let mut results = Vec::new();
    report(&mut results, 1, "gradient check", gradient_check());
    report(&mut results, 2, "forward oracle", forward_oracle());
    report(&mut results, 3, "attention validity", attention_validity());
    report(&mut results, 4, "AUC oracle", auc_oracle());
    report(&mut results, 5, "split fidelity", split_fidelity());

    eprintln!("training on the planted dataset...");
    let syn = synth_generate(&SynthSpec::default()).unwrap();
    let run = train_planted(&syn.dataset, "planted");
    report(&mut results, 6, "planted signal", planted(&syn, &run));
    eprintln!("training on the null dataset...");
    report(&mut results, 7, "null control", null_control());
    report(&mut results, 8, "saliency check", saliency_check(&run));
    report(&mut results, 9, "train determinism", determinism());
    eprintln!("training single-mark ablations...");
    report(&mut results, 10, "mark ablation", ablation(&syn));

    let passed = results.iter().filter(|p| **p).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {}",
        results.len(),
        secs(start.elapsed())
    );
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed != results.len() {
        std::process::exit(1);
    }
}
