//! The nine acceptance criteria, run in order. Prints one line per
//! criterion and exits non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::any::Any;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::fuzz::{fuzz, rdm_corpus, tensor_corpus, weights_corpus, FuzzOutcome};
use common::gradients::{avg_pool_cases, conv_cases, forward_pair_cases, linear_cases, relu_cases, tiny_spec};
use common::siamese::desk_sharing_error;
use common::{
    block_diagonal, brute_noise_ceiling_lower, brute_spearman, max_abs_diff, naive_conv, planted_instance,
    random_grouped_spec, random_rdm, rng, subject_fixture, uniform_tensor,
};
use rand::Rng;
use rdmnet_core::conv::conv2d;
use rdmnet_core::io::{decode_tensor, decode_weights, load_rdm_csv, parse_rdm_csv};
use rdmnet_core::train::geometric_lrs;
use rdmnet_core::{
    baseline_fit, explained_variance, lr_find, noise_ceiling_lower, normalize_rdm, spearman, triangular_lr,
    ConvSpec, Dataset, Init, LrFindConfig, Model, TrainConfig,
};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let families = [
        ("conv g1", conv_cases(1)),
        ("conv g2", conv_cases(2)),
        ("conv g4", conv_cases(4)),
        ("conv g16", conv_cases(16)),
        ("relu", relu_cases()),
        ("avg_pool", avg_pool_cases()),
        ("linear", linear_cases()),
        ("forward_pair", forward_pair_cases()),
    ];
    let elapsed = start.elapsed();
    let mut worst = 0.0f64;
    for (family, cases) in &families {
        if cases.len() < 20 {
            return Err(format!("{family}: only {} configurations", cases.len()));
        }
        for (label, err) in cases {
            if err.is_nan() || *err >= 1e-3 {
                return Err(format!("{family} {label}: relative error {err:e}"));
            }
            worst = worst.max(*err);
        }
    }
    check(
        elapsed < Duration::from_secs(60),
        format!("{} families, worst {worst:.2e}, {:.1}s", families.len(), elapsed.as_secs_f64()),
    )
}

fn group_conv_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for case in 0..50 {
        let mut r = rng(700 + case);
        let (spec, xs) = random_grouped_spec(&mut r);
        let x = uniform_tensor(&mut r, &xs, -1.0, 1.0);
        let w = uniform_tensor(&mut r, &spec.weight_shape(), -1.0, 1.0);
        let b = uniform_tensor(&mut r, &[spec.out_channels], -1.0, 1.0);
        let dense_spec = ConvSpec { groups: 1, ..spec };
        let grouped = conv2d(&x, &w, &b, &spec).map_err(|e| e.to_string())?;
        let diff = max_abs_diff(&grouped, &naive_conv(&x, &block_diagonal(&w, &spec), &b, &dense_spec));
        if diff > 1e-6 {
            return Err(format!("spec {case}: {diff:e}"));
        }
        worst = worst.max(diff);
    }
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(30),
        format!("50 specs, max abs diff {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    )
}

fn siamese_sharing() -> Outcome {
    let err = desk_sharing_error();
    check(err <= 1e-5, format!("desk spec relative error {err:.2e}"))
}

fn rdmnet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rdmnet"))
}

fn run(cmd: &mut Command) -> Result<String, String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{:?} exited {:?}: {}",
            cmd.get_args().collect::<Vec<_>>(),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or("")
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Synthetic fixture written by `rdmnet synth` with its default sizes and
/// seed 0, shared by the recovery and determinism criteria.
struct Synthetic {
    dir: PathBuf,
}

impl Synthetic {
    fn create(root: &Path) -> Result<Self, String> {
        let dir = root.join("synthetic");
        run(rdmnet().args(["synth", "--seed", "0", "--out"]).arg(&dir))?;
        Ok(Self { dir })
    }

    /// Full `train` with the fixture config: desk spec, seed 0, 15 frozen and
    /// 200 unfrozen epochs, batch 32, rates from the LR range test.
    fn train(&self, out: &str) -> Result<(PathBuf, Duration), String> {
        let out = self.dir.join(out);
        let start = Instant::now();
        run(rdmnet().arg("train").arg("--config").arg(self.dir.join("config.toml")).arg("--out").arg(&out))?;
        Ok((out, start.elapsed()))
    }
}

fn mean_losses(history: &Path) -> Result<Vec<f64>, String> {
    let text = fs::read_to_string(history).map_err(|e| e.to_string())?;
    text.lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).and_then(|v| v.parse().ok()).ok_or(format!("bad history row {l:?}")))
        .collect()
}

fn predicted_spearman(fx: &Synthetic, run_dir: &Path, split: &str) -> Result<f64, String> {
    let output = run_dir.join(format!("{split}_pred.csv"));
    run(rdmnet()
        .arg("predict")
        .arg("--weights")
        .arg(run_dir.join("weights.bin"))
        .arg("--images")
        .arg(fx.dir.join(format!("{split}_images")))
        .arg("--output")
        .arg(&output))?;
    let pred = load_rdm_csv(&output).map_err(|e| e.to_string())?;
    let target = load_rdm_csv(fx.dir.join(format!("{split}_rdm.csv"))).map_err(|e| e.to_string())?;
    spearman(&pred, &target).map_err(|e| e.to_string())
}

fn synthetic_recovery(fx: &Synthetic) -> Outcome {
    let (run_dir, elapsed) = fx.train("run_a")?;
    let losses = mean_losses(&run_dir.join("history.csv"))?;
    if losses.len() != 215 {
        return Err(format!("{} epochs in history", losses.len()));
    }
    let ratio = losses[losses.len() - 1] / losses[0];
    let train_rho = predicted_spearman(fx, &run_dir, "train")?;
    let heldout_rho = predicted_spearman(fx, &run_dir, "heldout")?;
    check(
        ratio < 0.25 && train_rho > 0.8 && heldout_rho > 0.4 && elapsed < Duration::from_secs(600),
        format!(
            "loss ratio {ratio:.4}, train rho {train_rho:.4}, held-out rho {heldout_rho:.4}, {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn rsa_oracles() -> Outcome {
    let mut r = rng(42);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = r.random_range(4..16);
        let levels = if case % 2 == 0 { Some(r.random_range(2..6)) } else { None };
        let a = random_rdm(&mut r, n, levels);
        let b_levels = r.random_range(3..8);
        let b = random_rdm(&mut r, n, Some(b_levels));
        let got = spearman(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((got - brute_spearman(&a, &b)).abs());
    }
    let mut worst_ceiling = 0.0f64;
    for seed in 0..10 {
        let subjects = subject_fixture(seed, 12, 3, 0.3);
        let got = noise_ceiling_lower(&subjects).map_err(|e| e.to_string())?;
        worst_ceiling = worst_ceiling.max((got - brute_noise_ceiling_lower(&subjects)).abs());
    }
    let ev = explained_variance(0.3, 1.0).map_err(|e| e.to_string())?;
    check(
        worst <= 1e-9 && worst_ceiling <= 1e-9 && ev == 9.0,
        format!("spearman max diff {worst:.1e}, ceiling max diff {worst_ceiling:.1e}, explained_variance(0.3, 1.0) = {ev}"),
    )
}

fn baseline_recovery() -> Outcome {
    let (l1, l2, target) = planted_instance(15, 21);
    let fit = baseline_fit(&[l1, l2], &target).map_err(|e| e.to_string())?;
    let (w1, w2) = (fit.weights[0], fit.weights[1]);
    check(
        (w1 - 2.0).abs() < 1e-4 && (w2 - 3.0).abs() < 1e-4,
        format!("weights ({w1:.8}, {w2:.8}), intercept {:.1e}", fit.intercept),
    )
}

fn determinism(fx: &Synthetic) -> Outcome {
    let first = fx.dir.join("run_a");
    if !first.join("weights.bin").exists() {
        fx.train("run_a")?;
    }
    let (second, _) = fx.train("run_b")?;
    let read = |p: PathBuf| fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
    let same_weights = read(first.join("weights.bin"))? == read(second.join("weights.bin"))?;
    let same_history = read(first.join("history.csv"))? == read(second.join("history.csv"))?;
    check(
        same_weights && same_history,
        format!("weights identical: {same_weights}, history identical: {same_history}"),
    )
}

fn format_robustness() -> Outcome {
    const INPUTS: usize = 10_000;
    let runs: [(&str, FuzzOutcome); 3] = [
        ("tensor", fuzz(11, INPUTS, &tensor_corpus(), |b| decode_tensor(b).is_ok())),
        ("weights", fuzz(12, INPUTS, &weights_corpus(), |b| decode_weights(b).is_ok())),
        ("rdm csv", fuzz(13, INPUTS, &rdm_corpus(), |b| parse_rdm_csv(b).is_ok())),
    ];
    let mut details = Vec::new();
    let mut ok = true;
    for (name, o) in &runs {
        ok &= o.inputs == INPUTS && o.panics.is_empty() && o.slowest < Duration::from_secs(1);
        details.push(format!(
            "{name} {} rejected / {} panics / slowest {:?}",
            o.rejected,
            o.panics.len(),
            o.slowest
        ));
    }
    check(ok, details.join("; "))
}

fn lr_machinery() -> Outcome {
    let grid = geometric_lrs(1e-5, 1e-1, 5);
    let closed_form = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];
    if grid != closed_form {
        return Err(format!("grid {grid:?}"));
    }

    let mut r = rng(3);
    let images = (0..5).map(|_| uniform_tensor(&mut r, &[2, 8, 8], 0.0, 1.0).cast()).collect();
    let target = normalize_rdm(&random_rdm(&mut r, 5, None)).map_err(|e| e.to_string())?;
    let data = Dataset::new(images, target, true).map_err(|e| e.to_string())?;
    let (model, _) = Model::<f32>::build(tiny_spec(), Init::Random { seed: 0 }).map_err(|e| e.to_string())?;
    let sweep = LrFindConfig {
        lr_min: 1e-5,
        lr_max: 1e-1,
        steps: 5,
        ..Default::default()
    };
    let res = lr_find(&model, &data, &TrainConfig::default(), &sweep).map_err(|e| e.to_string())?;
    if res.lrs[..] != closed_form[..res.lrs.len()] {
        return Err(format!("lr_find swept {:?}", res.lrs));
    }

    // 0.15 has no exact binary64 form; the correctly rounded midpoint of
    // the doubles nearest 0.1 and 0.2 is one ulp above the literal.
    let mid = (0.1 + 0.2) / 2.0;
    let lrs: Vec<f64> = (0..5).map(|i| triangular_lr(0.1, 0.2, 2, i)).collect();
    check(
        lrs == [0.1, mid, 0.2, mid, 0.1],
        format!("grid exact, lr_find swept {} points, triangular {lrs:?}", res.lrs.len()),
    )
}

fn panic_message(p: Box<dyn Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().expect("temp dir");
    let fixture = Synthetic::create(scratch.path());
    let with_fixture = |f: fn(&Synthetic) -> Outcome| -> Outcome {
        match &fixture {
            Ok(fx) => f(fx),
            Err(e) => Err(format!("fixture: {e}")),
        }
    };
    let criteria: [Criterion; 9] = [
        ("gradient correctness", Box::new(gradient_correctness)),
        ("group-conv oracle equivalence", Box::new(group_conv_oracle)),
        ("siamese sharing", Box::new(siamese_sharing)),
        ("synthetic recovery", Box::new(|| with_fixture(synthetic_recovery))),
        ("rsa statistics oracles", Box::new(rsa_oracles)),
        ("baseline recovery", Box::new(baseline_recovery)),
        ("determinism", Box::new(|| with_fixture(determinism))),
        ("format robustness", Box::new(format_robustness)),
        ("lr machinery", Box::new(lr_machinery)),
    ];
    let mut failed = 0;
    for (i, (name, criterion)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|p| Err(panic_message(p)));
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
