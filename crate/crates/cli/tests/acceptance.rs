//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with a plain `main` (no libtest harness) so the lines come out in
//! order and unbuffered. Exits non-zero if any criterion fails. Numeric
//! arguments select criteria, e.g. `cargo test --test acceptance -- 1 9`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use headposr::checkpoint::{Checkpoint, Selection};
use headposr::data::{
    batch, determinant, euler_to_rotation, mat_mul, transpose, AugmentConfig, Dataset, Sample, Split, SynthConfig,
    IDENTITY,
};
use headposr::model::{attention_head, EncoderLayer, HeadKind, PosEmbedKind};
use headposr::nn::{
    batch_norm2d, conv2d, layer_norm, linear, Activation, BufferStore, Initializer, Mode, ParamStore, ResidualBlock,
    Stats,
};
use headposr::train::{
    evaluate, lr_schedule, mae_loss, train, train_step, Adam, AdamConfig, PosePredictor, TrainConfig, EVAL_BATCH_SIZE,
};
use headposr::{no_grad, HeadPose, HeadPosr, ModelConfig, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient checks", gradient_checks),
        ("attention vs loop oracle", attention_oracle),
        ("permutation properties", permutation_properties),
        ("adam", adam),
        ("lr schedule", lr_steps),
        ("synthetic convergence", synthetic_convergence),
        ("ablation determinism", ablation_determinism),
        ("named configs and checkpoints", named_configs),
        ("per-angle mae", per_angle_mae),
        ("rotation geometry", rotation_geometry),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !selected.is_empty() && !selected.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape, &v).unwrap()
}

// ---------------------------------------------------------------- 1

const FD_STEP: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;
// Gradients smaller than this are compared in absolute terms; below it the
// central difference is dominated by rounding (about 1e-10 here).
const GRAD_FLOOR: f64 = 1e-3;

/// Max relative error between autodiff and central differences of `f`,
/// probing up to `per_input` random coordinates of each input.
fn grad_error<F>(f: F, inputs: &[Tensor<f64>], per_input: usize, rng: &mut ChaCha8Rng) -> f64
where
    F: Fn(&[Tensor<f64>]) -> headposr::Result<Tensor<f64>>,
{
    let params: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach().into_param()).collect();
    f(&params).unwrap().backward().unwrap();
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    let _g = no_grad();
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for (which, base) in params.iter().enumerate() {
        let mut coords: Vec<usize> = (0..base.numel()).collect();
        coords.shuffle(rng);
        coords.truncate(per_input);
        for i in coords {
            let mut shifted = |delta: f64| {
                let mut v = base.to_vec();
                v[i] += delta;
                probe[which] = Tensor::from_vec(base.shape(), v).unwrap();
                f(&probe).unwrap().item()
            };
            let numeric = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
            let a = analytic[which][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR));
        }
        probe[which] = base.clone();
    }
    worst
}

/// Sum of `y` weighted by a fixed random tensor, so no gradient cancels.
fn project(y: &Tensor<f64>, seed: u64) -> headposr::Result<Tensor<f64>> {
    let w = rand_tensor(y.shape(), &mut ChaCha8Rng::seed_from_u64(seed));
    y.mul(&w)?.sum_all()
}

fn store_with(template: &ParamStore<f64>, values: &[Tensor<f64>]) -> headposr::Result<ParamStore<f64>> {
    template.with_tensors(values.to_vec())
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut report = Vec::new();
    let mut fail = None;
    let mut record = |name: &str, errs: Vec<f64>| {
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        if worst >= GRAD_TOL && fail.is_none() {
            fail = Some(format!("{name}: max relative error {worst:.2e}"));
        }
        report.push((name.to_string(), worst));
    };

    type Case = (
        &'static str,
        Vec<Vec<usize>>,
        Box<dyn Fn(&[Tensor<f64>]) -> headposr::Result<Tensor<f64>>>,
    );
    let cases: Vec<Case> = vec![
        (
            "conv2d 3x3",
            vec![vec![2, 3, 6, 6], vec![4, 3, 3, 3], vec![4]],
            Box::new(|v| project(&conv2d(&v[0], &v[1], Some(&v[2]), 1, 1)?, 1)),
        ),
        (
            "conv2d 4x4/2",
            vec![vec![2, 3, 6, 6], vec![4, 3, 4, 4], vec![4]],
            Box::new(|v| project(&conv2d(&v[0], &v[1], Some(&v[2]), 2, 1)?, 2)),
        ),
        (
            "batch norm (train)",
            vec![vec![3, 2, 3, 3], vec![2], vec![2]],
            Box::new(|v| {
                let (rm, rv) = (Tensor::zeros(&[2]), Tensor::full(&[2], 1.0));
                project(&batch_norm2d(&v[0], &v[1], &v[2], &rm, &rv, Mode::Train)?.0, 3)
            }),
        ),
        (
            "batch norm (eval)",
            vec![vec![3, 2, 3, 3], vec![2], vec![2]],
            Box::new(|v| {
                let rm = Tensor::from_f64(&[2], &[0.3, -0.2])?;
                let rv = Tensor::from_f64(&[2], &[0.5, 2.0])?;
                project(&batch_norm2d(&v[0], &v[1], &v[2], &rm, &rv, Mode::Eval)?.0, 4)
            }),
        ),
        (
            "linear",
            vec![vec![2, 3, 5], vec![5, 4], vec![4]],
            Box::new(|v| project(&linear(&v[0], &v[1], Some(&v[2]))?, 5)),
        ),
        (
            "layer norm",
            vec![vec![2, 3, 6], vec![6], vec![6]],
            Box::new(|v| project(&layer_norm(&v[0], &v[1], &v[2])?, 6)),
        ),
        (
            "relu",
            vec![vec![2, 3, 5]],
            Box::new(|v| project(&Activation::Relu.apply(&v[0])?, 7)),
        ),
        (
            "gelu",
            vec![vec![2, 3, 5]],
            Box::new(|v| project(&Activation::Gelu.apply(&v[0])?, 8)),
        ),
        (
            "softmax",
            vec![vec![2, 3, 5]],
            Box::new(|v| project(&v[0].softmax(2)?, 9)),
        ),
        (
            "attention head",
            vec![vec![2, 4, 6], vec![6, 3], vec![6, 3], vec![6, 3]],
            Box::new(|v| project(&attention_head(&v[0], &v[1], &v[2], &v[3])?.0, 10)),
        ),
        (
            "mae loss",
            vec![vec![4, 3], vec![4, 3]],
            Box::new(|v| mae_loss(&v[0], &v[1])),
        ),
    ];
    for (name, shapes, f) in &cases {
        let errs = (0..5)
            .map(|point| {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + point);
                let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(s, &mut rng)).collect();
                grad_error(f, &inputs, usize::MAX, &mut rng)
            })
            .collect();
        record(name, errs);
    }

    // Parameterized layers: every parameter tensor plus the input.
    let block = ResidualBlock::new("block", 3, 4, 2);
    let layer = EncoderLayer::new("enc", 8, 2, 32, Activation::Gelu);
    let mut block_errs = Vec::new();
    let mut enc_errs = Vec::new();
    for point in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + point);
        let (mut ps, mut bufs) = (ParamStore::new(), BufferStore::new());
        block
            .register(&mut ps, &mut bufs, &mut Initializer::new(point))
            .unwrap();
        let mut inputs = vec![rand_tensor(&[2, 3, 8, 8], &mut rng)];
        inputs.extend(ps.tensors().map(|t| rand_tensor(t.shape(), &mut rng)));
        block_errs.push(grad_error(
            |v| {
                let mut b = bufs.clone();
                project(
                    &block.forward(&store_with(&ps, &v[1..])?, &mut Stats::Update(&mut b), &v[0])?,
                    11,
                )
            },
            &inputs,
            32,
            &mut rng,
        ));

        let mut ps = ParamStore::new();
        layer.register(&mut ps, &mut Initializer::new(point)).unwrap();
        let mut inputs = vec![rand_tensor(&[2, 5, 8], &mut rng)];
        inputs.extend(ps.tensors().map(|t| rand_tensor(t.shape(), &mut rng)));
        enc_errs.push(grad_error(
            |v| project(&layer.forward(&store_with(&ps, &v[1..])?, &v[0], None)?, 12),
            &inputs,
            32,
            &mut rng,
        ));
    }
    record("residual block", block_errs);
    record("encoder layer", enc_errs);

    // Full tiny model, train-mode batch norm, through the loss.
    let tiny = ModelConfig {
        input_size: 16,
        stride: 4,
        d: 8,
        n_encoders: 1,
        n_heads: 2,
        ..Default::default()
    };
    let mut model_errs = Vec::new();
    for point in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + point);
        let m = HeadPosr::<f64>::new(tiny.clone(), point).unwrap();
        let target = rand_tensor(&[2, 3], &mut rng).scale(30.0).unwrap();
        let mut inputs = vec![rand_tensor(&[2, 3, 16, 16], &mut rng)];
        inputs.extend(
            m.params()
                .tensors()
                .map(|t| rand_tensor(t.shape(), &mut rng).scale(0.5).unwrap()),
        );
        model_errs.push(grad_error(
            |v| {
                let mut b = m.buffers().clone();
                let y = m.forward_with(
                    &store_with(m.params(), &v[1..])?,
                    &mut Stats::Update(&mut b),
                    &v[0],
                    None,
                )?;
                mae_loss(&y, &target)
            },
            &inputs,
            16,
            &mut rng,
        ));
    }
    record("tiny model", model_errs);

    let elapsed = start.elapsed();
    let worst = report.iter().map(|r| r.1).fold(0.0, f64::max);
    if let Some(f) = fail {
        return Err(f);
    }
    check(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} layers plus the tiny model, worst {worst:.2e}",
        report.len() - 1
    ))
}

// ---------------------------------------------------------------- 2

fn naive_attention(
    x: &[f64],
    wq: &[f64],
    wk: &[f64],
    wv: &[f64],
    a: usize,
    d: usize,
    dk: usize,
) -> (Vec<f64>, Vec<f64>) {
    let proj = |w: &[f64]| {
        let mut out = vec![0.0; a * dk];
        for i in 0..a {
            for j in 0..dk {
                for k in 0..d {
                    out[i * dk + j] += x[i * d + k] * w[k * dk + j];
                }
            }
        }
        out
    };
    let (q, k, v) = (proj(wq), proj(wk), proj(wv));
    let mut weights = vec![0.0; a * a];
    for i in 0..a {
        let logits: Vec<f64> = (0..a)
            .map(|j| (0..dk).map(|c| q[i * dk + c] * k[j * dk + c]).sum::<f64>() / (dk as f64).sqrt())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for j in 0..a {
            weights[i * a + j] = (logits[j] - max).exp() / total;
        }
    }
    let mut out = vec![0.0; a * dk];
    for i in 0..a {
        for j in 0..a {
            for c in 0..dk {
                out[i * dk + c] += weights[i * a + j] * v[j * dk + c];
            }
        }
    }
    (out, weights)
}

fn attention_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut worst_row, mut cases) = (0.0f64, 0.0f64, 0);
    for a in 3..=6 {
        for d in 4..=8 {
            let dk = rng.random_range(1..=d);
            let b = 2;
            let x = rand_tensor(&[b, a, d], &mut rng).scale(2.0).unwrap();
            let wq = rand_tensor(&[d, dk], &mut rng);
            let wk = rand_tensor(&[d, dk], &mut rng);
            let wv = rand_tensor(&[d, dk], &mut rng);
            let (out, weights) = attention_head(&x, &wq, &wk, &wv).unwrap();
            for bi in 0..b {
                let xb = &x.data()[bi * a * d..(bi + 1) * a * d];
                let (o, w) = naive_attention(xb, wq.data(), wk.data(), wv.data(), a, d, dk);
                let got_o = &out.data()[bi * a * dk..(bi + 1) * a * dk];
                let got_w = &weights.data()[bi * a * a..(bi + 1) * a * a];
                for (g, e) in got_o.iter().zip(&o).chain(got_w.iter().zip(&w)) {
                    worst = worst.max((g - e).abs() / e.abs().max(1e-12));
                }
            }
            for row in weights.data().chunks(a) {
                worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
            }
            cases += 1;
        }
    }
    check(worst < 1e-6, || format!("relative error {worst:.2e}"))?;
    check(worst_row < 1e-6, || format!("softmax row sum off by {worst_row:.2e}"))?;
    Ok(format!(
        "{cases} shapes, worst relative {worst:.1e}, row sums within {worst_row:.1e}"
    ))
}

// ---------------------------------------------------------------- 3

fn permute_tokens(seq: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let (b, a, d) = (seq.shape()[0], seq.shape()[1], seq.shape()[2]);
    let mut out = Vec::with_capacity(seq.numel());
    for bi in 0..b {
        for &p in perm {
            out.extend_from_slice(&seq.data()[(bi * a + p) * d..][..d]);
        }
    }
    Tensor::from_vec(&[b, a, d], out).unwrap()
}

/// Max output change over 20 random reorderings of the encoder input.
fn permutation_effect(pos_embed: PosEmbedKind, seed: u64) -> f64 {
    let c = ModelConfig {
        input_size: 32,
        stride: 8,
        d: 16,
        pos_embed,
        head_kind: HeadKind::Conv1,
        ..Default::default()
    };
    let m = HeadPosr::<f64>::new(c, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = rand_tensor(&[2, 3, 32, 32], &mut rng);
    let feats = m
        .backbone_forward(m.params(), &mut Stats::Frozen(m.buffers()), &images)
        .unwrap();
    let seq = m.connector_forward(m.params(), &feats).unwrap();
    let pos = m.positional_embedding(m.params()).unwrap();
    let run = |perm: &[usize]| {
        let enc = m
            .encoder_forward(m.params(), &permute_tokens(&seq, perm), &pos, None)
            .unwrap();
        m.head_forward(m.params(), &enc).unwrap().to_vec()
    };
    let ident: Vec<usize> = (0..seq.shape()[1]).collect();
    let base = run(&ident);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut perm = ident.clone();
        perm.shuffle(&mut rng);
        for (a, b) in run(&perm).iter().zip(&base) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn permutation_properties() -> Outcome {
    let none = permutation_effect(PosEmbedKind::None, 31);
    let sine = permutation_effect(PosEmbedKind::Sine, 32);
    check(none < 1e-5, || {
        format!("without embedding the output moved by {none:.2e}")
    })?;
    check(sine > 1e-3, || format!("sine embedding output moved only {sine:.2e}"))?;
    Ok(format!("no embedding moves {none:.1e}, sine moves {sine:.2e}"))
}

// ---------------------------------------------------------------- 4

fn adam() -> Outcome {
    let cfg = AdamConfig::default();
    let lr = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let theta0: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut ps = ParamStore::new();
        ps.insert("w", Tensor::from_vec(&[5], theta0.clone()).unwrap().into_param())
            .unwrap();
        let mut opt = Adam::<f64>::new(cfg);
        opt.step_with(&mut ps, &[Some(g.clone())], lr).unwrap();
        // m̂ = g and v̂ = g², so the step is lr·g/(|g| + ε).
        for ((t, t0), gi) in ps.get("w").unwrap().data().iter().zip(&theta0).zip(&g) {
            let expected = t0 - lr * gi / (gi.abs() + cfg.eps);
            worst = worst.max((t - expected).abs());
        }
    }
    check(worst < 1e-9, || format!("first step off by {worst:.2e}"))?;

    let mut ps = ParamStore::new();
    ps.insert("theta", Tensor::<f64>::scalar(0.0).into_param()).unwrap();
    let mut opt = Adam::<f64>::new(cfg);
    for _ in 0..200 {
        let theta = ps.get("theta").unwrap();
        let diff = theta.sub(&Tensor::scalar(3.0)).unwrap();
        diff.mul(&diff).unwrap().backward().unwrap();
        opt.step(&mut ps, 0.1).unwrap();
    }
    let gap = (ps.get("theta").unwrap().item() - 3.0).abs();
    check(gap < 0.05, || format!("|θ−3| = {gap:.4} after 200 steps"))?;
    Ok(format!("first step within {worst:.1e}, |θ−3| = {gap:.4}"))
}

// ---------------------------------------------------------------- 5

fn lr_steps() -> Outcome {
    for (lr0, expected) in [(1e-3, [1e-3, 1e-4, 1e-5]), (1e-2, [1e-2, 1e-3, 1e-4])] {
        let cfg = TrainConfig {
            lr0,
            ..Default::default()
        };
        let got = [lr_schedule(0, &cfg), lr_schedule(30, &cfg), lr_schedule(60, &cfg)];
        check(got == expected, || {
            format!("lr0 {lr0}: got {got:?}, expected {expected:?}")
        })?;
        check(
            lr_schedule(29, &cfg) == lr0 && lr_schedule(59, &cfg) == expected[1],
            || format!("lr0 {lr0}: step taken early"),
        )?;
    }
    Ok("lr(0), lr(30), lr(60) exact for lr0 1e-3 and 1e-2".into())
}

// ---------------------------------------------------------------- 6

fn synthetic_convergence() -> Outcome {
    let start = Instant::now();
    let gen = |count, seed| {
        SynthConfig {
            count,
            size: 64,
            seed,
            noise_level: 0.05,
        }
        .generate()
        .unwrap()
    };
    let data = Dataset::from_parts(gen(2000, 1), vec![], gen(500, 100_000));
    let config = ModelConfig::default();
    check(
        (
            config.input_size,
            config.stride,
            config.d,
            config.n_encoders,
            config.n_heads,
        ) == (64, 8, 16, 3, 4)
            && config.activation == Activation::Relu
            && config.pos_embed == PosEmbedKind::Learnable
            && config.head_kind == HeadKind::ConvK,
        || format!("default config drifted: {config:?}"),
    )?;
    let mut model = HeadPosr::<f32>::new(config, 0).unwrap();
    let test = data.split(Split::Test);
    let before = evaluate(&model, &test, EVAL_BATCH_SIZE).unwrap().mae_overall;
    let cfg = TrainConfig {
        epochs: 30,
        lr0: 1e-3,
        ..Default::default()
    };
    train(&mut model, &data, &cfg, &AugmentConfig::default()).unwrap();
    let after = evaluate(&model, &test, EVAL_BATCH_SIZE).unwrap();
    let elapsed = start.elapsed();
    let detail = format!("untrained {before:.2}°, trained {after}");
    check(after.mae_overall < 10.0, || format!("{detail}: not below 10°"))?;
    check(after.mae_overall < 0.5 * before, || {
        format!("{detail}: not below half the untrained error")
    })?;
    check(elapsed < Duration::from_secs(3600), || {
        format!("{detail}: took {elapsed:?}")
    })?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_headposr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!(
            "headposr {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn ablation_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    std::fs::write(p("ablate.cfg"), "input_size=32\nepochs=2\nseed=3\n").map_err(|e| e.to_string())?;
    run_cli(&[
        "synth",
        "--out",
        &p("data"),
        "--count",
        "500",
        "--seed",
        "9",
        "--size",
        "32",
    ])?;
    let mut outputs = Vec::new();
    for run in ["a.csv", "b.csv"] {
        run_cli(&[
            "ablate",
            "--axis",
            "heads",
            "--values",
            "1,2,4,8,16",
            "--data",
            &p("data"),
            "--config",
            &p("ablate.cfg"),
            "--out",
            &p(run),
        ])?;
        outputs.push(std::fs::read(p(run)).map_err(|e| e.to_string())?);
    }
    let text = String::from_utf8_lossy(&outputs[0]).into_owned();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    check(rows.len() == 5, || format!("expected 5 rows, got:\n{text}"))?;
    check(
        rows.iter()
            .zip(["1", "2", "4", "8", "16"])
            .all(|(r, v)| r.split(',').next() == Some(v)),
        || format!("rows out of order:\n{text}"),
    )?;
    check(outputs[0] == outputs[1], || "the two runs differ".into())?;
    Ok(format!("5 rows, {} identical bytes", outputs[0].len()))
}

// ---------------------------------------------------------------- 8

fn named_configs() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut sizes = Vec::new();
    for (name, config) in [("EH38", ModelConfig::eh38()), ("EH64", ModelConfig::eh64())] {
        let expected = if name == "EH38" { (3, 8) } else { (6, 4) };
        check((config.n_encoders, config.n_heads) == expected, || {
            format!("{name} is {config:?}")
        })?;
        let mut model = HeadPosr::<f32>::new(config.clone(), 0).map_err(|e| format!("{name}: {e}"))?;
        let samples = SynthConfig {
            count: 4,
            size: config.input_size,
            seed: 8,
            noise_level: 0.05,
        }
        .generate()
        .unwrap();
        let refs: Vec<&Sample> = samples.iter().collect();
        let (images, targets) = batch(&refs).unwrap();
        let mut opt = Adam::new(AdamConfig::default());
        let before = model.params().clone();
        let loss = train_step(&mut model, &mut opt, &images, &targets, 1e-3).map_err(|e| format!("{name}: {e}"))?;
        check(loss.is_finite() && opt.t == 1, || {
            format!("{name}: step loss {loss}, t {}", opt.t)
        })?;
        check(
            before
                .iter()
                .zip(model.params().iter())
                .any(|((_, a), (_, b))| a.data() != b.data()),
            || format!("{name}: the step left every parameter unchanged"),
        )?;

        let train_cfg = TrainConfig::default();
        let mut ckpt = Checkpoint::from_model(&model, &train_cfg, &AugmentConfig::default(), Selection::Final);
        ckpt.epoch = Some(0);
        ckpt.optimizer = Some(opt);
        let bytes = ckpt.to_bytes();
        let path = dir.path().join(format!("{name}.ckpt"));
        ckpt.save(&path).map_err(|e| e.to_string())?;
        let loaded = Checkpoint::load(&path).map_err(|e| format!("{name}: {e}"))?;
        check(loaded.to_bytes() == bytes, || {
            format!("{name}: re-serialized bytes differ")
        })?;
        check(loaded.optimizer == ckpt.optimizer, || {
            format!("{name}: optimizer state differs")
        })?;
        let restored = loaded.to_model().map_err(|e| e.to_string())?;
        let same = model
            .params()
            .iter()
            .zip(restored.params().iter())
            .all(|((na, a), (nb, b))| na == nb && a.shape() == b.shape() && a.data() == b.data());
        check(same, || format!("{name}: restored parameters differ"))?;
        let probe = &images;
        let (ya, yb) = (model.forward(probe).unwrap(), restored.forward(probe).unwrap());
        check(ya.data() == yb.data(), || {
            format!("{name}: restored model predicts differently")
        })?;
        sizes.push(format!("{name} {} bytes", bytes.len()));
    }
    Ok(sizes.join(", "))
}

// ---------------------------------------------------------------- 9

/// Returns the pose stored for the index encoded in each image's first value.
struct Table(Vec<HeadPose>);

impl PosePredictor for Table {
    fn predict_batch(&self, images: &Tensor<f32>) -> headposr::Result<Vec<HeadPose>> {
        let per = images.numel() / images.shape()[0];
        Ok(images.data().chunks(per).map(|c| self.0[c[0] as usize]).collect())
    }
}

fn per_angle_mae() -> Outcome {
    let p = HeadPose::new;
    // (predictions, targets, expected yaw/pitch/roll/overall), worked by hand.
    let cases = [
        (
            vec![p(12.0, 17.0, 30.0), p(-5.0, 4.0, -1.0)],
            vec![p(10.0, 20.0, 30.0), p(-5.0, 0.0, 5.0)],
            [1.0, 3.5, 3.0, 2.5],
        ),
        (
            vec![p(0.25, -90.0, 45.5), p(-0.25, 90.0, 44.5), p(1.0, 0.0, 45.0)],
            vec![p(0.0, -89.0, 45.0), p(0.0, 88.0, 45.0), p(0.0, 0.0, 45.0)],
            // yaw (0.25+0.25+1)/3, pitch (1+2+0)/3, roll (0.5+0.5+0)/3
            [0.5, 1.0, 1.0 / 3.0, (0.5 + 1.0 + 1.0 / 3.0) / 3.0],
        ),
        (
            vec![p(-99.0, 99.0, 0.0)],
            vec![p(99.0, -99.0, 0.0)],
            [198.0, 198.0, 0.0, 132.0],
        ),
    ];
    let mut worst = 0.0f64;
    for (preds, targets, expected) in cases {
        let samples: Vec<Sample> = targets
            .iter()
            .enumerate()
            .map(|(i, &pose)| Sample {
                image: Tensor::from_vec(&[3, 1, 1], vec![i as f32, 0.0, 0.0]).unwrap(),
                pose,
                id: i.to_string(),
            })
            .collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        for batch_size in [1, 2, 64] {
            let m = evaluate(&Table(preds.clone()), &refs, batch_size).map_err(|e| e.to_string())?;
            let got = [m.mae_yaw, m.mae_pitch, m.mae_roll, m.mae_overall];
            for (g, e) in got.iter().zip(&expected) {
                worst = worst.max((g - e).abs());
            }
            check(m.n_samples == targets.len(), || {
                format!("counted {} samples", m.n_samples)
            })?;
        }
    }
    check(worst < 1e-9, || format!("off by {worst:.2e}"))?;
    Ok(format!("3 hand-worked sets, worst error {worst:.1e}"))
}

// ---------------------------------------------------------------- 10

fn rotation_geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut ortho, mut det) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let pose = HeadPose::new(
            rng.random_range(-180.0..180.0),
            rng.random_range(-180.0..180.0),
            rng.random_range(-180.0..180.0),
        );
        let r = euler_to_rotation(pose);
        let rtr = mat_mul(&transpose(&r), &r);
        for i in 0..3 {
            for j in 0..3 {
                ortho = ortho.max((rtr[i][j] - IDENTITY[i][j]).abs());
            }
        }
        det = det.max((determinant(&r) - 1.0).abs());
    }
    check(ortho < 1e-6, || format!("RᵀR off identity by {ortho:.2e}"))?;
    check(det < 1e-6, || format!("det R off 1 by {det:.2e}"))?;
    check(euler_to_rotation(HeadPose::default()) == IDENTITY, || {
        "R(0,0,0) is not the identity".into()
    })?;
    Ok(format!("100 poses, RᵀR within {ortho:.1e}, det within {det:.1e}"))
}
