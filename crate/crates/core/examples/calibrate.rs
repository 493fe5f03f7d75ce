// Scratch calibration runner (not part of the deliverable surface; used to
// pick epoch counts for the acceptance suite).

use std::time::Instant;

use mddae_core::data::{generate_synth, split, SplitSpec, SynthFactorSpec};
use mddae_core::evalkit::{disentanglement_protocol, SvmConfig};
use mddae_core::losses::{Decorrelation, LossWeights};
use mddae_core::nets::{encode_values, Arch, Dims, Mode, ModelParams, ValueRange};
use mddae_core::optim::{evaluate, fit, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("synth");
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(60);
    match which {
        "synth" => synth_run(epochs, Decorrelation::DCov2, 5),
        "xcov" => synth_run(epochs, Decorrelation::XCov, 5),
        "nodec" => synth_run(epochs, Decorrelation::None, 5),
        _ => panic!("unknown mode"),
    }
}

fn env_usize(name: &str, default: usize) -> usize {
    std::env::var(name)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn synth_run(epochs: usize, dec: Decorrelation, seed: u64) {
    let t0 = Instant::now();
    let ds = generate_synth(
        &SynthFactorSpec {
            size: 16,
            samples: 2800,
        },
        1234,
    )
    .unwrap();
    let (train, val, test) = split(&ds, SplitSpec::Counts(2000, 400, 400), 99).unwrap();
    let init = ModelParams::init(
        Mode::Attribute,
        Dims {
            c: 3,
            z: 8,
            channels: 1,
            height: 16,
            width: 16,
        },
        Arch {
            conv1: env_usize("C1", 8),
            conv2: env_usize("C2", 16),
            hidden: env_usize("HID", 64),
        },
        ValueRange::Unit,
        seed,
    )
    .unwrap();
    let zscale: f64 = std::env::var("ZSCALE")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1.0);
    let tensors = init
        .params()
        .iter()
        .map(|(n, t)| {
            let values: Vec<f64> = if n == "enc.head_z.w" {
                t.values().iter().map(|v| v * zscale).collect()
            } else {
                t.values().to_vec()
            };
            (
                n.clone(),
                mddae_core::Tensor::new(t.shape(), values).unwrap(),
            )
        })
        .collect();
    let mut params = ModelParams::from_named_tensors(
        init.mode,
        init.dims,
        init.arch,
        init.value_range,
        tensors,
    )
    .unwrap();
    let config = TrainConfig {
        batch_size: 100,
        epochs,
        seed,
        weights: LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 5.0,
            decorrelation: dec,
            use_dssim: true,
        },
        lr: 1e-4,
        adam_beta1: 0.5,
        adam_beta2: 0.999,
    };
    let untrained = evaluate(&params, &val, &config).unwrap();
    println!("untrained val: total {:.4} rec {:.4}", untrained.total, untrained.rec);
    let t1 = Instant::now();
    let result = fit(&mut params, &train, &val, &config).unwrap();
    let dt = t1.elapsed().as_secs_f64();
    println!(
        "trained {epochs} epochs in {:.1}s ({:.2}s/epoch), best epoch {}",
        dt,
        dt / epochs as f64,
        result.best_epoch
    );
    for r in result.history.iter().step_by(10.max(epochs / 10)) {
        println!(
            "  epoch {:3}: rec {:.4} dis {:.4} dec {:.6} total {:.4} val {:.4}",
            r.epoch, r.train.rec, r.train.dis, r.train.dec, r.train.total, r.val_total
        );
    }
    let last = result.history.last().unwrap();
    println!(
        "last epoch: rec {:.4} val {:.4}; untrained rec {:.4}; ratio {:.4}",
        last.train.rec,
        last.val_total,
        untrained.rec,
        evaluate(&result.best, &val, &config).unwrap().rec / untrained.rec
    );

    // Soft-target accuracy at threshold 0.5.
    let best = result.best;
    let (y, _z) = encode_values(&best, val.images_flat(), val.len()).unwrap();
    let mut correct = [0usize; 3];
    for i in 0..val.len() {
        for a in 0..3 {
            let pred = y[i * 3 + a] >= 0.5;
            let truth = val.label(i)[a] == 1.0;
            if pred == truth {
                correct[a] += 1;
            }
        }
    }
    println!(
        "y_hat accuracy: {:?}",
        correct.map(|c| c as f64 / val.len() as f64)
    );

    // Protocol on each attribute.
    for attr in 0..3 {
        let report = disentanglement_protocol(
            &best,
            &train,
            &test,
            attr,
            &[0.25, 0.5, 1.0, 1.5, 2.0],
            &SvmConfig::default(),
        )
        .unwrap();
        println!("protocol attr {attr} ({:?}): {:?}", report.attribute_name, report.means);
    }
    println!("total time {:.1}s", t0.elapsed().as_secs_f64());
}
