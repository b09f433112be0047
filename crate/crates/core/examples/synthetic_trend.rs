//! Compare augmented-input training against the raw-image baseline on
//! synthetic blobs.
//!
//! ```sh
//! cargo run --release --example synthetic_trend -- [iters] [seeds]
//! ```

use std::time::Instant;

use samaug::data::{synth_dataset, Sample, SynthDatasetParams};
use samaug::deployment::{infer_aug_only, activate};
use samaug::masks::SynthMaskParams;
use samaug::metrics::dice;
use samaug::model::{SegModel, UNet, UNetSpec};
use samaug::training::{train, TrainConfig};

fn mean_dice(net: &UNet, test: &[Sample], augmented: bool) -> f64 {
    let total: f64 = test
        .iter()
        .map(|s| {
            let p = if augmented {
                infer_aug_only(net, s.augmented().pixels()).unwrap()
            } else {
                activate(&net.forward(&s.image.to_model_input()), net.activation())
            };
            dice(&p.foreground(), &s.instances.foreground()).unwrap()
        })
        .sum();
    total / test.len() as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let params = |n| SynthDatasetParams {
        n_images: n,
        image_size: 128,
        blobs_per_image: 6,
        masks: SynthMaskParams {
            dilate_px: 1,
            drop_prob: 0.2,
            stability_range: (0.85, 1.0),
        },
        ..Default::default()
    };
    let mut gaps = Vec::new();
    for seed in 0..seeds {
        let train_set = synth_dataset(&params(40), 1000 + seed).unwrap().samples;
        let test_set = synth_dataset(&params(10), 2000 + seed).unwrap().samples;
        let pairs: Vec<_> = train_set.iter().map(|s| s.to_train_sample()).collect();
        let spec = UNetSpec {
            base_channels: 4,
            num_classes: 2,
        };
        let base = TrainConfig {
            batch_size: 4,
            crop_size: 48,
            lr: 5e-3,
            total_iters: iters,
            seed,
            ..Default::default()
        };
        let t = Instant::now();
        let mut aug_net = UNet::new(spec, seed).unwrap();
        train(&mut aug_net, &pairs, &TrainConfig { beta: 0.0, lambda: 1.0, ..base.clone() }).unwrap();
        let mut raw_net = UNet::new(spec, seed).unwrap();
        train(&mut raw_net, &pairs, &TrainConfig { beta: 1.0, lambda: 0.0, ..base.clone() }).unwrap();
        let d_aug = mean_dice(&aug_net, &test_set, true);
        let d_raw = mean_dice(&raw_net, &test_set, false);
        println!(
            "seed {seed}: augmented {:.4} raw {:.4} gap {:+.2} pts ({:.1}s)",
            d_aug,
            d_raw,
            100.0 * (d_aug - d_raw),
            t.elapsed().as_secs_f64()
        );
        gaps.push(d_aug - d_raw);
    }
    println!("mean gap {:+.2} Dice points", 100.0 * gaps.iter().sum::<f64>() / gaps.len() as f64);
}
