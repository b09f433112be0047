use samaug::data::{synth_dataset, Sample, SynthDatasetParams};
use samaug::model::{SegModel, UNet, UNetSpec};
use samaug::training::{train, Checkpoint, TrainConfig};

fn pairs() -> Vec<samaug::training::TrainSample> {
    let params = SynthDatasetParams { n_images: 4, image_size: 32, blobs_per_image: 3, ..Default::default() };
    synth_dataset(&params, 21).unwrap().samples.iter().map(Sample::to_train_sample).collect()
}

fn cfg(iters: usize) -> TrainConfig {
    TrainConfig { batch_size: 2, crop_size: 24, lr: 5e-3, total_iters: iters, seed: 3, ..Default::default() }
}

fn spec() -> UNetSpec {
    UNetSpec { base_channels: 2, num_classes: 2 }
}

#[test]
fn loss_decreases() {
    let mut net = UNet::new(spec(), 3).unwrap();
    let h = train(&mut net, &pairs(), &cfg(200)).unwrap();
    let head: f64 = h[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = h[180..].iter().sum::<f64>() / 20.0;
    assert!(tail < head, "first {head} last {tail}");
}

#[test]
fn seeded_runs_repeat_and_zero_iters_is_noop() {
    let data = pairs();
    let mut a = UNet::new(spec(), 3).unwrap();
    let mut b = UNet::new(spec(), 3).unwrap();
    assert_eq!(train(&mut a, &data, &cfg(15)).unwrap(), train(&mut b, &data, &cfg(15)).unwrap());
    assert_eq!(a, b);

    let mut c = UNet::new(spec(), 3).unwrap();
    let before = c.params().to_vec();
    assert!(train(&mut c, &data, &cfg(0)).unwrap().is_empty());
    assert_eq!(c.params(), &before[..]);
}

#[test]
fn checkpoint_round_trip() {
    let mut net = UNet::new(spec(), 1).unwrap();
    train(&mut net, &pairs(), &cfg(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    Checkpoint::new(&net, &cfg(3), 3).save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.iteration, 3);
    assert_eq!(back.config, cfg(3));
    assert_eq!(back.to_model().unwrap(), net);
}
