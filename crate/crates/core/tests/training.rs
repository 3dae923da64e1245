//! Small end-to-end training runs.

use motion_profile::nn::head::assign_targets;
use motion_profile::nn::infer::profile_to_input;
use motion_profile::nn::loss::yolo_loss;
use motion_profile::nn::{train, Detector, Tensor, TrainConfig};
use motion_profile::synth::{random_scene, render_profile, sample_seed, DatasetConfig, LabeledProfile};

fn clean_samples(n: usize) -> Vec<LabeledProfile> {
    let cfg = DatasetConfig {
        count: n,
        noise_sigma: 0.0,
        max_maneuvers: 1,
        seed: 11,
        ..DatasetConfig::default()
    };
    (0..n)
        .map(|i| {
            let s = render_profile(&random_scene(&cfg, i), sample_seed(cfg.seed, i)).unwrap();
            LabeledProfile {
                id: format!("{i:04}"),
                profile: s.profile,
                ground_truth: s.ground_truth,
            }
        })
        .collect()
}

fn mean_loss(det: &Detector<f32>, set: &[LabeledProfile], cfg: &TrainConfig) -> f64 {
    let layout = cfg.detector.layout();
    let inputs: Vec<Tensor<f32>> = set.iter().map(|s| profile_to_input(&s.profile, &cfg.detector).unwrap()).collect();
    let x = Tensor::stack(&inputs.iter().collect::<Vec<_>>()).unwrap();
    let targets: Vec<_> = set.iter().map(|s| assign_targets(&s.ground_truth, &layout)).collect();
    let raw = det.forward(&x).unwrap();
    yolo_loss(&raw, &targets, &layout, &cfg.loss_weights).unwrap().0.total
}

#[test]
fn ten_clean_samples_overfit_in_200_steps() {
    let set = clean_samples(10);
    let cfg = TrainConfig {
        // Full batch, so one epoch is one step.
        epochs: 200,
        batch_size: 10,
        seed: 3,
        ..TrainConfig::default()
    };
    let initial = mean_loss(&Detector::new(cfg.detector.clone(), cfg.seed).unwrap(), &set, &cfg);
    let out = train(&set, &set, &cfg, None).unwrap();
    let last = out.history.iter().rev().find(|e| e.split == "train").unwrap();
    let final_loss = mean_loss(&out.detector, &set, &cfg);
    assert!(final_loss < 0.1 * initial, "initial {initial}, final {final_loss} (last epoch {})", last.loss);
    eprintln!("loss {initial:.3} -> {final_loss:.3}");
    assert_eq!(out.history.iter().filter(|e| e.split == "train").count(), cfg.epochs);
    assert!(out.best_epoch <= cfg.epochs);
}
