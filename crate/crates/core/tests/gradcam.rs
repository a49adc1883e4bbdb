mod support;

use attnbench::attention::AttentionKind;
use attnbench::data::{resize_bilinear, Normalization, Split};
use attnbench::gradcam::{
    gradcam, make_panel, normalize_map, overlay, planes_to_rgb, ramp, raw_map, read_panel_index, write_panel_index,
    Heatmap, PanelOptions, Target,
};
use attnbench::train::positive_probabilities;
use attnbench::{build_resnet18, ModelSpec, ResNet, Tape, Tensor};
use image::{Rgb, RgbImage};
use proptest::prelude::*;
use support::cam::{heatmap_oracle, toy_disagreement};

#[test]
fn hand_set_toy_case() {
    // Channel weights 0.5 and -0.25.
    let a = [1.0, 2.0, 3.0, 4.0, 4.0, 0.0, 2.0, 1.0];
    let g = [0.5, 0.5, 0.5, 0.5, -1.0, 0.0, 0.0, 0.0];
    let mut got = raw_map(&a, &g, 2);
    assert_eq!(got, vec![0.0, 1.0, 1.0, 1.75]);
    normalize_map(&mut got);
    let want = heatmap_oracle(&a, &g, 2, 2, 2);
    for (x, y) in got.iter().zip(&want) {
        assert!((x - y).abs() < 1e-12);
    }
    assert_eq!(want, vec![0.0, 1.0 / 1.75, 1.0 / 1.75, 1.0]);
}

#[test]
fn random_toys_match_oracle() {
    assert!(toy_disagreement(200, 4) < 1e-9);
}

proptest! {
    #[test]
    fn single_channel_argmax_follows_features(
        a in prop::collection::vec(0.0f64..10.0, 2..30),
        g in 0.01f64..5.0,
    ) {
        let m = raw_map(&a, &vec![g; a.len()], 1);
        let argmax = |v: &[f64]| v.iter().enumerate().fold(0, |b, (i, x)| if *x > v[b] { i } else { b });
        prop_assert_eq!(argmax(&m), argmax(&a));
    }

    #[test]
    fn overlay_keeps_image_size(w in 1u32..40, h in 1u32..40, hh in 1usize..6, hw in 1usize..6) {
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7) as u8, (y * 5) as u8, 90]));
        let heat = Heatmap { height: hh, width: hw, values: (0..hh * hw).map(|i| i as f64 / (hh * hw) as f64).collect(), class: 0, probability: 0.5 };
        let out = overlay(&img, &heat, 0.5).unwrap();
        prop_assert_eq!(out.dimensions(), img.dimensions());
        let same = overlay(&img, &heat, 0.0).unwrap();
        prop_assert_eq!(same.as_raw(), img.as_raw());
    }
}

fn gradient_image(side: u32) -> RgbImage {
    RgbImage::from_fn(side, side, |x, y| Rgb([(x * 4) as u8, (y * 3) as u8, ((x + y) % 256) as u8]))
}

#[test]
fn alpha_extremes_and_zero_map() {
    let img = gradient_image(16);
    let heat = Heatmap { height: 2, width: 2, values: vec![0.0, 0.25, 0.75, 1.0], class: 1, probability: 0.9 };
    assert_eq!(overlay(&img, &heat, 0.0).unwrap(), img);
    let pure = overlay(&img, &heat, 1.0).unwrap();
    let up = resize_bilinear(&Tensor::new(&[2, 2], heat.values.clone()).unwrap(), 16, 16).unwrap();
    for (i, px) in pure.pixels().enumerate() {
        let want = ramp(up.data()[i]).map(|v| v.round() as u8);
        assert_eq!(px.0, want);
    }
    let zero = Heatmap { values: vec![0.0; 4], ..heat };
    let blended = overlay(&img, &zero, 0.5).unwrap();
    for (a, b) in blended.pixels().zip(img.pixels()) {
        let want = [0.5 * b[0] as f64, 0.5 * b[1] as f64, 0.5 * b[2] as f64 + 127.5].map(|v| v.round() as u8);
        assert_eq!(a.0, want);
    }
    assert!(overlay(&img, &zero, 1.5).is_err());
}

fn model(kind: AttentionKind, seed: u64) -> ResNet {
    let mut m = build_resnet18::<f64>(&ModelSpec::new(kind).with_width_divisor(16), seed).unwrap();
    let mut r = support::rng(seed + 100);
    support::randomize(&mut m, &mut r);
    m
}

fn image(seed: u64) -> Tensor {
    support::uniform(&mut support::rng(seed), &[3, 48, 48], -1.0, 1.0)
}

/// The head is global average pooling then `fc`, so the logit gradient with
/// respect to the last features is `fc.weight[class, k] / (H·W)` everywhere.
#[test]
fn model_heatmap_matches_head_weights() {
    for kind in AttentionKind::ALL {
        let m = model(kind, 3);
        let x = image(1);
        for class in 0..2 {
            let heat = gradcam(&m, &x, class).unwrap();
            let tape = Tape::new();
            let feats = m.trace(&tape, tape.constant(x.reshape(&[1, 3, 48, 48]).unwrap())).unwrap().stages[3].value();
            let (c, h, w) = (feats.shape()[1], feats.shape()[2], feats.shape()[3]);
            let fc = m.fc.weight.value().data();
            let grads: Vec<f64> = (0..c * h * w).map(|i| fc[class * c + i / (h * w)] / (h * w) as f64).collect();
            let want = heatmap_oracle(feats.data(), &grads, c, h, w);
            assert_eq!((heat.height, heat.width), (h, w));
            for (a, b) in heat.values.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "{kind} class {class}");
            }
            assert!(heat.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn logit_shift_leaves_map_unchanged() {
    let mut m = model(AttentionKind::Cbam, 5);
    let x = image(2);
    let before = gradcam(&m, &x, 1).unwrap();
    m.fc.bias.value_mut().iter_mut().for_each(|b| *b += 7.5);
    let after = gradcam(&m, &x, 1).unwrap();
    assert_eq!(before.values, after.values);
    assert!((before.probability - after.probability).abs() < 1e-12);
}

#[test]
fn probability_is_eval_softmax() {
    let m = model(AttentionKind::Se, 8);
    let x = image(3);
    let tape = Tape::new();
    let logits = m.forward_eval(&tape, tape.constant(x.reshape(&[1, 3, 48, 48]).unwrap())).unwrap().value();
    let p1 = positive_probabilities(&logits)[0];
    assert_eq!(gradcam(&m, &x, 1).unwrap().probability, p1);
    assert!((gradcam(&m, &x, 0).unwrap().probability - (1.0 - p1)).abs() < 1e-15);
    let l = logits.data();
    assert_eq!(gradcam(&m, &x, 0).unwrap().probability, 1.0 / (1.0 + (l[1] - l[0]).exp()));
}

#[test]
fn panels_have_one_overlay_per_model() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = support::pipeline::corpus(&dir.path().join("data"), 3, 40);
    let models: Vec<(AttentionKind, ResNet)> = AttentionKind::ALL.iter().map(|&k| (k, model(k, 1))).collect();
    let refs: Vec<(&str, &ResNet)> = models.iter().map(|(k, m)| (k.label(), m)).collect();
    let options = PanelOptions { size: 40, norm: Normalization::default(), target: Target::GroundTruth, alpha: 0.5 };
    let out = dir.path().join("panels");
    let sample = manifest.split(Split::Validation).next().unwrap();
    let panel = make_panel(&manifest, sample, &refs, &options, &out).unwrap();
    assert_eq!(panel.entries.len(), 4);
    for e in &panel.entries {
        assert_eq!(e.file, format!("{}__{}.png", sample.id, e.model));
        assert_eq!(e.class, sample.label);
        let img = image::open(out.join(&e.file)).unwrap();
        assert_eq!((img.width(), img.height()), (40, 40));
    }
    let input = image::open(out.join(&panel.input)).unwrap().to_rgb8();

    // Same checkpoint, same pixels.
    let again = make_panel(&manifest, sample, &refs, &options, &dir.path().join("again")).unwrap();
    for e in &again.entries {
        assert_eq!(std::fs::read(out.join(&e.file)).unwrap(), std::fs::read(dir.path().join("again").join(&e.file)).unwrap());
    }
    let blank = PanelOptions { alpha: 0.0, ..options };
    let plain = make_panel(&manifest, sample, &refs, &blank, &dir.path().join("plain")).unwrap();
    let overlaid = image::open(dir.path().join("plain").join(&plain.entries[0].file)).unwrap().to_rgb8();
    assert_eq!(overlaid, input);

    let index = out.join("panels.jsonl");
    write_panel_index(&[panel.clone(), again], &index).unwrap();
    let back = read_panel_index(&index).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[0], panel);
}

#[test]
fn planes_round_to_bytes() {
    let p = Tensor::from_f64(&[3, 1, 2], &[0.0, 1.0, 0.5, 0.2, 1.2, -0.1]).unwrap();
    let img = planes_to_rgb(&p).unwrap();
    assert_eq!(img.get_pixel(0, 0).0, [0, 128, 255]);
    assert_eq!(img.get_pixel(1, 0).0, [255, 51, 0]);
}
