use super::*;
use crate::alignment::FrameExample;
use rand::Rng;

fn tiny_cfg(mode: &str) -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.mode.mode = mode.into();
    cfg.vit.image_size = 32;
    cfg.vit.dropout = 0.0;
    cfg
}

fn examples(n: usize, seed: u64) -> Vec<FrameExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| FrameExample {
            utterance_id: "u".into(),
            speaker_id: "s".into(),
            frame_index: i,
            frame: (0..32 * 32).map(|_| rng.gen()).collect(),
            audio_window: Some((0..1067).map(|_| rng.gen_range(-3000..3000)).collect()),
            labels: [Some(i % 6), Some(i % 8), Some(i % 3)],
        })
        .collect()
}

fn batch(model: &Model, ex: &[FrameExample]) -> Batch {
    let refs: Vec<&FrameExample> = ex.iter().collect();
    Batch::from_examples(&refs, model.dimension(), &model.cfg.vit, true, true).unwrap()
}

#[test]
fn zero_head_gives_uniform_logits() {
    for m in registry() {
        let model = Model::new(&tiny_cfg(m.name()), 1067, &[1.0; 3], 1).unwrap();
        let logits = model.logits(&batch(&model, &examples(3, 2))).unwrap();
        assert_eq!(logits.shape(), [3, 3], "{}", m.name());
        assert!(logits.data().iter().all(|&v| v == logits.data()[0]));
    }
}

#[test]
fn lookup_by_name() {
    assert_eq!(lookup("Contrast").unwrap().name(), "contrast");
    assert!(lookup("late-fusion").is_err());
    assert!(!lookup("contrast").unwrap().inference_uses_audio());
    assert!(lookup("fusion").unwrap().inference_uses_audio());
}

#[test]
fn fusion_head_width() {
    let model = Model::new(&tiny_cfg("fusion"), 1067, &[1.0; 3], 1).unwrap();
    let head = model.parts().head.as_ref().unwrap();
    assert_eq!(head.in_dim, 64 + 64);
}

#[test]
fn frozen_audio_in_unia() {
    let model = Model::new(&tiny_cfg("unia"), 1067, &[1.0; 3], 1).unwrap();
    let b = batch(&model, &examples(4, 3));
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, &mut Ctx::train(1), &b).unwrap();
    let grads = tape.backward(loss.total).unwrap();
    for (id, _) in grads.iter() {
        let name = model.store.get(id).name();
        assert!(!name.starts_with("audio."), "{name} received a gradient");
    }
    assert!(grads.iter().any(|(id, _)| model.store.get(id).name().starts_with("pool.")));
}

fn lit(tape: &mut Tape, shape: &[usize], data: Vec<f64>) -> Var {
    tape.constant(Tensor::new(shape, data).unwrap())
}

#[test]
fn contrastive_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..3 * 4 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let mut tape = Tape::inference();
    let a = lit(&mut tape, &[3, 4, 5], x.clone());
    let b = lit(&mut tape, &[3, 4, 5], neg);
    let same = contrastive_loss(&mut tape, a, a, Negatives::None, 0.0).unwrap();
    let opp = contrastive_loss(&mut tape, a, b, Negatives::None, 0.0).unwrap();
    assert!(tape.value(same).item().unwrap().abs() < 1e-12);
    assert!((tape.value(opp).item().unwrap() - 2.0).abs() < 1e-12);

    // brute-force per-pair oracle, positive rescaling invariance, margin negatives
    let y: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cos = |p: &[f64], q: &[f64]| {
        let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
        dot / (p.iter().map(|a| a * a).sum::<f64>().sqrt() * q.iter().map(|a| a * a).sum::<f64>().sqrt())
    };
    let pos: f64 = (0..3).map(|i| 1.0 - cos(&x[i * 20..(i + 1) * 20], &y[i * 20..(i + 1) * 20])).sum::<f64>() / 3.0;
    let mut negs = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                negs += (cos(&x[i * 20..(i + 1) * 20], &y[j * 20..(j + 1) * 20]) - 0.1).max(0.0);
            }
        }
    }
    let c = lit(&mut tape, &[3, 4, 5], y.clone());
    let scaled = lit(&mut tape, &[3, 4, 5], y.iter().map(|v| v * 7.5).collect());
    let l = contrastive_loss(&mut tape, a, c, Negatives::None, 0.0).unwrap();
    let ls = contrastive_loss(&mut tape, a, scaled, Negatives::None, 0.0).unwrap();
    let lm = contrastive_loss(&mut tape, a, c, Negatives::InBatchMargin, 0.1).unwrap();
    assert!((tape.value(l).item().unwrap() - pos).abs() < 1e-12);
    assert!((tape.value(ls).item().unwrap() - pos).abs() < 1e-12);
    assert!((tape.value(lm).item().unwrap() - (pos + negs / 6.0)).abs() < 1e-12);
}

#[test]
fn total_loss_arithmetic() {
    let mut tape = Tape::inference();
    let logits = lit(&mut tape, &[2, 3], vec![0.3, -1.0, 2.0, 0.0, 0.5, 0.1]);
    let w = lit(&mut tape, &[3], vec![0.5, 1.5, 1.0]);
    let img = lit(&mut tape, &[2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]);
    let aud = lit(&mut tape, &[2, 1, 2], vec![1.0, 1.0, 1.0, 0.0]);
    let zero = total_loss(&mut tape, logits, &[2, 1], &[1.0, 1.0], w, Some((img, aud)), 0.0, Negatives::None, 0.0).unwrap();
    let ce = tape.weighted_cross_entropy(logits, w, &[2, 1], &[1.0, 1.0]).unwrap();
    assert_eq!(tape.value(zero.total).item().unwrap().to_bits(), tape.value(ce).item().unwrap().to_bits());

    let p = total_loss(&mut tape, logits, &[2, 1], &[1.0, 1.0], w, Some((img, aud)), 0.1, Negatives::None, 0.0).unwrap();
    let (cls, cos) = (tape.value(p.cls).item().unwrap(), tape.value(p.cos.unwrap()).item().unwrap());
    assert!((tape.value(p.total).item().unwrap() - (cls + 0.1 * cos)).abs() < 1e-15);
    assert!((0.7f64 + 0.1 * 0.3 - 0.73).abs() < 1e-15);
}

#[test]
fn class_weight_prior() {
    let w = effective_class_weights(&[0.0; 4]);
    assert!(w.iter().all(|&v| (v - 1.0).abs() < 1e-15));

    let mut store = ParamStore::new();
    let mut pct = vec![1.0; 8];
    pct[0] = 29.04;
    pct[5] = 0.20;
    // percentages scaled to counts so the floor at one does not bite
    let counts: Vec<f64> = pct.iter().map(|p| p * 1000.0).collect();
    let cw = ClassWeights::new(&mut store, &counts).unwrap();
    let w = effective_class_weights(store.value(cw.logits).data());
    assert!((w[5] / w[0] - 145.2).abs() < 1e-9);
    assert!((w.iter().sum::<f64>() - 8.0).abs() < 1e-12);
}

#[test]
fn contrast_prediction_ignores_audio() {
    let mut model = Model::new(&tiny_cfg("contrast"), 1067, &[5.0, 3.0, 2.0], 9).unwrap();
    // perturb the head so logits are not constant
    let head = model.parts().head.as_ref().unwrap().w;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for v in model.store.get_mut(head).value_mut().data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let ex = examples(3, 5);
    let full = batch(&model, &ex);
    let mut tape = Tape::inference();
    let train_out = model.forward_with(&model.store, &mut tape, &mut Ctx::eval(), &full, true).unwrap();
    let expected = tape.value(train_out.logits).clone();
    let got = model.predict_contrastive(full.patches.as_ref().unwrap()).unwrap();
    assert_eq!(got, expected);

    let univ = Model::new(&tiny_cfg("univ"), 1067, &[1.0; 3], 9).unwrap();
    assert!(matches!(univ.predict_contrastive(full.patches.as_ref().unwrap()), Err(Error::WrongMode { .. })));
}

#[test]
fn checkpoint_roundtrip() {
    let model = Model::new(&tiny_cfg("fusion"), 1067, &[5.0, 3.0, 2.0], 9).unwrap();
    let ck = model.checkpoint([1; 32], serde_json::json!({"fold": 0})).unwrap();
    let (back, meta) = Model::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
    assert_eq!(meta.mode, "fusion");
    assert_eq!(back.store.snapshot(), model.store.snapshot());
    let b = batch(&model, &examples(2, 1));
    assert_eq!(back.logits(&b).unwrap(), model.logits(&b).unwrap());
}
