use super::train::{train_step, Trainer, TrainConfig};
use super::*;
use crate::layers::ForwardCtx;
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::softmax_slice;

fn small_cfg(vocab: usize) -> ClassifierConfig {
    ClassifierConfig {
        vocab_size: vocab,
        embed_dim: 3,
        hidden_size: 4,
        num_layers: 1,
        dropout: 0.0,
        num_classes: 3,
        max_len: 5,
        dense_hidden: 5,
        seed: 11,
        ..ClassifierConfig::default()
    }
}

fn zero_except(ps: &mut ParamSet, keep: &[&str]) {
    for i in 0..ps.len() {
        let name = ps.names()[i].clone();
        if !keep.iter().any(|k| name.starts_with(k)) {
            ps.tensors_mut()[i].values_mut().fill(0.0);
        }
    }
}

fn copy_prefix(ps: &mut ParamSet, from: &str, to: &str) {
    let names: Vec<String> = ps.names().to_vec();
    for n in names.iter().filter(|n| n.starts_with(from)) {
        let target = format!("{to}{}", &n[from.len()..]);
        let src = ps.get(ps.find(n).unwrap()).values().to_vec();
        let dst = ps.find(&target).unwrap();
        ps.get_mut(dst).values_mut().copy_from_slice(&src);
    }
}

fn sums_to_one(p: &[f64]) -> bool {
    p.iter().all(|&x| x >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9
}

#[test]
fn lstm_with_zero_recurrent_params_outputs_softmax_of_bias() {
    let mut m = SequenceModel::new(ModelKind::Lstm, small_cfg(7)).unwrap();
    zero_except(&mut m.params, &["embed", "head.b"]);
    let bias = m.params.get(m.params.find("head.b").unwrap()).values().to_vec();
    let expect = softmax_slice(&bias);
    for tokens in [vec![2, 3, 4, 5], vec![6, 1, 0, 0]] {
        let out = m.forward_tokens(&tokens).unwrap();
        assert_eq!(out.probabilities.len(), 3);
        for (a, b) in out.probabilities.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn bilstm_zero_params_and_width() {
    let mut m = SequenceModel::new(ModelKind::Bilstm, small_cfg(7)).unwrap();
    assert_eq!(m.feature_dim(), 8);
    zero_except(&mut m.params, &["embed", "head.b"]);
    let bias = m.params.get(m.params.find("head.b").unwrap()).values().to_vec();
    let out = m.forward_tokens(&[3, 4, 5]).unwrap();
    assert_eq!(out.features, vec![0.0; 8]);
    for (a, b) in out.probabilities.iter().zip(softmax_slice(&bias)) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn bilstm_reversal_symmetry() {
    let m = SequenceModel::new(ModelKind::Bilstm, small_cfg(9)).unwrap();
    let mut swapped = m.clone();
    // Exchange the direction stacks and the matching halves of the head.
    let names: Vec<String> = m.params.names().to_vec();
    for n in names.iter().filter(|n| n.starts_with("fwd.")) {
        let b = format!("bwd.{}", &n[4..]);
        let fv = m.params.get(m.params.find(n).unwrap()).values().to_vec();
        let bv = m.params.get(m.params.find(&b).unwrap()).values().to_vec();
        let (fi, bi) = (swapped.params.find(n).unwrap(), swapped.params.find(&b).unwrap());
        swapped.params.get_mut(fi).values_mut().copy_from_slice(&bv);
        swapped.params.get_mut(bi).values_mut().copy_from_slice(&fv);
    }
    let hw = m.params.find("head.w").unwrap();
    let w = m.params.get(hw).values().to_vec();
    let h = 4;
    let sw = swapped.params.get_mut(hw).values_mut();
    for r in 0..3 {
        for k in 0..h {
            sw[r * 2 * h + k] = w[r * 2 * h + h + k];
            sw[r * 2 * h + h + k] = w[r * 2 * h + k];
        }
    }
    let tokens = vec![2, 5, 7, 3];
    let reversed: Vec<usize> = tokens.iter().rev().copied().collect();
    let a = m.forward_tokens(&tokens).unwrap().probabilities;
    let b = swapped.forward_tokens(&reversed).unwrap().probabilities;
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-14, "{a:?} vs {b:?}");
    }
}

#[test]
fn autoencoder_shapes_and_distribution() {
    for kind in [ModelKind::LstmAe, ModelKind::TlaNet] {
        let m = SequenceModel::new(kind, small_cfg(8)).unwrap();
        let mut tape = Tape::from_params(&m.params);
        let batch = vec![vec![2, 3, 4, 0, 0], vec![5, 6, 7, 1, 0]];
        let out = m.forward_batch(&mut tape, &batch, &mut ForwardCtx::eval()).unwrap();
        let recon = out.reconstruction.unwrap();
        assert_eq!(recon.len(), 5);
        assert_eq!(tape.shape(recon[0]), &[2, 3]);
        let p = tape.values(out.probs);
        assert!(sums_to_one(&p[..3]) && sums_to_one(&p[3..]));
        let rows = out.recon_rows.unwrap();
        let mean = tape.values(out.recon_loss.unwrap())[0];
        assert!((mean - (rows[0] + rows[1]) / 2.0).abs() < 1e-12);
    }
}

#[test]
fn tlanet_bce_reconstruction_has_vocab_width() {
    let cfg = ClassifierConfig {
        reconstruction_loss: ReconstructionLoss::Bce,
        ..small_cfg(6)
    };
    let m = SequenceModel::new(ModelKind::TlaNet, cfg).unwrap();
    let mut tape = Tape::from_params(&m.params);
    let out = m.forward_batch(&mut tape, &[vec![2, 3, 0]], &mut ForwardCtx::eval()).unwrap();
    assert_eq!(tape.shape(out.reconstruction.unwrap()[0]), &[1, 6]);
    let r = tape.values(out.recon_loss.unwrap())[0];
    assert!((r - out.recon_rows.unwrap()[0]).abs() < 1e-12);
}

#[test]
fn identical_encoders_fuse_to_a_single_encoding() {
    let mut m = SequenceModel::new(ModelKind::TlaNet, small_cfg(8)).unwrap();
    copy_prefix(&mut m.params, "enc0.", "enc1.");
    copy_prefix(&mut m.params, "enc0.", "enc2.");
    let Network::TlaNet(net) = &m.network else { unreachable!() };
    let mut tape = Tape::from_params(&m.params);
    let seq = crate::layers::embed_batch(&mut tape, &net.embedding, &[vec![2, 3, 4]]).unwrap();
    let mut ctx = ForwardCtx::eval();
    let mut codes = Vec::new();
    for enc in &net.encoders {
        let first = crate::layers::lstm_forward(&mut tape, &enc.stage1, &seq, &mut ctx).unwrap();
        let rep = crate::layers::repeat_vector(first.last_hidden(), 3).unwrap();
        codes.push(crate::layers::lstm_forward(&mut tape, &enc.stage2, &rep, &mut ctx).unwrap().last_hidden());
    }
    let fused = meta_learner_combine(&mut tape, &net.encoder_meta, [codes[0], codes[1], codes[2]]).unwrap();
    for (a, b) in tape.values(fused.weighted_sum).iter().zip(tape.values(codes[0])) {
        assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
    }
}

#[test]
fn empty_input_is_a_domain_error() {
    for kind in [ModelKind::Lstm, ModelKind::Bilstm, ModelKind::LstmAe, ModelKind::TlaNet] {
        let m = SequenceModel::new(kind, small_cfg(5)).unwrap();
        assert!(matches!(m.forward_tokens(&[]), Err(TlaError::Domain(_))), "{kind}");
    }
}

#[test]
fn word2vec_kind_is_not_a_sequence_model() {
    assert!(SequenceModel::new(ModelKind::Word2vecFeatures, small_cfg(5)).is_err());
}

#[test]
fn config_validation_names_fields() {
    let cfg = ClassifierConfig {
        num_classes: 1,
        ..small_cfg(5)
    };
    let err = SequenceModel::new(ModelKind::Lstm, cfg).unwrap_err().to_string();
    assert!(err.contains("num_classes"), "{err}");
}

fn toy_corpus() -> (Vec<Vec<usize>>, Vec<usize>) {
    // Class marker tokens 2, 3, 4 at varying positions among filler 5..8.
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..12 {
        let class = i % 3;
        let mut s = vec![5 + (i % 4), 6 + (i % 3), 7, 5];
        s[i % 4] = 2 + class;
        s.push(0);
        data.push(s);
        labels.push(class);
    }
    (data, labels)
}

fn toy_train(lambda: f64, seed: u64, steps: usize) -> (Vec<f64>, SequenceModel) {
    let (data, labels) = toy_corpus();
    let mut m = SequenceModel::new(ModelKind::TlaNet, ClassifierConfig { seed, ..small_cfg(9) }).unwrap();
    let mut adam = AdamState::new(
        &m.params,
        AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        },
    );
    let mut trace = Vec::new();
    for s in 0..steps {
        let mut ctx = ForwardCtx::train(s as u64);
        let l = train_step(&mut m, &mut adam, &data, &labels, lambda, None, &mut ctx, s).unwrap();
        trace.push(l.total);
    }
    (trace, m)
}

#[test]
fn tlanet_loss_decreases_on_a_separable_toy_batch() {
    let (trace, _) = toy_train(0.5, 3, 50);
    assert!(trace[49] < 0.5 * trace[0], "{} -> {}", trace[0], trace[49]);
}

#[test]
fn identical_seeds_give_identical_traces() {
    let (a, ma) = toy_train(0.5, 5, 10);
    let (b, mb) = toy_train(0.5, 5, 10);
    assert_eq!(a, b);
    assert_eq!(ma.params, mb.params);
}

#[test]
fn zero_lambda_still_reports_reconstruction() {
    let (data, labels) = toy_corpus();
    let mut m = SequenceModel::new(ModelKind::TlaNet, small_cfg(9)).unwrap();
    let mut reference = m.clone();
    let mut adam = AdamState::new(&m.params, AdamConfig::default());
    let l = train_step(&mut m, &mut adam, &data, &labels, 0.0, None, &mut ForwardCtx::eval(), 0).unwrap();
    assert!(l.reconstruction > 0.0);
    assert_eq!(l.total, l.classification);

    // Gradient equals that of the classification loss alone.
    let mut tape = Tape::from_params(&reference.params);
    let out = reference.forward_batch(&mut tape, &data, &mut ForwardCtx::eval()).unwrap();
    let cce = tape.cross_entropy(out.probs, &labels).unwrap();
    tape.backward(cce).unwrap();
    reference.params.accumulate_grads(&tape).unwrap();
    let mut adam2 = AdamState::new(&reference.params, AdamConfig::default());
    crate::optim::adam_step(&mut adam2, &mut reference.params).unwrap();
    assert_eq!(m.params.tensors().iter().map(|t| t.values().to_vec()).collect::<Vec<_>>(),
               reference.params.tensors().iter().map(|t| t.values().to_vec()).collect::<Vec<_>>());
}

#[test]
fn non_finite_loss_reports_the_step() {
    let (data, labels) = toy_corpus();
    let mut m = SequenceModel::new(ModelKind::Lstm, small_cfg(9)).unwrap();
    let id = m.params.find("head.b").unwrap();
    m.params.get_mut(id).values_mut()[0] = f64::NAN;
    let mut adam = AdamState::new(&m.params, AdamConfig::default());
    let err = train_step(&mut m, &mut adam, &data, &labels, 0.5, None, &mut ForwardCtx::eval(), 17).unwrap_err();
    assert!(matches!(err, TlaError::Numeric { step: 17, .. }), "{err}");
}

#[test]
fn lstm_ae_overfits_one_sample() {
    let cfg = ClassifierConfig {
        hidden_size: 8,
        ..small_cfg(6)
    };
    let mut m = SequenceModel::new(ModelKind::LstmAe, cfg).unwrap();
    let mut adam = AdamState::new(
        &m.params,
        AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        },
    );
    let sample = vec![vec![2, 3, 4, 5]];
    let mut last = f64::INFINITY;
    for s in 0..400 {
        let l = train_step(&mut m, &mut adam, &sample, &[1], 1.0, None, &mut ForwardCtx::eval(), s).unwrap();
        last = l.reconstruction;
    }
    let out = m.forward_tokens(&sample[0]).unwrap();
    assert!(out.reconstruction_loss.unwrap() <= 1e-3, "R_loss {last}");
}

#[test]
fn trainer_resume_matches_uninterrupted_run() {
    let (data, labels) = toy_corpus();
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 5,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let model = SequenceModel::new(ModelKind::Lstm, small_cfg(9)).unwrap();
    let mut full = Trainer::new(model.clone(), cfg.clone(), 9).unwrap();
    let full_trace = full.fit(&data, &labels, |_, _| Ok(())).unwrap();

    let mut first = Trainer::new(model, TrainConfig { epochs: 2, ..cfg.clone() }, 9).unwrap();
    let mut trace = first.fit(&data, &labels, |_, _| Ok(())).unwrap();
    first.config.epochs = 4;
    trace.extend(first.fit(&data, &labels, |_, _| Ok(())).unwrap());
    assert_eq!(trace, full_trace);
    assert_eq!(first.model.params, full.model.params);
}

#[test]
fn predict_is_independent_of_chunking() {
    let (data, _) = toy_corpus();
    let m = SequenceModel::new(ModelKind::TlaNet, small_cfg(9)).unwrap();
    assert_eq!(m.predict(&data, 1).unwrap(), m.predict(&data, 5).unwrap());
}
