// Classifier weight-decay sweep: does a smoother classifier make the
// marker cue dominate attribute-space criticisms?
use cfx_core::data::{sample_dataset, GlyphDatasetConfig, MARKER_INDEX, SIZE_INDEX};
use cfx_core::engine::{CounterfactualQuery, Engine, Generator, Outcome, VariableSpace};
use cfx_core::models::*;

fn main() {
    let config = GlyphDatasetConfig { n_samples: 6000, seed: 7, ..GlyphDatasetConfig::default() };
    let data = sample_dataset(&config).unwrap();
    let (train, test) = data.split(5000);

    let enc = MlpSpec::new(vec![256, 128, 64, 10], Activation::Relu, Head::Linear);
    let dec = MlpSpec::new(vec![10, 64, 128, 256], Activation::Relu, Head::Sigmoid);
    let ae_cfg = TrainConfig { epochs: 60, batch_size: 64, learning_rate: 1e-3, weight_decay: 0.0, seed: 13 };
    let (generator, _) = train_latent_generator(train, test, &enc, &dec, 16, 16, &ae_cfg).unwrap();

    let names: Vec<String> = data.attribute_names.clone();
    let pred_spec = MlpSpec::new(vec![256, 64, 5], Activation::Relu, Head::Sigmoid);
    let pred_cfg = TrainConfig { epochs: 20, batch_size: 64, learning_rate: 1e-3, weight_decay: 0.0, seed: 17 };
    let (predictor, _) = train_attribute_predictor(train, test, &names, &pred_spec, &pred_cfg).unwrap();

    let e_enc = MlpSpec::new(vec![256, 128, 16], Activation::Relu, Head::Linear);
    let e_dec = MlpSpec::new(vec![21, 64, 128, 256], Activation::Relu, Head::Sigmoid);
    let ed_cfg = TrainConfig { epochs: 60, batch_size: 64, learning_rate: 1e-3, weight_decay: 0.0, seed: 19 };
    let (editor, em) = train_attribute_editor(train, test, &predictor, &e_enc, &e_dec, 16, 16, &ed_cfg).unwrap();
    println!("editor recon {:.4} ctrl {:?}", em.recon_l1_test,
        em.controllability.iter().map(|(n,v)| format!("{n}={v:.3}")).collect::<Vec<_>>());

    for wd in [0.0, 1e-4, 1e-3, 5e-3, 2e-2] {
        let cls_spec = MlpSpec::new(vec![256, 128, 2], Activation::Relu, Head::Softmax);
        let cls_cfg = TrainConfig { epochs: 30, batch_size: 64, learning_rate: 1e-3, weight_decay: wd, seed: 11 };
        let (classifier, cm) = train_classifier(train, test, &cls_spec, &cls_cfg).unwrap();

        let engine = Engine::new(&classifier, Generator::Latent(&generator));
        let mut s = 0; let mut tried = 0;
        for item in test.iter() {
            if tried >= 50 { break; }
            let (pred, _) = classifier.predict(&item.image).unwrap();
            if pred != item.label { continue; }
            tried += 1;
            let mut q = CounterfactualQuery::criticism(item.image.clone(), 1 - pred, VariableSpace::latent(10));
            q.lambda = 5.0; q.max_steps = 2000; q.step_size = 0.15;
            if engine.optimize(&q).unwrap().outcome == Outcome::Success { s += 1; }
        }

        let attr_engine = Engine::new(&classifier, Generator::Attribute(&editor));
        let mut top2 = 0; let mut flips = 0; let mut tried_a = 0;
        for item in test.iter() {
            if tried_a >= 50 { break; }
            let (pred, _) = classifier.predict(&item.image).unwrap();
            if pred != 0 || item.label != 0 { continue; }
            tried_a += 1;
            let attrs = item.attributes.clone().unwrap();
            let mut q = CounterfactualQuery::criticism(item.image.clone(), 1, VariableSpace::attribute(5));
            q.frozen_mask[SIZE_INDEX] = true;
            q.lambda = 30.0; q.max_steps = 600;
            q.initial_variables = Some(attrs.clone());
            let traj = attr_engine.optimize(&q).unwrap();
            if traj.outcome == Outcome::Success { flips += 1; }
            let fin = traj.result.variables.data();
            let mut deltas: Vec<(usize, f64)> = (0..5).map(|a| (a, (fin[a] - attrs[a]).abs())).collect();
            deltas.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
            if deltas[0].0 == MARKER_INDEX || deltas[1].0 == MARKER_INDEX { top2 += 1; }
        }
        println!("wd={wd:.0e}: acc {:.4} | latent crit {s}/{tried} | attr top2 {top2}/{tried_a} flips {flips}", cm.test_accuracy);
    }
}
