use alloc::string::String;
use alloc::vec::Vec;

use super::*;
use crate::flow::{cfm_loss_graph, Example, LossWeighting};
use crate::numcore::finite_difference;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        image_size: 4,
        channels: 3,
        patch_size: 2,
        hidden: 8,
        heads: 2,
        blocks: 1,
        mlp_ratio: 2,
        d_pool: 4,
        d_ctxt: 4,
        ..ModelConfig::default()
    }
}

/// Random values everywhere, including the zero-initialized modulation maps and biases, so that
/// every path carries signal.
fn randomized<T: Real>(config: ModelConfig, seed: u64) -> Model<T> {
    let mut rng = Rng::new(seed);
    let mut model = Model::<T>::init(config, &mut rng).unwrap();
    for id in 0..model.params().len() {
        let t = model.params_mut().tensor_mut(id);
        for v in t.data_mut() {
            *v = T::lit(rng.normal() * 0.4);
        }
    }
    model
}

fn t(rows: usize, d: &[f64]) -> Tensor<f64> {
    Tensor::new(&[rows, d.len() / rows], d.to_vec()).unwrap()
}

#[test]
fn modulation_embedding_examples() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::zeros(&[1, 2]));
    let m = modulation_embedding(&mut g, z, z, z);
    assert_eq!(g.value(m).data(), &[0.0, 0.0]);

    let a = g.constant(t(1, &[1.0, 0.0]));
    let b = g.constant(t(1, &[0.0, 1.0]));
    let c = g.constant(t(1, &[1.0, 1.0]));
    let m = modulation_embedding(&mut g, a, b, c);
    assert_eq!(g.value(m).data(), &[2.0, 2.0]);
    let m2 = modulation_embedding(&mut g, c, a, b);
    assert_eq!(g.value(m2).data(), &[2.0, 2.0]);
}

#[test]
fn modulate_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(2, &[1.0, 3.0, -2.0, 2.0]));
    let zero = g.constant(Tensor::zeros(&[1, 2]));
    let y = modulate(&mut g, x, zero, zero);
    // Layer norm of two distinct values is (-1, 1) up to the variance epsilon.
    for (got, want) in g.value(y).data().iter().zip([-1.0, 1.0, -1.0, 1.0]) {
        assert!((got - want).abs() < 1e-5);
    }

    let shift = g.constant(t(1, &[0.5, -0.5]));
    let y2 = modulate(&mut g, x, shift, zero);
    for (a, b) in g.value(y2).data().iter().zip(g.value(y).data()) {
        assert!((a - b).abs() - 0.5 < 1e-12);
    }

    let dup = g.constant(t(2, &[0.3, -1.2, 0.3, -1.2]));
    let scale = g.constant(t(1, &[2.0, 0.1]));
    let y3 = modulate(&mut g, dup, shift, scale);
    let d = g.value(y3).data();
    assert_eq!(d[..2], d[2..]);
}

#[test]
fn joint_attention_hand_example() {
    // One text token, two image tokens, one head of width 2.
    let mut g = Graph::<f64>::new();
    let txt = Qkv {
        q: g.constant(t(1, &[1.0, 0.0])),
        k: g.constant(t(1, &[1.0, 0.0])),
        v: g.constant(t(1, &[1.0, 2.0])),
    };
    let img = Qkv {
        q: g.constant(t(2, &[0.0, 1.0, 1.0, 1.0])),
        k: g.constant(t(2, &[0.0, 1.0, 2.0, 0.0])),
        v: g.constant(t(2, &[3.0, 0.0, -1.0, 1.0])),
    };
    let (o_txt, o_img) = joint_attention(&mut g, 1, &txt, &img);

    let q = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    let k = [[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]];
    let v = [[1.0, 2.0], [3.0, 0.0], [-1.0, 1.0]];
    let mut expect = Vec::new();
    for qi in q {
        let s: Vec<f64> = k.iter().map(|kj| (qi[0] * kj[0] + qi[1] * kj[1]) / 2f64.sqrt()).collect();
        let z: f64 = s.iter().map(|x| x.exp()).sum();
        let w: Vec<f64> = s.iter().map(|x| x.exp() / z).collect();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        expect.push(w[0] * v[0][0] + w[1] * v[1][0] + w[2] * v[2][0]);
        expect.push(w[0] * v[0][1] + w[1] * v[1][1] + w[2] * v[2][1]);
    }
    let got: Vec<f64> = g.value(o_txt).data().iter().chain(g.value(o_img).data()).copied().collect();
    for (a, b) in got.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12, "{got:?} vs {expect:?}");
    }
}

#[test]
fn joint_attention_identical_values_pass_through() {
    let mut rng = Rng::new(2);
    let mut g = Graph::<f64>::new();
    let row = [0.7, -0.2, 1.5, 0.1];
    let mk = |g: &mut Graph<f64>, rng: &mut Rng, n: usize| {
        let q = g.constant(Tensor::from_fn(&[n, 4], |_| rng.normal()));
        let k = g.constant(Tensor::from_fn(&[n, 4], |_| rng.normal()));
        let v = g.constant(Tensor::from_fn(&[n, 4], |i| row[i % 4]));
        Qkv { q, k, v }
    };
    let txt = mk(&mut g, &mut rng, 2);
    let img = mk(&mut g, &mut rng, 3);
    let (o_txt, o_img) = joint_attention(&mut g, 2, &txt, &img);
    for out in [o_txt, o_img] {
        for r in g.value(out).data().chunks(4) {
            for (a, b) in r.iter().zip(row) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn sinusoidal_embedding_at_zero() {
    let e = sinusoidal_embedding(0.0f64, 6);
    assert_eq!(e.data(), &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    assert_eq!(e.shape(), &[1, 6]);
}

#[test]
fn patchify_round_trip_and_order() {
    let img = Tensor::<f64>::from_fn(&[4, 4, 3], |i| i as f64);
    let p = patchify(&img, 2);
    assert_eq!(p.shape(), &[4, 12]);
    // First patch: pixels (0,0), (0,1), (1,0), (1,1).
    let expect: Vec<f64> = [0usize, 1, 4, 5].iter().flat_map(|&px| (0..3).map(move |c| (px * 3 + c) as f64)).collect();
    assert_eq!(p.row_slice(0), &expect[..]);
    assert_eq!(unpatchify(&p, 4, 2, 3), img);
}

#[test]
fn forward_is_deterministic_with_image_shape() {
    let model = randomized::<f32>(ModelConfig::default(), 1);
    let x = Rng::new(5).normal_tensor::<f32>(&model.image_shape());
    let p = model.encode("red circle");
    let a = model.predict_velocity(&x, &p, 0.4, 1.0, None).unwrap();
    let b = model.predict_velocity(&x, &p, 0.4, 1.0, None).unwrap();
    assert_eq!(a.shape(), &[16, 16, 3]);
    assert_eq!(a, b);
}

#[test]
fn forward_rejects_wrong_shape() {
    let model = randomized::<f32>(tiny_config(), 1);
    let p = model.encode("red");
    let err = model.predict_velocity(&Tensor::zeros(&[4, 4, 1]), &p, 0.5, 1.0, None).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
}

#[test]
fn prompt_changes_velocity() {
    let model = randomized::<f64>(tiny_config(), 3);
    let x = Rng::new(6).normal_tensor::<f64>(&model.image_shape());
    let a = model.predict_velocity(&x, &model.encode("red circle"), 0.5, 1.0, None).unwrap();
    let b = model.predict_velocity(&x, &model.encode("blue square"), 0.5, 1.0, None).unwrap();
    assert!(a.sub(&b).sum_squares() > 1e-8);
}

#[test]
fn outputs_stay_finite_for_large_inputs() {
    let model = randomized::<f32>(tiny_config(), 4);
    let mut rng = Rng::new(7);
    for _ in 0..20 {
        let x = Tensor::<f32>::from_fn(&model.image_shape(), |_| rng.uniform_range(-10.0, 10.0) as f32);
        let t = rng.uniform() as f32;
        let v = model.predict_velocity(&x, &model.encode("green square"), t, 1.0, None).unwrap();
        assert!(v.is_finite());
    }
}

struct SkipBlocks;

impl<T: Real> BlockHooks<T> for SkipBlocks {
    fn begin(&mut self, _: &mut Graph<T>, _: &Model<T>, _: &Bound, _: &PassContext) -> Result<()> {
        Ok(())
    }

    fn block(
        &mut self,
        _: &mut Graph<T>,
        _: &Model<T>,
        _: &Bound,
        _: usize,
        img: Var,
        txt: Var,
        _: &PassContext,
    ) -> Result<(Var, Var)> {
        Ok((img, txt))
    }
}

#[test]
fn zeroed_block_outputs_leave_only_the_embedding_path() {
    let mut cfg = tiny_config();
    cfg.blocks = 2;
    let mut model = randomized::<f64>(cfg.clone(), 8);
    let zeroed: Vec<usize> = model
        .params()
        .names()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.starts_with("blocks.") && (n.contains(".proj.") || n.contains(".mlp.fc2.")))
        .map(|(i, _)| i)
        .collect();
    assert_eq!(zeroed.len(), 2 * 2 * 2 * 2);
    for id in zeroed {
        let t = model.params_mut().tensor_mut(id);
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x = Rng::new(9).normal_tensor::<f64>(&model.image_shape());
    let p = model.encode("red square");
    let a = model.predict_velocity(&x, &p, 0.3, 1.0, None).unwrap();
    let b = model.predict_velocity(&x, &p, 0.3, 1.0, Some(&mut SkipBlocks)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fresh_model_has_closed_gates() {
    // Zero modulation maps make every block an identity map on the image stream at init.
    let mut rng = Rng::new(10);
    let model = Model::<f64>::init(tiny_config(), &mut rng).unwrap();
    for (name, t) in model.params().iter() {
        if name.contains("modulation") || name.ends_with(".bias") {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
    let x = Rng::new(11).normal_tensor::<f64>(&model.image_shape());
    let v = model.predict_velocity(&x, &model.encode("red"), 0.5, 1.0, None).unwrap();
    assert!(v.is_finite());
}

#[test]
fn from_named_checks_names_and_shapes() {
    let model = randomized::<f32>(tiny_config(), 12);
    let named: Vec<(String, Tensor<f32>)> = model.params().iter().map(|(n, t)| (String::from(n), t.clone())).collect();
    let back = Model::from_named(tiny_config(), named.clone()).unwrap();
    assert_eq!(back.params(), model.params());

    let mut missing = named.clone();
    missing.pop();
    assert!(Model::<f32>::from_named(tiny_config(), missing).is_err());

    let mut renamed = named.clone();
    renamed[0].0 = "nope".into();
    assert_eq!(
        Model::<f32>::from_named(tiny_config(), renamed).unwrap_err(),
        Error::MissingParameter("nope".into())
    );

    let mut reshaped = named;
    reshaped[0].1 = Tensor::zeros(&[1, 1]);
    assert!(matches!(Model::<f32>::from_named(tiny_config(), reshaped), Err(Error::Shape { .. })));
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let cfg = tiny_config();
    let model = randomized::<f64>(cfg.clone(), 13);
    let mut data_rng = Rng::new(14);
    let batch: Vec<Example<f64>> = ["red circle", "blue square"]
        .iter()
        .map(|p| Example {
            x0: Tensor::from_fn(&model.image_shape(), |_| data_rng.uniform_range(-1.0, 1.0)),
            token_ids: cfg.vocabulary.tokenize(p),
        })
        .collect();
    let loss_of = |m: &Model<f64>| {
        let mut g = Graph::new();
        let bound = m.bind(&mut g, false);
        let l = cfm_loss_graph(&mut g, m, &bound, &batch, LossWeighting::Uniform, &mut Rng::new(15)).unwrap();
        g.value(l).data()[0]
    };

    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let l = cfm_loss_graph(&mut g, &model, &bound, &batch, LossWeighting::Uniform, &mut Rng::new(15)).unwrap();
    let grads = g.backward(l).unwrap();

    let mut pick = Rng::new(16);
    let mut errors = Vec::new();
    for id in 0..model.params().len() {
        // Parameters that do not reach the loss (the last text-stream MLP) have no entry.
        let zero = Tensor::zeros(model.params().tensor(id).shape());
        let analytic = grads.get(bound.get(id)).unwrap_or(&zero);
        let n = analytic.len();
        let coords: Vec<usize> = (0..n.min(3)).map(|_| pick.below(n as u64) as usize).collect();
        let numeric = finite_difference(model.params().tensor(id), 1e-5, &coords, |probe| {
            let mut m = model.clone();
            *m.params_mut().tensor_mut(id) = probe.clone();
            loss_of(&m)
        });
        for (&c, fd) in coords.iter().zip(numeric) {
            let a = analytic.data()[c];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            errors.push(rel);
        }
    }
    let good = errors.iter().filter(|&&e| e < 1e-3).count();
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    assert!(good * 100 >= errors.len() * 95, "{good}/{} below 1e-3", errors.len());
    assert!(worst < 1e-2, "worst relative error {worst}");
}
