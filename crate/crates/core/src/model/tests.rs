use super::*;
use crate::layers::Params;
use crate::rng::stream;
use crate::tensor::{Shape, Tensor4};
use rand::Rng;

fn image(n: usize, hw: usize, seed: u64) -> Tensor4<f32> {
    let mut rng = stream(seed, 0);
    Tensor4::from_fn([n, 3, hw, hw], |_| rng.random_range(-1.0..1.0))
}

#[test]
fn tiny_shape_schedule() {
    let m = SnnMlp::<f32>::init(&ModelConfig::variant(Variant::Tiny), 0).unwrap();
    let img = image(1, 224, 1);
    let mut seen = Vec::new();
    for s in 0..NUM_STAGES {
        let f = m.feature(&img, &format!("stage{s}.block0.out")).unwrap();
        seen.push((f.shape().c, f.shape().h));
    }
    assert_eq!(seen, [(96, 56), (192, 28), (384, 14), (768, 7)]);
    assert_eq!(m.infer(&img).unwrap().shape(), Shape::new(1, 1000, 1, 1));
}

#[test]
fn toy_logits_shape() {
    let cfg = ModelConfig {
        depths: [1, 1, 1, 1],
        ..ModelConfig::toy(10)
    };
    let m = SnnMlp::<f32>::init(&cfg, 0).unwrap();
    assert_eq!(
        m.infer(&image(2, 32, 2)).unwrap().shape(),
        Shape::new(2, 10, 1, 1)
    );
}

#[test]
fn indivisible_input_rejected() {
    let m = SnnMlp::<f32>::init(&ModelConfig::toy(3), 0).unwrap();
    assert!(m.infer(&image(1, 36, 0)).is_err());
    assert!(m.infer(&Tensor4::zeros([1, 1, 32, 32])).is_err());
}

#[test]
fn zero_parameters_give_bias_logits() {
    let mut m = SnnMlp::<f64>::init(&ModelConfig::toy(4), 0).unwrap();
    for p in m.params_mut() {
        p.data.fill(0.0);
    }
    let b = [0.5, -1.0, 2.0, 0.25];
    m.head.bias.data_mut().copy_from_slice(&b);
    let mut rng = stream(9, 0);
    let img = Tensor4::from_fn([3, 3, 32, 32], |_| rng.random_range(-3.0..3.0));
    let y = m.infer(&img).unwrap();
    for i in 0..3 {
        assert_eq!(&y.data()[i * 4..i * 4 + 4], &b);
    }
}

#[test]
fn forward_is_deterministic() {
    let cfg = ModelConfig {
        drop_path: 0.3,
        dropout: 0.1,
        ..ModelConfig::toy(3)
    };
    let m = SnnMlp::<f32>::init(&cfg, 5).unwrap();
    let img = image(4, 32, 3);
    let a = m.forward(&img, Pass::train(7, 3)).unwrap().0;
    let b = m.forward(&img, Pass::train(7, 3)).unwrap().0;
    let c = m.forward(&img, Pass::train(7, 4)).unwrap().0;
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(
        m.infer(&img).unwrap(),
        m.forward(&img, Pass::eval()).unwrap().0
    );
    assert_eq!(m, SnnMlp::<f32>::init(&cfg, 5).unwrap());
}

#[test]
fn lif_gradients_reach_every_stage() {
    let m = SnnMlp::<f64>::init(&ModelConfig::toy(3), 1).unwrap();
    let mut rng = stream(4, 0);
    // 64×64 keeps the last stage at 2×2, so its chains have a carry step
    let img = Tensor4::from_fn([2, 3, 64, 64], |_| rng.random_range(-1.0..1.0));
    let (y, cache) = m.forward(&img, Pass::eval()).unwrap();
    let w = Tensor4::from_fn(y.shape(), |_| rng.random_range(-1.0..1.0));
    let g = m.backward(&cache, &w).unwrap();
    for (s, st) in g.stages.iter().enumerate() {
        let live = st.blocks.iter().any(|b| {
            let l = &b.lif;
            [l.vlif.tau, l.vlif.v_th, l.hlif.tau, l.hlif.v_th]
                .iter()
                .all(|v| *v != 0.0)
        });
        assert!(live, "stage {s} LIF gradients are zero");
    }
}

#[test]
fn lif_features_respect_threshold() {
    let m = SnnMlp::<f32>::init(&ModelConfig::toy(3), 2).unwrap();
    let img = image(1, 32, 5);
    let f = m.feature(&img, "stage0.block0.lif_out").unwrap();
    assert_eq!(f.shape(), Shape::new(1, 32, 8, 8));
    assert!(f.min().unwrap() >= m.stages[0].blocks[0].lif.vlif.v_th);
    assert_eq!(f, m.feature(&img, "stage0.block0.vlif_out").unwrap());
}

#[test]
fn unknown_feature_lists_candidates() {
    let m = SnnMlp::<f32>::init(&ModelConfig::toy(3), 0).unwrap();
    let e = m.feature(&image(1, 32, 0), "foo").unwrap_err().to_string();
    assert!(
        e.contains("stage0.block0.lif_out") && e.contains("logits"),
        "{e}"
    );
}

#[test]
fn gradient_accumulation_adds() {
    let m = SnnMlp::<f64>::init(&ModelConfig::toy(3), 0).unwrap();
    let mut acc = m.zeros_like();
    acc.accumulate(&m);
    acc.accumulate(&m);
    for (a, b) in acc.params().iter().zip(m.params()) {
        assert!(a.data.iter().zip(b.data).all(|(x, y)| *x == 2.0 * y));
    }
}
