//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signfuse::data::Modality;
use signfuse::model::{Encoder, GlobalPool, LinearHead, ParamSet, TrunkSpec, FEATURE_DIM};
use signfuse::train::{bce_with_logits, cross_entropy};

pub fn random_image(seed: u64, h: usize, w: usize) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn((3, h, w), |_| rng.random_range(0.0..1.0))
}

pub enum Loss {
    Bce([f64; 5]),
    Ce(usize),
}

fn loss_of(enc: &Encoder, head: &LinearHead, x: &Array3<f64>, loss: &Loss) -> f64 {
    let f = enc.forward_image(x).unwrap().features;
    let z = head.scores(f.as_slice().unwrap()).unwrap();
    match loss {
        Loss::Bce(t) => bce_with_logits(z.as_slice().unwrap(), t).0,
        Loss::Ce(c) => cross_entropy(z.as_slice().unwrap(), *c, 1.0).0,
    }
}

fn analytic(enc: &Encoder, head: &LinearHead, x: &Array3<f64>, loss: &Loss) -> (ParamSet, ParamSet) {
    let trace = enc.forward_image(x).unwrap();
    let f = trace.features.as_slice().unwrap();
    let z = head.scores(f).unwrap();
    let dz = match loss {
        Loss::Bce(t) => bce_with_logits(z.as_slice().unwrap(), t).1,
        Loss::Ce(c) => cross_entropy(z.as_slice().unwrap(), *c, 1.0).1,
    };
    let mut gh = head.params.zeros_like();
    let mut ge = enc.params.zeros_like();
    let df = head.backward(f, &dz, Some(&mut gh));
    enc.backward(&trace, &df, Some(&mut ge));
    (ge, gh)
}

/// Returns the worst relative error over `probes` random encoder entries.
pub fn gradient_check(spec: TrunkSpec, size: usize, loss: Loss, out: usize, probes: usize, seed: u64) -> f64 {
    let mut enc = Encoder::from_spec(Modality::Fundus, "test", spec, seed).unwrap();
    let mut head = LinearHead::new_random(FEATURE_DIM, out, true, seed + 1);
    // non-zero biases so every code path carries signal
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    for p in enc.params.iter_mut().chain(head.params.iter_mut()) {
        if p.name.ends_with("bias") {
            p.value.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        }
    }
    let x = random_image(seed + 3, size, size);
    let (ge, gh) = analytic(&enc, &head, &x, &loss);
    let mut worst: f64 = 0.0;
    let eps = 1e-5;
    for _ in 0..probes {
        let on_head = rng.random_bool(0.2);
        let (pi, n) = if on_head {
            let i = rng.random_range(0..head.params.len());
            (i, head.params.get(i).len())
        } else {
            let i = rng.random_range(0..enc.params.len());
            (i, enc.params.get(i).len())
        };
        let j = rng.random_range(0..n);
        let bump = |enc: &mut Encoder, head: &mut LinearHead, d: f64| {
            let set = if on_head { &mut head.params } else { &mut enc.params };
            set.get_mut(pi).as_slice_mut().unwrap()[j] += d;
        };
        bump(&mut enc, &mut head, eps);
        let up = loss_of(&enc, &head, &x, &loss);
        bump(&mut enc, &mut head, -2.0 * eps);
        let down = loss_of(&enc, &head, &x, &loss);
        bump(&mut enc, &mut head, eps);
        let numeric = (up - down) / (2.0 * eps);
        let exact = if on_head { gh.get(pi) } else { ge.get(pi) }.as_slice().unwrap()[j];
        let rel = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-7);
        worst = worst.max(rel);
    }
    worst
}

pub fn probe_spec() -> TrunkSpec {
    TrunkSpec::lookup("probe").unwrap()
}

pub fn pooled_spec(global_pool: GlobalPool) -> TrunkSpec {
    TrunkSpec { stem_pool: 2, channels: vec![3, 4], pool_after: vec![true, false], global_pool }
}

