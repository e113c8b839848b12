//! Helpers shared by the integration tests.
#![allow(dead_code)]

use slad_core::head::ModelClass;
use slad_core::lora::AdapterBindings;
use slad_core::losses::cross_entropy;
use slad_core::rng;
use slad_core::tensor::{backward, grad_check, GradCheckReport, NoGradGuard};
use slad_core::train::Model;
use slad_core::vit::{Encoder, EncoderConfig};
use slad_core::Tensor;

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_H: f64 = 1e-5;
pub const GRAD_SEEDS: u64 = 20;

fn leaf(shape: &[usize], seed: u64, label: &str) -> Tensor {
    let t = Tensor::normal(shape, 1.0, &mut rng::stream(seed, label));
    t.set_requires_grad(true).unwrap();
    t
}

fn weights(shape: &[usize], seed: u64, label: &str) -> Tensor {
    Tensor::normal(shape, 1.0, &mut rng::stream(seed, &format!("{label}/w")))
}

/// `Σ out ⊙ W` for a fixed random `W`, so every output element matters.
fn project(out: &Tensor, seed: u64, label: &str) -> slad_core::Result<Tensor> {
    let w = weights(out.shape(), seed, label);
    Ok(out.mul(&w)?.sum())
}

type Case = (&'static str, GradCheckReport);

/// One gradient check per differentiable primitive.
pub fn primitive_grad_checks(seed: u64) -> Vec<Case> {
    let mut out: Vec<Case> = Vec::new();
    let mut check = |name: &'static str, inputs: Vec<Tensor>, f: &dyn Fn(&[Tensor]) -> slad_core::Result<Tensor>| {
        let report = grad_check(|| project(&f(&inputs)?, seed, name), &inputs, GRAD_H, GRAD_TOL)
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        out.push((name, report));
    };
    let s = seed;
    check("add", vec![leaf(&[3, 4], s, "a"), leaf(&[3, 4], s, "b")], &|x| x[0].add(&x[1]));
    check("add-broadcast", vec![leaf(&[2, 3, 4], s, "a"), leaf(&[4], s, "b")], &|x| x[0].add(&x[1]));
    check("sub", vec![leaf(&[3, 4], s, "a"), leaf(&[4], s, "b")], &|x| x[0].sub(&x[1]));
    check("mul", vec![leaf(&[3, 4], s, "a"), leaf(&[3, 4], s, "b")], &|x| x[0].mul(&x[1]));
    check("mul-broadcast", vec![leaf(&[5, 4], s, "a"), leaf(&[4], s, "b")], &|x| x[0].mul(&x[1]));
    check("scale", vec![leaf(&[6], s, "a")], &|x| Ok(x[0].scale(-1.7)));
    check("neg", vec![leaf(&[6], s, "a")], &|x| Ok(x[0].neg()));
    check("matmul", vec![leaf(&[5, 7], s, "a"), leaf(&[7, 3], s, "b")], &|x| x[0].matmul(&x[1]));
    check("matmul-batched-rows", vec![leaf(&[2, 3, 4], s, "a"), leaf(&[4, 2], s, "b")], &|x| {
        x[0].matmul(&x[1])
    });
    check("bmm", vec![leaf(&[2, 3, 4], s, "a"), leaf(&[2, 4, 5], s, "b")], &|x| x[0].bmm(&x[1], false));
    check("bmm-transposed", vec![leaf(&[2, 3, 4], s, "a"), leaf(&[2, 5, 4], s, "b")], &|x| {
        x[0].bmm(&x[1], true)
    });
    check("softmax", vec![leaf(&[4, 5], s, "a")], &|x| x[0].softmax());
    check("softmax-temperature", vec![leaf(&[4, 5], s, "a")], &|x| x[0].softmax_temperature(2.5));
    check("log-softmax", vec![leaf(&[4, 5], s, "a")], &|x| x[0].log_softmax_temperature(0.7));
    check(
        "layernorm",
        vec![leaf(&[4, 8], s, "a"), leaf(&[8], s, "g"), leaf(&[8], s, "b")],
        &|x| x[0].layer_norm(&x[1], &x[2], 1e-6),
    );
    check("gelu", vec![leaf(&[3, 7], s, "a")], &|x| Ok(x[0].gelu()));
    check("reshape", vec![leaf(&[3, 4], s, "a")], &|x| x[0].reshape(&[2, 6]));
    check("permute", vec![leaf(&[2, 3, 4], s, "a")], &|x| x[0].permute(&[2, 0, 1]));
    check("transpose", vec![leaf(&[3, 5], s, "a")], &|x| x[0].transpose(0, 1));
    check("concat", vec![leaf(&[2, 3], s, "a"), leaf(&[2, 2], s, "b")], &|x| {
        Tensor::concat(&[x[0].clone(), x[1].clone()], 1)
    });
    check("narrow", vec![leaf(&[3, 6, 2], s, "a")], &|x| x[0].narrow(1, 2, 3));
    check("sum", vec![leaf(&[3, 4], s, "a")], &|x| Ok(x[0].sum()));
    check("mean", vec![leaf(&[3, 4], s, "a")], &|x| Ok(x[0].mean()));
    check("mean-axis", vec![leaf(&[2, 3, 4], s, "a")], &|x| x[0].mean_axis(1));
    check("gather", vec![leaf(&[5, 3], s, "a")], &|x| x[0].gather_rows(&[4, 0, 4, 2]));
    out
}

pub fn tiny_encoder_config() -> EncoderConfig {
    EncoderConfig {
        depth: 2,
        dim: 16,
        heads: 2,
        patch_size: 4,
        image_size: 8,
        channels: 3,
        mlp_ratio: 2,
    }
}

/// Depth-2 encoder with bound adapters (non-zero `B`) and a head.
pub fn composite_model(seed: u64) -> Model {
    let cfg = tiny_encoder_config();
    let encoder = Encoder::new(cfg, seed).unwrap();
    let adapters = AdapterBindings::all_blocks(&cfg, 4, seed).unwrap();
    for p in adapters.parameters() {
        let n = p.numel();
        let fresh = Tensor::normal(&[n], 0.1, &mut rng::stream(seed, "adapter-values")).to_vec();
        p.data_mut().copy_from_slice(&fresh);
    }
    Model::new(encoder, 3, ModelClass::Student, 2, seed)
        .unwrap()
        .with_adapters(adapters)
        .unwrap()
}

/// Cross-entropy of [`composite_model`] on two random images, checked along
/// one random direction per trainable tensor: the analytic `⟨∇f, v⟩` from
/// backprop against `(f(θ + h·v) − f(θ − h·v)) / 2h`. Element-wise checks
/// over thousands of weights always meet a few whose gradient is within
/// round-off of zero; a random projection of a whole tensor does not.
pub fn composite_grad_check(seed: u64) -> GradCheckReport {
    let model = composite_model(seed);
    let images = Tensor::normal(&[2, 8, 8, 3], 1.0, &mut rng::stream(seed, "images"));
    let labels = [(seed % 3) as usize, ((seed + 1) % 3) as usize];
    let params: Vec<Tensor> = model.named_parameters().into_iter().map(|(_, t)| t).collect();
    let loss = || cross_entropy(&model.logits(&images).unwrap(), &labels).unwrap().item();
    let value = cross_entropy(&model.logits(&images).unwrap(), &labels).unwrap();
    backward(&value).unwrap();
    drop(value);
    let _guard = NoGradGuard::new();
    let mut max_rel_error = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        let v = Tensor::normal(p.shape(), 1.0, &mut rng::stream(seed, &format!("direction/{i}"))).to_vec();
        let g = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let analytic: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        let original = p.to_vec();
        let shifted = |sign: f64| -> Vec<f64> { original.iter().zip(&v).map(|(x, d)| x + sign * GRAD_H * d).collect() };
        p.data_mut().copy_from_slice(&shifted(1.0));
        let plus = loss();
        p.data_mut().copy_from_slice(&shifted(-1.0));
        let minus = loss();
        p.data_mut().copy_from_slice(&original);
        let numeric = (plus - minus) / (2.0 * GRAD_H);
        max_rel_error.push((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8));
    }
    GradCheckReport {
        max_rel_error,
        tolerance: GRAD_TOL,
    }
}

pub mod checks;
