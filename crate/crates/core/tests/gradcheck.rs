//! End-to-end gradient verification: analytic gradients of the total loss
//! (through the projection heads, backbone convolutions, text encoder, and
//! embeddings) against central finite differences.
//!
//! The finite-difference reference is always evaluated in f64 so it
//! isolates the implementation error of each precision: the f64 analytic
//! gradients must agree to 1e-6 relative (per parameter group, L2), the f32
//! ones to 1e-3.

use std::collections::BTreeMap;

use promptloc_core::align::{AlignmentModel, ArchConfig, LossSwitches, Temperatures};
use promptloc_core::scalar::Scalar;
use promptloc_core::tensor::Tensor;
use promptloc_core::text::{tokenize, TokenizedReport, Vocab};
use promptloc_core::vision::ChannelStats;

/// Batch geometry: B=3, D=8, P=2 sentences, Q=4 words, shallow M=16.
const B: usize = 3;

fn arch() -> ArchConfig {
    ArchConfig {
        dim: 8,
        image_side: 32, // grid 4 -> M = 16, deep M/4 = 4
        in_channels: 3,
        stage_channels: [4, 4, 6, 8],
        text_layers: 2,
        max_tokens: 16,
        word_agg_mean: false,
    }
}

fn vocab() -> Vocab {
    Vocab::build(["red circle upper left. blue square lower right. green cross mid zone."])
}

fn sample_texts() -> Vec<&'static str> {
    // two sentences, two words each: P = 2, Q = 4
    vec![
        "red circle. upper left.",
        "blue square. lower right.",
        "green cross. mid zone.",
    ]
}

fn sample_images(side: usize) -> Vec<Tensor<f64>> {
    (0..B)
        .map(|s| {
            let n = 3 * side * side;
            let data = (0..n)
                .map(|i| {
                    let x = ((i * 2654435761 + s * 97) % 1000) as f64 / 1000.0;
                    x - 0.5
                })
                .collect();
            Tensor::from_vec(&[3, side, side], data)
        })
        .collect()
}

fn temps() -> Temperatures {
    Temperatures {
        tau1: 0.5,
        tau2: 0.4,
        tau3: 0.3,
        ..Temperatures::default()
    }
}

/// Forward pass of the whole batch from explicit parameter values.
fn batch_loss<T: Scalar>(
    model: &AlignmentModel<T>,
    images: &[Tensor<T>],
    toks: &[TokenizedReport],
) -> f64 {
    let mut tape = promptloc_core::tensor::Tape::new();
    let vars: BTreeMap<String, promptloc_core::tensor::Var> = model
        .params()
        .iter()
        .map(|(n, t)| (n.clone(), tape.leaf(t)))
        .collect();
    let graph = model
        .build_batch_loss(
            &mut tape,
            &vars,
            images,
            toks,
            &temps(),
            &LossSwitches::all(),
        )
        .unwrap();
    tape.value(graph.total)[0].as_f64()
}

/// Analytic gradients per parameter, canonical order.
fn batch_grads<T: Scalar>(
    model: &AlignmentModel<T>,
    images: &[Tensor<T>],
    toks: &[TokenizedReport],
) -> Vec<Vec<f64>> {
    let mut tape = promptloc_core::tensor::Tape::new();
    let vars: BTreeMap<String, promptloc_core::tensor::Var> = model
        .params()
        .iter()
        .map(|(n, t)| (n.clone(), tape.leaf(t)))
        .collect();
    let graph = model
        .build_batch_loss(
            &mut tape,
            &vars,
            images,
            toks,
            &temps(),
            &LossSwitches::all(),
        )
        .unwrap();
    tape.backward(graph.total);
    model
        .params()
        .iter()
        .map(|(n, _)| tape.grad(vars[n]).iter().map(|g| g.as_f64()).collect())
        .collect()
}

fn rel_group_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

struct Setup {
    model64: AlignmentModel<f64>,
    images: Vec<Tensor<f64>>,
    toks: Vec<TokenizedReport>,
    fd: Vec<Vec<f64>>,
}

fn finite_difference_reference() -> Setup {
    let vocab = vocab();
    let arch = arch();
    let model64 = AlignmentModel::<f64>::init(
        arch.clone(),
        temps(),
        vocab.clone(),
        ChannelStats::default(),
        1234,
    )
    .unwrap();
    let toks: Vec<TokenizedReport> = sample_texts()
        .iter()
        .map(|t| tokenize(t, &vocab, arch.max_tokens).unwrap())
        .collect();
    for t in &toks {
        assert_eq!(t.p(), 2, "each sample must have P=2 sentences");
        assert_eq!(t.q(), 4, "each sample must have Q=4 words");
    }
    let images = sample_images(arch.image_side);

    // central differences on every scalar parameter, f64
    let h = 1e-5;
    let mut fd = Vec::new();
    for pi in 0..model64.params().len() {
        let n = model64.params()[pi].1.data.len();
        let mut g = vec![0.0; n];
        for ei in 0..n {
            let mut plus = model64.clone();
            plus.params_mut()[pi].1.data[ei] += h;
            let mut minus = model64.clone();
            minus.params_mut()[pi].1.data[ei] -= h;
            g[ei] = (batch_loss(&plus, &images, &toks) - batch_loss(&minus, &images, &toks))
                / (2.0 * h);
        }
        fd.push(g);
    }
    Setup {
        model64,
        images,
        toks,
        fd,
    }
}

#[test]
fn analytic_gradients_match_finite_differences_in_both_precisions() {
    let setup = finite_difference_reference();
    let Setup {
        model64,
        images,
        toks,
        fd,
    } = &setup;

    // double precision: every parameter group under 1e-6 relative
    let analytic64 = batch_grads(model64, images, toks);
    for (i, (name, _)) in model64.params().iter().enumerate() {
        let rel = rel_group_error(&analytic64[i], &fd[i]);
        assert!(
            rel < 1e-6,
            "f64 gradient of {name} off by {rel:.3e} (limit 1e-6)"
        );
    }

    // single precision against the same f64 reference: under 1e-3
    let model32: AlignmentModel<f32> = model64.cast();
    let images32: Vec<Tensor<f32>> = images.iter().map(|t| t.cast()).collect();
    let analytic32 = batch_grads(&model32, &images32, toks);
    for (i, (name, _)) in model64.params().iter().enumerate() {
        let rel = rel_group_error(&analytic32[i], &fd[i]);
        assert!(
            rel < 1e-3,
            "f32 gradient of {name} off by {rel:.3e} (limit 1e-3)"
        );
    }
}

#[test]
fn disabled_switch_has_exactly_zero_gradient_on_its_branch() {
    let vocab = vocab();
    let arch = arch();
    let model = AlignmentModel::<f64>::init(
        arch.clone(),
        temps(),
        vocab.clone(),
        ChannelStats::default(),
        7,
    )
    .unwrap();
    let toks: Vec<TokenizedReport> = sample_texts()
        .iter()
        .map(|t| tokenize(t, &vocab, arch.max_tokens).unwrap())
        .collect();
    let images = sample_images(arch.image_side);

    let mut tape = promptloc_core::tensor::Tape::new();
    let vars: BTreeMap<String, promptloc_core::tensor::Var> = model
        .params()
        .iter()
        .map(|(n, t)| (n.clone(), tape.leaf(t)))
        .collect();
    let only_global = LossSwitches {
        shallow_word: false,
        deep_sentence: false,
        global_report: true,
    };
    let graph = model
        .build_batch_loss(&mut tape, &vars, &images, &toks, &temps(), &only_global)
        .unwrap();
    tape.backward(graph.total);

    for name in [
        "proj.shallow.w",
        "proj.shallow.b",
        "proj.deep.w",
        "proj.deep.b",
    ] {
        let g = tape.grad(vars[name]);
        assert!(
            g.iter().all(|&v| v == 0.0),
            "{name} must receive exactly zero gradient when local losses are off"
        );
    }
    // the global head is live
    assert!(tape.grad(vars["proj.global.w"]).iter().any(|&v| v != 0.0));
}
