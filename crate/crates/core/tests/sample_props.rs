use doclm::codec::EOS;
use doclm::corpus::{synth_generate, SynthConfig};
use doclm::sample::{
    argmax_allowed, complete_document, default_targets, generate, place_text_boxes, sample_next, PlacementMode,
    SampleConfig,
};
use doclm::{Codec, CodecConfig, DocSchema, Document, ModelConfig, ModelParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

fn codec() -> Codec {
    Codec::new(DocSchema::publaynet(), CodecConfig::default()).unwrap()
}

fn params(seed: u64) -> ModelParams<f32> {
    let cfg = ModelConfig {
        vocab_size: codec().vocab().size(),
        context_len: 512,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: None,
        dropout: 0.0,
    };
    ModelParams::init(&cfg, seed).unwrap()
}

fn docs(n: usize) -> Vec<Document> {
    let c = codec();
    synth_generate(&SynthConfig {
        n_docs: n,
        paragraphs: (1, 2),
        words: (1, 2),
        ..SynthConfig::default()
    })
    .unwrap()
    .iter()
    .map(|r| r.to_document(c.schema()).unwrap())
    .collect()
}

fn logits_and_mask() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec(-20.0f64..20.0, n),
            proptest::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn greedy_choice_ignores_positive_rescaling((logits, mut mask) in logits_and_mask(), scale in 1e-3f64..1e3) {
        mask[0] = true;
        let scaled: Vec<f64> = logits.iter().map(|z| z * scale).collect();
        let greedy = SampleConfig::greedy();
        let mut r = Xoshiro256PlusPlus::seed_from_u64(0);
        let a = sample_next(&logits, &mask, &greedy, &mut r).unwrap();
        let b = sample_next(&scaled, &mask, &greedy, &mut r).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(Some(a), argmax_allowed(&logits, &mask));
    }

    #[test]
    fn draws_respect_the_mask(
        (logits, mut mask) in logits_and_mask(),
        seed in any::<u64>(),
        t in 0.05f64..3.0,
        top_k in 0usize..5,
        top_p in 0.05f64..=1.0,
    ) {
        let n = mask.len();
        mask[n - 1] = true;
        let cfg = SampleConfig { temperature: t, top_k, top_p, seed, ..SampleConfig::default() };
        let mut r = Xoshiro256PlusPlus::seed_from_u64(seed);
        for _ in 0..20 {
            let id = sample_next(&logits, &mask, &cfg, &mut r).unwrap() as usize;
            prop_assert!(mask[id]);
            if top_k > 0 {
                let better = (0..n).filter(|&j| mask[j] && logits[j] > logits[id]).count();
                prop_assert!(better < top_k);
            }
        }
    }
}

#[test]
fn empty_mask_is_an_error() {
    let mut r = Xoshiro256PlusPlus::seed_from_u64(0);
    assert!(sample_next(&[1.0f64, 2.0], &[false, false], &SampleConfig::default(), &mut r).is_err());
}

#[test]
fn untrained_generations_parse_and_repeat() {
    let c = codec();
    let p = params(3);
    for seed in 0..20 {
        let cfg = SampleConfig {
            seed,
            max_new_tokens: 300,
            ..SampleConfig::default()
        };
        let a = generate(&p, &c, &[1], &cfg).unwrap();
        let b = generate(&p, &c, &[1], &cfg).unwrap();
        assert_eq!(a, b);
        assert!(c.run_grammar(a.tokens.ids()).is_ok());
        assert_eq!(a.truncated, a.tokens.ids().last() != Some(&EOS));
        let d = c.decode(a.tokens.ids(), 612.0, 792.0).unwrap();
        assert_eq!(d.truncated, a.truncated);
    }
}

#[test]
fn completion_keeps_the_prefix() {
    let c = codec();
    let p = params(4);
    for d in docs(6) {
        let reference = c.canonicalize(&d).unwrap();
        for k in 0..=reference.elements.len() {
            let cfg = SampleConfig {
                max_new_tokens: 200,
                ..SampleConfig::greedy()
            };
            let out = complete_document(&p, &c, &d, k, &cfg).unwrap();
            assert_eq!(out.reference, reference);
            assert!(out.document.elements.len() >= k || out.truncated);
            assert_eq!(&out.document.elements[..k], &reference.elements[..k]);
        }
        assert!(complete_document(&p, &c, &d, reference.elements.len() + 1, &SampleConfig::greedy()).is_err());
    }
}

#[test]
fn placement_keeps_categories_and_context() {
    let c = codec();
    let p = params(5);
    for d in docs(6) {
        for mode in [PlacementMode::Single, PlacementMode::Multiple] {
            let targets = default_targets(&d, &c, mode);
            let out = place_text_boxes(&p, &c, &d, &targets, mode, &SampleConfig::greedy()).unwrap();
            assert_eq!(out.document.elements.len(), out.reference.elements.len());
            for (g, r) in out.document.elements.iter().zip(&out.reference.elements) {
                assert_eq!(g.category, r.category);
            }
            for (pos, (g, r)) in out.document.elements.iter().zip(&out.reference.elements).enumerate() {
                if !out.targets.contains(&pos) {
                    assert_eq!(g, r);
                }
            }
            assert_eq!(out.targets.len(), targets.len());
        }
    }
}
