mod common;

use common::{expected, expected_len};
use doclm::codec::{CodecError, TokenKind, PAD};
use doclm::doc::{canonical_order, dequantize_coord, quantize_coord};
use doclm::{BBox, Codec, CodecConfig, DocSchema, Document, Element};
use proptest::prelude::*;

fn styled_schema() -> DocSchema {
    DocSchema::publaynet()
        .with_styles(vec!["serif".into(), "sans".into(), "mono".into()])
        .unwrap()
}

fn codec(style: bool) -> Codec {
    let schema = if style { styled_schema() } else { DocSchema::publaynet() };
    Codec::new(
        schema,
        CodecConfig {
            style_enabled: style,
            ..CodecConfig::default()
        },
    )
    .unwrap()
}

type RawElement = (usize, f64, f64, f64, f64, Option<usize>, Option<String>);

fn raw_element() -> impl Strategy<Value = RawElement> {
    (
        0usize..5,
        0.0f64..1.0,
        0.0f64..1.0,
        0.001f64..=1.0,
        0.001f64..=1.0,
        proptest::option::of(0usize..3),
        proptest::option::of("\\PC{0,90}"),
    )
}

fn document() -> impl Strategy<Value = Document> {
    (1.0f64..3000.0, 1.0f64..3000.0, proptest::collection::vec(raw_element(), 0..24)).prop_map(|(w, h, raw)| {
        let schema = DocSchema::publaynet();
        let elements = raw
            .into_iter()
            .map(|(cat, fx, fy, fw, fh, style, text)| {
                let x = fx * w;
                let y = fy * h;
                let bbox = BBox::new(x, y, ((w - x) * fw).max(f64::MIN_POSITIVE), ((h - y) * fh).max(f64::MIN_POSITIVE));
                let mut e = Element::new(cat, bbox);
                e.style = style;
                if schema.is_textual(cat) {
                    e.text = text;
                }
                e
            })
            .filter(|e| e.bbox.w > 0.0 && e.bbox.h > 0.0 && e.bbox.x + e.bbox.w <= w && e.bbox.y + e.bbox.h <= h)
            .collect();
        Document::new("prop", w, h).with_elements(elements)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn round_trip_is_exact(doc in document(), style in any::<bool>()) {
        let c = codec(style);
        let max_text = c.config().max_text_bytes;
        let tokens = c.encode(&doc).unwrap();
        prop_assert_eq!(tokens.len(), expected_len(&doc, style, max_text));
        prop_assert_eq!(c.encoded_len(&doc), tokens.len());
        let mut decoded = c.decode(tokens.ids(), doc.canvas_w, doc.canvas_h).unwrap();
        // ids are not part of the token stream
        decoded.document.id = doc.id.clone();
        prop_assert!(!decoded.truncated);
        let want = expected(&doc, style, max_text);
        prop_assert_eq!(&decoded.document, &want);
        prop_assert_eq!(&c.canonicalize(&doc).unwrap(), &want);
        // re-encoding the decoded form is a fixed point
        prop_assert_eq!(c.encode(&decoded.document).unwrap(), tokens);
    }

    #[test]
    fn grammar_accepts_every_encoding_and_masks_are_live(doc in document(), style in any::<bool>()) {
        let c = codec(style);
        let tokens = c.encode(&doc).unwrap();
        let mut state = doclm::codec::GrammarState::start();
        for &id in tokens.ids() {
            let mask = c.allowed_mask(&state);
            prop_assert!(mask.iter().any(|&m| m));
            prop_assert!(mask[id as usize], "token {} masked", id);
            state = c.step(&state, id).expect("grammar accepts encoder output");
        }
        prop_assert!(state.is_done());
        let done = c.allowed_mask(&state);
        prop_assert!(done[PAD as usize] && done.iter().filter(|&&m| m).count() == 1);
    }

    #[test]
    fn decode_and_grammar_reject_at_the_same_position(
        doc in document(),
        pos in any::<prop::sample::Index>(),
        tok in 0u32..525,
        truncate in any::<bool>(),
    ) {
        let c = codec(true);
        let mut ids = c.encode(&doc).unwrap().0;
        let p = pos.index(ids.len());
        let v = c.vocab().size() as u32;
        ids[p] = tok % v;
        if truncate {
            ids.truncate(p + 1);
        }
        let grammar = c.run_grammar(&ids);
        match c.decode(&ids, doc.canvas_w, doc.canvas_h) {
            Ok(_) => prop_assert!(grammar.is_ok()),
            Err(CodecError::Parse { position, .. }) => prop_assert_eq!(grammar, Err(position)),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn quantization_properties(v in 0.0f64..=1.0, extent in 1e-3f64..1e5) {
        let v = v * extent;
        let q = quantize_coord(v, extent).unwrap();
        let d = dequantize_coord(q as u32, extent).unwrap();
        prop_assert!(d > 0.0 && d < extent);
        prop_assert!((v - d).abs() <= extent / 256.0);
        prop_assert_eq!(quantize_coord(d, extent).unwrap(), q);
    }

    #[test]
    fn canonical_order_is_an_idempotent_permutation(doc in document()) {
        let once = canonical_order(&doc);
        prop_assert_eq!(&canonical_order(&once), &once);
        let key = |e: &Element| format!("{:?}", e);
        let mut a: Vec<String> = doc.elements.iter().map(key).collect();
        let mut b: Vec<String> = once.elements.iter().map(key).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn token_ids_are_a_bijection() {
    for style in [false, true] {
        let c = codec(style);
        let v = c.vocab();
        let mut seen = vec![false; v.size()];
        for id in 0..v.size() as u32 {
            let (kind, value) = v.kind_of(id).unwrap();
            assert_eq!(v.token_of(kind, value).unwrap(), id);
            let (start, len) = v.range_of(kind);
            assert!(id >= start && id < start + len);
            assert!(!seen[id as usize]);
            seen[id as usize] = true;
        }
        assert!(v.kind_of(v.size() as u32).is_err());
        assert_eq!(v.range_of(TokenKind::Coord).1, 256);
        assert_eq!(v.range_of(TokenKind::TextByte).1, 256);
    }
}

#[test]
fn thousand_random_documents_round_trip_quickly() {
    use rand::{Rng, SeedableRng};
    let c = codec(false);
    let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(99);
    let start = std::time::Instant::now();
    for n in 0..1000 {
        let (w, h) = (rng.gen_range(10.0..2000.0), rng.gen_range(10.0..2000.0));
        let elements = (0..rng.gen_range(0..30))
            .map(|_| {
                let cat = rng.gen_range(0..5);
                let x: f64 = rng.gen_range(0.0..w * 0.99);
                let y: f64 = rng.gen_range(0.0..h * 0.99);
                let bw = rng.gen_range(1e-6..=1.0) * (w - x);
                let bh = rng.gen_range(1e-6..=1.0) * (h - y);
                let mut e = Element::new(cat, BBox::new(x, y, bw, bh));
                if cat != 4 && rng.gen_bool(0.7) {
                    let len = rng.gen_range(0..100);
                    e.text = Some((0..len).map(|_| char::from_u32(rng.gen_range(32..0x3000)).unwrap_or('?')).collect());
                }
                e
            })
            .collect();
        let doc = Document::new(format!("d{n}"), w, h).with_elements(elements);
        let t = c.encode(&doc).unwrap();
        let mut back = c.decode(t.ids(), w, h).unwrap().document;
        back.id = doc.id.clone();
        assert_eq!(back, expected(&doc, false, c.config().max_text_bytes), "document {n}");
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}
