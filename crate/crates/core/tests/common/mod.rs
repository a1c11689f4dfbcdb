//! Brute-force oracles and fixtures shared by the integration targets.
#![allow(dead_code)]

use doclm::metrics::NormBox;
use doclm::{BBox, Document, Element};
use rand::Rng;

pub const GRID: usize = 1000;

/// Every permutation of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Minimum cost over all permutations and the first permutation reaching it.
pub fn brute_assignment(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let mut best = (f64::INFINITY, Vec::new());
    for p in permutations(cost.len()) {
        let c: f64 = p.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
        if c < best.0 {
            best = (c, p);
        }
    }
    best
}

/// Cell (i, j) of a `GRID`² raster covers `[i/GRID, (i+1)/GRID)`; a box owns
/// the cells whose centers it contains.
fn covers(b: &NormBox, i: usize, j: usize) -> bool {
    let cx = (i as f64 + 0.5) / GRID as f64;
    let cy = (j as f64 + 0.5) / GRID as f64;
    cx >= b.x && cx < b.x + b.w && cy >= b.y && cy < b.y + b.h
}

/// Rasterized IoU.
pub fn raster_iou(a: &NormBox, b: &NormBox) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for j in 0..GRID {
        for i in 0..GRID {
            match (covers(a, i, j), covers(b, i, j)) {
                (true, true) => {
                    inter += 1;
                    union += 1;
                }
                (true, false) | (false, true) => union += 1,
                _ => {}
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Rasterized overlap: cells covered k times contribute k(k-1)/2 pairwise
/// intersections and k to the summed area.
pub fn raster_overlap(boxes: &[NormBox]) -> f64 {
    let (mut pairs, mut area) = (0u64, 0u64);
    for j in 0..GRID {
        for i in 0..GRID {
            let k = boxes.iter().filter(|b| covers(b, i, j)).count() as u64;
            pairs += k * k.saturating_sub(1) / 2;
            area += k;
        }
    }
    if area == 0 {
        0.0
    } else {
        pairs as f64 / area as f64
    }
}

/// A box whose edges sit on the raster lattice.
pub fn lattice_box<R: Rng>(rng: &mut R) -> NormBox {
    let x0 = rng.gen_range(0..GRID);
    let x1 = rng.gen_range(x0 + 1..=GRID);
    let y0 = rng.gen_range(0..GRID);
    let y1 = rng.gen_range(y0 + 1..=GRID);
    let g = GRID as f64;
    NormBox::new(x0 as f64 / g, y0 as f64 / g, (x1 - x0) as f64 / g, (y1 - y0) as f64 / g)
}

/// Edge positions of `b`: left, center-x, right, top, center-y, bottom.
pub fn anchor(b: &NormBox, k: usize) -> f64 {
    match k {
        0 => b.x,
        1 => b.x + b.w / 2.0,
        2 => b.x + b.w,
        3 => b.y,
        4 => b.y + b.h / 2.0,
        _ => b.y + b.h,
    }
}

/// Mean over elements of the smallest same-kind anchor distance.
pub fn brute_alignment(boxes: &[NormBox]) -> f64 {
    if boxes.len() < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..boxes.len() {
        let mut best = f64::INFINITY;
        for j in 0..boxes.len() {
            for k in 0..6 {
                if i != j {
                    let d = (anchor(&boxes[i], k) - anchor(&boxes[j], k)).abs();
                    if d < best {
                        best = d;
                    }
                }
            }
        }
        sum += best;
    }
    sum / boxes.len() as f64
}

pub fn brute_bde(p: &NormBox, g: &NormBox) -> f64 {
    let edges = [(0, 0), (2, 2), (3, 3), (5, 5)];
    edges.iter().map(|&(a, b)| (anchor(p, a) - anchor(g, b)).abs()).sum::<f64>() / 4.0
}

/// Best matched IoU per category by enumerating every injective pairing.
pub fn brute_m_iou(gen: &[(usize, NormBox)], reference: &[(usize, NormBox)]) -> f64 {
    let n = gen.len().max(reference.len());
    if n == 0 {
        return 1.0;
    }
    let mut cats: Vec<usize> = gen.iter().chain(reference).map(|e| e.0).collect();
    cats.sort();
    cats.dedup();
    let mut total = 0.0;
    for c in cats {
        let g: Vec<&NormBox> = gen.iter().filter(|e| e.0 == c).map(|e| &e.1).collect();
        let r: Vec<&NormBox> = reference.iter().filter(|e| e.0 == c).map(|e| &e.1).collect();
        let k = g.len().max(r.len());
        let mut best = 0.0f64;
        for p in permutations(k) {
            let s: f64 = (0..k)
                .filter(|&i| i < g.len() && p[i] < r.len())
                .map(|i| doclm::metrics::iou(g[i], r[p[i]]))
                .sum();
            best = best.max(s);
        }
        total += best;
    }
    total / n as f64
}

/// A document of `n` random boxes with categories below `cats`.
pub fn random_document<R: Rng>(rng: &mut R, id: &str, n: usize, cats: usize) -> Document {
    let (w, h) = (rng.gen_range(100.0..1000.0), rng.gen_range(100.0..1000.0));
    let elements = (0..n)
        .map(|_| {
            let x = rng.gen_range(0.0..w * 0.9);
            let y = rng.gen_range(0.0..h * 0.9);
            let bw = rng.gen_range(0.05..1.0) * (w - x);
            let bh = rng.gen_range(0.05..1.0) * (h - y);
            Element::new(rng.gen_range(0..cats), BBox::new(x, y, bw, bh))
        })
        .collect();
    Document::new(id, w, h).with_elements(elements)
}

pub fn norm_boxes(doc: &Document) -> Vec<NormBox> {
    doc.elements
        .iter()
        .map(|e| NormBox::from_bbox(&e.bbox, doc.canvas_w, doc.canvas_h))
        .collect()
}

fn bin(v: f64, extent: f64) -> u8 {
    ((v / extent * 256.0).floor()).clamp(0.0, 255.0) as u8
}

fn center(b: u8, extent: f64) -> f64 {
    (b as f64 + 0.5) / 256.0 * extent
}

pub fn cut(s: &str, max: usize) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if out.len() + c.len_utf8() > max {
            break;
        }
        out.push(c);
    }
    out
}

/// Reading order, bin-center boxes, cut text, empty text dropped.
pub fn expected(doc: &Document, style: bool, max_text: usize) -> Document {
    let mut idx: Vec<usize> = (0..doc.elements.len()).collect();
    let key = |i: usize| {
        let e = &doc.elements[i];
        (bin(e.bbox.y, doc.canvas_h), bin(e.bbox.x, doc.canvas_w), e.category, i)
    };
    idx.sort_by_key(|&i| key(i));
    let elements = idx
        .into_iter()
        .map(|i| {
            let e = &doc.elements[i];
            let (w, h) = (doc.canvas_w, doc.canvas_h);
            let x = center(bin(e.bbox.x, w), w);
            let y = center(bin(e.bbox.y, h), h);
            let bw = center(bin(e.bbox.w, w).max(1), w).min(w - x);
            let bh = center(bin(e.bbox.h, h).max(1), h).min(h - y);
            Element {
                category: e.category,
                bbox: BBox::new(x, y, bw, bh),
                style: if style { e.style } else { None },
                text: e.text.as_deref().map(|t| cut(t, max_text)).filter(|t| !t.is_empty()),
            }
        })
        .collect();
    Document::new(doc.id.clone(), doc.canvas_w, doc.canvas_h).with_elements(elements)
}

pub fn expected_len(doc: &Document, style: bool, max_text: usize) -> usize {
    2 + doc
        .elements
        .iter()
        .map(|e| {
            let t = e.text.as_deref().map_or(0, |t| cut(t, max_text).len());
            5 + usize::from(style) + t.max(1) + 1
        })
        .sum::<usize>()
}
