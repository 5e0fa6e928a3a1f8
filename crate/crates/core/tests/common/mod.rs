#![allow(dead_code)]

use std::collections::BTreeSet;

use pedfair::model::{
    BoundingBox, Detection, GroundTruthAnnotation, ImageId, PersonAttributes, PERSON,
};
use rand::Rng;

pub const IMAGE: ImageId = ImageId(1);

pub fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
    BoundingBox::new(x, y, w, h).unwrap()
}

pub fn truth(id: u64, image: ImageId, bbox: BoundingBox) -> GroundTruthAnnotation {
    GroundTruthAnnotation {
        id,
        image_id: image,
        bbox,
        attributes: PersonAttributes::default(),
        category: PERSON.to_owned(),
    }
}

/// Integer-grid box so every area and intersection is exact.
pub fn grid_box(rng: &mut impl Rng) -> BoundingBox {
    let x = f64::from(rng.random_range(0..24u32));
    let y = f64::from(rng.random_range(0..24u32));
    let w = f64::from(rng.random_range(1..=16u32));
    let h = f64::from(rng.random_range(1..=16u32));
    bx(x, y, w, h)
}

/// Random matching instance with up to `max` detections and truths. Scores
/// come from a coarse set so ties are common; a few detections are not
/// persons. Detections are sometimes copies of truth boxes to produce
/// exact overlaps.
pub fn random_instance(
    rng: &mut impl Rng,
    max: usize,
) -> (Vec<Detection>, Vec<GroundTruthAnnotation>) {
    let n_truths = rng.random_range(0..=max);
    let truths: Vec<_> = (0..n_truths)
        .map(|i| truth(i as u64 + 1, IMAGE, grid_box(rng)))
        .collect();
    let n_dets = rng.random_range(0..=max);
    let detections = (0..n_dets)
        .map(|_| {
            let bbox = if !truths.is_empty() && rng.random_bool(0.3) {
                truths[rng.random_range(0..truths.len())].bbox
            } else {
                grid_box(rng)
            };
            let score = f64::from(rng.random_range(0..=8u32)) / 8.0;
            let category = if rng.random_bool(0.1) { "car" } else { PERSON };
            Detection::new(IMAGE, bbox, category, score).unwrap()
        })
        .collect();
    (detections, truths)
}

/// Matching outcome as plain index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub pairs: BTreeSet<(usize, usize)>,
    pub false_positives: BTreeSet<usize>,
    pub false_negatives: BTreeSet<usize>,
}

fn overlap(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let left = if a.x() > b.x() { a.x() } else { b.x() };
    let right = if a.x() + a.width() < b.x() + b.width() {
        a.x() + a.width()
    } else {
        b.x() + b.width()
    };
    let top = if a.y() > b.y() { a.y() } else { b.y() };
    let bottom = if a.y() + a.height() < b.y() + b.height() {
        a.y() + a.height()
    } else {
        b.y() + b.height()
    };
    if right <= left || bottom <= top {
        return 0.0;
    }
    let inter = (right - left) * (bottom - top);
    inter / (a.width() * a.height() + b.width() * b.height() - inter)
}

/// Straight-line greedy reference: selection-sort persons by score
/// (highest first, lowest index on ties), then give each one the free truth
/// with the largest overlap at or above `threshold`.
pub fn reference_match(
    detections: &[Detection],
    truths: &[GroundTruthAnnotation],
    threshold: f64,
) -> Outcome {
    let mut remaining: Vec<usize> = Vec::new();
    for (i, d) in detections.iter().enumerate() {
        if d.category == "person" {
            remaining.push(i);
        }
    }
    let mut order = Vec::new();
    while !remaining.is_empty() {
        let mut pick = 0;
        for k in 1..remaining.len() {
            if detections[remaining[k]].confidence() > detections[remaining[pick]].confidence() {
                pick = k;
            }
        }
        order.push(remaining.remove(pick));
    }
    let mut used = vec![false; truths.len()];
    let mut out = Outcome {
        pairs: BTreeSet::new(),
        false_positives: BTreeSet::new(),
        false_negatives: BTreeSet::new(),
    };
    for d in order {
        let mut chosen: Option<usize> = None;
        let mut chosen_overlap = -1.0;
        for t in 0..truths.len() {
            let o = overlap(&detections[d].bbox, &truths[t].bbox);
            if !used[t] && o >= threshold && o > chosen_overlap {
                chosen = Some(t);
                chosen_overlap = o;
            }
        }
        match chosen {
            Some(t) => {
                used[t] = true;
                out.pairs.insert((d, t));
            }
            None => {
                out.false_positives.insert(d);
            }
        }
    }
    for (t, u) in used.iter().enumerate() {
        if !u {
            out.false_negatives.insert(t);
        }
    }
    out
}

pub fn outcome_of(result: &pedfair::matcher::MatchResult) -> Outcome {
    Outcome {
        pairs: result
            .true_positives
            .iter()
            .map(|tp| (tp.detection, tp.truth))
            .collect(),
        false_positives: result
            .false_positives
            .iter()
            .map(|fp| fp.detection)
            .collect(),
        false_negatives: result.false_negatives.iter().copied().collect(),
    }
}

/// Exact 2-Wasserstein squared cost of equal-size samples, minimized over
/// every permutation coupling.
pub fn brute_force_w2_squared(a: &[f64], b: &[f64]) -> f64 {
    fn permute(k: usize, perm: &mut Vec<usize>, a: &[f64], b: &[f64], best: &mut f64) {
        if k == perm.len() {
            let cost: f64 = perm
                .iter()
                .enumerate()
                .map(|(i, &j)| (a[i] - b[j]) * (a[i] - b[j]))
                .sum();
            if cost < *best {
                *best = cost;
            }
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(k + 1, perm, a, b, best);
            perm.swap(k, i);
        }
    }
    let mut best = f64::INFINITY;
    permute(0, &mut (0..a.len()).collect(), a, b, &mut best);
    best / a.len() as f64
}
