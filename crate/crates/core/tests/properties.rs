mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use pedfair::corpus::{self, AttributeKey, Corpus, DistanceBin};
use pedfair::darkness::DarknessFactor;
use pedfair::fairness::{
    disparity_best, disparity_worst, pairwise_gaps, wasserstein2, wasserstein2_max,
};
use pedfair::matcher::{match_at_thresholds, match_image, IouThreshold, MatchOptions};
use pedfair::metrics::{average_recall, bundle};
use pedfair::model::{
    group_membership, AttributePredicate, BodySize, Detection, Gender, GroundTruthAnnotation,
    GroupSpec, ImageId, ImageRecord, Lighting, PersonAttributes, SkinTone, WeatherCondition,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64) -> (Vec<Detection>, Vec<GroundTruthAnnotation>) {
    random_instance(&mut ChaCha8Rng::seed_from_u64(seed), 6)
}

/// Several random images with their own ids.
fn random_images(
    seed: u64,
    n: usize,
) -> Vec<(ImageId, Vec<Detection>, Vec<GroundTruthAnnotation>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let id = ImageId(i as u64 + 1);
            let (dets, truths) = random_instance(&mut rng, 5);
            let dets = dets
                .into_iter()
                .map(|d| Detection::new(id, d.bbox, d.category.clone(), d.confidence()).unwrap())
                .collect();
            let truths = truths
                .into_iter()
                .map(|t| GroundTruthAnnotation { image_id: id, ..t })
                .collect();
            (id, dets, truths)
        })
        .collect()
}

fn match_all(
    images: &[(ImageId, Vec<Detection>, Vec<GroundTruthAnnotation>)],
) -> Vec<pedfair::matcher::MatchResult> {
    images
        .iter()
        .flat_map(|(id, d, t)| {
            match_at_thresholds(
                *id,
                d,
                t,
                &IouThreshold::standard_ladder(),
                &MatchOptions::default(),
            )
            .unwrap()
        })
        .collect()
}

fn threshold() -> impl Strategy<Value = IouThreshold> {
    (1u32..100).prop_map(|k| IouThreshold::new(f64::from(k) / 100.0).unwrap())
}

fn sample(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 1..=max_len)
}

proptest! {
    #[test]
    fn matching_conserves_counts(seed in any::<u64>(), t in threshold()) {
        let (dets, truths) = instance(seed);
        let r = match_image(IMAGE, &dets, &truths, t).unwrap();
        let persons = dets.iter().filter(|d| d.is_person()).count();
        prop_assert_eq!(r.n_tp() + r.n_fn(), truths.len());
        prop_assert_eq!(r.n_tp() + r.n_fp(), persons);
    }

    #[test]
    fn raising_the_threshold_never_adds_true_positives(seed in any::<u64>()) {
        let (dets, truths) = instance(seed);
        let results = match_at_thresholds(IMAGE, &dets, &truths, &IouThreshold::standard_ladder(), &MatchOptions::default()).unwrap();
        for w in results.windows(2) {
            prop_assert!(w[1].n_tp() <= w[0].n_tp());
        }
    }

    #[test]
    fn deleting_a_non_matched_detection_keeps_true_positives(seed in any::<u64>(), t in threshold(), pick in any::<prop::sample::Index>()) {
        let (dets, truths) = instance(seed);
        let full = match_image(IMAGE, &dets, &truths, t).unwrap();
        let matched: BTreeSet<usize> = full.true_positives.iter().map(|tp| tp.detection).collect();
        let candidates: Vec<usize> = (0..dets.len()).filter(|i| !matched.contains(i)).collect();
        prop_assume!(!candidates.is_empty());
        let removed = candidates[pick.index(candidates.len())];
        let mut fewer = dets.clone();
        fewer.remove(removed);
        let reduced = match_image(IMAGE, &fewer, &truths, t).unwrap();
        let back = |d: usize| if d >= removed { d + 1 } else { d };
        let pairs: BTreeSet<(usize, usize)> = reduced.true_positives.iter().map(|tp| (back(tp.detection), tp.truth)).collect();
        prop_assert_eq!(pairs, outcome_of(&full).pairs);
    }

    #[test]
    fn greedy_matches_reference(seed in any::<u64>(), t in threshold()) {
        let (dets, truths) = instance(seed);
        let r = match_image(IMAGE, &dets, &truths, t).unwrap();
        prop_assert_eq!(outcome_of(&r), reference_match(&dets, &truths, t.value()));
    }

    #[test]
    fn duplicating_images_leaves_metrics_unchanged(seed in any::<u64>(), n in 1usize..6) {
        let images = random_images(seed, n);
        let mut doubled = images.clone();
        for (id, d, t) in &images {
            let copy = ImageId(id.0 + 1000);
            doubled.push((
                copy,
                d.iter().map(|x| Detection::new(copy, x.bbox, x.category.clone(), x.confidence()).unwrap()).collect(),
                t.iter().map(|x| GroundTruthAnnotation { image_id: copy, ..x.clone() }).collect(),
            ));
        }
        let a = bundle(&match_all(&images), IouThreshold::half()).unwrap();
        let b = bundle(&match_all(&doubled), IouThreshold::half()).unwrap();
        prop_assert_eq!(a.m_ar, b.m_ar);
        prop_assert_eq!(a.m_ap, b.m_ap);
        prop_assert_eq!(a.atpc, b.atpc);
        prop_assert_eq!(a.afpc, b.afpc);
        for (x, y) in a.per_threshold.iter().zip(&b.per_threshold) {
            prop_assert_eq!(x.ar, y.ar);
            prop_assert_eq!(x.ap, y.ap);
        }
    }

    #[test]
    fn bundle_metrics_are_micro_averages(seed in any::<u64>(), n in 1usize..6) {
        let images = random_images(seed, n);
        let results = match_all(&images);
        let b = bundle(&results, IouThreshold::half()).unwrap();
        let at_half: Vec<_> = results.iter().filter(|r| r.iou_threshold == IouThreshold::half()).collect();
        let tp: usize = at_half.iter().map(|r| r.n_tp()).sum();
        let fn_: usize = at_half.iter().map(|r| r.n_fn()).sum();
        prop_assert_eq!(b.ar_at(IouThreshold::half()), average_recall(tp, fn_));

        let tp_conf: Vec<f64> = at_half.iter().flat_map(|r| r.true_positives.iter().map(|t| t.confidence)).collect();
        let fp_conf: Vec<f64> = at_half.iter().flat_map(|r| r.false_positives.iter().map(|f| f.confidence)).collect();
        for (value, confs) in [(b.atpc, &tp_conf), (b.afpc, &fp_conf)] {
            match value {
                Some(v) => {
                    let lo = confs.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = confs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(lo <= v && v <= hi);
                }
                None => prop_assert!(confs.is_empty()),
            }
        }
        let ars: Vec<Option<f64>> = b.per_threshold.iter().map(|m| m.ar).collect();
        for w in ars.windows(2) {
            if let (Some(x), Some(y)) = (w[0], w[1]) {
                prop_assert!(y <= x);
            }
        }
    }

    #[test]
    fn worst_gap_bounds_best_gap(values in prop::collection::btree_map("[a-z]{1,4}", -1.0f64..1.0, 2..8)) {
        let worst = disparity_worst(&values).unwrap();
        let best = disparity_best(&values).unwrap();
        prop_assert!(worst >= best);
        if values.len() == 2 {
            prop_assert_eq!(worst, best);
        }
        prop_assert_eq!(pairwise_gaps(&values).len(), values.len() * (values.len() - 1) / 2);
    }

    #[test]
    fn common_shift_keeps_gaps(values in prop::collection::btree_map("[a-z]{1,4}", -1.0f64..1.0, 2..8), c in -10.0f64..10.0) {
        let shifted: BTreeMap<String, f64> = values.iter().map(|(k, v)| (k.clone(), v + c)).collect();
        prop_assert!((disparity_worst(&values).unwrap() - disparity_worst(&shifted).unwrap()).abs() < 1e-9);
        prop_assert!((disparity_best(&values).unwrap() - disparity_best(&shifted).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn w2_is_a_metric(a in sample(12), b in sample(12), c in sample(12)) {
        let ab = wasserstein2(&a, &b).unwrap();
        let ba = wasserstein2(&b, &a).unwrap();
        let ac = wasserstein2(&a, &c).unwrap();
        let cb = wasserstein2(&c, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert!(ab <= ac + cb + 1e-9);
        prop_assert_eq!(wasserstein2(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn w2_shift_moves_by_the_shift(a in sample(8), c in -5.0f64..5.0) {
        let shifted: Vec<f64> = a.iter().map(|x| x + c).collect();
        prop_assert!((wasserstein2(&a, &shifted).unwrap() - c.abs()).abs() < 1e-9);
    }

    #[test]
    fn w2_max_ignores_labels(samples in prop::collection::vec(sample(6), 2..5), rotate in 0usize..5) {
        let named: BTreeMap<String, Vec<f64>> = samples.iter().enumerate().map(|(i, s)| (format!("g{i}"), s.clone())).collect();
        let k = samples.len();
        let relabeled: BTreeMap<String, Vec<f64>> = samples.iter().enumerate().map(|(i, s)| (format!("g{}", (i + rotate) % k), s.clone())).collect();
        let w = wasserstein2_max(&named).unwrap().unwrap();
        prop_assert!(w >= 0.0);
        prop_assert_eq!(w, wasserstein2_max(&relabeled).unwrap().unwrap());
    }

    #[test]
    fn w2_zero_only_for_identical_sorted_samples(a in sample(5), b in sample(5)) {
        let mut sa = a.clone();
        let mut sb = b.clone();
        sa.sort_by(f64::total_cmp);
        sb.sort_by(f64::total_cmp);
        let named: BTreeMap<String, Vec<f64>> = [("a".to_owned(), a.clone()), ("b".to_owned(), b.clone())].into();
        let zero = wasserstein2_max(&named).unwrap().unwrap() == 0.0;
        prop_assert_eq!(zero, sa == sb);
        let mut reversed = a.clone();
        reversed.reverse();
        let same: BTreeMap<String, Vec<f64>> = [("a".to_owned(), a), ("b".to_owned(), reversed)].into();
        prop_assert_eq!(wasserstein2_max(&same).unwrap(), Some(0.0));
    }

    #[test]
    fn distance_bins_are_monotone_in_area(w1 in 1.0f64..200.0, h1 in 1.0f64..200.0, w2 in 1.0f64..200.0, h2 in 1.0f64..200.0) {
        let a = bx(0.0, 0.0, w1, h1);
        let b = bx(0.0, 0.0, w2, h2);
        if a.area() <= b.area() {
            prop_assert!(corpus::distance_bin(&a) <= corpus::distance_bin(&b));
        }
        prop_assert_eq!(DistanceBin::ALL.iter().filter(|&&bin| bin == corpus::distance_bin(&a)).count(), 1);
    }

    #[test]
    fn darkening_is_monotone_in_factor(v in any::<u8>(), f1 in 0.0f64..=1.0, f2 in 0.0f64..=1.0) {
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let lo = DarknessFactor::new(lo).unwrap();
        let hi = DarknessFactor::new(hi).unwrap();
        prop_assert!(lo.scale(v) <= hi.scale(v));
        prop_assert!(hi.scale(v) <= v);
    }

    #[test]
    fn darkening_composes_within_one(v in any::<u8>(), f1 in 0.0f64..=1.0, f2 in 0.0f64..=1.0) {
        let a = DarknessFactor::new(f1).unwrap();
        let b = DarknessFactor::new(f2).unwrap();
        let product = DarknessFactor::new(a.value() * b.value()).unwrap();
        let twice = i32::from(b.scale(a.scale(v)));
        prop_assert!((twice - i32::from(product.scale(v))).abs() <= 1);
    }
}

fn random_attributes(rng: &mut ChaCha8Rng) -> PersonAttributes {
    let tones = rng.random_range(0..=2);
    PersonAttributes {
        skin_tones: (0..tones)
            .map(|_| SkinTone::new(rng.random_range(1..=10)).unwrap())
            .collect(),
        gender: [Gender::Female, Gender::Male, Gender::Unknown][rng.random_range(0..3)],
        body_size: [BodySize::Small, BodySize::Medium, BodySize::Large][rng.random_range(0..3)],
        lighting: Lighting::ALL[rng.random_range(0..Lighting::ALL.len())],
    }
}

/// Random corpus where every annotation of an image shares one lighting
/// value, so the lighting filter keeps or drops whole images.
fn random_corpus(seed: u64, images: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut annotations = Vec::new();
    for i in 0..images {
        let id = ImageId(i as u64 + 1);
        records.push(
            ImageRecord::new(id, format!("{i}.png"), 100, 100, WeatherCondition::clear()).unwrap(),
        );
        let lighting = Lighting::ALL[rng.random_range(0..Lighting::ALL.len())];
        for _ in 0..rng.random_range(0..4) {
            let mut ann = truth(annotations.len() as u64 + 1, id, grid_box(&mut rng));
            ann.attributes = PersonAttributes {
                lighting,
                ..random_attributes(&mut rng)
            };
            annotations.push(ann);
        }
    }
    Corpus::new(records, annotations).unwrap()
}

fn same_content(a: &Corpus, b: &Corpus) -> bool {
    a.images == b.images && a.annotations == b.annotations
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lighting_and_single_attribute_commute(seed in any::<u64>()) {
        let c = random_corpus(seed, 20);
        let allowed: BTreeSet<Lighting> = [Lighting::WellLit, Lighting::DimlyLit].into();
        let one = corpus::curate_single_attribute(&corpus::filter_lighting(&c, &allowed).unwrap(), AttributeKey::SkinTone);
        let two = corpus::filter_lighting(&corpus::curate_single_attribute(&c, AttributeKey::SkinTone), &allowed).unwrap();
        prop_assert!(same_content(&one, &two));
    }

    #[test]
    fn single_attribute_output_is_homogeneous(seed in any::<u64>(), key in prop::sample::select(vec![AttributeKey::SkinTone, AttributeKey::Gender, AttributeKey::BodySize])) {
        let c = corpus::curate_single_attribute(&random_corpus(seed, 20), key);
        for anns in c.annotations_by_image().values() {
            let sets: BTreeSet<_> = anns.iter().map(|a| corpus::value_set(&a.attributes, key)).collect();
            prop_assert!(sets.len() <= 1);
        }
    }

    #[test]
    fn subsampling_is_reproducible(seed in any::<u64>(), n in 1usize..6) {
        let c = random_corpus(seed, 30);
        let a = corpus::subsample_equal(&c, AttributeKey::Gender, n, seed).unwrap();
        let b = corpus::subsample_equal(&c, AttributeKey::Gender, n, seed).unwrap();
        prop_assert_eq!(corpus::ground_truth_to_json(&a).unwrap(), corpus::ground_truth_to_json(&b).unwrap());

        let everything = corpus::subsample_equal(&c, AttributeKey::Gender, usize::MAX, seed).unwrap();
        let annotated: BTreeSet<ImageId> = c.annotations.iter().map(|a| a.image_id).collect();
        prop_assert_eq!(everything.images.keys().copied().collect::<BTreeSet<_>>(), annotated);
        prop_assert_eq!(&everything.annotations, &c.annotations);
    }

    #[test]
    fn membership_is_deterministic_and_disjoint(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = ImageRecord::new(IMAGE, "x.png", 100, 100, WeatherCondition::clear()).unwrap();
        let female = GroupSpec::attribute("female", AttributePredicate::gender(Gender::Female));
        let male = GroupSpec::attribute("male", AttributePredicate::gender(Gender::Male));
        let lighter = GroupSpec::attribute("lighter", AttributePredicate::skin_tone(1..=3).unwrap());
        let both = female.intersect(&lighter);
        for _ in 0..20 {
            let mut ann = truth(1, IMAGE, bx(0.0, 0.0, 5.0, 5.0));
            ann.attributes = random_attributes(&mut rng);
            let f = group_membership(&ann, &image, &female);
            prop_assert_eq!(f, group_membership(&ann, &image, &female));
            prop_assert!(!(f && group_membership(&ann, &image, &male)));
            prop_assert_eq!(
                group_membership(&ann, &image, &both),
                f && group_membership(&ann, &image, &lighter)
            );
        }
    }
}

#[test]
fn synthetic_generation_is_thread_count_independent() {
    use pedfair::synthgen::{generate, DegradationConfig, PedestrianProfile, Scenario};
    let profiles = vec![PedestrianProfile {
        name: "p".into(),
        attributes: PersonAttributes::default(),
        weight: 1.0,
    }];
    let mut scenario = Scenario::new(40, profiles, pedfair::synthgen::fog_ladder());
    scenario.max_pedestrians = 4;
    let config = DegradationConfig {
        miss_base: 0.1,
        hallucination_rate: 0.5,
        confidence_noise_sd: 0.05,
        localization_noise: 0.05,
        ..Default::default()
    };
    let render = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let run = pool.install(|| generate(&config, &scenario, 11).unwrap());
        (
            corpus::ground_truth_to_json(&run.corpus).unwrap(),
            corpus::detections_to_json(&run.detections).unwrap(),
        )
    };
    assert_eq!(render(1), render(4));
    let other = generate(&config, &scenario, 12).unwrap();
    assert_ne!(
        corpus::detections_to_json(&other.detections).unwrap(),
        render(1).1
    );
}
