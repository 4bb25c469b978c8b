use std::collections::BTreeSet;

use dmldroid_core::callgraph::CallGraph;
use dmldroid_core::deximg::{encode_rgb_image, DexBuilder, DexSections};
use dmldroid_core::harness::{synth_dataset, PrepConfig, Preprocessor, SyntheticConfig};
use dmldroid_core::nnkit::init::seeded;
use dmldroid_core::robustness::{
    constraint_violations, encrypt_region, indirect_calls, obfuscate, perturb_many, perturb_sample, shannon_entropy,
    train_adversarial_generator, AttackBudget, AttackHyper, ObfuscationMode, ObfuscationSpec, INDIRECTION_STEM,
};
use dmldroid_core::tabular::BinaryFeatureMatrix;
use dmldroid_core::{ApkSample, Error, Label};
use proptest::prelude::*;
use rand::Rng;

fn fixture(k: u64) -> ApkSample {
    let mut rng = seeded(900 + k);
    let strings: Vec<u8> = (0..4 * rng.gen_range(4..40)).map(|_| rng.gen_range(0x21..0x7f)).collect();
    let methods: Vec<u8> = (0..8 * rng.gen_range(1..20)).map(|_| rng.gen()).collect();
    let data: Vec<u8> = (0..rng.gen_range(200..3000)).map(|_| rng.gen()).collect();
    let dex = DexBuilder::new(data).with_table(0, strings).with_table(4, methods).build().unwrap();
    let edges: Vec<(String, String)> = (0..12)
        .map(|_| (format!("m{}", rng.gen_range(0..10)), format!("m{}", rng.gen_range(0..10))))
        .collect();
    ApkSample {
        id: format!("fx{k:03}"),
        label: Label::Malware,
        tabular: Some((0..16).map(|_| rng.gen_range(0..2)).collect()),
        dex: Some(vec![dex]),
        graph: Some(CallGraph::from_edges(edges)),
    }
}

fn sections(s: &ApkSample) -> DexSections {
    DexSections::parse(&s.dex.as_ref().unwrap()[0]).unwrap()
}

#[test]
fn renaming_leaves_red_channel_bit_identical() {
    for k in 0..50 {
        let s = fixture(k);
        let o = obfuscate(&s, &ObfuscationSpec::new(ObfuscationMode::Rn, 7)).unwrap();
        let (a, b) = (sections(&s), sections(&o));
        assert_eq!(a.header, b.header, "fixture {k}");
        assert_eq!(a.data, b.data);
        assert_eq!(a.ids.len(), b.ids.len());
        let ia = encode_rgb_image(&a, 256, 64).unwrap();
        let ib = encode_rgb_image(&b, 256, 64).unwrap();
        assert_eq!(ia.red, ib.red);
        assert_eq!(ia.resized.red, ib.resized.red);
        assert_eq!(ia.blue, ib.blue);
    }
}

#[test]
fn full_encryption_maximizes_entropy() {
    let mut s = DexSections {
        header: vec![0; 112],
        ids: vec![b'x'; 64],
        data: (0..64 * 1024).map(|i| (i % 7) as u8).collect(),
    };
    encrypt_region(&mut s, 1.0, &mut seeded(11));
    let h = shannon_entropy(&s.data);
    assert!(h >= 7.9, "entropy {h}");
}

#[test]
fn zero_ratios_and_untouched_modalities() {
    for k in 0..10 {
        let s = fixture(k);
        let mut spec = ObfuscationSpec::new(ObfuscationMode::Enc, 3);
        spec.encryption_ratio = 0.0;
        assert_eq!(obfuscate(&s, &spec).unwrap().dex, s.dex);
        for mode in ObfuscationMode::ALL {
            let o = obfuscate(&s, &ObfuscationSpec::new(mode, 3)).unwrap();
            assert_eq!(o.tabular, s.tabular, "{mode:?} touched TF");
            assert_eq!(o.id, s.id);
            assert_eq!(o.label, s.label);
        }
    }
}

#[test]
fn code_obfuscation_only_grows_data_and_keeps_header_ids() {
    for k in 0..20 {
        let s = fixture(k);
        let o = obfuscate(&s, &ObfuscationSpec::new(ObfuscationMode::Co, 5)).unwrap();
        let (a, b) = (sections(&s), sections(&o));
        assert_eq!(a.ids, b.ids);
        assert_eq!(a.header[..32], b.header[..32]);
        assert_eq!(b.data.len(), a.data.len() + (0.1 * a.data.len() as f64).round() as usize);
    }
}

fn reachable(g: &CallGraph, from: &str) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    let mut stack: Vec<usize> = g.id(from).into_iter().collect();
    while let Some(u) = stack.pop() {
        if seen.insert(g.name(u).to_string()) {
            stack.extend(g.out_neighbors(u));
        }
    }
    seen
}

#[test]
fn indirection_preserves_reachability() {
    for k in 0..20 {
        let g = fixture(k).graph.unwrap();
        let h = indirect_calls(&g, 0.5, &mut seeded(k));
        for name in g.names() {
            let before = reachable(&g, name);
            let after: BTreeSet<String> = reachable(&h, name)
                .into_iter()
                .filter(|n| !n.starts_with(INDIRECTION_STEM))
                .collect();
            assert_eq!(before, after, "fixture {k} from {name}");
        }
    }
}

#[test]
fn missing_modalities_are_reported() {
    let mut s = fixture(0);
    s.graph = None;
    assert!(obfuscate(&s, &ObfuscationSpec::new(ObfuscationMode::Rn, 1)).is_ok());
    assert!(matches!(
        obfuscate(&s, &ObfuscationSpec::new(ObfuscationMode::Mixed, 1)),
        Err(Error::ModalityMissing { .. })
    ));
    s.dex = None;
    assert!(matches!(
        obfuscate(&s, &ObfuscationSpec::new(ObfuscationMode::Enc, 1)),
        Err(Error::ModalityMissing { .. })
    ));
}

#[test]
fn obfuscation_changes_image_and_sequence_inputs() {
    let data = synth_dataset(&SyntheticConfig {
        n_benign: 20,
        n_malware: 20,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let refs: Vec<&ApkSample> = data.samples.iter().collect();
    let prep = Preprocessor::fit(&refs, &data.feature_names, PrepConfig::default()).unwrap();
    let (mut img_diff, mut seq_diff) = (0, 0);
    for s in &data.samples {
        let o = obfuscate(s, &ObfuscationSpec::new(ObfuscationMode::Mixed, 9)).unwrap();
        img_diff += usize::from(prep.image(s).unwrap() != prep.image(&o).unwrap());
        seq_diff += usize::from(prep.sequence(s).unwrap() != prep.sequence(&o).unwrap());
    }
    assert_eq!(img_diff, data.len());
    assert!(seq_diff > 0, "indirection never reached a key-API sequence");
}

/// Bits 0..4 benign markers, 4..6 protected behavior, 6..12 noise.
fn attack_rows(n: usize, malware: bool, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            (0..12)
                .map(|j| {
                    let p = match (j, malware) {
                        (0..=3, false) => 0.9,
                        (0..=3, true) => 0.1,
                        (4..=5, true) => 0.8,
                        (4..=5, false) => 0.0,
                        _ => 0.3,
                    };
                    u8::from(rng.gen_bool(p))
                })
                .collect()
        })
        .collect()
}

fn blackbox(rows: &[Vec<u8>]) -> dmldroid_core::Result<Vec<bool>> {
    Ok(rows.iter().map(|r| r[..4].iter().map(|&b| b as usize).sum::<usize>() < 2).collect())
}

fn budget(max_flips: usize) -> AttackBudget {
    let mal = attack_rows(200, true, 1);
    let ben = attack_rows(200, false, 2);
    let rows: Vec<u8> = mal.iter().chain(&ben).flatten().copied().collect();
    let m = BinaryFeatureMatrix::new(
        (0..400).map(|i| format!("s{i}")).collect(),
        (0..12).map(|j| format!("f{j}")).collect(),
        rows,
    )
    .unwrap();
    let labels: Vec<bool> = (0..400).map(|i| i < 200).collect();
    AttackBudget::from_corpus(&m, &labels, 0.3, 0.5, 0.05, max_flips).unwrap()
}

#[test]
fn thousand_adversarial_examples_respect_the_budget() {
    let b = budget(3);
    assert!(b.protected.contains(&4) && b.protected.contains(&5));
    assert!(!b.allowed.contains(&4));
    let hyper = AttackHyper {
        epochs: 15,
        seed: 3,
        ..AttackHyper::default()
    };
    let gen = train_adversarial_generator(&blackbox, &attack_rows(300, true, 5), &attack_rows(300, false, 6), &b, &hyper)
        .unwrap();
    let mal = attack_rows(1000, true, 7);
    let aes = perturb_many(&gen, &mal, 8).unwrap();
    let mut evaded = 0;
    for (o, p) in mal.iter().zip(&aes) {
        assert_eq!(constraint_violations(&b, o, p), (0, 0, 0));
        evaded += usize::from(!blackbox(std::slice::from_ref(p)).unwrap()[0]);
    }
    assert!(evaded > 500, "only {evaded} of 1000 evade");
    assert_eq!(perturb_many(&gen, &mal, 8).unwrap(), aes);
}

#[test]
fn zero_flip_budget_is_identity_and_inputs_are_checked() {
    let b = budget(0);
    let hyper = AttackHyper {
        epochs: 2,
        ..AttackHyper::default()
    };
    let gen = train_adversarial_generator(&blackbox, &attack_rows(50, true, 5), &attack_rows(50, false, 6), &b, &hyper)
        .unwrap();
    let mal = attack_rows(100, true, 9);
    assert_eq!(perturb_many(&gen, &mal, 1).unwrap(), mal);
    assert!(matches!(perturb_sample(&gen, &mal[0], false, 1), Err(Error::Usage(_))));

    let mut empty = budget(3);
    empty.allowed.clear();
    assert!(matches!(
        train_adversarial_generator(&blackbox, &mal, &attack_rows(50, false, 6), &empty, &hyper),
        Err(Error::Configuration(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn obfuscation_is_seed_deterministic(k in 0u64..30, seed in any::<u64>(), m in 0usize..4) {
        let s = fixture(k);
        let spec = ObfuscationSpec::new(ObfuscationMode::ALL[m], seed);
        prop_assert_eq!(obfuscate(&s, &spec).unwrap(), obfuscate(&s, &spec).unwrap());
    }
}
