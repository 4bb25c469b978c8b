use dmldroid_core::fusion::{
    dwf_weighted_sum, dwf_weights, fuse_bundle, fuse_concat, fuse_cross_attn, fuse_dwf, fuse_gated, fuse_self_attn,
    multi_head_attention, train, Architecture, Detector, FusionHead, ImageBatch, Modality, ModalityBundle,
    ModelInputs, Strategy, TrainedModel, MODALITY_DIM,
};
use dmldroid_core::deximg::ImageEncoder;
use dmldroid_core::nnkit::gradcheck::check_gradients;
use dmldroid_core::nnkit::init::{glorot, seeded};
use dmldroid_core::nnkit::{affine_forward, OptimHyper, ParamStore, RealMatrix, Tape, Tensor};
use dmldroid_core::seqenc::{EncodedSeq, EncoderConfig, SequenceEncoder};
use dmldroid_core::tabular::TabularEncoder;
use dmldroid_core::Error;
use proptest::prelude::*;

const D: usize = MODALITY_DIM;

fn rand_mat(seed: u64, rows: usize, cols: usize) -> RealMatrix {
    glorot(&mut seeded(seed), &[rows, cols], 1, 1).into_matrix().unwrap()
}

fn bundle(seed: u64, b: usize) -> ModalityBundle {
    ModalityBundle::full(rand_mat(seed, b, D), rand_mat(seed + 1, b, D), rand_mat(seed + 2, b, D)).unwrap()
}

fn head_with(strategy: Strategy, heads: usize, seed: u64) -> (FusionHead, ParamStore) {
    let h = FusionHead::new(strategy, &Modality::ALL).unwrap().with_heads(heads);
    let mut s = ParamStore::new();
    h.init(&mut s, &mut seeded(seed)).unwrap();
    (h, s)
}

fn identity_mha(store: &mut ParamStore, prefix: &str, d: usize, heads: usize) {
    let dk = d / heads;
    for i in 0..heads {
        let mut w = Tensor::zeros(&[d, dk]);
        for j in 0..dk {
            w.data[(i * dk + j) * dk + j] = 1.0;
        }
        for p in ["q", "k", "v"] {
            store.insert(format!("{prefix}.w{p}{i}"), w.clone());
        }
    }
    let mut wo = Tensor::zeros(&[d, d]);
    for j in 0..d {
        wo.data[j * d + j] = 1.0;
    }
    store.insert(format!("{prefix}.wo"), wo);
}

fn mat(t: &Tensor) -> RealMatrix {
    t.clone().into_matrix().unwrap()
}

// Independent attention: loops over batch, head, query and key.
fn naive_mha(q: &Tensor, k: &Tensor, v: &Tensor, store: &ParamStore, prefix: &str, h: usize) -> Vec<f64> {
    let (b, lq, d) = (q.shape[0], q.shape[1], q.shape[2]);
    let lk = k.shape[1];
    let dk = d / h;
    let w = |n: String| store.get(&n).unwrap().clone();
    let proj = |x: &[f64], w: &Tensor, cols: usize| -> Vec<f64> {
        (0..cols).map(|c| (0..x.len()).map(|r| x[r] * w.data[r * cols + c]).sum()).collect()
    };
    let mut out = vec![0.0; b * lq * d];
    for bi in 0..b {
        for qi in 0..lq {
            let mut concat = Vec::with_capacity(d);
            for hi in 0..h {
                let wq = w(format!("{prefix}.wq{hi}"));
                let wk = w(format!("{prefix}.wk{hi}"));
                let wv = w(format!("{prefix}.wv{hi}"));
                let qrow = &q.data[(bi * lq + qi) * d..][..d];
                let qp = proj(qrow, &wq, dk);
                let mut scores = Vec::new();
                let mut vals = Vec::new();
                for ki in 0..lk {
                    let krow = &k.data[(bi * lk + ki) * d..][..d];
                    let vrow = &v.data[(bi * lk + ki) * d..][..d];
                    let kp = proj(krow, &wk, dk);
                    scores.push(qp.iter().zip(&kp).map(|(a, b)| a * b).sum::<f64>() / (dk as f64).sqrt());
                    vals.push(proj(vrow, &wv, dk));
                }
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
                for j in 0..dk {
                    concat.push((0..lk).map(|ki| (scores[ki] - mx).exp() / z * vals[ki][j]).sum());
                }
            }
            let wo = w(format!("{prefix}.wo"));
            let o = proj(&concat, &wo, d);
            out[(bi * lq + qi) * d..][..d].copy_from_slice(&o);
        }
    }
    out
}

#[test]
fn attention_matches_naive_oracle() {
    for seed in 0..5 {
        let mut s = ParamStore::new();
        dmldroid_core::nnkit::attention::init_mha(&mut s, &mut seeded(seed), "a", 8, 2).unwrap();
        let q = glorot(&mut seeded(seed + 10), &[2, 3, 8], 1, 1);
        let k = glorot(&mut seeded(seed + 11), &[2, 3, 8], 1, 1);
        let v = glorot(&mut seeded(seed + 12), &[2, 3, 8], 1, 1);
        let got = multi_head_attention(&q, &k, &v, &s, "a", 2).unwrap();
        let want = naive_mha(&q, &k, &v, &s, "a", 2);
        for (g, w) in got.data.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-10, "{g} vs {w}");
        }
    }
}

#[test]
fn attention_rejects_indivisible_heads() {
    let q = Tensor::zeros(&[1, 1, 6]);
    let err = multi_head_attention(&q, &q, &q, &ParamStore::new(), "a", 4).unwrap_err();
    assert!(matches!(err, Error::Configuration(_)));
}

#[test]
fn singleton_attention_is_linear() {
    let mut s = ParamStore::new();
    dmldroid_core::nnkit::attention::init_mha(&mut s, &mut seeded(4), "a", 8, 2).unwrap();
    let v = glorot(&mut seeded(5), &[3, 1, 8], 1, 1);
    let q = glorot(&mut seeded(6), &[3, 1, 8], 1, 1);
    let got = multi_head_attention(&q, &v, &v, &s, "a", 2).unwrap();
    // V · [W_V0 | W_V1] · W_O
    let vm = RealMatrix::new(3, 8, v.data.clone()).unwrap();
    let heads: Vec<RealMatrix> = (0..2)
        .map(|i| vm.matmul(&mat(s.get(&format!("a.wv{i}")).unwrap())).unwrap())
        .collect();
    let cat = RealMatrix::from_rows(
        &(0..3).map(|r| [heads[0].row(r), heads[1].row(r)].concat()).collect::<Vec<_>>(),
    )
    .unwrap();
    let want = cat.matmul(&mat(s.get("a.wo").unwrap())).unwrap();
    let got = RealMatrix::new(3, 8, got.data).unwrap();
    assert!(got.max_abs_diff(&want) <= 1e-10);
}

#[test]
fn self_attention_collapses_to_per_modality_maps() {
    let (h, s) = head_with(Strategy::SelfAttn, 4, 9);
    let b = bundle(20, 3);
    let got = fuse_self_attn(&b, &h, &s).unwrap();
    let mut pieces = Vec::new();
    for m in Modality::ALL {
        let x = b.get(m).unwrap();
        let t = Tensor::new(vec![3, 1, D], x.data().to_vec()).unwrap();
        let y = multi_head_attention(&t, &t, &t, &s, &format!("fusion.self.{m}"), 4).unwrap();
        pieces.push(RealMatrix::new(3, D, y.data).unwrap());
        // and the closed form V W_V W_O
        let wv: Vec<RealMatrix> = (0..4).map(|i| mat(s.get(&format!("fusion.self.{m}.wv{i}")).unwrap())).collect();
        let proj: Vec<RealMatrix> = wv.iter().map(|w| x.matmul(w).unwrap()).collect();
        let cat = RealMatrix::from_rows(
            &(0..3).map(|r| proj.iter().flat_map(|p| p.row(r).to_vec()).collect()).collect::<Vec<_>>(),
        )
        .unwrap();
        let lin = cat.matmul(&mat(s.get(&format!("fusion.self.{m}.wo")).unwrap())).unwrap();
        assert!(pieces.last().unwrap().max_abs_diff(&lin) <= 1e-10);
    }
    let want = RealMatrix::from_rows(
        &(0..3).map(|r| pieces.iter().flat_map(|p| p.row(r).to_vec()).collect()).collect::<Vec<_>>(),
    )
    .unwrap();
    assert_eq!(got, want);
}

#[test]
fn self_attention_with_identity_projections_is_concat() {
    let (h, mut s) = head_with(Strategy::SelfAttn, 4, 1);
    for m in Modality::ALL {
        identity_mha(&mut s, &format!("fusion.self.{m}"), D, 4);
    }
    let b = bundle(3, 2);
    assert_eq!(fuse_self_attn(&b, &h, &s).unwrap(), fuse_concat(&b).unwrap());
}

#[test]
fn concat_slices_round_trip() {
    let b = bundle(7, 4);
    let c = fuse_concat(&b).unwrap();
    assert_eq!(c.shape(), [4, 3 * D]);
    for (k, m) in Modality::ALL.into_iter().enumerate() {
        for r in 0..4 {
            assert_eq!(&c.row(r)[k * D..(k + 1) * D], b.get(m).unwrap().row(r));
        }
    }
}

#[test]
fn cross_attention_equal_keys_and_midpoint() {
    // v_IF = v_GSF: the TF branch attends two identical tokens.
    let (h, s) = head_with(Strategy::CrossAttn, 4, 2);
    let common = rand_mat(40, 2, D);
    let b = ModalityBundle::full(rand_mat(41, 2, D), common.clone(), common.clone()).unwrap();
    let got = fuse_cross_attn(&b, &h, &s).unwrap();
    assert_eq!(got.shape(), [2, 3 * D]);
    let t = Tensor::new(vec![2, 1, D], common.data().to_vec()).unwrap();
    let q = Tensor::new(vec![2, 1, D], b.tf.as_ref().unwrap().data().to_vec()).unwrap();
    let single = multi_head_attention(&q, &t, &t, &s, "fusion.cross.tf", 4).unwrap();
    for r in 0..2 {
        for j in 0..D {
            assert!((got.get(r, j) - single.data[r * D + j]).abs() <= 1e-12);
        }
    }

    // Identity projections, one head, query orthogonal to x − y: TF branch = (x+y)/2.
    let (h1, mut s1) = head_with(Strategy::CrossAttn, 1, 3);
    for m in Modality::ALL {
        identity_mha(&mut s1, &format!("fusion.cross.{m}"), D, 1);
    }
    let mut x = vec![0.0; D];
    let mut y = vec![0.0; D];
    let mut q = vec![0.0; D];
    for j in 0..D {
        x[j] = ((j * 7) % 11) as f64 / 5.0 - 1.0;
        y[j] = if j < 64 { x[j] } else { ((j * 3) % 13) as f64 / 6.0 - 1.0 };
        q[j] = if j < 64 { (j % 5) as f64 / 4.0 } else { 0.0 };
    }
    let b = ModalityBundle::full(
        RealMatrix::new(1, D, q).unwrap(),
        RealMatrix::new(1, D, x.clone()).unwrap(),
        RealMatrix::new(1, D, y.clone()).unwrap(),
    )
    .unwrap();
    let got = fuse_cross_attn(&b, &h1, &s1).unwrap();
    for j in 0..D {
        assert!((got.get(0, j) - (x[j] + y[j]) / 2.0).abs() <= 1e-12);
    }
}

#[test]
fn gated_identities() {
    let (h, mut s) = head_with(Strategy::Gated, 4, 5);
    let b = bundle(50, 3);
    let sum = |scale: f64| {
        let mut out = RealMatrix::zeros(3, D);
        for m in Modality::ALL {
            let x = b.get(m).unwrap();
            for r in 0..3 {
                for j in 0..D {
                    out.set(r, j, out.get(r, j) + scale * x.get(r, j));
                }
            }
        }
        out
    };
    for m in Modality::ALL {
        s.insert(format!("fusion.gate.{m}"), Tensor::zeros(&[D, 1]));
    }
    assert!(fuse_gated(&b, &h, &s).unwrap().max_abs_diff(&sum(0.5)) <= 1e-15);

    // Saturate: gate weight = 1e6 · v_m for a single sample drives σ to exactly 1.
    let one = ModalityBundle::full(
        b.tf.as_ref().unwrap().select_rows(&[0]),
        b.img.as_ref().unwrap().select_rows(&[0]),
        b.gsf.as_ref().unwrap().select_rows(&[0]),
    )
    .unwrap();
    for m in Modality::ALL {
        let v = one.get(m).unwrap().row(0).iter().map(|x| x * 1e6).collect();
        s.insert(format!("fusion.gate.{m}"), Tensor::new(vec![D, 1], v).unwrap());
    }
    let got = fuse_gated(&one, &h, &s).unwrap();
    let mut want = vec![0.0; D];
    for m in Modality::ALL {
        for (w, x) in want.iter_mut().zip(one.get(m).unwrap().row(0)) {
            *w += x;
        }
    }
    assert_eq!(got.row(0), want.as_slice());
}

#[test]
fn dwf_weight_values() {
    let (h, mut s) = head_with(Strategy::Dwf, 4, 6);
    let b = bundle(60, 1);
    for m in Modality::ALL {
        s.insert(format!("fusion.score.{m}"), Tensor::zeros(&[D, 1]));
    }
    let a = dwf_weights(&b, &h, &s).unwrap();
    for j in 0..3 {
        assert!((a.get(0, j) - 1.0 / 3.0).abs() <= 1e-15);
    }
    // s_TF = ln 2 via w = ln2 · v / |v|².
    let v = b.tf.as_ref().unwrap().row(0);
    let nn: f64 = v.iter().map(|x| x * x).sum();
    let w = v.iter().map(|x| x * std::f64::consts::LN_2 / nn).collect();
    s.insert("fusion.score.tf", Tensor::new(vec![D, 1], w).unwrap());
    let a = dwf_weights(&b, &h, &s).unwrap();
    for (j, want) in [0.5, 0.25, 0.25].into_iter().enumerate() {
        assert!((a.get(0, j) - want).abs() <= 1e-12, "{j}: {}", a.get(0, j));
    }
}

fn shift_scores(s: &mut ParamStore, b: &ModalityBundle, c: f64) {
    for m in Modality::ALL {
        let v = b.get(m).unwrap().row(0);
        let nn: f64 = v.iter().map(|x| x * x).sum();
        let name = format!("fusion.score.{m}");
        let w = s.get(&name).unwrap().data.iter().zip(v).map(|(w, x)| w + c * x / nn).collect();
        s.insert(name, Tensor::new(vec![D, 1], w).unwrap());
    }
}

#[test]
fn dwf_weighted_sum_diagnostic() {
    let (h, s) = head_with(Strategy::Dwf, 4, 8);
    let b = bundle(80, 2);
    let a = dwf_weights(&b, &h, &s).unwrap();
    let ws = dwf_weighted_sum(&b, &h, &s).unwrap();
    for r in 0..2 {
        for j in 0..D {
            let want: f64 = Modality::ALL.iter().enumerate().map(|(k, &m)| a.get(r, k) * b.get(m).unwrap().get(r, j)).sum();
            assert!((ws.get(r, j) - want).abs() <= 1e-14);
        }
    }
}

#[test]
fn classify_zero_head_is_benign_and_matches_affine() {
    let (h, mut s) = head_with(Strategy::Concat, 4, 0);
    let b = bundle(90, 3);
    let fused = fuse_concat(&b).unwrap();
    let mut t = Tape::new();
    let x = t.leaf(fused.clone().into());
    let z = dmldroid_core::fusion::classify(&mut t, &s, "fusion.cls", x).unwrap();
    assert!(t.value(z).data.iter().all(|&v| v == 0.0));
    assert!(!dmldroid_core::fusion::predict(0.0));

    let w = glorot(&mut seeded(91), &[3 * D, 1], 1, 1);
    s.insert("fusion.cls.w", w.clone());
    s.insert("fusion.cls.b", Tensor::new(vec![1], vec![0.25]).unwrap());
    let mut t = Tape::new();
    let x = t.leaf(fused.clone().into());
    let z = dmldroid_core::fusion::classify(&mut t, &s, "fusion.cls", x).unwrap();
    let want = affine_forward(&fused, &w.into_matrix().unwrap(), &[0.25]).unwrap();
    assert_eq!(t.value(z).data, want.data());
    assert_eq!(h.out_dim(), 3 * D);
}

#[test]
fn bimodal_heads() {
    let b = ModalityBundle {
        tf: Some(rand_mat(1, 2, D)),
        img: None,
        gsf: Some(rand_mat(2, 2, D)),
    };
    for strategy in Strategy::ALL {
        let h = FusionHead::new(strategy, &[Modality::Tf, Modality::Gsf]).unwrap();
        let mut s = ParamStore::new();
        h.init(&mut s, &mut seeded(1)).unwrap();
        let y = fuse_bundle(&b, &h, &s).unwrap();
        assert_eq!(y.cols(), h.out_dim());
        assert_eq!(h.out_dim(), if strategy == Strategy::Gated { D } else { 2 * D });
        if strategy == Strategy::Dwf {
            let a = dwf_weights(&b, &h, &s).unwrap();
            assert_eq!(a.cols(), 2);
            for r in 0..2 {
                assert!((a.get(r, 0) + a.get(r, 1) - 1.0).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn all_heads_pass_gradient_checks() {
    // Toy width 8 with two heads; the trained models use 128.
    const T: usize = 8;
    for strategy in Strategy::ALL {
        for point in 0..10u64 {
            let h = FusionHead::new(strategy, &Modality::ALL).unwrap().with_heads(2).with_dim(T);
            let mut s = ParamStore::new();
            h.init(&mut s, &mut seeded(100 + point)).unwrap();
            let cls = glorot(&mut seeded(200 + point), &[h.out_dim(), 1], 1, 1);
            s.insert("fusion.cls.w", cls);
            for (k, m) in Modality::ALL.into_iter().enumerate() {
                s.insert(format!("emb.{m}"), glorot(&mut seeded(300 + point * 3 + k as u64), &[2, T], 1, 1));
            }
            let f = |t: &mut Tape, s: &ParamStore| {
                let embs = Modality::ALL
                    .iter()
                    .map(|m| t.param(s, &format!("emb.{m}")))
                    .collect::<dmldroid_core::Result<Vec<_>>>()?;
                let (_, z) = h.forward(t, s, &embs)?;
                t.bce_with_logits(z, &[1.0, 0.0])
            };
            let r = check_gradients(&s, 6, point, f).unwrap();
            assert!(r.max_rel_err <= 1e-4, "{strategy} point {point}: {} at {:?}", r.max_rel_err, r.worst);
        }
    }
}

fn toy_detector(strategy: Option<Strategy>) -> Detector {
    let mut tabular = TabularEncoder::new(4);
    tabular.hidden = [8, 8];
    tabular.dropout = 0.0;
    let cfg = EncoderConfig {
        layers: 1,
        heads: 2,
        hidden: 8,
        ff_hidden: 8,
        max_len: 4,
        dropout: 0.0,
    };
    Detector {
        arch: match strategy {
            Some(s) => Architecture::Fused(FusionHead::new(s, &Modality::ALL).unwrap()),
            None => Architecture::Unimodal(Modality::Tf),
        },
        tabular,
        image: ImageEncoder::new([2, 2], 6),
        seq: SequenceEncoder::new(cfg, 6).unwrap(),
    }
}

fn toy_inputs(n: usize) -> (ModelInputs, Vec<bool>) {
    let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let mut tf = Vec::new();
    let mut imgs = Vec::new();
    let mut seqs = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        let sign = if y { 1.0 } else { -1.0 };
        let jitter = ((i * 13) % 7) as f64 / 20.0;
        tf.push(vec![sign + jitter, -sign, jitter, sign * 0.5]);
        imgs.push(Tensor::new(vec![3, 6, 6], (0..108).map(|k| if (k % 3 == 0) == y { 0.8 } else { 0.1 }).collect()).unwrap());
        seqs.push(EncodedSeq {
            ids: vec![1, if y { 3 } else { 4 }, 5, 0],
            mask: vec![true, true, true, false],
        });
    }
    (
        ModelInputs {
            tf: Some(RealMatrix::from_rows(&tf).unwrap()),
            images: Some(ImageBatch::from_tensors(&imgs).unwrap()),
            seqs: Some(seqs),
        },
        labels,
    )
}

#[test]
fn first_batch_loss_is_ln2_with_zero_head() {
    let (x, y) = toy_inputs(8);
    let hyper = OptimHyper { learning_rate: 1e-3, epochs: 1, batch_size: 4, ..Default::default() };
    let m = train(&toy_detector(Some(Strategy::Dwf)), &x, &y, &hyper, 3, None).unwrap();
    assert!((m.log.epochs[0].batch_losses[0] - std::f64::consts::LN_2).abs() <= 1e-6);
}

#[test]
fn separable_loss_decreases_and_runs_repeat() {
    let (x, y) = toy_inputs(16);
    let hyper = OptimHyper { learning_rate: 1e-3, weight_decay: 0.0, epochs: 5, batch_size: 16, ..Default::default() };
    for strategy in Strategy::ALL {
        let det = toy_detector(Some(strategy));
        let a = train(&det, &x, &y, &hyper, 11, Some((&x, &y))).unwrap();
        let losses: Vec<f64> = a.log.epochs.iter().map(|e| e.mean_loss).collect();
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "{strategy}: {losses:?}");
        }
        let b = train(&det, &x, &y, &hyper, 11, Some((&x, &y))).unwrap();
        assert_eq!(a.log, b.log);
    }
}

#[test]
fn single_class_is_training_error() {
    let (x, _) = toy_inputs(6);
    let err = train(&toy_detector(None), &x, &[true; 6], &OptimHyper::default(), 0, None).unwrap_err();
    assert!(matches!(err, Error::Training(_)));
}

#[test]
fn bundle_round_trip_preserves_logits() {
    let (x, y) = toy_inputs(8);
    let hyper = OptimHyper { learning_rate: 1e-2, epochs: 2, batch_size: 4, ..Default::default() };
    for det in [toy_detector(Some(Strategy::CrossAttn)), toy_detector(None)] {
        let m = train(&det, &x, &y, &hyper, 5, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dmlw");
        let extra = [("note".to_string(), "x".to_string())].into_iter().collect();
        m.save(&path, &extra).unwrap();
        let (back, manifest) = TrainedModel::load(&path).unwrap();
        assert_eq!(back.detector, det);
        assert_eq!(manifest["note"], "x");
        assert_eq!(manifest["seed"], "5");
        assert_eq!(det.logits(&m.store, &x).unwrap(), back.detector.logits(&back.store, &x).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dwf_alpha_normalized_and_shift_invariant(seed in 0u64..1000, c in -5.0f64..5.0) {
        let (h, mut s) = head_with(Strategy::Dwf, 4, seed);
        let b = bundle(seed + 7, 1);
        let a = dwf_weights(&b, &h, &s).unwrap();
        prop_assert!(a.row(0).iter().all(|&x| x > 0.0));
        prop_assert!((a.row(0).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let out = fuse_dwf(&b, &h, &s).unwrap();
        shift_scores(&mut s, &b, c);
        let a2 = dwf_weights(&b, &h, &s).unwrap();
        let out2 = fuse_dwf(&b, &h, &s).unwrap();
        prop_assert!(a.max_abs_diff(&a2) <= 1e-12);
        prop_assert!(out.max_abs_diff(&out2) <= 1e-12);
    }

    #[test]
    fn dwf_alpha_monotone_in_own_score(seed in 0u64..1000, m in 0usize..3, delta in 0.01f64..3.0) {
        let (h, mut s) = head_with(Strategy::Dwf, 4, seed);
        let b = bundle(seed + 3, 1);
        let a = dwf_weights(&b, &h, &s).unwrap();
        let modality = Modality::ALL[m];
        let v = b.get(modality).unwrap().row(0);
        let nn: f64 = v.iter().map(|x| x * x).sum();
        let name = format!("fusion.score.{modality}");
        let w = s.get(&name).unwrap().data.iter().zip(v).map(|(w, x)| w + delta * x / nn).collect();
        s.insert(name, Tensor::new(vec![D, 1], w).unwrap());
        let a2 = dwf_weights(&b, &h, &s).unwrap();
        prop_assert!(a2.get(0, m) > a.get(0, m));
    }

    #[test]
    fn dwf_argmax_stable_under_score_scaling(seed in 0u64..1000, k in 1.0f64..10.0) {
        let (h, mut s) = head_with(Strategy::Dwf, 4, seed);
        let b = bundle(seed + 5, 1);
        let argmax = |a: &RealMatrix| (0..3).max_by(|&i, &j| a.get(0, i).total_cmp(&a.get(0, j))).unwrap();
        let a = dwf_weights(&b, &h, &s).unwrap();
        let top = argmax(&a);
        let scores: Vec<f64> = Modality::ALL.iter().map(|&m| {
            let w = &s.get(&format!("fusion.score.{m}")).unwrap().data;
            w.iter().zip(b.get(m).unwrap().row(0)).map(|(w, x)| w * x).sum()
        }).collect();
        // Scaling every w_m by k preserves score order.
        let mut all = s.clone();
        for m in Modality::ALL {
            all.get_mut(&format!("fusion.score.{m}")).unwrap().data.iter_mut().for_each(|w| *w *= k);
        }
        prop_assert_eq!(argmax(&dwf_weights(&b, &h, &all).unwrap()), top);
        // Scaling only the leader's w_m up keeps it the leader when its score is non-negative.
        if scores[top] >= 0.0 {
            let name = format!("fusion.score.{}", Modality::ALL[top]);
            s.get_mut(&name).unwrap().data.iter_mut().for_each(|w| *w *= k);
            prop_assert_eq!(argmax(&dwf_weights(&b, &h, &s).unwrap()), top);
        }
    }

    #[test]
    fn gated_norm_bound(seed in 0u64..1000) {
        let (h, s) = head_with(Strategy::Gated, 4, seed);
        let b = bundle(seed + 1, 2);
        let y = fuse_gated(&b, &h, &s).unwrap();
        for r in 0..2 {
            let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let bound: f64 = Modality::ALL.iter().map(|&m| norm(b.get(m).unwrap().row(r))).sum();
            prop_assert!(norm(y.row(r)) <= bound + 1e-12);
        }
    }
}
