use super::strategy::{FusionHead, Modality, Strategy, MODALITY_DIM};
use crate::error::{Error, Result};
use crate::nnkit::{ParamStore, RealMatrix, Tape, Tensor};

/// Per-modality `B × 128` embeddings; absent modalities are `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModalityBundle {
    pub tf: Option<RealMatrix>,
    pub img: Option<RealMatrix>,
    pub gsf: Option<RealMatrix>,
}

impl ModalityBundle {
    pub fn full(tf: RealMatrix, img: RealMatrix, gsf: RealMatrix) -> Result<Self> {
        let b = Self {
            tf: Some(tf),
            img: Some(img),
            gsf: Some(gsf),
        };
        b.batch_size()?;
        Ok(b)
    }

    pub fn get(&self, m: Modality) -> Option<&RealMatrix> {
        match m {
            Modality::Tf => self.tf.as_ref(),
            Modality::If => self.img.as_ref(),
            Modality::Gsf => self.gsf.as_ref(),
        }
    }

    pub fn set(&mut self, m: Modality, v: RealMatrix) {
        match m {
            Modality::Tf => self.tf = Some(v),
            Modality::If => self.img = Some(v),
            Modality::Gsf => self.gsf = Some(v),
        }
    }

    pub fn present(&self) -> Vec<Modality> {
        Modality::ALL.into_iter().filter(|&m| self.get(m).is_some()).collect()
    }

    /// Shared batch size; every present matrix must be `B × 128`.
    pub fn batch_size(&self) -> Result<usize> {
        let mut b = None;
        for m in self.present() {
            let x = self.get(m).expect("present");
            if x.cols() != MODALITY_DIM || b.is_some_and(|b| b != x.rows()) {
                return Err(Error::dim("ModalityBundle", &[b.unwrap_or(x.rows()), MODALITY_DIM], &x.shape()));
            }
            b = Some(x.rows());
        }
        b.ok_or_else(|| Error::Configuration("empty modality bundle".into()))
    }

    fn ordered(&self, mods: &[Modality]) -> Result<Vec<&RealMatrix>> {
        self.batch_size()?;
        mods.iter()
            .map(|&m| {
                self.get(m)
                    .ok_or_else(|| Error::Configuration(format!("fusion requires the {m} modality")))
            })
            .collect()
    }
}

/// Evaluation-mode fusion of a bundle through `head`.
pub fn fuse_bundle(bundle: &ModalityBundle, head: &FusionHead, store: &ParamStore) -> Result<RealMatrix> {
    let xs = bundle.ordered(&head.modalities)?;
    let mut tape = Tape::new();
    let vars: Vec<_> = xs.into_iter().map(|x| tape.leaf(Tensor::from(x.clone()))).collect();
    let y = head.fuse(&mut tape, store, &vars)?;
    tape.value(y).clone().into_matrix()
}

/// `[v_TF ∥ v_IF ∥ v_GSF]` over whichever modalities are present (at least two).
pub fn fuse_concat(bundle: &ModalityBundle) -> Result<RealMatrix> {
    let head = FusionHead::new(Strategy::Concat, &bundle.present())?;
    fuse_bundle(bundle, &head, &ParamStore::new())
}

fn fuse_with(bundle: &ModalityBundle, head: &FusionHead, store: &ParamStore, want: Strategy) -> Result<RealMatrix> {
    if head.strategy != want {
        return Err(Error::Configuration(format!(
            "expected a {want} head, got {}",
            head.strategy
        )));
    }
    fuse_bundle(bundle, head, store)
}

pub fn fuse_self_attn(bundle: &ModalityBundle, head: &FusionHead, store: &ParamStore) -> Result<RealMatrix> {
    fuse_with(bundle, head, store, Strategy::SelfAttn)
}

pub fn fuse_cross_attn(bundle: &ModalityBundle, head: &FusionHead, store: &ParamStore) -> Result<RealMatrix> {
    fuse_with(bundle, head, store, Strategy::CrossAttn)
}

pub fn fuse_gated(bundle: &ModalityBundle, head: &FusionHead, store: &ParamStore) -> Result<RealMatrix> {
    fuse_with(bundle, head, store, Strategy::Gated)
}

pub fn fuse_dwf(bundle: &ModalityBundle, head: &FusionHead, store: &ParamStore) -> Result<RealMatrix> {
    fuse_with(bundle, head, store, Strategy::Dwf)
}

/// The DWF weights α (`B × M`) for a bundle.
pub fn dwf_weights(bundle: &ModalityBundle, head: &FusionHead, store: &ParamStore) -> Result<RealMatrix> {
    let xs = bundle.ordered(&head.modalities)?;
    let mut tape = Tape::new();
    let vars: Vec<_> = xs.into_iter().map(|x| tape.leaf(Tensor::from(x.clone()))).collect();
    let a = head.dwf_alpha(&mut tape, store, &vars)?;
    tape.value(a).clone().into_matrix()
}

/// Diagnostic weighted sum `Σ α_m v_m` (`B × 128`); the trained path uses
/// concat-then-project instead.
pub fn dwf_weighted_sum(bundle: &ModalityBundle, head: &FusionHead, store: &ParamStore) -> Result<RealMatrix> {
    let alpha = dwf_weights(bundle, head, store)?;
    let xs = bundle.ordered(&head.modalities)?;
    let b = alpha.rows();
    let mut out = RealMatrix::zeros(b, MODALITY_DIM);
    for (m, x) in xs.iter().enumerate() {
        for i in 0..b {
            for j in 0..MODALITY_DIM {
                out.set(i, j, out.get(i, j) + alpha.get(i, m) * x.get(i, j));
            }
        }
    }
    Ok(out)
}

/// Evaluation-mode multi-head attention on plain tensors.
pub fn multi_head_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    store: &ParamStore,
    prefix: &str,
    heads: usize,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (q, k, v) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
    let y = crate::nnkit::attention::mha(&mut tape, store, prefix, q, k, v, heads, None)?;
    Ok(tape.value(y).clone())
}
