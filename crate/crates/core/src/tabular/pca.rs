use nalgebra::DMatrix;

use super::features::BinaryFeatureMatrix;
use crate::error::{Error, Result};
use crate::nnkit::{ParamStore, RealMatrix, Tensor};

pub const DEFAULT_TARGET_RATIO: f64 = 0.90;

/// Slack on the cumulative-ratio comparison so that `target_ratio = 1.0`
/// is reachable despite rounding.
const RATIO_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `d × n`, orthonormal rows.
    pub components: RealMatrix,
    pub explained_variance: Vec<f64>,
    pub target_ratio: f64,
    /// Sum of variances over all `n` directions.
    pub total_variance: f64,
}

impl PcaModel {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| v / self.total_variance)
            .collect()
    }

    /// `(X − mean) · Cᵀ`.
    pub fn transform(&self, x: &RealMatrix) -> Result<RealMatrix> {
        if x.cols() != self.n_features() {
            return Err(Error::dim("pca_transform", &x.shape(), &[self.n_features()]));
        }
        let mut centered = x.clone();
        for i in 0..x.rows() {
            for (j, m) in self.mean.iter().enumerate() {
                centered.set(i, j, x.get(i, j) - m);
            }
        }
        centered.matmul(&self.components.transpose())
    }

    /// `Z · C + mean`.
    pub fn inverse_transform(&self, z: &RealMatrix) -> Result<RealMatrix> {
        if z.cols() != self.n_components() {
            return Err(Error::dim("pca_inverse", &z.shape(), &[self.n_components()]));
        }
        let mut out = z.matmul(&self.components)?;
        for i in 0..out.rows() {
            for (j, m) in self.mean.iter().enumerate() {
                out.set(i, j, out.get(i, j) + m);
            }
        }
        Ok(out)
    }

    pub fn to_store(&self, store: &mut ParamStore) {
        store.insert_buffer("pca.mean", Tensor::new(vec![self.mean.len()], self.mean.clone()).unwrap());
        store.insert_buffer("pca.components", self.components.clone().into());
        store.insert_buffer(
            "pca.var",
            Tensor::new(vec![self.explained_variance.len()], self.explained_variance.clone()).unwrap(),
        );
        store.insert_buffer(
            "pca.meta",
            Tensor::new(vec![2], vec![self.target_ratio, self.total_variance]).unwrap(),
        );
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let get = |n: &str| {
            store
                .get(n)
                .ok_or_else(|| Error::Format(format!("missing `{n}` in parameter store")))
        };
        let mean = get("pca.mean")?.data.clone();
        let comps = get("pca.components")?.clone();
        let var = get("pca.var")?.data.clone();
        let meta = get("pca.meta")?;
        let components = comps.into_matrix()?;
        if components.cols() != mean.len() || components.rows() != var.len() || meta.len() != 2 {
            return Err(Error::Format("inconsistent PCA entries".into()));
        }
        Ok(Self {
            mean,
            components,
            explained_variance: var,
            target_ratio: meta.data[0],
            total_variance: meta.data[1],
        })
    }
}

fn column_means(x: &RealMatrix) -> Vec<f64> {
    let mut mean = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    let inv = 1.0 / x.rows() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

/// Singular value decomposition of the centered data, sorted by descending
/// variance: returns `(mean, variances, right singular vectors as rows)`.
fn centered_svd(x: &RealMatrix) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    let (m, n) = (x.rows(), x.cols());
    if m < 2 {
        return Err(Error::Degenerate(format!("PCA needs at least 2 samples, got {m}")));
    }
    if n == 0 {
        return Err(Error::Degenerate("PCA on a matrix with no columns".into()));
    }
    let mean = column_means(x);
    let centered = DMatrix::from_fn(m, n, |i, j| x.get(i, j) - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let denom = (m - 1) as f64;
    let variances = order
        .iter()
        .map(|&k| svd.singular_values[k].powi(2) / denom)
        .collect();
    let rows = order
        .iter()
        .map(|&k| {
            let mut r: Vec<f64> = v_t.row(k).iter().copied().collect();
            fix_sign(&mut r);
            r
        })
        .collect();
    Ok((mean, variances, rows))
}

/// Makes the largest-magnitude entry positive (first one on ties).
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Variances along every one of the `n` principal directions (zero-padded
/// past the rank), in descending order.
pub fn variance_spectrum(x: &RealMatrix) -> Result<Vec<f64>> {
    let (_, mut var, _) = centered_svd(x)?;
    var.resize(x.cols(), 0.0);
    Ok(var)
}

pub fn fit_pca_real(x: &RealMatrix, target_ratio: f64) -> Result<PcaModel> {
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(Error::Parameter(format!("target_ratio {target_ratio} outside (0, 1]")));
    }
    let (mean, variances, rows) = centered_svd(x)?;
    let total: f64 = variances.iter().sum();
    if total <= f64::EPSILON * x.rows() as f64 {
        return Err(Error::Degenerate("matrix has zero variance".into()));
    }
    let mut cum = 0.0;
    let mut d = variances.len();
    for (k, v) in variances.iter().enumerate() {
        cum += v / total;
        if cum >= target_ratio - RATIO_SLACK {
            d = k + 1;
            break;
        }
    }
    let n = x.cols();
    let data: Vec<f64> = rows[..d].iter().flatten().copied().collect();
    Ok(PcaModel {
        mean,
        components: RealMatrix::new(d, n, data)?,
        explained_variance: variances[..d].to_vec(),
        target_ratio,
        total_variance: total,
    })
}

pub fn fit_pca(matrix: &BinaryFeatureMatrix, target_ratio: f64) -> Result<PcaModel> {
    fit_pca_real(&matrix.to_real(), target_ratio)
}

pub fn pca_transform(model: &PcaModel, matrix: &BinaryFeatureMatrix) -> Result<RealMatrix> {
    model.transform(&matrix.to_real())
}
