use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::nnkit::init::{seeded, Rng64};
use crate::nnkit::layers::{init_linear, linear};
use crate::nnkit::{adamw_step, OptimHyper, ParamStore, Tape, Tensor, Var};
use crate::tabular::BinaryFeatureMatrix;

pub const DEFAULT_ALLOWED_DF: f64 = 0.3;
pub const DEFAULT_PROTECTED_DF: f64 = 0.5;
pub const DEFAULT_PROTECTED_BENIGN_MAX: f64 = 0.05;
pub const DEFAULT_NOISE_DIM: usize = 16;
pub const DEFAULT_GEN_HIDDEN: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct AttackBudget {
    /// Feature indices the generator may flip, ascending.
    pub allowed: Vec<usize>,
    /// Feature indices that must never change, ascending.
    pub protected: Vec<usize>,
    pub max_flips: usize,
    pub noise_dim: usize,
    pub n_features: usize,
}

impl AttackBudget {
    /// Allowed: benign document frequency ≥ `allowed_df`. Protected: malware
    /// df ≥ `protected_df` and benign df ≤ `benign_max`. Protected wins.
    pub fn from_corpus(
        matrix: &BinaryFeatureMatrix,
        is_malware: &[bool],
        allowed_df: f64,
        protected_df: f64,
        benign_max: f64,
        max_flips: usize,
    ) -> Result<Self> {
        let m = matrix.n_samples();
        if is_malware.len() != m {
            return Err(Error::dim("AttackBudget", &[m], &[is_malware.len()]));
        }
        let n_mal = is_malware.iter().filter(|&&y| y).count();
        let n_ben = m - n_mal;
        if n_mal == 0 || n_ben == 0 {
            return Err(Error::Degenerate("attack budget needs both classes".into()));
        }
        let mut allowed = Vec::new();
        let mut protected = Vec::new();
        for j in 0..matrix.n_features() {
            let (mut cm, mut cb) = (0usize, 0usize);
            for (i, &y) in is_malware.iter().enumerate() {
                if matrix.get(i, j) == 1 {
                    if y {
                        cm += 1
                    } else {
                        cb += 1
                    }
                }
            }
            let dfm = cm as f64 / n_mal as f64;
            let dfb = cb as f64 / n_ben as f64;
            if dfm >= protected_df && dfb <= benign_max {
                protected.push(j);
            } else if dfb >= allowed_df {
                allowed.push(j);
            }
        }
        let b = Self {
            allowed,
            protected,
            max_flips,
            noise_dim: DEFAULT_NOISE_DIM,
            n_features: matrix.n_features(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.allowed.is_empty() {
            return Err(Error::Configuration("attack budget has an empty allowed set".into()));
        }
        if let Some(j) = self.allowed.iter().find(|j| self.protected.binary_search(j).is_ok()) {
            return Err(Error::Configuration(format!("feature {j} is both allowed and protected")));
        }
        if self.allowed.iter().chain(&self.protected).any(|&j| j >= self.n_features) {
            return Err(Error::Configuration("budget index beyond the feature width".into()));
        }
        Ok(())
    }
}

/// Query-only access to a detector: bit rows in, malware verdicts out.
pub trait BlackBox {
    fn query(&self, rows: &[Vec<u8>]) -> Result<Vec<bool>>;
}

impl<F> BlackBox for F
where
    F: Fn(&[Vec<u8>]) -> Result<Vec<bool>>,
{
    fn query(&self, rows: &[Vec<u8>]) -> Result<Vec<bool>> {
        self(rows)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    /// Substitute epochs per outer epoch.
    pub substitute_steps: usize,
    pub seed: u64,
}

impl Default for AttackHyper {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            hidden: DEFAULT_GEN_HIDDEN,
            substitute_steps: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttackEpoch {
    pub epoch: usize,
    pub generator_loss: f64,
    pub substitute_loss: f64,
    /// Fraction of training malware the black box calls benign after perturbation.
    pub evasion_rate: f64,
}

/// Generator (`bits ∥ noise → h → h → |allowed|` flip probabilities) plus the
/// substitute detector trained on black-box verdicts.
#[derive(Clone, Debug)]
pub struct AdversarialGenerator {
    pub budget: AttackBudget,
    pub generator: ParamStore,
    pub substitute: ParamStore,
    pub log: Vec<AttackEpoch>,
}

fn bits_tensor(rows: &[&[u8]]) -> Tensor {
    let n = rows.first().map_or(0, |r| r.len());
    Tensor {
        shape: vec![rows.len(), n],
        data: rows.iter().flat_map(|r| r.iter().map(|&b| b as f64)).collect(),
    }
}

fn noise(rng: &mut Rng64, rows: usize, dim: usize) -> Tensor {
    Tensor {
        shape: vec![rows, dim],
        data: (0..rows * dim).map(|_| rng.gen_range(0.0..1.0)).collect(),
    }
}

fn init_mlp(store: &mut ParamStore, rng: &mut Rng64, prefix: &str, d_in: usize, hidden: usize, d_out: usize) {
    init_linear(store, rng, &format!("{prefix}.fc1"), d_in, hidden);
    init_linear(store, rng, &format!("{prefix}.fc2"), hidden, hidden);
    init_linear(store, rng, &format!("{prefix}.out"), hidden, d_out);
}

fn mlp(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(tape, store, &format!("{prefix}.fc1"), x)?;
    let h = tape.relu(h);
    let h = linear(tape, store, &format!("{prefix}.fc2"), h)?;
    let h = tape.relu(h);
    linear(tape, store, &format!("{prefix}.out"), h)
}

impl AdversarialGenerator {
    fn flip_probs(&self, tape: &mut Tape, bits: Var, z: Var) -> Result<Var> {
        let x = tape.concat(&[bits, z], 1)?;
        let o = mlp(tape, &self.generator, "gen", x)?;
        Ok(tape.sigmoid(o))
    }

    /// Hard perturbation: flip allowed bits whose probability exceeds 0.5,
    /// keeping at most `max_flips` of them (highest probability first, ties
    /// to the lower index).
    fn apply(&self, row: &[u8], probs: &[f64]) -> Vec<u8> {
        let mut cand: Vec<(usize, f64)> = probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.5)
            .map(|(k, &p)| (k, p))
            .collect();
        cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut out = row.to_vec();
        for &(k, _) in cand.iter().take(self.budget.max_flips) {
            let j = self.budget.allowed[k];
            out[j] ^= 1;
        }
        out
    }

    fn perturb_rows(&self, rows: &[&[u8]], rng: &mut Rng64) -> Result<Vec<Vec<u8>>> {
        let mut tape = Tape::new();
        let bits = tape.leaf(bits_tensor(rows));
        let z = tape.leaf(noise(rng, rows.len(), self.budget.noise_dim));
        let p = self.flip_probs(&mut tape, bits, z)?;
        let a = self.budget.allowed.len();
        let probs = &tape.value(p).data;
        Ok(rows
            .iter()
            .enumerate()
            .map(|(i, r)| self.apply(r, &probs[i * a..(i + 1) * a]))
            .collect())
    }

    /// Substitute malware probability for bit rows.
    pub fn substitute_scores(&self, rows: &[Vec<u8>]) -> Result<Vec<f64>> {
        let refs: Vec<&[u8]> = rows.iter().map(Vec::as_slice).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(bits_tensor(&refs));
        let z = mlp(&mut tape, &self.substitute, "sub", x)?;
        Ok(tape.value(z).data.iter().map(|&v| crate::nnkit::sigmoid(v)).collect())
    }
}

/// MalGAN-style alternating optimization against a query-only detector.
///
/// Each epoch the substitute fits black-box verdicts on benign rows plus
/// current hard-perturbed malware, then the generator lowers the
/// substitute's malware logit on a relaxed perturbation
/// `x + m ⊙ p ⊙ (1 − 2x)` (expected value of flipping with probability `p`).
pub fn train_adversarial_generator(
    blackbox: &dyn BlackBox,
    malware: &[Vec<u8>],
    benign: &[Vec<u8>],
    budget: &AttackBudget,
    hyper: &AttackHyper,
) -> Result<AdversarialGenerator> {
    budget.validate()?;
    if malware.is_empty() {
        return Err(Error::Usage("no malware rows to attack".into()));
    }
    let n = budget.n_features;
    if let Some(r) = malware.iter().chain(benign).find(|r| r.len() != n) {
        return Err(Error::dim("attack rows", &[n], &[r.len()]));
    }
    let opt = OptimHyper {
        learning_rate: hyper.learning_rate,
        weight_decay: 0.0,
        batch_size: hyper.batch_size.max(1),
        epochs: hyper.epochs,
        ..Default::default()
    };
    let mut rng = seeded(hyper.seed);
    let a = budget.allowed.len();
    let mut generator = ParamStore::new();
    init_mlp(&mut generator, &mut rng, "gen", n + budget.noise_dim, hyper.hidden, a);
    let mut substitute = ParamStore::new();
    init_mlp(&mut substitute, &mut rng, "sub", n, hyper.hidden, 1);
    let mut gen = AdversarialGenerator {
        budget: budget.clone(),
        generator,
        substitute,
        log: Vec::new(),
    };

    // Scatter from allowed slots into full feature width.
    let mut scatter = Tensor::zeros(&[a, n]);
    for (k, &j) in budget.allowed.iter().enumerate() {
        scatter.data[k * n + j] = 1.0;
    }
    let benign_refs: Vec<&[u8]> = benign.iter().map(Vec::as_slice).collect();
    let benign_labels = if benign.is_empty() { Vec::new() } else { blackbox.query(benign)? };
    let mut order: Vec<usize> = (0..malware.len()).collect();
    let mut noise_rng = seeded(hyper.seed ^ 0xA77A);

    for epoch in 1..=hyper.epochs {
        // Current adversarial set, labelled by the black box.
        let mal_refs: Vec<&[u8]> = malware.iter().map(Vec::as_slice).collect();
        let perturbed = gen.perturb_rows(&mal_refs, &mut noise_rng)?;
        let verdicts = blackbox.query(&perturbed)?;
        let evasion_rate = verdicts.iter().filter(|&&v| !v).count() as f64 / verdicts.len() as f64;
        let originals = blackbox.query(malware)?;

        let mut pool: Vec<(&[u8], f64)> = Vec::new();
        pool.extend(benign_refs.iter().zip(&benign_labels).map(|(r, &y)| (*r, y as u8 as f64)));
        pool.extend(malware.iter().zip(&originals).map(|(r, &y)| (r.as_slice(), y as u8 as f64)));
        pool.extend(perturbed.iter().zip(&verdicts).map(|(r, &y)| (r.as_slice(), y as u8 as f64)));
        let mut sub_loss = 0.0;
        let mut sub_batches = 0usize;
        for _ in 0..hyper.substitute_steps.max(1) {
            pool.shuffle(&mut rng);
            for chunk in pool.chunks(opt.batch_size) {
                let rows: Vec<&[u8]> = chunk.iter().map(|c| c.0).collect();
                let ys: Vec<f64> = chunk.iter().map(|c| c.1).collect();
                let mut tape = Tape::new();
                let x = tape.leaf(bits_tensor(&rows));
                let z = mlp(&mut tape, &gen.substitute, "sub", x)?;
                let loss = tape.bce_with_logits(z, &ys)?;
                tape.backward(loss)?;
                adamw_step(&mut gen.substitute, &tape.param_grads(), &opt)?;
                sub_loss += tape.value(loss).data[0];
                sub_batches += 1;
            }
        }

        order.shuffle(&mut rng);
        let mut gen_loss = 0.0;
        let mut gen_batches = 0usize;
        for chunk in order.chunks(opt.batch_size) {
            let rows: Vec<&[u8]> = chunk.iter().map(|&i| malware[i].as_slice()).collect();
            let xt = bits_tensor(&rows);
            let flip_sign: Vec<f64> = xt.data.iter().map(|&b| 1.0 - 2.0 * b).collect();
            let mut tape = Tape::new();
            let x = tape.leaf(xt);
            let z = tape.leaf(noise(&mut noise_rng, rows.len(), budget.noise_dim));
            let p = gen.flip_probs(&mut tape, x, z)?;
            let s = tape.leaf(scatter.clone());
            let full = tape.matmul(p, s)?;
            let delta = tape.mul_const(full, flip_sign)?;
            let xp = tape.add(x, delta)?;
            let logit = mlp(&mut tape, &gen.substitute, "sub", xp)?;
            let target = vec![0.0; rows.len()];
            let loss = tape.bce_with_logits(logit, &target)?;
            tape.backward(loss)?;
            let mut grads = tape.param_grads();
            grads.retain(|k, _| k.starts_with("gen."));
            adamw_step(&mut gen.generator, &grads, &opt)?;
            gen_loss += tape.value(loss).data[0];
            gen_batches += 1;
        }
        let rec = AttackEpoch {
            epoch,
            generator_loss: gen_loss / gen_batches.max(1) as f64,
            substitute_loss: sub_loss / sub_batches.max(1) as f64,
            evasion_rate,
        };
        info!(
            "attack epoch {epoch}: gen {:.4} sub {:.4} evasion {:.3}",
            rec.generator_loss, rec.substitute_loss, rec.evasion_rate
        );
        gen.log.push(rec);
    }
    Ok(gen)
}

/// One adversarial example for a malware row. Benign input is a usage error.
pub fn perturb_sample(gen: &AdversarialGenerator, bits: &[u8], is_malware: bool, seed: u64) -> Result<Vec<u8>> {
    if !is_malware {
        return Err(Error::Usage("adversarial perturbation applies to malware only".into()));
    }
    if bits.len() != gen.budget.n_features {
        return Err(Error::dim("perturb_sample", &[gen.budget.n_features], &[bits.len()]));
    }
    let mut rng = seeded(seed);
    Ok(gen.perturb_rows(&[bits], &mut rng)?.remove(0))
}

/// AEs for many malware rows, each with its own stream derived from `seed`.
pub fn perturb_many(gen: &AdversarialGenerator, rows: &[Vec<u8>], seed: u64) -> Result<Vec<Vec<u8>>> {
    let mut master = seeded(seed);
    rows.iter()
        .map(|r| perturb_sample(gen, r, true, master.next_u64()))
        .collect()
}

/// Checks the hard constraints; returns `(protected changes, flips outside
/// the allowed set, samples over max_flips)`.
pub fn constraint_violations(budget: &AttackBudget, original: &[u8], perturbed: &[u8]) -> (usize, usize, usize) {
    let mut prot = 0;
    let mut outside = 0;
    let mut flips = 0;
    for (j, (a, b)) in original.iter().zip(perturbed).enumerate() {
        if a != b {
            flips += 1;
            if budget.protected.binary_search(&j).is_ok() {
                prot += 1;
            }
            if budget.allowed.binary_search(&j).is_err() {
                outside += 1;
            }
        }
    }
    (prot, outside, (flips > budget.max_flips) as usize)
}
