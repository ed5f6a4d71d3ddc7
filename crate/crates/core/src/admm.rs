//! ADMM-based pruning of spectral kernels.
//!
//! The constrained problem min L(W) s.t. each spectral map of W has at most k
//! non-zeros is split into a differentiable part (SGD on the augmented loss)
//! and a projection part (per-map top-k), coordinated by scaled dual updates:
//!
//! 1. W-update: a few SGD epochs on `L(W) + (rho/2) * ||W - Z + U||_F^2`
//! 2. Z-update: `Z = top_k(W + U)` per spectral map
//! 3. U-update: `U = U + W - Z`
//!
//! followed by hard pruning to the Z support and masked retraining.

use ndarray::{Array4, ArrayView2, Axis};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{self, Gradients, ToyModel};
use crate::sparse::{self, SparseSpectralKernelSet};

#[derive(Debug, Clone, Serialize)]
pub struct Hyperparams {
    /// Sparsity factor: k = floor(n^2 / alpha) non-zeros per spectral map.
    pub alpha: f64,
    /// ADMM penalty weight.
    pub rho: f64,
    /// Initial SGD learning rate.
    pub eta0: f64,
    /// Multiplicative learning-rate decay factor.
    pub lr_decay: f64,
    /// Apply the decay every this many epochs.
    pub lr_decay_every: usize,
    /// Multiplier applied to rho after each ADMM iteration (1.0 = constant).
    pub rho_growth: f64,
    /// Number of ADMM outer iterations.
    pub admm_iters: usize,
    /// SGD epochs per W-update.
    pub epochs_per_w_update: usize,
    pub batch_size: usize,
    /// Masked retraining epochs after hard pruning.
    pub retrain_epochs: usize,
    /// Early-stop when the epoch loss improves by less than this.
    pub early_stop_tol: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 4.0,
            rho: 0.002,
            eta0: 0.001,
            lr_decay: 0.8,
            lr_decay_every: 20,
            rho_growth: 1.0,
            admm_iters: 8,
            epochs_per_w_update: 2,
            batch_size: 32,
            retrain_epochs: 10,
            early_stop_tol: 1e-4,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 1.0 {
            return Err(Error::Config("alpha must be >= 1".into()));
        }
        if self.rho < 0.0 || self.eta0 <= 0.0 || !(0.0..=1.0).contains(&self.lr_decay) {
            return Err(Error::Config("rho, eta0, lr_decay out of range".into()));
        }
        if self.batch_size == 0 || self.epochs_per_w_update == 0 {
            return Err(Error::Config("batch_size and epochs_per_w_update must be positive".into()));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        self.eta0 * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// Auxiliary and scaled dual variables, one pair per convolution layer.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub z1: Array4<Complex64>,
    pub u1: Array4<Complex64>,
    pub z2: Array4<Complex64>,
    pub u2: Array4<Complex64>,
}

impl AdmmState {
    pub fn zeros_like(model: &ToyModel) -> Self {
        Self {
            z1: Array4::zeros(model.w1.raw_dim()),
            u1: Array4::zeros(model.w1.raw_dim()),
            z2: Array4::zeros(model.w2.raw_dim()),
            u2: Array4::zeros(model.w2.raw_dim()),
        }
    }

    /// Frobenius norm of the primal residual W - Z over both layers.
    pub fn residual(&self, model: &ToyModel) -> f64 {
        let s1: f64 = model
            .w1
            .iter()
            .zip(self.z1.iter())
            .map(|(w, z)| (w - z).norm_sqr())
            .sum();
        let s2: f64 = model
            .w2
            .iter()
            .zip(self.z2.iter())
            .map(|(w, z)| (w - z).norm_sqr())
            .sum();
        (s1 + s2).sqrt()
    }
}

/// Binary keep-masks (1.0 keep / 0.0 drop) matching the two kernel tensors.
#[derive(Debug, Clone)]
pub struct Masks {
    pub m1: Array4<f64>,
    pub m2: Array4<f64>,
}

impl Masks {
    fn apply_to_weights(&self, model: &mut ToyModel) {
        model.w1.zip_mut_with(&self.m1, |w, &m| *w *= m);
        model.w2.zip_mut_with(&self.m2, |w, &m| *w *= m);
    }

    fn apply_to_gradients(&self, grads: &mut Gradients) {
        grads.w1.zip_mut_with(&self.m1, |g, &m| *g *= m);
        grads.w2.zip_mut_with(&self.m2, |g, &m| *g *= m);
    }

    /// True when every masked-out kernel entry is exactly zero.
    pub fn holds_for(&self, model: &ToyModel) -> bool {
        model
            .w1
            .iter()
            .zip(self.m1.iter())
            .chain(model.w2.iter().zip(self.m2.iter()))
            .all(|(w, &m)| m == 1.0 || w.norm_sqr() == 0.0)
    }
}

/// One row of the training / pruning log.
#[derive(Debug, Clone, Serialize)]
pub struct IterRecord {
    pub phase: String,
    pub iter: usize,
    pub loss: f64,
    pub residual: f64,
    pub accuracy: f64,
}

fn sgd_step(model: &mut ToyModel, grads: &Gradients, lr: f64) {
    model.w1.zip_mut_with(&grads.w1, |w, g| *w -= g * lr);
    model.w2.zip_mut_with(&grads.w2, |w, g| *w -= g * lr);
    model.dense_w.zip_mut_with(&grads.dense_w, |w, g| *w -= g * lr);
    model.dense_b.zip_mut_with(&grads.dense_b, |w, g| *w -= g * lr);
}

fn augment_gradient(grads: &mut Gradients, model: &ToyModel, state: &AdmmState, rho: f64) {
    ndarray::Zip::from(&mut grads.w1)
        .and(&model.w1)
        .and(&state.z1)
        .and(&state.u1)
        .for_each(|g, w, z, u| *g += (w - z + u) * rho);
    ndarray::Zip::from(&mut grads.w2)
        .and(&model.w2)
        .and(&state.z2)
        .and(&state.u2)
        .for_each(|g, w, z, u| *g += (w - z + u) * rho);
}

/// One epoch of mini-batch SGD. Returns the mean training loss (of the plain
/// task loss, before any augmentation terms).
fn sgd_epoch(
    model: &mut ToyModel,
    data: &Dataset,
    lr: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    admm: Option<(&AdmmState, f64)>,
    masks: Option<&Masks>,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);

    let mut total_loss = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(batch_size) {
        let batch = data.images.select(Axis(0), chunk);
        let labels: Vec<u8> = chunk.iter().map(|&i| data.labels[i]).collect();
        let (loss, cache) = model::forward_loss(model, &batch.view(), &labels)?;
        let mut grads = model::backward(model, &labels, &cache)?;
        if let Some((state, rho)) = admm {
            augment_gradient(&mut grads, model, state, rho);
        }
        if let Some(masks) = masks {
            masks.apply_to_gradients(&mut grads);
        }
        if !grads.is_finite() || !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss/gradient at loss {loss}")));
        }
        sgd_step(model, &grads, lr);
        if let Some(masks) = masks {
            masks.apply_to_weights(model);
        }
        total_loss += loss;
        batches += 1;
    }
    Ok(total_loss / batches.max(1) as f64)
}

/// Dense-weight baseline training with the step-decay schedule and early
/// stopping. Returns the per-epoch loss history.
pub fn train_baseline(
    model: &mut ToyModel,
    data: &Dataset,
    epochs: usize,
    hp: &Hyperparams,
    seed: u64,
) -> Result<Vec<f64>> {
    hp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let lr = hp.lr_at(epoch);
        let loss = sgd_epoch(model, data, lr, hp.batch_size, &mut rng, None, None)?;
        let done = history
            .last()
            .is_some_and(|&prev: &f64| (prev - loss).abs() < hp.early_stop_tol);
        history.push(loss);
        if done {
            break;
        }
    }
    Ok(history)
}

/// W-update: SGD epochs on the augmented loss. `epoch_offset` indexes into
/// the decay schedule. Returns the last epoch's mean task loss.
pub fn w_update(
    model: &mut ToyModel,
    data: &Dataset,
    state: &AdmmState,
    rho: f64,
    hp: &Hyperparams,
    epoch_offset: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut loss = f64::NAN;
    for e in 0..hp.epochs_per_w_update {
        loss = sgd_epoch(
            model,
            data,
            hp.lr_at(epoch_offset + e),
            hp.batch_size,
            rng,
            Some((state, rho)),
            None,
        )?;
    }
    Ok(loss)
}

fn project_layer(w_plus_u: &Array4<Complex64>, k: usize) -> Result<Array4<Complex64>> {
    let (c_out, c_in, n, _) = w_plus_u.dim();
    let mut z = Array4::zeros(w_plus_u.raw_dim());
    for j in 0..c_out {
        for i in 0..c_in {
            let view: ArrayView2<'_, Complex64> = w_plus_u.slice(ndarray::s![j, i, .., ..]);
            let sp = sparse::project_topk(&view, k)?;
            z.slice_mut(ndarray::s![j, i, .., ..]).assign(&sp.to_dense(n));
        }
    }
    Ok(z)
}

/// Z-update: per-map top-k projection of W + U for both layers.
pub fn z_update(model: &ToyModel, state: &mut AdmmState, k: usize) -> Result<()> {
    state.z1 = project_layer(&(&model.w1 + &state.u1), k)?;
    state.z2 = project_layer(&(&model.w2 + &state.u2), k)?;
    Ok(())
}

/// U-update: scaled dual ascent on the primal residual.
pub fn u_update(model: &ToyModel, state: &mut AdmmState) {
    ndarray::Zip::from(&mut state.u1)
        .and(&model.w1)
        .and(&state.z1)
        .for_each(|u, w, z| *u += w - z);
    ndarray::Zip::from(&mut state.u2)
        .and(&model.w2)
        .and(&state.z2)
        .for_each(|u, w, z| *u += w - z);
}

fn layer_to_sparse(w: &Array4<Complex64>, k: usize) -> Result<SparseSpectralKernelSet> {
    let (c_out, c_in, n, _) = w.dim();
    let mut maps = Vec::with_capacity(c_out * c_in);
    for j in 0..c_out {
        for i in 0..c_in {
            let view: ArrayView2<'_, Complex64> = w.slice(ndarray::s![j, i, .., ..]);
            maps.push(sparse::project_topk(&view, k)?);
        }
    }
    let set = SparseSpectralKernelSet { c_out, c_in, n, k, maps };
    Ok(set)
}

fn mask_from_set(set: &SparseSpectralKernelSet, dim: ndarray::Ix4) -> Array4<f64> {
    let n = set.n;
    let mut mask = Array4::<f64>::zeros(dim);
    for j in 0..set.c_out {
        for i in 0..set.c_in {
            for &idx in &set.map(j, i).indices {
                let idx = idx as usize;
                mask[[j, i, idx / n, idx % n]] = 1.0;
            }
        }
    }
    mask
}

/// Zero everything outside the per-map top-k support, returning the pruned
/// model, the hardware-facing sparse kernel sets `[conv1, conv2]`, and the
/// keep-masks.
pub fn hard_prune(
    model: &ToyModel,
    alpha: f64,
) -> Result<(ToyModel, Vec<SparseSpectralKernelSet>, Masks)> {
    let k = sparse::nnz_per_map(model.n, alpha);
    if k == 0 {
        return Err(Error::Config("alpha too large: zero non-zeros per map".into()));
    }
    let set1 = layer_to_sparse(&model.w1, k)?;
    let set2 = layer_to_sparse(&model.w2, k)?;
    let masks = Masks {
        m1: mask_from_set(&set1, model.w1.raw_dim()),
        m2: mask_from_set(&set2, model.w2.raw_dim()),
    };
    let mut pruned = model.clone();
    masks.apply_to_weights(&mut pruned);
    Ok((pruned, vec![set1, set2], masks))
}

/// SGD on the task loss with gradients and weights confined to the mask
/// support. The sparsity pattern is checked after every epoch.
pub fn retrain(
    model: &mut ToyModel,
    data: &Dataset,
    masks: &Masks,
    epochs: usize,
    hp: &Hyperparams,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let lr = hp.lr_at(epoch);
        let loss = sgd_epoch(model, data, lr, hp.batch_size, &mut rng, None, Some(masks))?;
        if !masks.holds_for(model) {
            return Err(Error::Diverged("mask invariant violated during retraining".into()));
        }
        let done = history
            .last()
            .is_some_and(|&prev: &f64| (prev - loss).abs() < hp.early_stop_tol);
        history.push(loss);
        if done {
            break;
        }
    }
    Ok(history)
}

/// Everything produced by a full pruning run.
pub struct PruningOutcome {
    pub model: ToyModel,
    pub kernels: Vec<SparseSpectralKernelSet>,
    pub masks: Masks,
    pub log: Vec<IterRecord>,
    pub baseline_accuracy: f64,
    pub pruned_accuracy: f64,
    pub retrained_accuracy: f64,
}

/// The full pruning pipeline: ADMM iterations, hard pruning to the learned
/// support, then masked retraining.
pub fn run_pruning(
    baseline: &ToyModel,
    train: &Dataset,
    test: &Dataset,
    hp: &Hyperparams,
    seed: u64,
) -> Result<PruningOutcome> {
    hp.validate()?;
    let k = sparse::nnz_per_map(baseline.n, hp.alpha);
    if k == 0 {
        return Err(Error::Config("alpha too large: zero non-zeros per map".into()));
    }

    let mut model = baseline.clone();
    let baseline_accuracy = model::accuracy(&model, &test.images.view(), &test.labels)?;

    let mut state = AdmmState::zeros_like(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xADD_0);
    let mut rho = hp.rho;
    let mut log = Vec::new();
    let mut epoch = 0usize;
    for iter in 0..hp.admm_iters {
        let loss = w_update(&mut model, train, &state, rho, hp, epoch, &mut rng)?;
        epoch += hp.epochs_per_w_update;
        z_update(&model, &mut state, k)?;
        u_update(&model, &mut state);
        rho *= hp.rho_growth;

        let accuracy = model::accuracy(&model, &test.images.view(), &test.labels)?;
        log.push(IterRecord {
            phase: "admm".into(),
            iter,
            loss,
            residual: state.residual(&model),
            accuracy,
        });
    }

    let (mut pruned, kernels, masks) = hard_prune(&model, hp.alpha)?;
    let pruned_accuracy = model::accuracy(&pruned, &test.images.view(), &test.labels)?;

    let history = retrain(&mut pruned, train, &masks, hp.retrain_epochs, hp, seed ^ 0x8E78)?;
    for (i, &loss) in history.iter().enumerate() {
        log.push(IterRecord {
            phase: "retrain".into(),
            iter: i,
            loss,
            residual: 0.0,
            accuracy: f64::NAN,
        });
    }
    let retrained_accuracy = model::accuracy(&pruned, &test.images.view(), &test.labels)?;
    if let Some(last) = log.last_mut() {
        last.accuracy = retrained_accuracy;
    }

    for set in &kernels {
        set.validate()?;
    }
    Ok(PruningOutcome {
        model: pruned,
        kernels,
        masks,
        log,
        baseline_accuracy,
        pruned_accuracy,
        retrained_accuracy,
    })
}

/// Serialize the iteration log as CSV.
pub fn log_to_csv(log: &[IterRecord]) -> String {
    let mut out = String::from("phase,iter,loss,residual,accuracy\n");
    for r in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.phase, r.iter, r.loss, r.residual, r.accuracy
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset;
    use ndarray::Array2;

    fn tiny_setup(seed: u64) -> (ToyModel, Dataset, Dataset) {
        let model = ToyModel::new_random(8, 8, seed).unwrap();
        let train = dataset::synthetic(60, 8, seed);
        let test = dataset::synthetic(40, 8, seed + 1);
        (model, train, test)
    }

    fn fast_hp() -> Hyperparams {
        Hyperparams {
            eta0: 0.05,
            admm_iters: 3,
            retrain_epochs: 3,
            batch_size: 16,
            early_stop_tol: 0.0,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn baseline_training_reduces_loss() {
        let (mut model, train, _) = tiny_setup(11);
        let hp = fast_hp();
        let history = train_baseline(&mut model, &train, 8, &hp, 7).unwrap();
        assert!(history.last().unwrap() < &history[0], "{history:?}");
    }

    #[test]
    fn baseline_training_is_deterministic() {
        let (m0, train, _) = tiny_setup(12);
        let hp = fast_hp();
        let mut a = m0.clone();
        let mut b = m0.clone();
        train_baseline(&mut a, &train, 3, &hp, 9).unwrap();
        train_baseline(&mut b, &train, 3, &hp, 9).unwrap();
        assert_eq!(a.w1, b.w1);
        assert_eq!(a.dense_w, b.dense_w);
    }

    #[test]
    fn augmented_gradient_adds_exact_penalty_term() {
        let (model, train, _) = tiny_setup(13);
        let mut state = AdmmState::zeros_like(&model);
        state.z1.mapv_inplace(|_| Complex64::new(0.25, -0.5));
        state.u1.mapv_inplace(|_| Complex64::new(-0.125, 0.0625));
        let batch = train.images.slice(ndarray::s![..4, .., .., ..]);
        let labels = &train.labels[..4];
        let (_, cache) = model::forward_loss(&model, &batch, labels).unwrap();
        let plain = model::backward(&model, labels, &cache).unwrap();
        let mut augmented = plain.clone();
        let rho = 0.375;
        augment_gradient(&mut augmented, &model, &state, rho);
        for (idx, (p, a)) in plain.w1.iter().zip(augmented.w1.iter()).enumerate() {
            let w = model.w1.as_slice().unwrap()[idx];
            let expect = p + (w - Complex64::new(0.25, -0.5) + Complex64::new(-0.125, 0.0625)) * rho;
            assert!((a - expect).norm() < 1e-15);
        }
        // layer-2 state is zero, so its gradient is w * rho above the plain one
        for (idx, (p, a)) in plain.w2.iter().zip(augmented.w2.iter()).enumerate() {
            let w = model.w2.as_slice().unwrap()[idx];
            assert!((a - (p + w * rho)).norm() < 1e-15);
        }
    }

    /// The Z-update must be the Euclidean projection onto the k-sparse set:
    /// checked against exhaustive enumeration of supports on 2x2 maps.
    #[test]
    fn z_update_is_optimal_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        use rand::Rng;
        for k in 1..=3usize {
            for _ in 0..20 {
                let map = Array2::from_shape_fn((2, 2), |_| {
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                });
                let sp = sparse::project_topk(&map.view(), k).unwrap();
                let z = sp.to_dense(2);
                let dist: f64 = map.iter().zip(z.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
                // enumerate every k-subset of the 4 positions
                let mut best = f64::INFINITY;
                for mask in 0u32..16 {
                    if mask.count_ones() as usize != k {
                        continue;
                    }
                    let d: f64 = map
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask & (1 << i) == 0)
                        .map(|(_, v)| v.norm_sqr())
                        .sum();
                    best = best.min(d);
                }
                assert!((dist - best).abs() < 1e-12, "k={k}: {dist} vs {best}");
            }
        }
    }

    #[test]
    fn hard_prune_yields_valid_sets_and_masks() {
        let (model, _, _) = tiny_setup(14);
        let (pruned, sets, masks) = hard_prune(&model, 4.0).unwrap();
        assert_eq!(sets.len(), 2);
        for set in &sets {
            set.validate().unwrap();
            assert_eq!(set.k, 16);
        }
        assert!(masks.holds_for(&pruned));
        // per-map non-zero count matches k exactly
        let nnz: usize = pruned.w1.iter().filter(|v| v.norm_sqr() > 0.0).count();
        assert_eq!(nnz, model.w1.dim().0 * model.w1.dim().1 * 16);
        // surviving entries are untouched
        for j in 0..sets[0].c_out {
            for i in 0..sets[0].c_in {
                for (&idx, &v) in sets[0].map(j, i).indices.iter().zip(&sets[0].map(j, i).values) {
                    let idx = idx as usize;
                    assert_eq!(model.w1[[j, i, idx / 8, idx % 8]], v);
                }
            }
        }
    }

    #[test]
    fn retraining_preserves_sparsity_pattern() {
        let (model, train, _) = tiny_setup(15);
        let (mut pruned, _, masks) = hard_prune(&model, 8.0).unwrap();
        let hp = fast_hp();
        retrain(&mut pruned, &train, &masks, 3, &hp, 5).unwrap();
        assert!(masks.holds_for(&pruned));
    }

    #[test]
    fn admm_residual_shrinks_and_pipeline_runs() {
        let (mut model, train, test) = tiny_setup(16);
        let hp = Hyperparams { admm_iters: 4, rho: 1.0, rho_growth: 1.5, ..fast_hp() };
        train_baseline(&mut model, &train, 4, &hp, 3).unwrap();
        let outcome = run_pruning(&model, &train, &test, &hp, 3).unwrap();
        let admm: Vec<&IterRecord> =
            outcome.log.iter().filter(|r| r.phase == "admm").collect();
        assert_eq!(admm.len(), 4);
        // after the first projection the residual should come down
        assert!(
            admm.last().unwrap().residual < admm[0].residual,
            "{:?}",
            admm.iter().map(|r| r.residual).collect::<Vec<_>>()
        );
        assert!(outcome.masks.holds_for(&outcome.model));
        assert!(outcome.retrained_accuracy.is_finite());
    }

    #[test]
    fn run_pruning_is_deterministic() {
        let (model, train, test) = tiny_setup(17);
        let hp = Hyperparams { admm_iters: 2, retrain_epochs: 2, ..fast_hp() };
        let a = run_pruning(&model, &train, &test, &hp, 8).unwrap();
        let b = run_pruning(&model, &train, &test, &hp, 8).unwrap();
        assert_eq!(a.model.w1, b.model.w1);
        assert_eq!(a.retrained_accuracy, b.retrained_accuracy);
    }

    #[test]
    fn csv_log_has_header_and_rows() {
        let log = vec![IterRecord {
            phase: "admm".into(),
            iter: 0,
            loss: 1.5,
            residual: 0.25,
            accuracy: 0.5,
        }];
        let csv = log_to_csv(&log);
        assert!(csv.starts_with("phase,iter,loss,residual,accuracy\n"));
        assert!(csv.contains("admm,0,1.5,0.25,0.5"));
    }
}
