use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::pipeline::{task_gradient, task_objective};
use super::{group_of, meta_test, overall_loss, MetaParams, OptimizerState, TrainConfig};
use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::parallel::map_tasks;
use crate::taskgen::{sample_episode, Episode};

/// Batch averages reported by one outer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    /// Value of the outer objective summed over the batch.
    pub objective: f64,
    /// Mean of the per-task objectives.
    pub mean_loss: f64,
    pub mean_test: f64,
    pub mean_l_t: f64,
    pub mean_l_q: f64,
}

/// Summed meta-gradient of a batch, in registry order, and its metrics.
pub fn batch_gradient(phi: &MetaParams, batch: &[Episode], cfg: &TrainConfig) -> Result<(Vec<Tensor>, StepMetrics)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty meta-batch".into()));
    }
    let results = map_tasks(batch.len(), cfg.parallel, |i| {
        task_gradient(phi, &batch[i], cfg).map_err(|e| Error::Task { task: i, source: Box::new(e) })
    });
    let mut total: Vec<Tensor> = phi.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
    let (mut test, mut l_t, mut l_q, mut per_task) = (Vec::new(), Vec::new(), Vec::new(), 0.0);
    for r in results {
        let (out, grads) = r?;
        for (acc, g) in total.iter_mut().zip(&grads) {
            acc.add_assign(g)?;
        }
        per_task += task_objective(cfg, out.test_loss, out.l_t, out.l_q);
        test.push(out.test_loss);
        l_t.push(out.l_t);
        l_q.push(out.l_q);
    }
    check_finite(phi, &total)?;
    let n = batch.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let metrics = StepMetrics {
        objective: overall_loss(&test, &l_t, &l_q, cfg.mu1, cfg.mu2)?,
        mean_loss: per_task / n,
        mean_test: mean(&test),
        mean_l_t: mean(&l_t),
        mean_l_q: mean(&l_q),
    };
    Ok((total, metrics))
}

/// First parameter group whose gradient is not finite.
pub(crate) fn check_finite(phi: &MetaParams, grads: &[Tensor]) -> Result<()> {
    for ((name, _), g) in phi.iter().zip(grads) {
        if !g.is_finite() {
            return Err(Error::MetaGradient { group: group_of(&name).to_string() });
        }
    }
    Ok(())
}

/// One outer update of `phi` on `batch`.
pub fn meta_train_step(
    phi: &mut MetaParams,
    optimizer: &mut OptimizerState,
    batch: &[Episode],
    cfg: &TrainConfig,
) -> Result<StepMetrics> {
    if batch.len() != cfg.meta_batch {
        return Err(Error::Contract(format!(
            "batch holds {} episodes, meta-batch size is {}",
            batch.len(),
            cfg.meta_batch
        )));
    }
    let (grads, metrics) = batch_gradient(phi, batch, cfg)?;
    optimizer.apply(phi, &grads, cfg.beta)?;
    Ok(metrics)
}

/// Held-out tasks, drawn from their own stream of the configured seed so
/// they never coincide with training batches.
pub fn eval_episodes(cfg: &TrainConfig, n: usize) -> Result<Vec<Episode>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    (0..n).map(|_| sample_episode(&mut rng, cfg.n_train, cfg.n_test, cfg.noise_std)).collect()
}

/// Adapted test MSE of every episode, in order.
pub fn evaluate(phi: &MetaParams, episodes: &[Episode], cfg: &TrainConfig) -> Result<Vec<f64>> {
    map_tasks(episodes.len(), cfg.parallel, |i| {
        meta_test(phi, &episodes[i], cfg).map_err(|e| Error::Task { task: i, source: Box::new(e) })
    })
    .into_iter()
    .collect()
}

/// Meta-training state: parameters, optimizer, task stream and counter.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub phi: MetaParams,
    pub optimizer: OptimizerState,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let phi = MetaParams::init(&config, &mut rng);
        let optimizer = OptimizerState::new(config.optimizer, &phi);
        Ok(Trainer {
            config,
            phi,
            optimizer,
            rng,
            iteration: 0,
        })
    }

    pub fn sample_batch(&mut self) -> Result<Vec<Episode>> {
        let c = &self.config;
        (0..c.meta_batch)
            .map(|_| sample_episode(&mut self.rng, c.n_train, c.n_test, c.noise_std))
            .collect()
    }

    /// Samples a fresh batch and takes one outer step.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let batch = self.sample_batch()?;
        let m = meta_train_step(&mut self.phi, &mut self.optimizer, &batch, &self.config)?;
        self.iteration += 1;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metaloop::{task_gradient, Mode};

    fn small() -> TrainConfig {
        TrainConfig {
            d: 4,
            d_h: 3,
            hidden: 3,
            k: 2,
            g: 2,
            n_test: 20,
            meta_batch: 2,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_phi() {
        let cfg = TrainConfig { beta: 0.0, ..small() };
        let mut t = Trainer::new(small()).unwrap();
        let before = t.phi.clone();
        let batch = t.sample_batch().unwrap();
        meta_train_step(&mut t.phi, &mut t.optimizer, &batch, &cfg).unwrap();
        assert_eq!(t.phi, before);
    }

    #[test]
    fn batch_gradient_is_sum_of_task_gradients() {
        let mut t = Trainer::new(small()).unwrap();
        let batch = t.sample_batch().unwrap();
        let (g, _) = batch_gradient(&t.phi, &batch, &t.config).unwrap();
        let (_, g0) = task_gradient(&t.phi, &batch[0], &t.config).unwrap();
        let (_, g1) = task_gradient(&t.phi, &batch[1], &t.config).unwrap();
        let (single, _) = batch_gradient(&t.phi, &batch[..1], &t.config).unwrap();
        for i in 0..g.len() {
            assert_eq!(single[i], g0[i]);
            for ((a, b), c) in g[i].data().iter().zip(g0[i].data()).zip(g1[i].data()) {
                assert_eq!(*a, (0.0 + b) + c);
            }
        }
    }

    #[test]
    fn wrong_batch_size_is_rejected() {
        let mut t = Trainer::new(small()).unwrap();
        let batch = t.sample_batch().unwrap();
        let cfg = t.config.clone();
        assert!(meta_train_step(&mut t.phi, &mut t.optimizer, &batch[..1], &cfg).is_err());
    }

    #[test]
    fn non_finite_gradient_names_its_group() {
        let t = Trainer::new(small()).unwrap();
        let mut grads: Vec<Tensor> = t.phi.iter().map(|(_, x)| Tensor::zeros(x.rows(), x.cols())).collect();
        let idx = t.phi.names().iter().position(|n| n == "kg.h_g").unwrap();
        grads[idx].data_mut()[0] = f64::INFINITY;
        match check_finite(&t.phi, &grads) {
            Err(Error::MetaGradient { group }) => assert_eq!(group, "kg"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn task_errors_carry_their_index() {
        let mut t = Trainer::new(small()).unwrap();
        let mut batch = t.sample_batch().unwrap();
        batch[1].train_inputs = Tensor::zeros(10, 3);
        match batch_gradient(&t.phi, &batch, &t.config) {
            Err(Error::Task { task, .. }) => assert_eq!(task, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn steps_reduce_the_objective_on_a_fixed_batch() {
        for mode in [Mode::Maml, Mode::Arml] {
            let cfg = TrainConfig { mode, beta: 0.01, ..small() };
            let mut t = Trainer::new(cfg.clone()).unwrap();
            let batch = t.sample_batch().unwrap();
            let first = meta_train_step(&mut t.phi, &mut t.optimizer, &batch, &cfg).unwrap();
            let mut last = first;
            for _ in 0..30 {
                last = meta_train_step(&mut t.phi, &mut t.optimizer, &batch, &cfg).unwrap();
            }
            assert!(last.mean_loss < first.mean_loss, "{mode}: {last:?} vs {first:?}");
        }
    }

    #[test]
    fn eval_tasks_differ_from_training_stream() {
        let cfg = small();
        let mut t = Trainer::new(cfg.clone()).unwrap();
        let train = t.sample_batch().unwrap();
        let eval = eval_episodes(&cfg, 2).unwrap();
        assert_ne!(train[0].train_inputs, eval[0].train_inputs);
        assert_eq!(eval, eval_episodes(&cfg, 2).unwrap());
    }
}
