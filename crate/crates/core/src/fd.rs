//! Federated distillation rounds and the FedAvg baseline.
//!
//! Workers train locally, averaging the logits they produce per ground-truth
//! label. The server hands each worker the mean of everybody else's
//! per-label averages, which becomes that worker's distillation target in the
//! next round.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, Direction, LinkBudget};
use crate::data::LabeledDataset;
use crate::nn::{fedavg, Mlp, Objective};
use crate::seed::{self, Rng};
use crate::stats::{argmax, one_hot};
use crate::{Error, Result};

/// Per-label distillation targets; `None` suppresses the regularizer for
/// that label.
pub type LabelTargets = Vec<Option<Vec<f64>>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloatWidth {
    #[default]
    F32,
    F64,
}

impl FloatWidth {
    pub fn bytes(self) -> u64 {
        match self {
            FloatWidth::F32 => 4,
            FloatWidth::F64 => 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Fd,
    Fl,
}

/// Bytes each worker sends up and receives down per round.
pub fn payload_bytes(
    scheme: Scheme,
    model: &Mlp,
    label_count: usize,
    logit_dim: usize,
    width: FloatWidth,
) -> (u64, u64) {
    let values = match scheme {
        Scheme::Fd => (label_count * logit_dim) as u64,
        Scheme::Fl => model.param_count() as u64,
    };
    let bytes = values * width.bytes();
    (bytes, bytes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogitTable {
    sums: Vec<Vec<f64>>,
    counts: Vec<u64>,
    round: usize,
}

impl LogitTable {
    pub fn new(label_count: usize, logit_dim: usize, round: usize) -> Self {
        LogitTable {
            sums: vec![vec![0.0; logit_dim]; label_count],
            counts: vec![0; label_count],
            round,
        }
    }

    pub fn label_count(&self) -> usize {
        self.counts.len()
    }

    pub fn logit_dim(&self) -> usize {
        self.sums.first().map_or(0, Vec::len)
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn sums(&self) -> &[Vec<f64>] {
        &self.sums
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    pub fn accumulate(&mut self, label: usize, logits: &[f64]) -> Result<()> {
        if label >= self.counts.len() {
            return Err(Error::invalid(format!(
                "label {label} outside [0, {})",
                self.counts.len()
            )));
        }
        let row = &mut self.sums[label];
        if row.len() != logits.len() {
            return Err(Error::shape("logit dimension", row.len(), logits.len()));
        }
        for (s, v) in row.iter_mut().zip(logits) {
            *s += v;
        }
        self.counts[label] += 1;
        Ok(())
    }

    /// Per-label mean logit, `None` where the label was never seen.
    pub fn averages(&self) -> LabelTargets {
        self.sums
            .iter()
            .zip(&self.counts)
            .map(|(row, &n)| (n > 0).then(|| row.iter().map(|s| s / n as f64).collect()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalLogitView {
    pub per_worker_targets: Vec<LabelTargets>,
    pub round: usize,
}

fn check_tables(tables: &[LogitTable]) -> Result<(usize, usize)> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Aggregation("no logit tables".into()))?;
    let (labels, dim) = (first.label_count(), first.logit_dim());
    for t in tables {
        if t.label_count() != labels {
            return Err(Error::shape("label count", labels, t.label_count()));
        }
        if t.logit_dim() != dim {
            return Err(Error::shape("logit dimension", dim, t.logit_dim()));
        }
    }
    Ok((labels, dim))
}

/// Leave-one-out ensemble. For each worker and label the target is the mean
/// of the other workers' averages over those that saw the label; when none
/// did, the previous view's target is carried over.
pub fn global_ensemble(
    tables: &[LogitTable],
    previous: Option<&GlobalLogitView>,
) -> Result<GlobalLogitView> {
    if tables.len() < 2 {
        return Err(Error::invalid(format!(
            "ensembling needs at least 2 workers, got {}",
            tables.len()
        )));
    }
    let (labels, dim) = check_tables(tables)?;
    let averages: Vec<LabelTargets> = tables.iter().map(LogitTable::averages).collect();
    let mut per_worker_targets = Vec::with_capacity(tables.len());
    for c in 0..tables.len() {
        let mut targets = Vec::with_capacity(labels);
        for l in 0..labels {
            let mut acc = vec![0.0; dim];
            let mut n = 0usize;
            for (other, avg) in averages.iter().enumerate() {
                if other == c {
                    continue;
                }
                if let Some(row) = &avg[l] {
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                    n += 1;
                }
            }
            let target = if n > 0 {
                acc.iter_mut().for_each(|a| *a /= n as f64);
                Some(acc)
            } else {
                previous
                    .and_then(|p| p.per_worker_targets.get(c))
                    .and_then(|t| t.get(l).cloned().flatten())
            };
            targets.push(target);
        }
        per_worker_targets.push(targets);
    }
    Ok(GlobalLogitView {
        per_worker_targets,
        round: tables[0].round,
    })
}

/// Plain per-label mean over every table that saw the label.
pub fn label_means(tables: &[LogitTable]) -> Result<LabelTargets> {
    let (labels, dim) = check_tables(tables)?;
    let averages: Vec<LabelTargets> = tables.iter().map(LogitTable::averages).collect();
    Ok((0..labels)
        .map(|l| {
            let rows: Vec<&Vec<f64>> = averages.iter().filter_map(|a| a[l].as_ref()).collect();
            (!rows.is_empty()).then(|| {
                let mut acc = vec![0.0; dim];
                for row in &rows {
                    for (a, v) in acc.iter_mut().zip(row.iter()) {
                        *a += v;
                    }
                }
                acc.iter().map(|a| a / rows.len() as f64).collect()
            })
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchOrder {
    /// Fresh permutation per worker and round.
    #[default]
    Shuffled,
    /// Cyclic pass in storage order; identical shards then see identical
    /// batches regardless of worker id.
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalSchedule {
    pub steps: usize,
    pub batch: usize,
    pub eta: f64,
    #[serde(default)]
    pub order: BatchOrder,
}

impl LocalSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::validation("batch", "must be positive"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::validation("eta", "must be positive and finite"));
        }
        Ok(())
    }
}

struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
    shuffle: bool,
}

impl BatchCursor {
    fn new(len: usize, order: BatchOrder, rng: &mut Rng) -> Self {
        let shuffle = order == BatchOrder::Shuffled;
        let mut idx: Vec<usize> = (0..len).collect();
        if shuffle {
            idx.shuffle(rng);
        }
        BatchCursor {
            order: idx,
            pos: 0,
            shuffle,
        }
    }

    fn next(&mut self, rng: &mut Rng) -> usize {
        if self.pos == self.order.len() {
            if self.shuffle {
                self.order.shuffle(rng);
            }
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalPhase {
    pub table: LogitTable,
    /// Mean objective value over visited samples, measured before each step.
    pub mean_loss: f64,
}

/// `steps` batches of per-sample SGD. After each sample's update its logit
/// is added to the table row of its label.
pub fn local_train_phase(
    model: &mut Mlp,
    shard: &LabeledDataset,
    targets: &[Option<Vec<f64>>],
    schedule: &LocalSchedule,
    objective: &Objective,
    round: usize,
    rng: &mut Rng,
) -> Result<LocalPhase> {
    if shard.is_empty() {
        return Err(Error::invalid("empty shard"));
    }
    schedule.validate()?;
    let labels = shard.label_count();
    let dim = model.logit_dim(objective.source);
    if targets.len() != labels {
        return Err(Error::shape("target labels", labels, targets.len()));
    }
    if let Some(bad) = targets.iter().flatten().find(|t| t.len() != dim) {
        return Err(Error::shape("target logit dimension", dim, bad.len()));
    }
    let mut table = LogitTable::new(labels, dim, round);
    let mut cursor = BatchCursor::new(shard.len(), schedule.order, rng);
    let mut loss_sum = 0.0;
    let mut visits = 0usize;
    for _ in 0..schedule.steps {
        for _ in 0..schedule.batch {
            let (x, y) = shard.sample(cursor.next(rng));
            let target = one_hot(y, model.output_dim());
            let (value, grad) = objective.evaluate(model, x, &target, targets[y].as_deref())?;
            model.sgd_step(&grad, schedule.eta)?;
            table.accumulate(y, &model.logits(x, objective.source)?)?;
            loss_sum += value;
            visits += 1;
        }
    }
    let mean_loss = if visits == 0 { 0.0 } else { loss_sum / visits as f64 };
    Ok(LocalPhase { table, mean_loss })
}

pub fn accuracy(model: &Mlp, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (x, &y) in data.samples().iter().zip(data.labels()) {
        if argmax(&model.predict(x)?) == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerRound {
    pub worker: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub uplink_delivered: bool,
    pub downlink_delivered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub workers: Vec<WorkerRound>,
}

impl RoundReport {
    pub fn mean_accuracy(&self) -> f64 {
        crate::stats::mean(&self.workers.iter().map(|w| w.accuracy).collect::<Vec<_>>())
    }

    pub fn delivered_uplinks(&self) -> usize {
        self.workers.iter().filter(|w| w.uplink_delivered).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub rounds: usize,
    pub schedule: LocalSchedule,
    pub objective: Objective,
    #[serde(default)]
    pub float_width: FloatWidth,
    pub seed: u64,
    #[serde(default)]
    pub channel: Option<LinkBudget>,
}

#[derive(Clone, Debug)]
pub struct FederatedRun {
    pub reports: Vec<RoundReport>,
    pub models: Vec<Mlp>,
}

fn check_workers(models: &[Mlp], shards: &[LabeledDataset]) -> Result<()> {
    if models.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 workers, got {}",
            models.len()
        )));
    }
    if models.len() != shards.len() {
        return Err(Error::shape("shards", models.len(), shards.len()));
    }
    Ok(())
}

pub(crate) fn deliver(channel: Option<&LinkBudget>, direction: Direction, bytes: u64) -> bool {
    channel.is_none_or(|b| channel::transmit(b, direction, bytes).delivered)
}

/// Runs local phases for all workers in parallel; output order follows
/// worker index.
pub(crate) fn parallel_local(
    models: &mut [Mlp],
    shards: &[LabeledDataset],
    targets: &[LabelTargets],
    schedule: &LocalSchedule,
    objective: &Objective,
    master_seed: u64,
    round: usize,
) -> Result<Vec<LocalPhase>> {
    models
        .par_iter_mut()
        .zip(shards.par_iter())
        .zip(targets.par_iter())
        .enumerate()
        .map(|(c, ((model, shard), t))| {
            let mut rng = seed::stream(master_seed, "local-batches", c as u64, round as u64);
            local_train_phase(model, shard, t, schedule, objective, round, &mut rng)
        })
        .collect()
}

pub fn run_fd(
    mut models: Vec<Mlp>,
    shards: &[LabeledDataset],
    test: &LabeledDataset,
    cfg: &TrainingConfig,
) -> Result<FederatedRun> {
    check_workers(&models, shards)?;
    let labels = shards[0].label_count();
    let dim = models[0].logit_dim(cfg.objective.source);
    let (up_bytes, down_bytes) = payload_bytes(Scheme::Fd, &models[0], labels, dim, cfg.float_width);
    let mut targets: Vec<LabelTargets> = vec![vec![None; labels]; models.len()];
    let mut view: Option<GlobalLogitView> = None;
    let mut reports = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let phases = parallel_local(
            &mut models,
            shards,
            &targets,
            &cfg.schedule,
            &cfg.objective,
            cfg.seed,
            round,
        )?;
        let mut uplinks = Vec::with_capacity(models.len());
        let tables: Vec<LogitTable> = phases
            .iter()
            .map(|p| {
                let ok = deliver(cfg.channel.as_ref(), Direction::Up, up_bytes);
                uplinks.push(ok);
                if ok {
                    p.table.clone()
                } else {
                    LogitTable::new(labels, dim, round)
                }
            })
            .collect();
        let next = global_ensemble(&tables, view.as_ref())?;
        let mut workers = Vec::with_capacity(models.len());
        for (c, phase) in phases.iter().enumerate() {
            let down_ok = deliver(cfg.channel.as_ref(), Direction::Down, down_bytes);
            if down_ok {
                targets[c] = next.per_worker_targets[c].clone();
            }
            workers.push(WorkerRound {
                worker: c,
                loss: phase.mean_loss,
                accuracy: accuracy(&models[c], test)?,
                uplink_bytes: up_bytes,
                downlink_bytes: down_bytes,
                uplink_delivered: uplinks[c],
                downlink_delivered: down_ok,
            });
        }
        view = Some(next);
        log::debug!("fd round {round}: uplinks {}/{}", uplinks.iter().filter(|&&u| u).count(), models.len());
        reports.push(RoundReport { round, workers });
    }
    Ok(FederatedRun { reports, models })
}

/// FedAvg. Workers start from worker 0's weights; dropped uploads are left
/// out of the average and a round with no uploads rebroadcasts the previous
/// global model.
pub fn run_fl(
    mut models: Vec<Mlp>,
    shards: &[LabeledDataset],
    test: &LabeledDataset,
    cfg: &TrainingConfig,
) -> Result<FederatedRun> {
    check_workers(&models, shards)?;
    if let Some(bad) = models.iter().position(|m| !m.same_architecture(&models[0])) {
        return Err(Error::Aggregation(format!(
            "worker {bad} architecture differs from worker 0"
        )));
    }
    let labels = shards[0].label_count();
    let dim = models[0].output_dim();
    let (up_bytes, down_bytes) = payload_bytes(Scheme::Fl, &models[0], labels, dim, cfg.float_width);
    let mut global = models[0].clone();
    for m in models.iter_mut() {
        *m = global.clone();
    }
    let objective = cfg.objective.with_lambda(0.0);
    let no_targets: Vec<LabelTargets> = vec![vec![None; labels]; models.len()];
    let mut reports = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let phases = parallel_local(
            &mut models,
            shards,
            &no_targets,
            &cfg.schedule,
            &objective,
            cfg.seed,
            round,
        )?;
        let uplinks: Vec<bool> = (0..models.len())
            .map(|_| deliver(cfg.channel.as_ref(), Direction::Up, up_bytes))
            .collect();
        let received: Vec<Mlp> = models
            .iter()
            .zip(&uplinks)
            .filter(|(_, &ok)| ok)
            .map(|(m, _)| m.clone())
            .collect();
        if !received.is_empty() {
            global = fedavg(&received)?;
        }
        let mut workers = Vec::with_capacity(models.len());
        for (c, phase) in phases.iter().enumerate() {
            let down_ok = deliver(cfg.channel.as_ref(), Direction::Down, down_bytes);
            if down_ok {
                models[c] = global.clone();
            }
            workers.push(WorkerRound {
                worker: c,
                loss: phase.mean_loss,
                accuracy: accuracy(&models[c], test)?,
                uplink_bytes: up_bytes,
                downlink_bytes: down_bytes,
                uplink_delivered: uplinks[c],
                downlink_delivered: down_ok,
            });
        }
        reports.push(RoundReport { round, workers });
    }
    Ok(FederatedRun { reports, models })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_classification;
    use crate::nn::Activation;
    use proptest::prelude::*;

    fn table_from(avgs: &[Option<Vec<f64>>], round: usize) -> LogitTable {
        let dim = avgs.iter().flatten().next().map_or(1, Vec::len);
        let mut t = LogitTable::new(avgs.len(), dim, round);
        for (l, a) in avgs.iter().enumerate() {
            if let Some(v) = a {
                t.accumulate(l, v).unwrap();
            }
        }
        t
    }

    fn small_cfg(rounds: usize, lambda: f64) -> TrainingConfig {
        TrainingConfig {
            rounds,
            schedule: LocalSchedule {
                steps: 20,
                batch: 10,
                eta: 0.05,
                order: BatchOrder::Shuffled,
            },
            objective: Objective::default().with_lambda(lambda),
            float_width: FloatWidth::F32,
            seed: 9,
            channel: None,
        }
    }

    #[test]
    fn payload_reference_values() {
        let m = Mlp::uniform(vec![784, 16, 10], Activation::Relu, 0).unwrap();
        assert_eq!(m.param_count(), 12_730);
        let fd = payload_bytes(Scheme::Fd, &m, 10, 10, FloatWidth::F32);
        assert_eq!(fd, (400, 400));
        // 12,544-parameter reference: 784 -> 16 without biases.
        let reference = 12_544u64 * FloatWidth::F32.bytes();
        assert_eq!(reference, 50_176);
        assert!((reference as f64 / fd.0 as f64 - 125.44).abs() < 1e-12);
        let fl = payload_bytes(Scheme::Fl, &m, 10, 10, FloatWidth::F64);
        assert_eq!(fl.0, 8 * m.param_count() as u64);
    }

    #[test]
    fn payload_independence() {
        let small = Mlp::uniform(vec![4, 3, 2], Activation::Tanh, 0).unwrap();
        let big = Mlp::uniform(vec![4, 300, 2], Activation::Tanh, 0).unwrap();
        assert_eq!(
            payload_bytes(Scheme::Fd, &small, 10, 2, FloatWidth::F32),
            payload_bytes(Scheme::Fd, &big, 10, 2, FloatWidth::F32)
        );
        assert_eq!(
            payload_bytes(Scheme::Fl, &small, 10, 2, FloatWidth::F32),
            payload_bytes(Scheme::Fl, &small, 1000, 2, FloatWidth::F32)
        );
    }

    #[test]
    fn leave_one_out_example() {
        let tables: Vec<_> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&v| table_from(&[Some(vec![v])], 1))
            .collect();
        let view = global_ensemble(&tables, None).unwrap();
        let got: Vec<f64> = view
            .per_worker_targets
            .iter()
            .map(|t| t[0].as_ref().unwrap()[0])
            .collect();
        assert_eq!(got, vec![2.5, 2.0, 1.5]);
    }

    #[test]
    fn identical_tables_give_common_target() {
        let t = table_from(&[Some(vec![0.3, -1.0]), Some(vec![2.0, 4.0])], 1);
        let view = global_ensemble(&[t.clone(), t.clone(), t.clone()], None).unwrap();
        for w in &view.per_worker_targets {
            assert_eq!(w, &t.averages());
        }
    }

    #[test]
    fn ensemble_errors() {
        let t = table_from(&[Some(vec![1.0])], 1);
        assert!(global_ensemble(std::slice::from_ref(&t), None).is_err());
        let wide = table_from(&[Some(vec![1.0, 2.0])], 1);
        assert!(matches!(
            global_ensemble(&[t, wide], None),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn missing_label_falls_back_to_previous() {
        let a = table_from(&[Some(vec![1.0]), Some(vec![5.0])], 2);
        let b = table_from(&[Some(vec![3.0]), None], 2);
        let fresh = global_ensemble(&[a.clone(), b.clone()], None).unwrap();
        assert_eq!(fresh.per_worker_targets[0][1], None);
        assert_eq!(fresh.per_worker_targets[1][1], Some(vec![5.0]));
        let previous = GlobalLogitView {
            per_worker_targets: vec![vec![None, Some(vec![7.0])], vec![None, None]],
            round: 1,
        };
        let carried = global_ensemble(&[a, b], Some(&previous)).unwrap();
        assert_eq!(carried.per_worker_targets[0][1], Some(vec![7.0]));
    }

    #[test]
    fn averages_respect_counts() {
        let mut t = LogitTable::new(3, 2, 1);
        t.accumulate(1, &[1.0, 2.0]).unwrap();
        t.accumulate(1, &[3.0, 6.0]).unwrap();
        assert_eq!(t.averages(), vec![None, Some(vec![2.0, 4.0]), None]);
        assert_eq!(t.sums()[0], vec![0.0, 0.0]);
        assert!(t.accumulate(3, &[0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn ensemble_matches_brute_force(
            c in 2usize..6,
            vals in proptest::collection::vec(-5.0f64..5.0, 6 * 3 * 2),
        ) {
            let tables: Vec<LogitTable> = (0..c)
                .map(|w| {
                    let rows: Vec<Option<Vec<f64>>> = (0..3)
                        .map(|l| Some(vec![vals[(w * 3 + l) * 2], vals[(w * 3 + l) * 2 + 1]]))
                        .collect();
                    table_from(&rows, 1)
                })
                .collect();
            let view = global_ensemble(&tables, None).unwrap();
            for w in 0..c {
                for l in 0..3 {
                    for d in 0..2 {
                        let brute: f64 = (0..c)
                            .filter(|&o| o != w)
                            .map(|o| vals[(o * 3 + l) * 2 + d])
                            .sum::<f64>() / (c - 1) as f64;
                        let got = view.per_worker_targets[w][l].as_ref().unwrap()[d];
                        prop_assert!((got - brute).abs() < 1e-12);
                    }
                }
            }
            // Mean of leave-one-out means equals the grand mean.
            for l in 0..3 {
                for d in 0..2 {
                    let loo: f64 = (0..c).map(|w| view.per_worker_targets[w][l].as_ref().unwrap()[d]).sum();
                    let direct: f64 = (0..c).map(|w| vals[(w * 3 + l) * 2 + d]).sum();
                    prop_assert!((loo - direct).abs() < 1e-12);
                }
            }
        }
    }

    fn tiny_shard() -> LabeledDataset {
        LabeledDataset::new(vec![vec![0.5, -0.25]], vec![1], 2).unwrap()
    }

    #[test]
    fn zero_steps_leave_model_untouched() {
        let mut m = Mlp::uniform(vec![2, 3, 2], Activation::Tanh, 1).unwrap();
        let before = m.clone();
        let schedule = LocalSchedule { steps: 0, batch: 1, eta: 0.1, order: BatchOrder::Shuffled };
        let out = local_train_phase(
            &mut m,
            &tiny_shard(),
            &[None, None],
            &schedule,
            &Objective::default(),
            1,
            &mut seed::from_seed(0),
        )
        .unwrap();
        assert_eq!(m, before);
        assert!(out.table.is_empty());
    }

    #[test]
    fn single_step_trace() {
        let shard = tiny_shard();
        let mut m = Mlp::uniform(vec![2, 3, 2], Activation::Tanh, 1).unwrap();
        let mut oracle = m.clone();
        let schedule = LocalSchedule { steps: 1, batch: 1, eta: 0.1, order: BatchOrder::Shuffled };
        let objective = Objective::default();
        let out = local_train_phase(&mut m, &shard, &[None, None], &schedule, &objective, 1, &mut seed::from_seed(0))
            .unwrap();
        let (_, g) = objective.evaluate(&oracle, &[0.5, -0.25], &[0.0, 1.0], None).unwrap();
        oracle.sgd_step(&g, 0.1).unwrap();
        assert_eq!(m, oracle);
        assert_eq!(out.table.counts(), &[0, 1]);
        assert_eq!(out.table.averages()[1].as_deref(), Some(&oracle.predict(&[0.5, -0.25]).unwrap()[..]));
    }

    #[test]
    fn zero_lambda_equals_plain_sgd() {
        let data = synth_classification(3, 10, 4, 2).unwrap();
        let schedule = LocalSchedule { steps: 5, batch: 4, eta: 0.1, order: BatchOrder::Shuffled };
        let mut a = Mlp::uniform(vec![4, 8, 3], Activation::Tanh, 1).unwrap();
        let mut b = a.clone();
        let teacher = vec![Some(vec![1.0, 0.0, -1.0]); 3];
        let obj = Objective::default().with_lambda(0.0);
        local_train_phase(&mut a, &data, &teacher, &schedule, &obj, 2, &mut seed::from_seed(4)).unwrap();
        local_train_phase(&mut b, &data, &[None, None, None], &schedule, &obj, 2, &mut seed::from_seed(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn local_phase_rejects_bad_input() {
        let mut m = Mlp::uniform(vec![2, 3, 2], Activation::Tanh, 1).unwrap();
        let schedule = LocalSchedule { steps: 1, batch: 1, eta: 0.1, order: BatchOrder::Shuffled };
        let empty = LabeledDataset::new(vec![], vec![], 2).unwrap();
        let mut rng = seed::from_seed(0);
        assert!(local_train_phase(&mut m, &empty, &[None, None], &schedule, &Objective::default(), 1, &mut rng).is_err());
        assert!(local_train_phase(&mut m, &tiny_shard(), &[None], &schedule, &Objective::default(), 1, &mut rng).is_err());
    }

    fn setup(workers: usize) -> (Vec<Mlp>, Vec<LabeledDataset>, LabeledDataset) {
        let data = synth_classification(4, 40, 6, 3).unwrap();
        let (train, test) = data.split_holdout(0.2, 3);
        let shards = crate::data::shard(&train, workers, &crate::data::ShardPlan::Iid { seed: 3 }).unwrap();
        let models = (0..workers)
            .map(|c| Mlp::uniform(vec![6, 12, 4], Activation::Tanh, 100 + c as u64).unwrap())
            .collect();
        (models, shards, test)
    }

    #[test]
    fn zero_rounds_report_nothing() {
        let (models, shards, test) = setup(2);
        assert!(run_fd(models.clone(), &shards, &test, &small_cfg(0, 0.5)).unwrap().reports.is_empty());
        assert!(run_fl(models, &shards, &test, &small_cfg(0, 0.0)).unwrap().reports.is_empty());
    }

    #[test]
    fn fd_improves_over_untrained() {
        let (models, shards, test) = setup(2);
        let before = accuracy(&models[0], &test).unwrap();
        let run = run_fd(models, &shards, &test, &small_cfg(5, 0.5)).unwrap();
        let last = run.reports.last().unwrap();
        assert!(last.mean_accuracy() > before);
        for r in &run.reports {
            for w in &r.workers {
                assert_eq!(w.uplink_bytes, 4 * 4 * 4);
                assert_eq!(w.downlink_bytes, 4 * 4 * 4);
            }
        }
    }

    #[test]
    fn fl_improves_and_reports_f64_bytes() {
        let (models, shards, test) = setup(2);
        let params = models[0].param_count() as u64;
        let mut cfg = small_cfg(4, 0.0);
        cfg.float_width = FloatWidth::F64;
        let run = run_fl(models, &shards, &test, &cfg).unwrap();
        assert!(run.reports[3].mean_accuracy() > run.reports[0].mean_accuracy() - 1e-12);
        assert!(run.reports.iter().all(|r| r.workers.iter().all(|w| w.uplink_bytes == 8 * params)));
        assert_eq!(run.models[0], run.models[1]);
    }

    #[test]
    fn fl_rejects_mixed_architectures() {
        let (mut models, shards, test) = setup(2);
        models[1] = Mlp::uniform(vec![6, 5, 4], Activation::Tanh, 1).unwrap();
        assert!(matches!(run_fl(models, &shards, &test, &small_cfg(1, 0.0)), Err(Error::Aggregation(_))));
    }

    #[test]
    fn fd_keeps_symmetric_workers_identical() {
        let (models, shards, test) = setup(2);
        let same = vec![models[0].clone(); 3];
        let shard = vec![shards[0].clone(); 3];
        let mut cfg = small_cfg(3, 0.5);
        cfg.schedule.order = BatchOrder::Sequential;
        let run = run_fd(same, &shard, &test, &cfg).unwrap();
        assert_eq!(run.models[0], run.models[1]);
        assert_eq!(run.models[1], run.models[2]);
    }

    #[test]
    fn fd_is_schedule_independent() {
        let (models, shards, test) = setup(3);
        let cfg = small_cfg(2, 0.5);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(|| run_fd(models.clone(), &shards, &test, &cfg).unwrap());
        let multi = run_fd(models, &shards, &test, &cfg).unwrap();
        assert_eq!(single.reports, multi.reports);
        assert_eq!(single.models, multi.models);
    }

    #[test]
    fn asymmetric_channel_starves_fl_uplinks() {
        let (_, shards, test) = setup(2);
        // 6-64-4 carries 708 parameters, 2832 bytes at f32: over the 1 KiB uplink.
        let models: Vec<Mlp> = (0..2)
            .map(|c| Mlp::uniform(vec![6, 64, 4], Activation::Tanh, c).unwrap())
            .collect();
        let mut cfg = small_cfg(3, 0.5);
        cfg.channel = Some(LinkBudget::asymmetric());
        let fd = run_fd(models.clone(), &shards, &test, &cfg).unwrap();
        let fl = run_fl(models, &shards, &test, &cfg).unwrap();
        let ups = |r: &FederatedRun| r.reports.iter().map(RoundReport::delivered_uplinks).sum::<usize>();
        assert!(ups(&fd) > ups(&fl));
    }
}
