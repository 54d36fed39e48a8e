use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mixup, pair_and_invert, MixedSample, SeedOrigin};
use crate::channel::{self, Direction};
use crate::data::LabeledDataset;
use crate::fd::{
    accuracy, deliver, label_means, parallel_local, payload_bytes, FederatedRun, LabelTargets,
    LogitTable, RoundReport, Scheme, TrainingConfig, WorkerRound,
};
use crate::nn::{Mlp, Objective};
use crate::seed::{self, Rng};
use crate::stats::one_hot;
use crate::{Error, Result};

/// A sample the server trains the global model on, with a label
/// distribution (one-hot after inverse-Mixup, soft for raw Mixup seeds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSeed {
    pub x: Vec<f64>,
    pub label: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// Train on inverse-mixed, hard-labelled samples.
    Inverse,
    /// Train on the uploaded Mixup samples and their soft labels.
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerSchedule {
    pub steps: usize,
    pub eta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mix2FldConfig {
    pub gamma: f64,
    pub n_mix: usize,
    pub n_inv: usize,
    pub server: ServerSchedule,
    pub mode: SeedMode,
}

#[derive(Clone, Debug)]
pub struct Mix2FldRun {
    pub run: FederatedRun,
    pub global: Mlp,
    pub seed_count: usize,
    /// Per worker, sent once before round 1 outside the per-round budget.
    pub seed_upload_bytes: u64,
    /// Rounds' worth of uplink budget the seed upload occupies, if a channel
    /// is configured.
    pub seed_upload_rounds: Option<u64>,
}

/// `n_mix` Mixup samples from distinct raw pairs. The second sample is drawn
/// from a different label whenever the shard has more than one.
pub fn generate_seeds(
    shard: &LabeledDataset,
    worker: usize,
    gamma: f64,
    n_mix: usize,
    rng: &mut Rng,
) -> Result<Vec<MixedSample>> {
    let n = shard.len();
    let available = n * n.saturating_sub(1) / 2;
    if n_mix > available {
        return Err(Error::invalid(format!(
            "worker {worker}: n_mix {n_mix} exceeds the {available} distinct pairs of its shard"
        )));
    }
    let mixed_labels = shard.label_histogram().iter().filter(|&&c| c > 0).count() > 1;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n_mix);
    while out.len() < n_mix {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let (xi, yi) = shard.sample(i);
        let (xj, yj) = shard.sample(j);
        if i == j || (mixed_labels && yi == yj) || !seen.insert((i.min(j), i.max(j))) {
            continue;
        }
        out.push(mixup(xi, yi, xj, yj, shard.label_count(), gamma, SeedOrigin { worker, raw: (i, j) })?);
    }
    Ok(out)
}

/// Seeds of all workers, in worker order.
pub fn collect_seeds(
    shards: &[LabeledDataset],
    gamma: f64,
    n_mix: usize,
    master_seed: u64,
) -> Result<Vec<MixedSample>> {
    let per_worker: Vec<Vec<MixedSample>> = shards
        .par_iter()
        .enumerate()
        .map(|(c, shard)| {
            let mut rng = seed::stream(master_seed, "mixup", c as u64, 0);
            generate_seeds(shard, c, gamma, n_mix, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(per_worker.into_iter().flatten().collect())
}

pub fn server_seeds(mixed: &[MixedSample], mode: SeedMode, n_inv: usize) -> Result<Vec<TrainingSeed>> {
    let seeds: Vec<TrainingSeed> = match mode {
        SeedMode::Inverse => pair_and_invert(mixed, n_inv)?
            .into_iter()
            .map(|s| TrainingSeed {
                label: one_hot(s.label, mixed[0].soft_label.len()),
                x: s.x,
            })
            .collect(),
        SeedMode::Mixed => mixed
            .iter()
            .map(|m| TrainingSeed {
                x: m.x.clone(),
                label: m.soft_label.clone(),
            })
            .collect(),
    };
    if seeds.is_empty() {
        return Err(Error::invalid("server has no seed samples to train on"));
    }
    Ok(seeds)
}

/// Label-weighted mix of the per-label targets.
fn teacher_for(label: &[f64], targets: &LabelTargets) -> Result<Vec<f64>> {
    let mut out: Option<Vec<f64>> = None;
    for (l, &w) in label.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let t = targets
            .get(l)
            .and_then(Option::as_ref)
            .ok_or(Error::MissingTarget(l))?;
        let acc = out.get_or_insert_with(|| vec![0.0; t.len()]);
        for (a, v) in acc.iter_mut().zip(t) {
            *a += w * v;
        }
    }
    out.ok_or_else(|| Error::invalid("seed label is all zeros"))
}

/// `steps` per-sample SGD iterations of the distillation objective on the
/// seed set, cycling through reshuffled passes.
pub fn output_to_model(
    global: &mut Mlp,
    seeds: &[TrainingSeed],
    targets: &LabelTargets,
    schedule: &ServerSchedule,
    objective: &Objective,
    rng: &mut Rng,
) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::invalid("output-to-model conversion needs seeds"));
    }
    let teachers: Vec<Option<Vec<f64>>> = if objective.lambda > 0.0 {
        seeds
            .iter()
            .map(|s| teacher_for(&s.label, targets).map(Some))
            .collect::<Result<_>>()?
    } else {
        vec![None; seeds.len()]
    };
    let mut order: Vec<usize> = (0..seeds.len()).collect();
    for k in 0..schedule.steps {
        if k % seeds.len() == 0 {
            order.shuffle(rng);
        }
        let idx = order[k % seeds.len()];
        let s = &seeds[idx];
        let (_, grad) = objective.evaluate(global, &s.x, &s.label, teachers[idx].as_deref())?;
        global.sgd_step(&grad, schedule.eta)?;
    }
    Ok(())
}

/// Uplink logits as in FD, distil them into the global model on `seeds`,
/// broadcast the global weights. Workers train without a regularizer since
/// they never receive logit targets.
pub fn run_fld_with_seeds(
    mut models: Vec<Mlp>,
    shards: &[LabeledDataset],
    test: &LabeledDataset,
    cfg: &TrainingConfig,
    server: &ServerSchedule,
    seeds: &[TrainingSeed],
) -> Result<(FederatedRun, Mlp)> {
    if models.len() < 2 {
        return Err(Error::invalid("need at least 2 workers"));
    }
    if models.len() != shards.len() {
        return Err(Error::shape("shards", models.len(), shards.len()));
    }
    if let Some(bad) = models.iter().position(|m| !m.same_architecture(&models[0])) {
        return Err(Error::Aggregation(format!("worker {bad} architecture differs from worker 0")));
    }
    let labels = shards[0].label_count();
    let dim = models[0].logit_dim(cfg.objective.source);
    let (up_bytes, _) = payload_bytes(Scheme::Fd, &models[0], labels, dim, cfg.float_width);
    let (_, down_bytes) = payload_bytes(Scheme::Fl, &models[0], labels, dim, cfg.float_width);
    let mut global = models[0].clone();
    for m in models.iter_mut() {
        *m = global.clone();
    }
    let local_objective = cfg.objective.with_lambda(0.0);
    let no_targets: Vec<LabelTargets> = vec![vec![None; labels]; models.len()];
    let mut server_targets: LabelTargets = vec![None; labels];
    let mut reports = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let phases = parallel_local(
            &mut models,
            shards,
            &no_targets,
            &cfg.schedule,
            &local_objective,
            cfg.seed,
            round,
        )?;
        let uplinks: Vec<bool> = (0..models.len())
            .map(|_| deliver(cfg.channel.as_ref(), Direction::Up, up_bytes))
            .collect();
        let tables: Vec<LogitTable> = phases
            .iter()
            .zip(&uplinks)
            .map(|(p, &ok)| if ok { p.table.clone() } else { LogitTable::new(labels, dim, round) })
            .collect();
        for (slot, fresh) in server_targets.iter_mut().zip(label_means(&tables)?) {
            if fresh.is_some() {
                *slot = fresh;
            }
        }
        let usable: Vec<TrainingSeed> = seeds
            .iter()
            .filter(|s| cfg.objective.lambda == 0.0 || teacher_for(&s.label, &server_targets).is_ok())
            .cloned()
            .collect();
        if usable.len() < seeds.len() {
            log::warn!(
                "round {round}: {} seeds skipped for lack of targets",
                seeds.len() - usable.len()
            );
        }
        if !usable.is_empty() {
            let mut rng = seed::stream(cfg.seed, "server-seeds", 0, round as u64);
            output_to_model(&mut global, &usable, &server_targets, server, &cfg.objective, &mut rng)?;
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
    Ok((FederatedRun { reports, models }, global))
}

/// MixFLD or Mix2FLD depending on `mix.mode`.
pub fn run_mix2fld(
    models: Vec<Mlp>,
    shards: &[LabeledDataset],
    test: &LabeledDataset,
    cfg: &TrainingConfig,
    mix: &Mix2FldConfig,
) -> Result<Mix2FldRun> {
    let mixed = collect_seeds(shards, mix.gamma, mix.n_mix, cfg.seed)?;
    let seeds = server_seeds(&mixed, mix.mode, mix.n_inv)?;
    let d_x = shards[0].dim() as u64;
    let d_y = shards[0].label_count() as u64;
    let seed_upload_bytes = mix.n_mix as u64 * (d_x + d_y) * cfg.float_width.bytes();
    let seed_upload_rounds = cfg
        .channel
        .as_ref()
        .map(|b| channel::transmit_bulk(b, Direction::Up, seed_upload_bytes).rounds_used);
    let seed_count = seeds.len();
    let (run, global) = run_fld_with_seeds(models, shards, test, cfg, &mix.server, &seeds)?;
    Ok(Mix2FldRun {
        run,
        global,
        seed_count,
        seed_upload_bytes,
        seed_upload_rounds,
    })
}
