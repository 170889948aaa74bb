//! The event loop.
//!
//! Events are processed in `(time, kind, client)` order with uploads before
//! downloads before aggregation ticks at equal times. Local training for all
//! clients dispatched at one tick runs in parallel right away; its results
//! only become visible through the ordered upload events, so the outcome is
//! identical to a sequential schedule.

use std::cmp::Ordering;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rayon::prelude::*;

use super::bandwidth::{round_time, BandwidthProfile};
use super::config::{DataSource, EsmTarget, ImsMode, SimConfig, Timing};
use super::metrics::{MetricsLog, MetricsRow};
use crate::aggregation::{
    aggregate_fa, aggregate_ga, buff_mask_fedavg, coverage_stats, Aggregator, Buffer, UploadRecord,
};
use crate::data::{idx, partition, tabular, DataShard, Dataset};
use crate::density::{
    gmr_step, stage1_update, stage_transition, DensityVector, EsmState, RoundTimeObs, Stage, StageTracker,
};
use crate::error::{Error, Result};
use crate::ims::{split, IncrementSet};
use crate::model::{evaluate, masked_sgd_steps, ClientId, Mask, ModelKind, ModelSpec, ParamVector};
use crate::pruning::{importance, magnitude_importance, refresh_due, ImportanceOrdering, ImportanceVector, MaskSet};
use crate::rng::{stream_rng, SimRng, Stream};

/// Data and initial model derived from a config's seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub spec: ModelSpec,
    pub shards: Vec<DataShard>,
    /// Union of all shards.
    pub train: Dataset,
    pub val: Dataset,
    pub init: ParamVector,
}

pub fn prepare(config: &SimConfig) -> Result<Prepared> {
    let mut rng = stream_rng(config.seed, 0, 0, Stream::Data);
    let full = match &config.data.source {
        DataSource::Synthetic(g) => g.generate(&mut rng),
        DataSource::Idx {
            images,
            labels,
            n_classes,
        } => idx::load(images, labels, *n_classes)?,
        DataSource::Csv { path, n_classes } => tabular::load(path, *n_classes)?,
    };
    let (train, val) = full.split(config.data.val_fraction, &mut rng)?;
    let shards = partition(&train, config.n_clients, config.data.partition, &mut rng)?;
    let spec = match config.model.kind {
        ModelKind::Logistic => ModelSpec::logistic(full.input_dim(), full.n_classes())?,
        ModelKind::Mlp => ModelSpec::mlp(full.input_dim(), config.model.hidden.clone(), full.n_classes())?,
    };
    let init = spec.init_params(
        config.model.init_scale,
        &mut stream_rng(config.seed, 0, 0, Stream::Init),
    );
    let train = Dataset::concat(shards.iter().map(|s| &s.data))?;
    Ok(Prepared {
        spec,
        shards,
        train,
        val,
        init,
    })
}

/// RNG for client `client`'s local training on global version `version`.
pub fn training_rng(seed: u64, client: ClientId, version: u64) -> SimRng {
    stream_rng(seed, u64::from(client.0), version, Stream::Training)
}

fn jitter_rng(seed: u64, client: ClientId, version: u64) -> SimRng {
    stream_rng(seed, u64::from(client.0), version, Stream::Jitter)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    UploadComplete = 0,
    DownloadComplete = 1,
    AggregationTick = 2,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: EventKind,
    client: u32,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.cmp(&other.kind))
            .then(self.client.cmp(&other.client))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientStatus {
    Training,
    Uploading,
    Waiting,
    Downloading,
}

/// Work in flight between dispatch and upload.
#[derive(Debug, Clone)]
struct InFlight {
    model: ParamVector,
    mask: Mask,
    rho: f64,
    /// Compute plus upload seconds, applied at download completion.
    after_download: f64,
}

#[derive(Debug, Clone)]
struct ClientRuntime {
    id: ClientId,
    profile: BandwidthProfile,
    status: ClientStatus,
    dispatch_time: f64,
    dispatch_version: u64,
    in_flight: Option<InFlight>,
    /// Ordering epoch and density of the last download.
    held: Option<(u32, f64)>,
    /// Last completed round: (duration, version it was dispatched at).
    last_round: Option<(f64, u64)>,
    latest_upload: Option<ParamVector>,
}

/// Read-only view handed to observers after every tick.
pub struct TickSnapshot<'a> {
    pub round: u64,
    pub time: f64,
    pub model: &'a ParamVector,
    pub densities: &'a DensityVector,
    pub masks: &'a MaskSet,
    pub row: &'a MetricsRow,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub metrics: MetricsLog,
    pub spec: ModelSpec,
    pub final_model: ParamVector,
    /// Importance of the final model relative to the one before it.
    pub importance: ImportanceVector,
    pub final_densities: DensityVector,
    pub uploads: u64,
    pub buffer_insertions: u64,
    pub ticks: u64,
}

pub fn run(config: &SimConfig) -> Result<SimOutcome> {
    run_with_observer(config, |_| {})
}

pub fn run_with_observer<F>(config: &SimConfig, observer: F) -> Result<SimOutcome>
where
    F: FnMut(&TickSnapshot<'_>),
{
    config.validate()?;
    let prepared = prepare(config)?;
    Engine::new(config, prepared)?.run(observer)
}

struct Engine<'c> {
    cfg: &'c SimConfig,
    timing: Timing,
    data: Prepared,
    clients: Vec<ClientRuntime>,
    reference: usize,
    queue: BinaryHeap<Reverse<Event>>,
    now: f64,
    version: u64,
    global: ParamVector,
    previous: Option<ParamVector>,
    buffer: Buffer,
    densities: DensityVector,
    tracker: StageTracker,
    stage1_since: u64,
    esm: EsmState,
    ordering: Option<ImportanceOrdering>,
    /// Coordinates some client was last sent to train.
    trained: Option<Mask>,
    epoch: u32,
    bytes_up: f64,
    bytes_down: f64,
    uploads: u64,
    insertions: u64,
    log: MetricsLog,
}

impl<'c> Engine<'c> {
    fn new(cfg: &'c SimConfig, data: Prepared) -> Result<Self> {
        let n = cfg.n_clients;
        let tiers = cfg.heterogeneity.assign(n);
        let clients: Vec<ClientRuntime> = tiers
            .iter()
            .enumerate()
            .map(|(i, &tier)| ClientRuntime {
                id: ClientId(i as u32),
                profile: cfg.bandwidth.profile(tier),
                status: ClientStatus::Waiting,
                dispatch_time: 0.0,
                dispatch_version: 0,
                in_flight: None,
                held: None,
                last_round: None,
                latest_upload: None,
            })
            .collect();
        // Fastest effective uplink; lowest id on ties.
        let reference = clients.iter().enumerate().fold(0, |best, (i, c)| {
            if c.profile.upload_rate() > clients[best].profile.upload_rate() {
                i
            } else {
                best
            }
        });

        let tracker = StageTracker::new(cfg.stage);
        let stage1 = cfg.gmr && !tracker.starts_in_stage2();
        let start: Vec<f64> = match (&cfg.initial_density, stage1) {
            (Some(init), _) => init.clone(),
            (None, true) => vec![1.0; n],
            (None, false) => tiers.iter().map(|&t| cfg.bandwidth.tiers[t].preset_density).collect(),
        };
        let densities = DensityVector::new(
            clients.iter().map(|c| c.id).zip(start).collect(),
            if stage1 { Stage::Stage1 } else { Stage::Stage2 },
        );
        let timing = cfg.effective_timing();
        let mut engine = Engine {
            cfg,
            timing,
            global: data.init.clone(),
            data,
            clients,
            reference,
            queue: BinaryHeap::new(),
            now: 0.0,
            version: 0,
            previous: None,
            buffer: Buffer::new(),
            densities,
            tracker,
            stage1_since: 0,
            esm: EsmState::new(cfg.esm),
            ordering: None,
            trained: None,
            epoch: 0,
            bytes_up: 0.0,
            bytes_down: 0.0,
            uploads: 0,
            insertions: 0,
            log: MetricsLog::new(n, cfg.aggregator.name(), cfg.seed),
        };
        engine.schedule(Event {
            time: 0.0,
            kind: EventKind::AggregationTick,
            client: 0,
        })?;
        Ok(engine)
    }

    fn schedule(&mut self, event: Event) -> Result<()> {
        if event.time.is_nan() || event.time < self.now {
            return Err(Error::Protocol(format!(
                "event at {} scheduled in the past (now {})",
                event.time, self.now
            )));
        }
        self.queue.push(Reverse(event));
        Ok(())
    }

    fn run<F: FnMut(&TickSnapshot<'_>)>(mut self, mut observer: F) -> Result<SimOutcome> {
        while let Some(Reverse(event)) = self.queue.pop() {
            if event.time > self.cfg.total_time {
                break;
            }
            self.now = event.time;
            match event.kind {
                EventKind::UploadComplete => self.on_upload(event.client as usize)?,
                EventKind::DownloadComplete => self.on_download(event.client as usize)?,
                EventKind::AggregationTick => self.on_tick(&mut observer)?,
            }
        }
        let importance = match &self.previous {
            Some(prev) => importance(&self.global, prev)?,
            None => magnitude_importance(&self.global),
        };
        Ok(SimOutcome {
            ticks: self.version,
            metrics: self.log,
            spec: self.data.spec,
            final_model: self.global,
            importance,
            final_densities: self.densities,
            uploads: self.uploads,
            buffer_insertions: self.insertions,
        })
    }

    fn on_download(&mut self, i: usize) -> Result<()> {
        let c = &mut self.clients[i];
        let after =
            c.in_flight.as_ref().map(|f| f.after_download).ok_or_else(|| {
                Error::Protocol(format!("client {} finished a download with nothing in flight", c.id))
            })?;
        // Training runs straight into the upload; neither has its own event.
        c.status = ClientStatus::Training;
        self.schedule(Event {
            time: self.now + after,
            kind: EventKind::UploadComplete,
            client: i as u32,
        })
    }

    fn on_upload(&mut self, i: usize) -> Result<()> {
        let now = self.now;
        let model_bytes = self.cfg.bandwidth.model_bytes();
        let c = &mut self.clients[i];
        let job = c
            .in_flight
            .take()
            .ok_or_else(|| Error::Protocol(format!("client {} uploaded with nothing in flight", c.id)))?;
        c.status = ClientStatus::Waiting;
        c.last_round = Some((now - c.dispatch_time, c.dispatch_version));
        c.latest_upload = Some(job.model.clone());
        self.bytes_up += job.rho * model_bytes;
        self.uploads += 1;
        let record = UploadRecord::new(c.id, job.model, job.mask, c.dispatch_version, now)?;
        if self.buffer.insert(record) {
            self.insertions += 1;
        }
        if self.timing == Timing::Barrier && self.clients.iter().all(|c| c.status == ClientStatus::Waiting) {
            self.schedule(Event {
                time: now,
                kind: EventKind::AggregationTick,
                client: 0,
            })?;
        }
        Ok(())
    }

    fn aggregate(&mut self) -> Result<ParamVector> {
        if let Some(max) = self.cfg.max_staleness {
            self.buffer.expire(self.version, max);
        }
        if self.buffer.is_empty() {
            return Ok(self.global.clone());
        }
        let n = self.cfg.n_clients;
        match self.cfg.aggregator {
            Aggregator::Ma => buff_mask_fedavg(&self.buffer, &self.global, self.version, self.cfg.alpha),
            Aggregator::Ga => aggregate_ga(&self.buffer, &self.global, self.version, n, self.cfg.server_lr),
            Aggregator::Fa => aggregate_fa(&self.buffer, self.version, n),
        }
    }

    fn sub_model_accuracies(&self) -> Result<Vec<f64>> {
        self.clients
            .iter()
            .map(|c| match &c.latest_upload {
                Some(w) => evaluate(w, &self.data.spec, &self.data.val).map(|(_, acc)| acc),
                None => Ok(f64::NAN),
            })
            .collect()
    }

    fn update_densities(&mut self, round: u64, global_acc: f64, subnet: &[f64]) -> Result<()> {
        match self.densities.stage {
            Stage::Stage1 => {
                // One stage-1 step needs a fresh round time from every client,
                // i.e. a round dispatched after the previous step.
                let fresh: Option<BTreeMap<ClientId, f64>> = self
                    .clients
                    .iter()
                    .map(|c| match c.last_round {
                        Some((t, v)) if v >= self.stage1_since => Some((c.id, t)),
                        _ => None,
                    })
                    .collect();
                let Some(times) = fresh else {
                    return Ok(());
                };
                let reference = times[&self.clients[self.reference].id];
                let obs = RoundTimeObs { times, reference };
                let next = stage1_update(&self.densities, &obs, self.cfg.lambda, self.cfg.rho_min)?;
                let done = self.tracker.observe(&self.densities, &next);
                self.densities = if done {
                    stage_transition(&next, &self.cfg.ladder)
                } else {
                    next
                };
                self.stage1_since = round;
            }
            Stage::Stage2 => {
                if !self.esm.is_eval_round(round) {
                    return Ok(());
                }
                let metrics: BTreeMap<ClientId, f64> = self
                    .clients
                    .iter()
                    .zip(subnet)
                    .filter_map(|(c, &acc)| {
                        let m = match self.cfg.esm_target {
                            EsmTarget::SubModel => acc,
                            EsmTarget::Global => global_acc,
                        };
                        m.is_finite().then_some((c.id, m))
                    })
                    .collect();
                self.densities = gmr_step(&self.densities, &mut self.esm, &metrics, round, &self.cfg.ladder)?;
            }
        }
        Ok(())
    }

    fn refresh_ordering(&mut self, round: u64) -> Result<()> {
        if self.ordering.is_some() && !refresh_due(round, self.cfg.k_rest)? {
            return Ok(());
        }
        let mut scores = match &self.previous {
            Some(prev) if self.ordering.is_some() => importance(&self.global, prev)?,
            _ => magnitude_importance(&self.global),
        };
        // A tick without any change gives all-zero scores; magnitude is the
        // only informative ranking left.
        if scores.as_slice().iter().all(|&s| s == 0.0) {
            scores = magnitude_importance(&self.global);
        }
        self.epoch = if self.ordering.is_some() { self.epoch + 1 } else { 0 };
        self.ordering = Some(ImportanceOrdering::from_scores(&scores, self.epoch));
        Ok(())
    }

    fn on_tick<F: FnMut(&TickSnapshot<'_>)>(&mut self, observer: &mut F) -> Result<()> {
        let aggregated = self.aggregate()?;
        if !self.cfg.buffer || self.timing == Timing::Barrier {
            self.buffer.clear();
        }
        self.previous = Some(std::mem::replace(&mut self.global, aggregated));
        self.version += 1;
        let round = self.version;

        let evaluate_now = round.is_multiple_of(self.cfg.eval_every) || round == 1;
        let esm_now = self.densities.stage == Stage::Stage2 && self.esm.is_eval_round(round);
        let (train_loss, val_acc) = if evaluate_now || esm_now {
            // Coordinates nobody trains still hold their initial values;
            // they are left out of the evaluated model.
            let model = match &self.trained {
                Some(m) if m.count_ones() < m.len() => self.global.masked(m)?,
                _ => self.global.clone(),
            };
            let (loss, _) = evaluate(&model, &self.data.spec, &self.data.train)?;
            let (_, acc) = evaluate(&model, &self.data.spec, &self.data.val)?;
            (loss, acc)
        } else {
            (f64::NAN, f64::NAN)
        };
        let subnet = if evaluate_now || esm_now {
            self.sub_model_accuracies()?
        } else {
            vec![f64::NAN; self.cfg.n_clients]
        };

        if self.cfg.gmr {
            self.update_densities(round, val_acc, &subnet)?;
        }
        self.refresh_ordering(round)?;
        let masks = self
            .ordering
            .as_ref()
            .expect("ordering built above")
            .extract(&self.densities.rho, round)?;
        let coverage = coverage_stats(&masks)?;
        let increments = if self.cfg.ims {
            Some(split(&self.global, &masks)?)
        } else {
            None
        };
        self.dispatch(round, &masks, increments.as_ref())?;
        self.trained = masks.widest().cloned();

        let row = MetricsRow {
            time_s: self.now,
            round,
            densities: self.densities.rho.values().copied().collect(),
            global_train_loss: train_loss,
            global_val_acc: val_acc,
            subnet_acc: subnet,
            a_dagger: coverage.a_dagger,
            b_dagger: coverage.b_dagger,
            min_gamma: coverage.min_gamma(),
            bytes_up_cum: self.bytes_up.round() as u64,
            bytes_down_cum: self.bytes_down.round() as u64,
        };
        observer(&TickSnapshot {
            round,
            time: self.now,
            model: &self.global,
            densities: &self.densities,
            masks: &masks,
            row: &row,
        });
        self.log.rows.push(row);

        if self.timing == Timing::Periodic {
            self.schedule(Event {
                time: round as f64 * self.cfg.delta_t,
                kind: EventKind::AggregationTick,
                client: 0,
            })?;
        }
        Ok(())
    }

    /// Bytes client `i` downloads for its next sub-model.
    /// Within one ordering epoch a larger density only adds coordinates, so
    /// a grown client fetches just the new increments (sparse, with indices).
    fn download_bytes(&self, i: usize, rho: f64, ims: bool) -> f64 {
        let a = self.cfg.bandwidth.model_bytes();
        if !ims {
            return rho * a;
        }
        let acc = self.cfg.bandwidth.accounting;
        let sparse = acc.per_coord() as f64 / acc.bytes_per_scalar as f64;
        match self.clients[i].held {
            Some((epoch, old_rho)) if epoch == self.epoch && rho > old_rho => (rho - old_rho) * a * sparse,
            Some((epoch, _)) if epoch == self.epoch && self.cfg.ims_mode == ImsMode::Optimistic => 0.0,
            _ => rho * a,
        }
    }

    fn dispatch(&mut self, round: u64, masks: &MaskSet, inc: Option<&IncrementSet>) -> Result<()> {
        let waiting: Vec<usize> = (0..self.clients.len())
            .filter(|&i| self.clients[i].status == ClientStatus::Waiting)
            .collect();
        let mut jobs = Vec::with_capacity(waiting.len());
        for &i in &waiting {
            let id = self.clients[i].id;
            let mask = masks
                .get(id)
                .ok_or_else(|| Error::Protocol(format!("no mask for client {id}")))?
                .clone();
            let w0 = match inc {
                Some(inc) => inc.reconstruct(id, masks.epoch)?,
                None => self.global.masked(&mask)?,
            };
            jobs.push((i, id, w0, mask));
        }

        let cfg = self.cfg;
        let data = &self.data;
        let trained: Vec<ParamVector> = jobs
            .par_iter()
            .map(|(i, id, w0, mask)| {
                let mut rng = training_rng(cfg.seed, *id, round);
                masked_sgd_steps(w0, mask, &data.spec, &data.shards[*i].data, &cfg.local, &mut rng)
            })
            .collect::<Result<_>>()?;

        for ((i, id, _, mask), model) in jobs.into_iter().zip(trained) {
            let rho = self.densities.get(id).expect("density for every client");
            let bytes = self.download_bytes(i, rho, inc.is_some());
            let mut rng = jitter_rng(cfg.seed, id, round);
            let t = round_time(&self.clients[i].profile, rho, bytes, cfg.local.steps, &mut rng)?;
            self.bytes_down += bytes;
            let c = &mut self.clients[i];
            c.status = ClientStatus::Downloading;
            c.dispatch_time = self.now;
            c.dispatch_version = round;
            c.held = Some((masks.epoch, rho));
            c.in_flight = Some(InFlight {
                model,
                mask,
                rho,
                after_download: t.compute + t.upload,
            });
            self.schedule(Event {
                time: self.now + t.download,
                kind: EventKind::DownloadComplete,
                client: i as u32,
            })?;
        }
        Ok(())
    }
}
