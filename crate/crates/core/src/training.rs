//! Two-optimizer training loop, augmentation and validation.
//!
//! One backward pass of `ℒ_SS + ℒ_F` per step. Optimizer A steps every
//! backbone parameter (so shared residual-branch weights see both losses),
//! optimizer B steps the auxiliary decoder.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::imaging::{Plane, Rgb, SourcePair, YCbCr};
use crate::losses::{loss_total, BatchMasks, LossBundle, LossConfig, LossInputs};
use crate::metrics::MetricReport;
use crate::network::{BnMode, ForwardOptions, Group, Model, ModelConfig};
use crate::optim::{Adam, AdamConfig, StepDecay};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub schedule: StepDecay,
    pub adam: AdamConfig,
    pub batch: usize,
    /// Side of the square random crop.
    pub crop: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Cut the decoder's input from the graph so `ℒ_SS` reaches only the
    /// decoder.
    pub block_lss_backbone: bool,
    pub model: ModelConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: StepDecay::default(),
            adam: AdamConfig::default(),
            batch: 16,
            crop: 128,
            epochs: 60,
            seed: 0,
            block_lss_backbone: false,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if self.crop == 0 {
            return Err(Error::Config("crop must be at least 1".into()));
        }
        if !(self.schedule.lr0 > 0.0 && self.schedule.lr0.is_finite()) {
            return Err(Error::Config("lr0 must be positive".into()));
        }
        if !(self.schedule.factor > 0.0 && self.schedule.factor <= 1.0) {
            return Err(Error::Config("lr decay factor must lie in (0, 1]".into()));
        }
        self.model.validate()?;
        self.loss.validate()
    }
}

fn crop_plane(p: &Plane, y0: usize, x0: usize, size: usize) -> Plane {
    Plane::from_fn(size, size, |y, x| p.at(y0 + y, x0 + x))
}

/// Top-left corner of a uniformly drawn `crop×crop` window.
pub fn crop_origin(h: usize, w: usize, crop: usize, rng: &mut impl Rng) -> Result<(usize, usize)> {
    if crop > h || crop > w {
        return Err(Error::CropTooLarge { crop, h, w });
    }
    Ok((rng.random_range(0..=h - crop), rng.random_range(0..=w - crop)))
}

/// The same random window cut from every plane of `pair`.
pub fn augment_crop(pair: &SourcePair, crop: usize, rng: &mut impl Rng) -> Result<SourcePair> {
    let (h, w) = pair.dims();
    let (y0, x0) = crop_origin(h, w, crop, rng)?;
    let c = |p: &Plane| crop_plane(p, y0, x0, crop);
    Ok(SourcePair {
        ir: c(&pair.ir),
        vis_rgb: Rgb { r: c(&pair.vis_rgb.r), g: c(&pair.vis_rgb.g), b: c(&pair.vis_rgb.b) },
        vis: YCbCr { y: c(&pair.vis.y), cb: c(&pair.vis.cb), cr: c(&pair.vis.cr) },
    })
}

/// One logged optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub losses: LossBundle,
}

/// Everything besides the model needed to resume training exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub epoch: usize,
    pub step: u64,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    pub adam_a: Adam,
    pub adam_b: Adam,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    adam_a: Adam,
    adam_b: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
    step: u64,
}

fn group_indices(model: &Model, group: Group) -> Vec<usize> {
    model.params().iter().enumerate().filter(|(_, p)| p.group == group).map(|(i, _)| i).collect()
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model.clone(), config.seed)?;
        let values: Vec<&Tensor> = model.params().iter().map(|p| &p.value).collect();
        let adam_a = Adam::new(config.adam, group_indices(&model, Group::Backbone), &values);
        let adam_b = Adam::new(config.adam, group_indices(&model, Group::Decoder), &values);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a);
        Ok(Trainer { config, model, adam_a, adam_b, rng, epoch: 0, step: 0 })
    }

    /// Rebuild a trainer from a saved model and state.
    pub fn resume(config: TrainConfig, model: Model, state: TrainerState) -> Result<Self> {
        config.validate()?;
        if model.config() != &config.model {
            return Err(Error::Config("checkpoint model configuration differs from the run configuration".into()));
        }
        let n = model.params().len();
        for adam in [&state.adam_a, &state.adam_b] {
            if adam.indices.iter().any(|&i| i >= n) || adam.m.len() != adam.indices.len() {
                return Err(Error::Config("optimizer state does not match the model".into()));
            }
        }
        let mut rng = ChaCha8Rng::from_seed(state.rng_seed);
        rng.set_word_pos(state.rng_word_pos);
        Ok(Trainer {
            config,
            model,
            adam_a: state.adam_a,
            adam_b: state.adam_b,
            rng,
            epoch: state.epoch,
            step: state.step,
        })
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            epoch: self.epoch,
            step: self.step,
            rng_seed: self.rng.get_seed(),
            rng_word_pos: self.rng.get_word_pos(),
            adam_a: self.adam_a.clone(),
            adam_b: self.adam_b.clone(),
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.config.schedule.lr(self.epoch)
    }

    /// One optimizer step on an already-cropped batch. Parameters are left
    /// untouched when any loss component is non-finite.
    pub fn step_on(&mut self, batch: &[SourcePair]) -> Result<StepRecord> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let irs: Vec<&Plane> = batch.iter().map(|p| &p.ir).collect();
        let viss: Vec<&Plane> = batch.iter().map(|p| &p.vis.y).collect();
        let ir_t = Plane::stack(&irs)?;
        let vis_t = Plane::stack(&viss)?;
        let masks = BatchMasks::compute(&ir_t, &vis_t)?;

        let mut g = Graph::new();
        let bound = self.model.bind(&mut g);
        let ir = g.constant(ir_t);
        let vis_y = g.constant(vis_t);
        let opts = ForwardOptions {
            bn: BnMode::Train,
            with_decoder: true,
            detach_decoder_input: self.config.block_lss_backbone,
        };
        let out = self.model.forward(&mut g, &bound, ir, vis_y, opts)?;
        let losses = loss_total(
            &mut g,
            LossInputs { fused: out.fused, aux_residual: out.aux_residual, ir, vis_y, masks: &masks },
            &self.config.loss,
        )?;
        let grads = g.backward(losses.vars.l_total);
        let grads = bound.collect(&grads, &self.model);
        if grads.iter().any(|t| !t.all_finite()) {
            return Err(Error::NonFinite("parameter gradient"));
        }

        let lr = self.lr();
        let mut params: Vec<&mut Tensor> = self.model.params_mut().iter_mut().map(|p| &mut p.value).collect();
        self.adam_a.step(&mut params, &grads, lr)?;
        self.adam_b.step(&mut params, &grads, lr)?;
        self.model.apply_bn_updates(&out.bn_updates);
        self.step += 1;
        Ok(StepRecord { step: self.step, epoch: self.epoch, lr, losses: losses.bundle })
    }

    /// One pass over `data` in a shuffled order with fresh random crops.
    /// The final batch may be smaller than `batch`.
    pub fn run_epoch(&mut self, data: &[SourcePair], mut on_step: impl FnMut(&StepRecord)) -> Result<Vec<StepRecord>> {
        if data.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut records = Vec::new();
        for chunk in order.chunks(self.config.batch) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                batch.push(augment_crop(&data[i], self.config.crop, &mut self.rng)?);
            }
            let rec = self.step_on(&batch)?;
            on_step(&rec);
            records.push(rec);
        }
        self.epoch += 1;
        Ok(records)
    }

    /// Run whole epochs until at least `steps` optimizer steps are done.
    pub fn run_steps(&mut self, data: &[SourcePair], steps: u64, mut on_step: impl FnMut(&StepRecord)) -> Result<Vec<StepRecord>> {
        let mut out = Vec::new();
        while self.step < steps {
            out.extend(self.run_epoch(data, &mut on_step)?);
        }
        Ok(out)
    }
}

/// Pairs whose size admits the configured crop; the rest are returned
/// with a reason.
pub fn split_croppable(data: Vec<SourcePair>, crop: usize) -> (Vec<SourcePair>, Vec<(usize, String)>) {
    let mut keep = Vec::new();
    let mut rejects = Vec::new();
    for (i, p) in data.into_iter().enumerate() {
        let (h, w) = p.dims();
        if crop > h || crop > w {
            rejects.push((i, alloc::format!("{}", Error::CropTooLarge { crop, h, w })));
        } else {
            keep.push(p);
        }
    }
    (keep, rejects)
}

/// Per-pair metrics of the fused outputs and their mean.
pub fn validate(model: &Model, pairs: &[SourcePair]) -> Result<(Vec<MetricReport>, MetricReport)> {
    let mut reports = Vec::with_capacity(pairs.len());
    for p in pairs {
        let fused = model.fuse_pair(p)?;
        reports.push(MetricReport::compute(&fused.fused_y, &p.ir, &p.vis.y)?);
    }
    let mean = MetricReport::mean(&reports)?;
    Ok((reports, mean))
}
