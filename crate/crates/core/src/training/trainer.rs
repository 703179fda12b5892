use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AttributeMask, Dataset, Sample};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig};
use crate::tensor::{Graph, Tensor, Var};
use crate::training::itm::make_itm_pairs;
use crate::training::model::{infer, Bound, Model, ModelConfig, Strategy};
use crate::training::optim::{early_stop, lr_at, rmsprop_step, RmsPropState};
use crate::training::TrainConfig;

/// Captions and labels for the matching task of one batch.
#[derive(Clone, Debug)]
pub struct ItmBatch {
    pub image_index: Vec<usize>,
    pub captions: Tensor,
    pub y_match: Vec<u8>,
}

/// Everything one optimizer step consumes.
#[derive(Clone, Debug)]
pub struct BatchInputs {
    pub images: Tensor,
    pub texts: Tensor,
    pub labels: Vec<usize>,
    pub itm: Option<ItmBatch>,
}

pub fn component_names(strategy: Strategy) -> &'static [&'static str] {
    match strategy {
        Strategy::Baseline => &["classification"],
        Strategy::Itm => &["itm_match", "classification"],
        Strategy::Fusion => &[
            "cls_generated_text",
            "cls_real_text",
            "dist_text",
            "dist_fused",
            "dist_output",
        ],
    }
}

pub fn component_weights(strategy: Strategy, loss: &LossConfig) -> Vec<f64> {
    match strategy {
        Strategy::Baseline => vec![1.0],
        Strategy::Itm => loss.itm_weights.to_vec(),
        Strategy::Fusion => loss.fusion_weights.to_vec(),
    }
}

/// Per-batch loss terms, in [`component_names`] order.
pub fn batch_losses<'g>(m: &Bound<'g, '_>, strategy: Strategy, batch: &BatchInputs, loss: &LossConfig) -> Result<Vec<Var<'g>>> {
    let graph = m.params.get("classifier.weight")?.graph();
    let imgfeat = m.image_features(graph.constant(batch.images.clone()))?;
    match strategy {
        Strategy::Baseline => {
            let logits = m.classify(imgfeat)?;
            Ok(vec![losses::classification_loss_logits(logits, &batch.labels, loss)?])
        }
        Strategy::Itm => {
            let itm = batch
                .itm
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("ITM batch without caption pairs".into()))?;
            let textfeat = m.text_features(graph.constant(itm.captions.clone()))?;
            let paired = imgfeat.select_rows(&itm.image_index)?;
            let match_logits = m.itm_logits(paired, textfeat)?;
            let match_loss = losses::binary_classification_loss(match_logits, &itm.y_match, loss)?;
            let class_loss = losses::classification_loss_logits(m.classify(imgfeat)?, &batch.labels, loss)?;
            Ok(vec![match_loss, class_loss])
        }
        Strategy::Fusion => {
            let textfeat = m.text_features(graph.constant(batch.texts.clone()))?;
            let newtextfeat = m.generate_text(imgfeat)?;
            let imagetextfeat = m.fuse(imgfeat, textfeat)?;
            let imagenewtextfeat = m.fuse(imgfeat, newtextfeat)?;
            let output = m.classify(imagetextfeat)?;
            let newoutput = m.classify(imagenewtextfeat)?;
            Ok(vec![
                losses::classification_loss_logits(newoutput, &batch.labels, loss)?,
                losses::classification_loss_logits(output, &batch.labels, loss)?,
                losses::info_nce_batch(textfeat, newtextfeat, loss.distance_temperature(0))?,
                losses::info_nce_batch(imagetextfeat, imagenewtextfeat, loss.distance_temperature(1))?,
                losses::info_nce_batch(output, newoutput, loss.distance_temperature(2))?,
            ])
        }
    }
}

pub fn weighted_total<'g>(terms: &[Var<'g>], weights: &[f64]) -> Result<Var<'g>> {
    let mut total = terms[0].scale(weights[0])?;
    for (t, &w) in terms.iter().zip(weights).skip(1) {
        total = total.add(t.scale(w)?)?;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub name: String,
    pub weight: f64,
    /// Sample-weighted mean over the epoch's batches.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean of the per-batch weighted totals.
    pub total_loss: f64,
    pub components: Vec<LossTerm>,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

impl EpochRecord {
    /// `Σ weight · value` over the logged components.
    pub fn recomputed_total(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.value).sum()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Builds the inputs of one batch. Text passes through `mask`.
pub fn assemble_batch(
    dataset: &Dataset,
    indices: &[usize],
    strategy: Strategy,
    mask: &AttributeMask,
    rng: &mut ChaCha8Rng,
) -> Result<BatchInputs> {
    let header = &dataset.header;
    let samples: Vec<&Sample> = indices.iter().map(|&i| &dataset.samples[i]).collect();
    let texts: Vec<f64> = samples.iter().flat_map(|s| mask.apply(&s.text_attributes)).collect();
    let itm = if strategy == Strategy::Itm {
        let pairs = make_itm_pairs(header, &samples, rng)?;
        let captions: Vec<f64> = pairs.iter().flat_map(|p| mask.apply(&p.caption)).collect();
        Some(ItmBatch {
            image_index: pairs.iter().map(|p| p.image_index).collect(),
            captions: Tensor::new(&[pairs.len(), header.d_txt], captions)?,
            y_match: pairs.iter().map(|p| p.y_match).collect(),
        })
    } else {
        None
    };
    Ok(BatchInputs {
        images: dataset.image_matrix(indices)?,
        texts: Tensor::new(&[indices.len(), header.d_txt], texts)?,
        labels: dataset.labels(indices),
        itm,
    })
}

/// Percent of samples whose image-only prediction matches the label.
pub fn accuracy(model: &Model, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    let preds = infer(model, &dataset.all_images()?)?;
    let correct = preds
        .iter()
        .zip(&dataset.samples)
        .filter(|(p, s)| **p == s.class_label)
        .count();
    Ok(100.0 * correct as f64 / dataset.len() as f64)
}

/// Shared loop for every strategy: one RMSprop step per batch, validation
/// accuracy after each epoch, best-validation parameters returned.
pub fn train(strategy: Strategy, dataset: &Dataset, valset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if valset.header.d_img != dataset.header.d_img || valset.header.d_txt != dataset.header.d_txt {
        return Err(Error::Dimension {
            context: "validation set".into(),
            expected: dataset.header.d_img,
            found: valset.header.d_img,
        });
    }
    let mask = config.attribute_mask(&dataset.header)?;
    let model_config = ModelConfig::new(&dataset.header, &config.arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::init(strategy, model_config, &mut rng)?;
    let names = component_names(strategy);
    let weights = component_weights(strategy, &config.loss);

    let mut state = RmsPropState::default();
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, config)?;
        order.shuffle(&mut rng);
        let mut sums = vec![0.0; names.len()];
        let mut total_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = assemble_batch(dataset, chunk, strategy, &mask, &mut rng)?;
            let fault = |e: Error| match e {
                Error::NumericFault(m) => Error::NumericFault(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            };
            let graph = Graph::new();
            let bound = model.bind(&graph, true);
            let terms = batch_losses(&bound, strategy, &batch, &config.loss).map_err(fault)?;
            let total = weighted_total(&terms, &weights).map_err(fault)?;
            graph.backward(total).map_err(fault)?;
            let grads = bound.params.grads();
            rmsprop_step(&mut model.params, &grads, &mut state, lr, config).map_err(fault)?;

            let n = chunk.len() as f64;
            for (s, t) in sums.iter_mut().zip(&terms) {
                *s += n * t.item();
            }
            total_sum += n * total.item();
        }
        let n = dataset.len() as f64;
        let record = EpochRecord {
            epoch,
            lr,
            total_loss: total_sum / n,
            components: names
                .iter()
                .zip(&weights)
                .zip(&sums)
                .map(|((name, &weight), s)| LossTerm {
                    name: name.to_string(),
                    weight,
                    value: s / n,
                })
                .collect(),
            train_accuracy: accuracy(&model, dataset)?,
            val_accuracy: accuracy(&model, valset)?,
        };
        if best.as_ref().is_none_or(|(acc, _, _)| record.val_accuracy > *acc) {
            best = Some((record.val_accuracy, epoch, model.clone()));
        }
        history.push(record);
        let monitored: Vec<f64> = history.iter().map(|r| r.val_accuracy).collect();
        if epoch + 1 < config.epochs && early_stop(&monitored, config.early_stop_patience) {
            stopped_early = true;
            break;
        }
    }

    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        stopped_early,
    })
}

pub fn train_baseline(dataset: &Dataset, valset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train(Strategy::Baseline, dataset, valset, config)
}

pub fn train_itm(dataset: &Dataset, valset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train(Strategy::Itm, dataset, valset, config)
}

pub fn train_fusion(dataset: &Dataset, valset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train(Strategy::Fusion, dataset, valset, config)
}

/// One JSON record per epoch.
pub fn write_history<W: Write>(history: &[EpochRecord], w: &mut W) -> Result<()> {
    for r in history {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_history(history, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
