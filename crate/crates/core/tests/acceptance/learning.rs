use std::collections::HashMap;
use std::time::Instant;

use softschema::analysis::{
    ablate_inputs, compare_architectures, evaluate, lag_scan, latent_segmentation, noise_filter_check, percentile,
    permutation_baseline, CompareConfig, LagSignal, MaskClass, NoiseFilter, Predictor,
};
use softschema::datagen::{generate_dataset, Dataset, DatasetConfig, SceneSampler, Split};
use softschema::models::TrainConfig;
use softschema::render::RenderConfig;
use softschema::training::{train_model, Architecture, ModelConfig};

use crate::Verdict;

const DESK_EPOCHS: usize = 16;
const DELAY: usize = 10;

/// Models trained by one criterion and reused by a later one.
#[derive(Default)]
pub struct Shared {
    desk: Option<(DatasetConfig, Predictor)>,
    distractor: Option<(Dataset, Predictor)>,
    scene: Option<(Dataset, Predictor)>,
}

fn progress(stage: &str) -> impl FnMut(&softschema::training::EpochLog) + '_ {
    move |e| eprintln!("  {stage}: {} epoch {} loss {:.6}", e.stage, e.epoch, e.loss)
}

fn static_model(masked: Vec<usize>) -> ModelConfig {
    ModelConfig {
        masked_inputs: masked,
        ..Default::default()
    }
}

fn train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        lr: 2e-3,
        ..Default::default()
    }
}

fn desk_config() -> DatasetConfig {
    let mut cfg = DatasetConfig::default();
    cfg.episode.render = RenderConfig::with_size(64);
    cfg
}

fn desk(shared: &mut Shared) -> Result<(&DatasetConfig, &Predictor), String> {
    if shared.desk.is_none() {
        let cfg = desk_config();
        let ds = generate_dataset(&cfg).map_err(|e| e.to_string())?;
        let pred = train_model(&ds, &static_model(vec![]), &train_cfg(DESK_EPOCHS), progress("desk"))
            .map_err(|e| e.to_string())?;
        shared.desk = Some((cfg, pred));
    }
    let (cfg, pred) = shared.desk.as_ref().unwrap();
    Ok((cfg, pred))
}

pub fn training_sanity(shared: &mut Shared) -> Verdict {
    let started = Instant::now();
    let cfg = desk_config();
    let ds = generate_dataset(&cfg).unwrap();
    let contact = ds.batches.iter().flatten().filter(|f| f.contact).count();
    let pred = match train_model(&ds, &static_model(vec![]), &train_cfg(DESK_EPOCHS), progress("desk")) {
        Ok(p) => p,
        Err(e) => return Verdict::new(false, format!("training failed: {e}")),
    };
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    let model = evaluate(&pred, &ds, Split::Test).unwrap().mean;
    let baseline = evaluate(&Predictor::mean_image(&ds, Split::Train), &ds, Split::Test).unwrap().mean;
    let ratio = model / baseline;
    shared.desk = Some((cfg, pred));
    Verdict::new(
        ratio <= 0.2 && minutes <= 30.0 && contact == 0,
        format!(
            "64x64, 12x600 frames, {contact} contact frames: test MSE {model:.5} vs mean-image {baseline:.5}, \
             ratio {ratio:.3} (need <= 0.2) in {minutes:.1} min (limit 30)"
        ),
    )
}

pub fn tactile_necessity(_: &mut Shared) -> Verdict {
    let mut cfg = DatasetConfig {
        batches: 12,
        test_batches: 2,
        scene_seed: 5,
        resample_scenes: false,
        scenes: SceneSampler {
            objects: [3, 3],
            pegs: [0, 0],
            ..SceneSampler::default()
        },
        ..Default::default()
    };
    cfg.episode.frames = 400;
    cfg.episode.render = RenderConfig::with_size(32);
    let ds = generate_dataset(&cfg).unwrap();
    let score = |masked: Vec<usize>, stage: &str| -> Result<(f64, usize), String> {
        let pred = train_model(&ds, &static_model(masked), &train_cfg(12), progress(stage)).map_err(|e| e.to_string())?;
        let r = evaluate(&pred, &ds, Split::Test).map_err(|e| e.to_string())?;
        r.contact_mean
            .map(|m| (m, r.contact_frames))
            .ok_or_else(|| "no contact frames in the test split".to_string())
    };
    let (with, frames) = match score(vec![], "with tactile") {
        Ok(v) => v,
        Err(e) => return Verdict::new(false, e),
    };
    let (without, _) = match score((3..9).collect(), "tactile ablated") {
        Ok(v) => v,
        Err(e) => return Verdict::new(false, e),
    };
    let ratio = with / without;
    Verdict::new(
        ratio <= 0.8,
        format!(
            "contact-frame test MSE {with:.5} with tactile vs {without:.5} mean-ablated over {frames} frames, \
             ratio {ratio:.3} (need <= 0.8)"
        ),
    )
}

fn distractor(shared: &mut Shared) -> Result<&(Dataset, Predictor), String> {
    if shared.distractor.is_none() {
        let mut cfg = DatasetConfig {
            batches: 8,
            scene_seed: 2,
            ..Default::default()
        };
        cfg.episode.frames = 300;
        cfg.episode.distractor = true;
        cfg.episode.motion.sigma[2] = 0.0;
        cfg.episode.render = RenderConfig::with_size(32);
        let ds = generate_dataset(&cfg).map_err(|e| e.to_string())?;
        let pred =
            train_model(&ds, &static_model(vec![]), &train_cfg(10), progress("distractor")).map_err(|e| e.to_string())?;
        shared.distractor = Some((ds, pred));
    }
    Ok(shared.distractor.as_ref().unwrap())
}

pub fn noise_filtering(shared: &mut Shared) -> Verdict {
    let (ds, pred) = match distractor(shared) {
        Ok(v) => v,
        Err(e) => return Verdict::new(false, e),
    };
    match noise_filter_check(pred, ds, Split::Train) {
        Ok(NoiseFilter::Ratio {
            ratio,
            pixels,
            ..
        }) => Verdict::new(
            ratio < 0.2,
            format!("prediction/truth temporal variance in {pixels} distractor-only pixels: {ratio:.4} (need < 0.2)"),
        ),
        Ok(NoiseFilter::NoDistractor) => Verdict::new(false, "no distractor-only pixels in the training split"),
        Err(e) => Verdict::new(false, e.to_string()),
    }
}

pub fn lag_recovery(shared: &mut Shared) -> Verdict {
    let (cfg, pred) = match desk(shared) {
        Ok(v) => v,
        Err(e) => return Verdict::new(false, e),
    };
    let mut delayed = cfg.clone();
    delayed.batches = 3;
    delayed.test_batches = 1;
    delayed.episode.delay = DELAY;
    let ds = generate_dataset(&delayed).unwrap();
    let lags: Vec<usize> = (0..=20).collect();
    let action = lag_scan(pred, &ds, Split::All, LagSignal::Action, &lags).unwrap();
    let tactile = lag_scan(pred, &ds, Split::All, LagSignal::Tactile, &[0, 20]).unwrap();
    let best = action.argmin().unwrap();
    let (t0, t20) = (tactile.mse_at(0).unwrap(), tactile.mse_at(20).unwrap());
    let curve: Vec<String> = action.points.iter().step_by(2).map(|p| format!("{}:{:.5}", p.lag, p.mse)).collect();
    Verdict::new(
        (8..=12).contains(&best) && t20 >= t0,
        format!(
            "d = {DELAY}: action-lag argmin {best} (need 8..=12) [{}]; tactile MSE lag 20 {t20:.5} vs lag 0 {t0:.5}",
            curve.join(" ")
        ),
    )
}

pub fn ablation_report(shared: &mut Shared) -> Verdict {
    let (ds, pred) = match distractor(shared) {
        Ok(v) => v,
        Err(e) => return Verdict::new(false, e),
    };
    let report = ablate_inputs(pred, ds, Split::Train).unwrap();
    let constant: Vec<usize> = (0..9).filter(|&i| ds.header.stats.std[i] == 0.0).collect();
    let zero = !constant.is_empty() && constant.iter().all(|&i| report.deltas[i] == 0.0);
    let min = report.deltas.iter().cloned().fold(f64::INFINITY, f64::min);
    let deltas: Vec<String> = report.deltas.iter().map(|d| format!("{d:.2e}")).collect();
    Verdict::new(
        report.deltas.len() == 9 && zero && min >= -1e-6,
        format!(
            "9 deltas [{}]; constant channels {constant:?} exactly 0: {zero}; min {min:.2e} (need >= -1e-6)",
            deltas.join(", ")
        ),
    )
}

fn scene(shared: &mut Shared) -> Result<&(Dataset, Predictor), String> {
    if shared.scene.is_none() {
        let mut cfg = DatasetConfig {
            batches: 12,
            test_batches: 2,
            scene_seed: 9,
            scenes: SceneSampler::contact_rich(),
            ..Default::default()
        };
        cfg.episode.frames = 300;
        cfg.episode.render = RenderConfig::with_size(32);
        let ds = generate_dataset(&cfg).map_err(|e| e.to_string())?;
        let model = ModelConfig {
            architecture: Architecture::SceneConditioned,
            ..Default::default()
        };
        let pred = train_model(&ds, &model, &train_cfg(16), progress("scene")).map_err(|e| e.to_string())?;
        shared.scene = Some((ds, pred));
    }
    Ok(shared.scene.as_ref().unwrap())
}

fn first_contacts(ds: &Dataset) -> HashMap<usize, usize> {
    ds.batches
        .iter()
        .enumerate()
        .filter_map(|(b, frames)| frames.iter().position(|f| f.contact).map(|t| (b, t)))
        .collect()
}

pub fn scene_prediction(shared: &mut Shared) -> Verdict {
    let (ds, pred) = match scene(shared) {
        Ok(v) => v,
        Err(e) => return Verdict::new(false, e),
    };
    let first = first_contacts(ds);
    let after = |f: &softschema::analysis::FrameError| first.get(&f.batch).is_some_and(|&t0| f.t > t0);
    let model = evaluate(pred, ds, Split::Test).unwrap();
    let initial = evaluate(&Predictor::Conditioning, ds, Split::Test).unwrap();
    let n = model.frames.iter().filter(|f| after(f)).count();
    match (model.mean_where(after), initial.mean_where(after)) {
        (Some(m), Some(c)) => Verdict::new(
            m <= 0.5 * c,
            format!(
                "{n} held-out frames after first contact: MSE {m:.5} vs conditioning image {c:.5}, ratio {:.3} (need <= 0.5)",
                m / c
            ),
        ),
        _ => Verdict::new(false, "no held-out frames after first contact"),
    }
}

pub fn segmentation(shared: &mut Shared) -> Verdict {
    let (ds, pred) = match scene(shared) {
        Ok(v) => v,
        Err(e) => return Verdict::new(false, e),
    };
    let Some(ck) = pred.checkpoint() else {
        return Verdict::new(false, "no network");
    };
    let spec = &ck.network.spec;
    let Some(idx) = spec.penultimate_upsampling_activation() else {
        return Verdict::new(false, "no upsampling layers");
    };
    let layer = spec.layers[idx].name.clone();
    let batch = ds.batch_indices(Split::Test)[0];
    let t = ds.batches[batch].len() - 1;
    let report = latent_segmentation(pred, ds, batch, t, &layer).unwrap();
    let (channel, best) = report.best_for(MaskClass::Object);
    let baseline = permutation_baseline(&report, &ds.frame(batch, t).image, MaskClass::Object, 100, 0);
    let p95 = percentile(&baseline, 95.0);
    Verdict::new(
        best > p95,
        format!("layer {layer}, test batch {batch} frame {t}: object IoU {best:.3} (channel {channel}) vs permutation p95 {p95:.3}"),
    )
}

pub fn comparison(_: &mut Shared) -> Verdict {
    let mut cfg = DatasetConfig {
        batches: 4,
        scene_seed: 12,
        scenes: SceneSampler::contact_rich(),
        ..Default::default()
    };
    cfg.episode.frames = 150;
    cfg.episode.render = RenderConfig::with_size(32);
    let ds = generate_dataset(&cfg).unwrap();
    let cc = CompareConfig {
        train: train_cfg(3),
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let cmp = match compare_architectures(&ds, &cc, Some(dir.path()), |l| eprintln!("  compare: {l}")) {
        Ok(c) => c,
        Err(e) => return Verdict::new(false, e.to_string()),
    };
    let paired = cmp.scene_conditioned.frames.len() == cmp.recurrent.frames.len()
        && cmp
            .scene_conditioned
            .frames
            .iter()
            .zip(&cmp.recurrent.frames)
            .all(|(a, b)| (a.batch, a.t) == (b.batch, b.t));
    let files = ["comparison.csv", "comparison.png", "comparison.json"]
        .iter()
        .all(|f| dir.path().join(f).exists());
    Verdict::new(
        paired && files && !cmp.scene_conditioned.frames.is_empty(),
        format!(
            "paired reports over {} frames, files written {files}; observed: scene-conditioned {:.5}, recurrent {:.5}, lower error {}",
            cmp.scene_conditioned.frames.len(),
            cmp.scene_conditioned.mean,
            cmp.recurrent.mean,
            cmp.lower_error
        ),
    )
}
