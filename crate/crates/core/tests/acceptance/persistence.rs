use softschema::datagen::{generate_dataset, Dataset, DatasetConfig, DatasetError, SceneSampler, DATASET_VERSION};
use softschema::models::{build_static_schema, Checkpoint, ModelError, Network, StaticSchemaConfig, TrainingMeta};
use softschema::render::RenderConfig;

use crate::learning::Shared;
use crate::Verdict;

pub fn round_trips(_: &mut Shared) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = DatasetConfig {
        batches: 2,
        ..Default::default()
    };
    cfg.scenes = SceneSampler::contact_rich();
    cfg.episode.frames = 30;
    cfg.episode.distractor = true;
    cfg.episode.render = RenderConfig::with_size(32);
    let ds = generate_dataset(&cfg).unwrap();
    let path = dir.path().join("d.sbsd");
    ds.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    let bytes = ds.to_bytes().unwrap();
    let dataset_exact = back == ds && back.to_bytes().unwrap() == bytes;

    let cut = bytes.len() - 7;
    let mut magic = bytes.clone();
    magic[0] = b'X';
    let mut version = bytes.clone();
    version[4..6].copy_from_slice(&(DATASET_VERSION + 1).to_le_bytes());
    let mut trailing = bytes.clone();
    trailing.push(0);
    let dataset_rejects = matches!(Dataset::from_bytes(&bytes[..cut]), Err(DatasetError::Truncated { .. }))
        && matches!(Dataset::from_bytes(&magic), Err(DatasetError::Magic))
        && matches!(Dataset::from_bytes(&version), Err(DatasetError::Version { .. }))
        && matches!(Dataset::from_bytes(&trailing), Err(DatasetError::Trailing(1)));

    let spec = build_static_schema(&StaticSchemaConfig::for_size(32)).unwrap();
    let ck = Checkpoint {
        network: Network::init(spec, 4).unwrap(),
        meta: TrainingMeta {
            seed: 4,
            epochs: 2,
            final_losses: vec![0.3, 0.1],
            norm: Some(ds.header.stats.clone()),
            masked_inputs: vec![],
        },
    };
    let ck_path = dir.path().join("m.sbsm");
    ck.save(&ck_path).unwrap();
    let ck_bytes = ck.to_bytes().unwrap();
    let loaded = Checkpoint::load(&ck_path).unwrap();
    let checkpoint_exact = loaded == ck && loaded.to_bytes().unwrap() == ck_bytes;

    let mut bad = ck_bytes.clone();
    bad[0] = b'X';
    let mut extra = ck_bytes.clone();
    extra.push(1);
    let checkpoint_rejects = matches!(Checkpoint::from_bytes(&bad), Err(ModelError::Format(_)))
        && matches!(
            Checkpoint::from_bytes(&ck_bytes[..ck_bytes.len() - 3]),
            Err(ModelError::Truncated { .. })
        )
        && matches!(Checkpoint::from_bytes(&extra), Err(ModelError::Format(_)));

    Verdict::new(
        dataset_exact && dataset_rejects && checkpoint_exact && checkpoint_rejects,
        format!(
            "dataset round trip exact {dataset_exact}, damaged datasets rejected by class {dataset_rejects}, \
             checkpoint round trip exact {checkpoint_exact}, damaged checkpoints rejected by class {checkpoint_rejects}"
        ),
    )
}
