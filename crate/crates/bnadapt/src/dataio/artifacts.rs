//! Typed save/load for model artifacts over the BNAD container.
//!
//! Chunk naming is flat: `detector.l1.w`, `base.conv2`, `table.3.bn1.mean`
//! and so on. Loaders check shapes and reject missing or extra structure.

use super::container::{load_container, save_container, Chunk, ChunkMap};
use crate::basemodel::{BaseCnn, BnStats, BnTable, BN_CHANNELS, N_CLASSES};
use crate::corruptions::CorruptionLabel;
use crate::detector::{DenseLayer, DetectorModel, HIDDEN_1, HIDDEN_2};
use crate::error::{Error, Result};
use crate::numerics::{BnLayerState, Tensor};
use crate::spectrum::{ChannelMode, NaturalSpectrum};
use std::collections::BTreeMap;
use std::path::Path;

fn tensor_chunk(name: &str, t: &Tensor) -> Chunk {
    Chunk::new(name, t.shape().to_vec(), t.data().to_vec())
}

fn vec_chunk(name: &str, v: &[f32]) -> Chunk {
    Chunk::new(name, vec![v.len()], v.to_vec())
}

fn chunk_tensor(map: &ChunkMap, name: &str) -> Result<Tensor> {
    let c = map.get(name)?;
    Tensor::from_vec(c.shape.clone(), c.data.clone())
}

// ---- natural spectrum -------------------------------------------------------

fn spectrum_chunks(prefix: &str, eps: &NaturalSpectrum) -> Vec<Chunk> {
    let mode = match eps.mode() {
        ChannelMode::FirstChannel => 0.0,
        ChannelMode::MeanOverChannels => 1.0,
    };
    vec![
        tensor_chunk(&format!("{prefix}.grid"), eps.grid()),
        Chunk::scalar(format!("{prefix}.count"), eps.count() as f32),
        Chunk::scalar(format!("{prefix}.mode"), mode),
    ]
}

fn spectrum_from_chunks(prefix: &str, map: &ChunkMap) -> Result<NaturalSpectrum> {
    let grid = chunk_tensor(map, &format!("{prefix}.grid"))?;
    let count = map.scalar(&format!("{prefix}.count"))? as usize;
    let mode = match map.scalar(&format!("{prefix}.mode"))? as u32 {
        0 => ChannelMode::FirstChannel,
        1 => ChannelMode::MeanOverChannels,
        other => {
            return Err(Error::Malformed { detail: format!("unknown channel mode {other}") })
        }
    };
    NaturalSpectrum::from_parts(grid, count, mode)
}

pub fn save_spectrum(path: &Path, eps: &NaturalSpectrum) -> Result<()> {
    save_container(path, &spectrum_chunks("eps", eps))
}

pub fn load_spectrum(path: &Path) -> Result<NaturalSpectrum> {
    let map = ChunkMap::new(load_container(path)?);
    spectrum_from_chunks("eps", &map)
}

// ---- detector ---------------------------------------------------------------

/// The checkpoint bundles the reference spectrum the features were built
/// with; a detector is meaningless without it.
pub fn save_detector(path: &Path, model: &DetectorModel, eps: &NaturalSpectrum) -> Result<()> {
    let mut chunks = vec![
        tensor_chunk("detector.l1.w", &model.l1.w),
        vec_chunk("detector.l1.b", &model.l1.b),
        tensor_chunk("detector.l2.w", &model.l2.w),
        vec_chunk("detector.l2.b", &model.l2.b),
        tensor_chunk("detector.l3.w", &model.l3.w),
        vec_chunk("detector.l3.b", &model.l3.b),
    ];
    chunks.extend(spectrum_chunks("detector.eps", eps));
    save_container(path, &chunks)
}

pub fn load_detector(path: &Path) -> Result<(DetectorModel, NaturalSpectrum)> {
    let map = ChunkMap::new(load_container(path)?);
    let eps = spectrum_from_chunks("detector.eps", &map)?;
    let l1w = chunk_tensor(&map, "detector.l1.w")?;
    let in_dim = l1w.shape()[1];
    if l1w.shape()[0] != HIDDEN_1 {
        return Err(Error::Malformed {
            detail: format!("detector first layer width {} != {HIDDEN_1}", l1w.shape()[0]),
        });
    }
    let l2w = chunk_tensor(&map, "detector.l2.w")?;
    if l2w.shape() != [HIDDEN_2, HIDDEN_1] {
        return Err(Error::Malformed { detail: "detector second layer shape".into() });
    }
    let l3w = chunk_tensor(&map, "detector.l3.w")?;
    if l3w.shape()[1] != HIDDEN_2 {
        return Err(Error::Malformed { detail: "detector third layer shape".into() });
    }
    if eps.feature_len() != in_dim {
        return Err(Error::Malformed {
            detail: format!(
                "bundled spectrum implies {} inputs, layer has {in_dim}",
                eps.feature_len()
            ),
        });
    }
    let model = DetectorModel {
        l1: DenseLayer { w: l1w, b: map.get_shaped("detector.l1.b", &[HIDDEN_1])?.data.clone() },
        l2: DenseLayer { w: l2w, b: map.get_shaped("detector.l2.b", &[HIDDEN_2])?.data.clone() },
        l3: DenseLayer {
            b: map.get_shaped("detector.l3.b", &[l3w.shape()[0]])?.data.clone(),
            w: l3w,
        },
    };
    Ok((model, eps))
}

// ---- base model ----------------------------------------------------------------

pub fn save_base(path: &Path, model: &BaseCnn) -> Result<()> {
    let mut chunks = Vec::new();
    for (i, conv) in model.convs.iter().enumerate() {
        chunks.push(tensor_chunk(&format!("base.conv{}", i + 1), conv));
    }
    for (i, bn) in model.bn.iter().enumerate() {
        let p = format!("base.bn{}", i + 1);
        chunks.push(vec_chunk(&format!("{p}.mean"), &bn.mean));
        chunks.push(vec_chunk(&format!("{p}.var"), &bn.var));
        chunks.push(vec_chunk(&format!("{p}.gamma"), &bn.gamma));
        chunks.push(vec_chunk(&format!("{p}.beta"), &bn.beta));
        chunks.push(Chunk::scalar(format!("{p}.eps"), bn.eps));
    }
    chunks.push(tensor_chunk("base.fc.w", &model.fc_w));
    chunks.push(vec_chunk("base.fc.b", &model.fc_b));
    save_container(path, &chunks)
}

pub fn load_base(path: &Path) -> Result<BaseCnn> {
    let map = ChunkMap::new(load_container(path)?);
    let conv_shapes: [[usize; 4]; 4] =
        [[16, 3, 3, 3], [16, 16, 3, 3], [32, 16, 3, 3], [32, 32, 3, 3]];
    let mut convs = Vec::with_capacity(4);
    for (i, shape) in conv_shapes.iter().enumerate() {
        let t = chunk_tensor(&map, &format!("base.conv{}", i + 1))?;
        if t.shape() != shape {
            return Err(Error::Malformed {
                detail: format!("base.conv{} shape {:?}", i + 1, t.shape()),
            });
        }
        convs.push(t);
    }
    let mut bn = Vec::with_capacity(4);
    for (i, &c) in BN_CHANNELS.iter().enumerate() {
        let p = format!("base.bn{}", i + 1);
        let state = BnLayerState {
            mean: map.get_shaped(&format!("{p}.mean"), &[c])?.data.clone(),
            var: map.get_shaped(&format!("{p}.var"), &[c])?.data.clone(),
            gamma: map.get_shaped(&format!("{p}.gamma"), &[c])?.data.clone(),
            beta: map.get_shaped(&format!("{p}.beta"), &[c])?.data.clone(),
            eps: map.scalar(&format!("{p}.eps"))?,
        };
        state.validate()?;
        bn.push(state);
    }
    let fc_w = chunk_tensor(&map, "base.fc.w")?;
    if fc_w.shape() != [N_CLASSES, 32] {
        return Err(Error::Malformed { detail: format!("base.fc.w shape {:?}", fc_w.shape()) });
    }
    Ok(BaseCnn {
        convs: convs.try_into().expect("four conv layers"),
        bn: bn.try_into().expect("four bn layers"),
        fc_w,
        fc_b: map.get_shaped("base.fc.b", &[N_CLASSES])?.data.clone(),
    })
}

// ---- bn table ---------------------------------------------------------------------

pub fn save_bn_table(path: &Path, table: &BnTable) -> Result<()> {
    let mut chunks = Vec::new();
    let codes: Vec<f32> = table.labels().map(|l| l.code() as f32).collect();
    chunks.push(Chunk::new("table.labels", vec![codes.len()], codes));
    for (label, stats) in table.iter() {
        for (i, (mean, var)) in stats.layers.iter().enumerate() {
            let p = format!("table.{}.bn{}", label.code(), i + 1);
            chunks.push(vec_chunk(&format!("{p}.mean"), mean));
            chunks.push(vec_chunk(&format!("{p}.var"), var));
        }
    }
    save_container(path, &chunks)
}

pub fn load_bn_table(path: &Path) -> Result<BnTable> {
    let map = ChunkMap::new(load_container(path)?);
    let codes = map.get("table.labels")?.data.clone();
    let mut entries = BTreeMap::new();
    for code in codes {
        let label = CorruptionLabel::from_code(code as u8)?;
        let mut layers = Vec::with_capacity(BN_CHANNELS.len());
        for (i, &c) in BN_CHANNELS.iter().enumerate() {
            let p = format!("table.{}.bn{}", label.code(), i + 1);
            layers.push((
                map.get_shaped(&format!("{p}.mean"), &[c])?.data.clone(),
                map.get_shaped(&format!("{p}.var"), &[c])?.data.clone(),
            ));
        }
        entries.insert(label.code(), BnStats { layers });
    }
    BnTable::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basemodel::{estimate_bn, merge_bn};
    use crate::dataio::gen_synthetic;
    use crate::detector::init_detector;
    use crate::image::Image;
    use crate::spectrum::mean_amplitude;

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("bnadapt-test-{}-{name}", std::process::id()));
        p
    }

    fn sample_eps() -> NaturalSpectrum {
        let ds = gen_synthetic(4, 1);
        mean_amplitude(&ds.images, ChannelMode::FirstChannel).unwrap()
    }

    #[test]
    fn spectrum_roundtrips_bit_exactly() {
        let eps = sample_eps();
        let path = tmp("eps.bnad");
        save_spectrum(&path, &eps).unwrap();
        let back = load_spectrum(&path).unwrap();
        assert_eq!(eps.grid().data(), back.grid().data());
        assert_eq!(eps.count(), back.count());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn detector_roundtrips_bit_exactly() {
        let eps = sample_eps();
        let model = init_detector(eps.feature_len(), 12, 3);
        let path = tmp("det.bnad");
        save_detector(&path, &model, &eps).unwrap();
        let (back, eps_back) = load_detector(&path).unwrap();
        assert_eq!(model, back);
        assert_eq!(eps.grid().data(), eps_back.grid().data());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn base_model_roundtrips_bit_exactly() {
        let model = BaseCnn::init(9);
        let path = tmp("base.bnad");
        save_base(&path, &model).unwrap();
        let back = load_base(&path).unwrap();
        assert_eq!(model, back);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn bn_table_roundtrips_with_key_codes() {
        let model = BaseCnn::init(10);
        let ds = gen_synthetic(8, 11);
        let refs: Vec<&Image> = ds.images.iter().collect();
        let est = estimate_bn(&model, &refs).unwrap();
        let natural = model.bn_stats();
        let mut entries = BTreeMap::new();
        entries.insert(CorruptionLabel::Natural.code(), natural.clone());
        for label in CorruptionLabel::CORRUPTIONS {
            entries.insert(label.code(), merge_bn(&natural, &est, 1.0, 1.0).unwrap());
        }
        let table = BnTable::new(entries).unwrap();
        let path = tmp("table.bnad");
        save_bn_table(&path, &table).unwrap();
        let back = load_bn_table(&path).unwrap();
        assert_eq!(back.len(), 12);
        assert_eq!(table, back);
        let codes: Vec<u8> = back.labels().map(|l| l.code()).collect();
        assert_eq!(codes, (0..12).collect::<Vec<u8>>());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn corrupted_byte_fails_loading_any_artifact() {
        let model = BaseCnn::init(12);
        let path = tmp("corrupt.bnad");
        save_base(&path, &model).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_base(&path), Err(Error::CrcMismatch { .. })));
        std::fs::remove_file(&path).ok();
    }
}
