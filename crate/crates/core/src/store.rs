//! Model checkpoints, embedding tables and resumable joint-training state.
//!
//! Every checkpoint is a directory holding `meta.json` and one flat
//! little-endian array per tensor. Model checkpoints use float32; the resume
//! state uses float64 so a resumed run continues bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bridge::{
    Best, EpochRecord, JointProgress, JointState, Phase, SharingModule, StepRecord,
};
use crate::checkpoint::{
    load_array, load_params, read_json, save_array, save_params_as, write_json, ArrayEntry, Dtype,
};
use crate::drs::{init_drs, DrsKind, DrsParams, PretrainedEmbeddings};
use crate::error::{Error, Result};
use crate::lm::{init_lm, EntityInit, LmConfig, LmParams};
use crate::nn::{Adam, AdamConfig, ParamSet};
use crate::vocab::MixedVocabulary;

const META: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrsMeta {
    pub kind: DrsKind,
    pub n_users: usize,
    pub n_items: usize,
    pub dim: usize,
    pub layers: usize,
    pub seed: u64,
    pub step: usize,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmMeta {
    pub config: LmConfig,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub seed: u64,
    pub step: usize,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TablesMeta {
    pub n_users: usize,
    pub n_items: usize,
    pub dim: usize,
    pub arrays: Vec<ArrayEntry>,
}

fn create(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn save_drs_as(dir: &Path, params: &DrsParams, seed: u64, step: usize, dtype: Dtype) -> Result<()> {
    create(dir)?;
    let arrays = save_params_as(dir, params, dtype)?;
    let meta = DrsMeta {
        kind: params.kind,
        n_users: params.user.nrows(),
        n_items: params.item.nrows(),
        dim: params.dim(),
        layers: params.layers,
        seed,
        step,
        arrays,
    };
    write_json(&dir.join(META), &meta)
}

pub fn save_drs(dir: &Path, params: &DrsParams, seed: u64, step: usize) -> Result<()> {
    save_drs_as(dir, params, seed, step, Dtype::F32)
}

pub fn load_drs(dir: &Path) -> Result<(DrsMeta, DrsParams)> {
    let meta: DrsMeta = read_json(&dir.join(META))?;
    let mut params = init_drs(
        meta.kind,
        meta.n_users,
        meta.n_items,
        meta.dim,
        meta.layers,
        meta.seed,
    )?;
    load_params(dir, &meta.arrays, &mut params)?;
    Ok((meta, params))
}

fn save_lm_as(
    dir: &Path,
    params: &LmParams,
    vocab: &MixedVocabulary,
    seed: u64,
    step: usize,
    dtype: Dtype,
) -> Result<()> {
    create(dir)?;
    let arrays = save_params_as(dir, params, dtype)?;
    let meta = LmMeta {
        config: params.config,
        vocab_size: vocab.len(),
        vocab_hash: vocab.hash(),
        seed,
        step,
        arrays,
    };
    write_json(&dir.join(META), &meta)
}

pub fn save_lm(
    dir: &Path,
    params: &LmParams,
    vocab: &MixedVocabulary,
    seed: u64,
    step: usize,
) -> Result<()> {
    save_lm_as(dir, params, vocab, seed, step, Dtype::F32)
}

/// Refuses checkpoints written against a different vocabulary.
pub fn load_lm(dir: &Path, vocab: &MixedVocabulary) -> Result<(LmMeta, LmParams)> {
    let meta: LmMeta = read_json(&dir.join(META))?;
    let hash = vocab.hash();
    if meta.vocab_hash != hash {
        return Err(Error::Checkpoint(format!(
            "{}: vocabulary hash {} does not match the current vocabulary {hash}",
            dir.display(),
            meta.vocab_hash
        )));
    }
    let mut params = init_lm(&meta.config, vocab, EntityInit::Zero, meta.seed)?;
    load_params(dir, &meta.arrays, &mut params)?;
    Ok((meta, params))
}

fn save_tables_as(
    dir: &Path,
    users: &Array2<f64>,
    items: &Array2<f64>,
    dtype: Dtype,
) -> Result<()> {
    create(dir)?;
    if users.ncols() != items.ncols() {
        return Err(Error::Shape {
            what: "entity tables".into(),
            expected: vec![users.ncols()],
            got: vec![items.ncols()],
        });
    }
    let flat = |a: &Array2<f64>| a.iter().copied().collect::<Vec<_>>();
    let arrays = vec![
        save_array(
            dir,
            "users",
            vec![users.nrows(), users.ncols()],
            &flat(users),
            dtype,
        )?,
        save_array(
            dir,
            "items",
            vec![items.nrows(), items.ncols()],
            &flat(items),
            dtype,
        )?,
    ];
    let meta = TablesMeta {
        n_users: users.nrows(),
        n_items: items.nrows(),
        dim: users.ncols(),
        arrays,
    };
    write_json(&dir.join(META), &meta)
}

fn load_tables(dir: &Path) -> Result<(Array2<f64>, Array2<f64>)> {
    let meta: TablesMeta = read_json(&dir.join(META))?;
    let expected = [("users", meta.n_users), ("items", meta.n_items)];
    if meta.arrays.len() != 2 {
        return Err(Error::Checkpoint(format!(
            "{}: expected users and items arrays",
            dir.display()
        )));
    }
    let mut out = Vec::new();
    for ((name, rows), entry) in expected.into_iter().zip(&meta.arrays) {
        if entry.name != name || entry.shape != [rows, meta.dim] {
            return Err(Error::Shape {
                what: format!("{name} table"),
                expected: vec![rows, meta.dim],
                got: entry.shape.clone(),
            });
        }
        let data = load_array(dir, entry)?;
        out.push(Array2::from_shape_vec((rows, meta.dim), data).expect("length checked"));
    }
    let items = out.pop().expect("two tables");
    let users = out.pop().expect("two tables");
    Ok((users, items))
}

/// The raw `DRS_U^0` / `DRS_I^0` tables used for preloading.
pub fn save_snapshot(dir: &Path, snapshot: &PretrainedEmbeddings) -> Result<()> {
    save_tables_as(dir, &snapshot.users, &snapshot.items, Dtype::F32)
}

pub fn load_snapshot(dir: &Path) -> Result<PretrainedEmbeddings> {
    let (users, items) = load_tables(dir)?;
    Ok(PretrainedEmbeddings { users, items })
}

pub fn save_sharing(dir: &Path, m: &SharingModule) -> Result<()> {
    save_tables_as(dir, &m.users, &m.items, Dtype::F32)
}

pub fn load_sharing(dir: &Path) -> Result<SharingModule> {
    let (users, items) = load_tables(dir)?;
    Ok(SharingModule { users, items })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BestMeta {
    epoch: usize,
    hr1: f64,
    stale: usize,
}

impl BestMeta {
    fn of<P>(b: &Best<P>) -> Self {
        Self {
            epoch: b.epoch,
            hr1: b.hr1,
            stale: b.stale,
        }
    }

    fn with<P>(&self, params: P) -> Best<P> {
        Best {
            params,
            epoch: self.epoch,
            hr1: self.hr1,
            stale: self.stale,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProgressMeta {
    seed: u64,
    step: usize,
    phase: Phase,
    epoch: usize,
    phase_epoch: usize,
    done: bool,
    lm_adam: AdamConfig,
    lm_adam_t: u64,
    drs_adam: AdamConfig,
    drs_adam_t: u64,
    best_lm: BestMeta,
    best_drs: BestMeta,
    history: Vec<EpochRecord>,
    steps: Vec<StepRecord>,
}

fn save_exact<P: ParamSet>(dir: &Path, params: &P) -> Result<()> {
    create(dir)?;
    let arrays = save_params_as(dir, params, Dtype::F64)?;
    write_json(&dir.join(META), &arrays)
}

fn load_exact<P: ParamSet>(dir: &Path, like: &P) -> Result<P> {
    let arrays: Vec<ArrayEntry> = read_json(&dir.join(META))?;
    let mut params = like.clone();
    load_params(dir, &arrays, &mut params)?;
    Ok(params)
}

fn write_progress(dir: &Path, p: &JointProgress, vocab: &MixedVocabulary, seed: u64) -> Result<()> {
    let s = &p.state;
    save_lm_as(&dir.join("lm"), &s.lm, vocab, seed, s.step, Dtype::F64)?;
    save_drs_as(&dir.join("drs"), &s.drs, seed, s.step, Dtype::F64)?;
    save_tables_as(
        &dir.join("sharing"),
        &s.sharing.users,
        &s.sharing.items,
        Dtype::F64,
    )?;
    save_exact(&dir.join("lm_adam_m"), &s.lm_adam.m)?;
    save_exact(&dir.join("lm_adam_v"), &s.lm_adam.v)?;
    save_exact(&dir.join("drs_adam_m"), &s.drs_adam.m)?;
    save_exact(&dir.join("drs_adam_v"), &s.drs_adam.v)?;
    save_exact(&dir.join("best_lm"), &p.best_lm.params)?;
    save_exact(&dir.join("best_drs_lm"), &p.best_drs.params.0)?;
    save_exact(&dir.join("best_drs"), &p.best_drs.params.1)?;
    let meta = ProgressMeta {
        seed,
        step: s.step,
        phase: p.phase,
        epoch: p.epoch,
        phase_epoch: p.phase_epoch,
        done: p.done,
        lm_adam: s.lm_adam.config,
        lm_adam_t: s.lm_adam.t,
        drs_adam: s.drs_adam.config,
        drs_adam_t: s.drs_adam.t,
        best_lm: BestMeta::of(&p.best_lm),
        best_drs: BestMeta::of(&p.best_drs),
        history: p.history.clone(),
        steps: p.steps.clone(),
    };
    write_json(&dir.join("progress.json"), &meta)
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    dir.with_file_name(name)
}

/// Writes the full training state next to `dir` and then swaps it in, so
/// an interrupted write leaves the previous state intact.
pub fn save_progress(
    dir: &Path,
    progress: &JointProgress,
    vocab: &MixedVocabulary,
    seed: u64,
) -> Result<()> {
    let tmp = sibling(dir, ".tmp");
    let old = sibling(dir, ".old");
    for p in [&tmp, &old] {
        if p.exists() {
            fs::remove_dir_all(p).map_err(|e| Error::io(p, e))?;
        }
    }
    write_progress(&tmp, progress, vocab, seed)?;
    if dir.exists() {
        fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(&tmp, e))?;
    if old.exists() {
        fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    }
    Ok(())
}

/// Reads state written by [`save_progress`]; returns it with its seed.
pub fn load_progress(dir: &Path, vocab: &MixedVocabulary) -> Result<(JointProgress, u64)> {
    let meta: ProgressMeta = read_json(&dir.join("progress.json"))?;
    let (_, lm) = load_lm(&dir.join("lm"), vocab)?;
    let (_, drs) = load_drs(&dir.join("drs"))?;
    let (users, items) = load_tables(&dir.join("sharing"))?;
    let lm_adam = Adam {
        config: meta.lm_adam,
        m: load_exact(&dir.join("lm_adam_m"), &lm)?,
        v: load_exact(&dir.join("lm_adam_v"), &lm)?,
        t: meta.lm_adam_t,
    };
    let drs_adam = Adam {
        config: meta.drs_adam,
        m: load_exact(&dir.join("drs_adam_m"), &drs)?,
        v: load_exact(&dir.join("drs_adam_v"), &drs)?,
        t: meta.drs_adam_t,
    };
    let best_lm = meta.best_lm.with(load_exact(&dir.join("best_lm"), &lm)?);
    let best_drs = meta.best_drs.with((
        load_exact(&dir.join("best_drs_lm"), &lm)?,
        load_exact(&dir.join("best_drs"), &drs)?,
    ));
    let state = JointState {
        lm,
        drs,
        sharing: SharingModule { users, items },
        lm_adam,
        drs_adam,
        step: meta.step,
    };
    Ok((
        JointProgress {
            state,
            phase: meta.phase,
            epoch: meta.epoch,
            phase_epoch: meta.phase_epoch,
            best_lm,
            best_drs,
            history: meta.history,
            steps: meta.steps,
            done: meta.done,
        },
        meta.seed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::hash_dir;
    use crate::lm::preload_embeddings;
    use crate::vocab::{build_base_vocab, extend_vocab};

    fn vocab(n_users: usize, n_items: usize) -> MixedVocabulary {
        extend_vocab(build_base_vocab(&["a b c".to_owned()], 1), n_users, n_items)
    }

    fn lm_config() -> LmConfig {
        LmConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 4,
            ffn_width: Some(8),
            context_limit: 16,
            dropout: 0.0,
        }
    }

    fn close<P: ParamSet>(a: &P, b: &P) -> bool {
        a.tensors().iter().zip(b.tensors()).all(|(x, y)| {
            x.data
                .iter()
                .zip(y.data)
                .all(|(p, q)| (p - q).abs() <= 1e-6 * p.abs().max(1.0))
        })
    }

    #[test]
    fn drs_round_trips_for_every_kind() {
        for kind in [DrsKind::Gmf, DrsKind::Ncf, DrsKind::LightGcn] {
            let dir = tempfile::tempdir().unwrap();
            let params = init_drs(kind, 5, 7, 4, 2, 11).unwrap();
            save_drs(dir.path(), &params, 11, 3).unwrap();
            let (meta, back) = load_drs(dir.path()).unwrap();
            assert_eq!(
                (meta.kind, meta.n_users, meta.n_items, meta.dim, meta.step),
                (kind, 5, 7, 4, 3)
            );
            assert!(close(&params, &back));
        }
    }

    #[test]
    fn identical_saves_hash_identically() {
        let params = init_drs(DrsKind::Ncf, 5, 7, 4, 1, 2).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        save_drs(a.path(), &params, 2, 0).unwrap();
        save_drs(b.path(), &params, 2, 0).unwrap();
        assert_eq!(hash_dir(a.path()).unwrap(), hash_dir(b.path()).unwrap());
    }

    #[test]
    fn lm_checkpoint_checks_the_vocabulary() {
        let dir = tempfile::tempdir().unwrap();
        let v = vocab(3, 4);
        let params = init_lm(&lm_config(), &v, EntityInit::Random, 5).unwrap();
        save_lm(dir.path(), &params, &v, 5, 9).unwrap();
        let (meta, back) = load_lm(dir.path(), &v).unwrap();
        assert_eq!(meta.vocab_hash, v.hash());
        assert!(close(&params, &back));
        let err = load_lm(dir.path(), &vocab(3, 5)).unwrap_err().to_string();
        assert!(err.contains("vocabulary hash"), "{err}");
    }

    #[test]
    fn snapshot_files_preload_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let drs = init_drs(DrsKind::Gmf, 3, 4, 4, 1, 1).unwrap();
        let snap = PretrainedEmbeddings::of(&drs);
        save_snapshot(dir.path(), &snap).unwrap();
        let back = load_snapshot(dir.path()).unwrap();
        // float32 on disk: preloading from the file equals preloading from the rounded tables
        let rounded = snap.users.mapv(|x| f64::from(x as f32));
        assert_eq!(back.users, rounded);
        let mut lm = init_lm(&lm_config(), &vocab(3, 4), EntityInit::Zero, 1).unwrap();
        preload_embeddings(&mut lm, &back).unwrap();
        let start = lm.layout.n_base;
        assert_eq!(lm.tok.slice(ndarray::s![start..start + 3, ..]), back.users);
    }

    #[test]
    fn mismatched_tables_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bad = SharingModule {
            users: Array2::zeros((2, 3)),
            items: Array2::zeros((2, 4)),
        };
        assert!(save_sharing(dir.path(), &bad).is_err());
        let good = SharingModule {
            users: Array2::ones((2, 3)),
            items: Array2::zeros((5, 3)),
        };
        save_sharing(dir.path(), &good).unwrap();
        assert_eq!(load_sharing(dir.path()).unwrap(), good);
    }
}
