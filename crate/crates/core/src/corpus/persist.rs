use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{dataset_stats, leave_one_out, Catalog, DatasetStats, Entry, InteractionMatrix};
use crate::checkpoint::{read_i64, read_json, write_i64, write_json};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    pub format: String,
    pub seed: u64,
    pub min_user: usize,
    pub min_item: usize,
    pub stats: DatasetStats,
    pub arrays: Vec<String>,
}

fn to_i64(xs: impl Iterator<Item = usize>) -> Vec<i64> {
    xs.map(|x| x as i64).collect()
}

/// Writes `meta.json`, `catalog.json` (dense tables with original ids and
/// titles) and little-endian i64 arrays for the interactions and the
/// leave-one-out split.
pub fn save_dataset(
    dir: &Path,
    catalog: &Catalog,
    matrix: &InteractionMatrix,
    source: &str,
    format: &str,
    seed: u64,
    min_user: usize,
    min_item: usize,
) -> Result<DatasetMeta> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries = matrix.entries();
    let split = leave_one_out(matrix);
    let arrays: Vec<(&str, Vec<i64>)> = vec![
        ("interactions_user", to_i64(entries.iter().map(|e| e.user))),
        ("interactions_item", to_i64(entries.iter().map(|e| e.item))),
        (
            "interactions_timestamp",
            entries.iter().map(|e| e.timestamp).collect(),
        ),
        ("valid_user", to_i64(split.valid.iter().map(|p| p.0))),
        ("valid_item", to_i64(split.valid.iter().map(|p| p.1))),
        ("test_user", to_i64(split.test.iter().map(|p| p.0))),
        ("test_item", to_i64(split.test.iter().map(|p| p.1))),
    ];
    let mut names = Vec::new();
    for (name, data) in &arrays {
        let file = format!("{name}.i64");
        write_i64(&dir.join(&file), data)?;
        names.push(file);
    }
    write_json(&dir.join("catalog.json"), catalog)?;
    let meta = DatasetMeta {
        source: source.to_owned(),
        format: format.to_owned(),
        seed,
        min_user,
        min_item,
        stats: dataset_stats(matrix),
        arrays: names,
    };
    write_json(&dir.join("meta.json"), &meta)?;
    Ok(meta)
}

pub fn load_dataset(dir: &Path) -> Result<(DatasetMeta, Catalog, InteractionMatrix)> {
    let meta: DatasetMeta = read_json(&dir.join("meta.json"))?;
    let catalog: Catalog = read_json(&dir.join("catalog.json"))?;
    catalog.validate()?;
    let users = read_i64(&dir.join("interactions_user.i64"))?;
    let items = read_i64(&dir.join("interactions_item.i64"))?;
    let times = read_i64(&dir.join("interactions_timestamp.i64"))?;
    if users.len() != items.len() || users.len() != times.len() {
        return Err(Error::Checkpoint(
            "interaction arrays differ in length".into(),
        ));
    }
    let entries = users
        .iter()
        .zip(&items)
        .zip(&times)
        .map(|((&u, &i), &t)| {
            if u < 0 || i < 0 {
                return Err(Error::Checkpoint("negative index in dataset arrays".into()));
            }
            Ok(Entry {
                user: u as usize,
                item: i as usize,
                timestamp: t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let matrix = InteractionMatrix::from_entries(catalog.n_users(), catalog.n_items(), entries)?;
    if matrix.nnz() != meta.stats.n_interactions {
        return Err(Error::Checkpoint(format!(
            "meta lists {} interactions, arrays hold {}",
            meta.stats.n_interactions,
            matrix.nnz()
        )));
    }
    Ok((meta, catalog, matrix))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_matrix;
    use crate::corpus::synthetic::{planted, PlantedConfig};

    #[test]
    fn dataset_round_trip() {
        let data = planted(
            &PlantedConfig {
                n_users: 20,
                n_items: 30,
                ..PlantedConfig::default()
            },
            3,
        );
        let m = build_matrix(&data.catalog, &data.interactions).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let meta = save_dataset(
            dir.path(),
            &data.catalog,
            &m,
            "synthetic",
            "synthetic",
            3,
            0,
            0,
        )
        .unwrap();
        let (meta2, cat2, m2) = load_dataset(dir.path()).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(cat2, data.catalog);
        assert_eq!(m2, m);
    }
}
