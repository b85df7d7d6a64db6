//! Prepared-dataset caches and the group-transformed evaluation splits.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ginv_core::data::{
    build_transforming_dataset, read_cache, read_idx_bytes, write_cache, CacheHeader, Dataset, NormStats, RawPool,
    SourceKind, Split, SplitSizes, PADDED_SIDE,
};
use ginv_core::groups::{FiniteGroup, GroupKind};
use serde::Serialize;

use crate::error::{at, io_at, CliError, Result};

pub const IDX_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

pub fn source_tag(source: SourceKind) -> &'static str {
    match source {
        SourceKind::Mnist => "tmnist",
        SourceKind::Fmnist => "tfmnist",
    }
}

pub fn parse_source(s: &str) -> Result<SourceKind> {
    match s.to_ascii_lowercase().as_str() {
        "mnist" | "tmnist" => Ok(SourceKind::Mnist),
        "fmnist" | "tfmnist" => Ok(SourceKind::Fmnist),
        _ => Err(CliError::Usage(format!("unknown dataset {s:?} (expected mnist or fmnist)"))),
    }
}

pub fn parse_split(s: &str) -> Result<Split> {
    match s.to_ascii_lowercase().as_str() {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        "val" => Ok(Split::Val),
        _ => Err(CliError::Usage(format!("unknown split {s:?} (expected train, val or test)"))),
    }
}

pub fn parse_group(s: &str) -> Result<GroupKind> {
    GroupKind::from_short_name(&s.to_ascii_lowercase())
        .ok_or_else(|| CliError::Usage(format!("unknown group {s:?} (expected id, r4 or t3)")))
}

/// The group acting on padded images.
pub fn image_group(kind: GroupKind) -> FiniteGroup {
    FiniteGroup::new(kind, PADDED_SIDE).expect("padded side suits every group")
}

pub fn cache_path(data_dir: &Path, source: SourceKind, split: Split) -> PathBuf {
    data_dir.join(format!("{}_{}.ginv", source_tag(source), split.name()))
}

/// Locates an IDX file, accepting a `.gz` variant.
pub fn find_idx(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(CliError::File {
        path: plain,
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found").into(),
    })
}

fn load_pool(dir: &Path, images: &str, labels: &str) -> Result<RawPool> {
    let ip = find_idx(dir, images)?;
    let lp = find_idx(dir, labels)?;
    let ib = read_idx_bytes(&ip).map_err(at(&ip))?;
    let lb = read_idx_bytes(&lp).map_err(at(&lp))?;
    RawPool::from_bytes(&ib, &lb).map_err(at(&ip))
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitStats {
    pub split: &'static str,
    pub rows: usize,
    pub class_histogram: Vec<usize>,
    pub cache: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SourceStats {
    pub source: &'static str,
    pub norm: NormStats,
    pub splits: Vec<SplitStats>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrepareSummary {
    pub seed: u64,
    pub sizes: SplitSizes,
    pub sources: Vec<SourceStats>,
}

/// Builds and caches the splits of every given source, writing `stats.json`.
pub fn prepare(sources: &[(SourceKind, &Path)], out_dir: &Path, seed: u64, sizes: SplitSizes) -> Result<PrepareSummary> {
    std::fs::create_dir_all(out_dir).map_err(io_at(out_dir))?;
    let mut stats = Vec::new();
    for &(source, dir) in sources {
        let train = load_pool(dir, IDX_FILES[0], IDX_FILES[1])?;
        let test = load_pool(dir, IDX_FILES[2], IDX_FILES[3])?;
        let splits = build_transforming_dataset(source, &train, &test, seed, sizes).map_err(at(dir))?;
        let mut split_stats = Vec::new();
        for data in [&splits.train, &splits.val, &splits.test] {
            let path = cache_path(out_dir, source, data.split);
            let header = CacheHeader {
                source,
                split: data.split,
                seed,
                sizes,
                norm: data.norm,
            };
            let file = File::create(&path).map_err(io_at(&path))?;
            write_cache(BufWriter::new(file), data, &header).map_err(at(&path))?;
            split_stats.push(SplitStats {
                split: data.split.name(),
                rows: data.len(),
                class_histogram: data.class_histogram().to_vec(),
                cache: path.file_name().unwrap().to_string_lossy().into_owned(),
            });
        }
        stats.push(SourceStats {
            source: source_tag(source),
            norm: splits.train.norm,
            splits: split_stats,
            warning: splits.warning,
        });
    }
    let summary = PrepareSummary {
        seed,
        sizes,
        sources: stats,
    };
    crate::write_json(&out_dir.join("stats.json"), &summary)?;
    Ok(summary)
}

pub fn load_split(data_dir: &Path, source: SourceKind, split: Split) -> Result<(Dataset, CacheHeader)> {
    let path = cache_path(data_dir, source, split);
    let file = File::open(&path).map_err(|e| CliError::File {
        path: path.clone(),
        source: std::io::Error::new(e.kind(), format!("{e}; run `ginv prepare` first")).into(),
    })?;
    read_cache(BufReader::new(file)).map_err(at(&path))
}

/// Seed of the fixed group transformation applied to an evaluation split.
pub fn transform_seed(data_seed: u64, split: Split, group: GroupKind) -> u64 {
    let split_tag = match split {
        Split::Train => 1,
        Split::Val => 2,
        Split::Test => 3,
    };
    let group_tag = match group {
        GroupKind::Identity => 1,
        GroupKind::Rot4 => 2,
        GroupKind::TransX3 => 3,
    };
    data_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(split_tag * 16 + group_tag)
}

/// Leading `limit` rows of a split, each transformed by one random group element.
pub fn load_transformed(
    data_dir: &Path,
    source: SourceKind,
    split: Split,
    group: &FiniteGroup,
    limit: Option<usize>,
) -> Result<(Dataset, CacheHeader)> {
    let (data, header) = load_split(data_dir, source, split)?;
    let data = match limit {
        Some(n) if n < data.len() => data.head(n),
        _ => data,
    };
    let seed = transform_seed(header.seed, split, group.kind());
    Ok((data.transformed(group, seed)?, header))
}
