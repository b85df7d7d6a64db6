//! IDX ingestion and construction of the transforming digit/clothing datasets.
//!
//! Images are zero-padded from 28x28 to 36x36, the last class is dropped so
//! both sources share nine classes, and every split is normalized with the
//! training split's global mean and standard deviation.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use log::warn;
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{permute_rows, FiniteGroup};

pub const RAW_SIDE: usize = 28;
pub const PADDED_SIDE: usize = 36;
pub const PAD: usize = (PADDED_SIDE - RAW_SIDE) / 2;
pub const NUM_CLASSES: usize = 9;
/// Label removed from both sources (digit 9 / the last clothing class).
pub const EXCLUDED_LABEL: u8 = 9;

const IDX_LABELS: u32 = 0x0000_0801;
const IDX_IMAGES: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxFile {
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

/// Parses an unsigned-byte IDX container (labels or images).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile> {
    if bytes.len() < 4 {
        return Err(Error::IdxLength {
            expected: 4,
            actual: bytes.len(),
        });
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let ndims = match magic {
        IDX_LABELS => 1,
        IDX_IMAGES => 3,
        other => return Err(Error::UnsupportedIdx(other)),
    };
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::IdxLength {
            expected: header,
            actual: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| {
            let at = 4 + 4 * i;
            u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
        })
        .collect();
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(Error::IdxLength {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(IdxFile {
        dims,
        payload: bytes[header..].to_vec(),
    })
}

/// Inverse of [`parse_idx`].
pub fn encode_idx(file: &IdxFile) -> Result<Vec<u8>> {
    let magic = match file.dims.len() {
        1 => IDX_LABELS,
        3 => IDX_IMAGES,
        n => return Err(Error::Format(format!("IDX with {n} dims is not supported"))),
    };
    if file.dims.iter().product::<usize>() != file.payload.len() {
        return Err(Error::Format("IDX payload does not match dims".into()));
    }
    let mut out = Vec::with_capacity(4 + 4 * file.dims.len() + file.payload.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in &file.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&file.payload);
    Ok(out)
}

/// Reads a raw or gzip-compressed IDX file into memory.
pub fn read_idx_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceKind {
    Mnist,
    Fmnist,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    TMnist,
    TFmnist,
    Blend(f64),
}

impl From<SourceKind> for DataSource {
    fn from(kind: SourceKind) -> Self {
        match kind {
            SourceKind::Mnist => DataSource::TMnist,
            SourceKind::Fmnist => DataSource::TFmnist,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub test: usize,
    pub val: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 10_000,
            test: 50_000,
            val: 2_000,
        }
    }
}

/// A single normalized image with its class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: Array2<f64>,
    pub label: u8,
}

/// Images stored as rows of flattened, normalized pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pixels: Array2<f64>,
    labels: Vec<u8>,
    side: usize,
    pub split: Split,
    pub source: DataSource,
    pub norm: NormStats,
}

impl Dataset {
    pub fn new(
        pixels: Array2<f64>,
        labels: Vec<u8>,
        side: usize,
        split: Split,
        source: DataSource,
        norm: NormStats,
    ) -> Result<Self> {
        if pixels.nrows() != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                pixels.nrows(),
                labels.len()
            )));
        }
        if pixels.ncols() != side * side {
            return Err(Error::Data(format!(
                "rows have {} pixels, expected {}",
                pixels.ncols(),
                side * side
            )));
        }
        Ok(Dataset {
            pixels,
            labels,
            side,
            split,
            source,
            norm,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> ArrayView2<'_, f64> {
        self.pixels.view()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.pixels.row(i)
    }

    pub fn image(&self, i: usize) -> LabeledImage {
        let pixels = self
            .pixels
            .row(i)
            .to_owned()
            .into_shape_with_order((self.side, self.side))
            .expect("row length is side*side");
        LabeledImage {
            pixels,
            label: self.labels[i],
        }
    }

    /// The first `n` samples (or all of them when `n` exceeds the length).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            pixels: self.pixels.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            ..self.clone_meta()
        }
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            pixels: self.pixels.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            pixels: Array2::zeros((0, self.side * self.side)),
            labels: Vec::new(),
            side: self.side,
            split: self.split,
            source: self.source,
            norm: self.norm,
        }
    }

    pub fn class_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut hist = [0; NUM_CLASSES];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }

    /// Every sample transformed by one uniformly drawn group element.
    pub fn transformed(&self, group: &FiniteGroup, seed: u64) -> Result<Dataset> {
        check_side(group, self.side)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perms = group.permutations();
        let mut pixels = self.pixels.clone();
        for mut row in pixels.axis_iter_mut(Axis(0)) {
            let g = rng.random_range(0..perms.len());
            let src = row.to_owned();
            for (o, &p) in row.iter_mut().zip(&perms[g]) {
                *o = src[p];
            }
        }
        Ok(Dataset {
            pixels,
            labels: self.labels.clone(),
            ..self.clone_meta()
        })
    }

    /// Concatenation of `self` with itself; used to check that metrics are averages.
    pub fn duplicated(&self) -> Dataset {
        let pixels = ndarray::concatenate(Axis(0), &[self.pixels.view(), self.pixels.view()])
            .expect("same widths");
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&self.labels);
        Dataset {
            pixels,
            labels,
            ..self.clone_meta()
        }
    }
}

fn check_side(group: &FiniteGroup, side: usize) -> Result<()> {
    if group.grid_side() != side {
        return Err(Error::GridMismatch {
            expected: group.grid_side(),
            rows: side,
            cols: side,
        });
    }
    Ok(())
}

/// Raw image/label pairs as shipped in the official files.
#[derive(Debug, Clone)]
pub struct RawPool {
    pub images: IdxFile,
    pub labels: IdxFile,
}

impl RawPool {
    pub fn from_bytes(images: &[u8], labels: &[u8]) -> Result<Self> {
        let images = parse_idx(images)?;
        let labels = parse_idx(labels)?;
        if images.dims.len() != 3 || labels.dims.len() != 1 {
            return Err(Error::Data("expected an image file and a label file".into()));
        }
        if images.dims[0] != labels.dims[0] {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.dims[0], labels.dims[0]
            )));
        }
        if images.dims[1] != RAW_SIDE || images.dims[2] != RAW_SIDE {
            return Err(Error::Data(format!(
                "expected {RAW_SIDE}x{RAW_SIDE} images, got {}x{}",
                images.dims[1], images.dims[2]
            )));
        }
        Ok(RawPool { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.payload.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TransformingSplits {
    pub train: Dataset,
    pub test: Dataset,
    pub val: Dataset,
    /// Set when the pool was too small for the requested test split.
    pub warning: Option<String>,
}

/// Zero-pads a 28x28 byte image into a 36x36 row scaled to [0, 1].
fn pad_image(src: &[u8], dst: &mut [f64]) {
    for v in dst.iter_mut() {
        *v = 0.0;
    }
    for i in 0..RAW_SIDE {
        for j in 0..RAW_SIDE {
            dst[(i + PAD) * PADDED_SIDE + (j + PAD)] = f64::from(src[i * RAW_SIDE + j]) / 255.0;
        }
    }
}

/// Padded (not yet normalized) images for the given pool indices.
fn padded_rows(pools: &[&RawPool], index: &[(usize, usize)]) -> (Array2<f64>, Vec<u8>) {
    let d = PADDED_SIDE * PADDED_SIDE;
    let mut pixels = Array2::zeros((index.len(), d));
    let mut labels = Vec::with_capacity(index.len());
    for (row, &(pool, i)) in index.iter().enumerate() {
        let p = pools[pool];
        let img = &p.images.payload[i * RAW_SIDE * RAW_SIDE..(i + 1) * RAW_SIDE * RAW_SIDE];
        pad_image(img, pixels.row_mut(row).as_slice_mut().unwrap());
        labels.push(p.labels.payload[i]);
    }
    (pixels, labels)
}

/// Mean and population standard deviation over all pixels.
pub fn pixel_stats(pixels: ArrayView2<f64>) -> NormStats {
    let n = pixels.len() as f64;
    let mean = pixels.iter().sum::<f64>() / n;
    let var = pixels.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    NormStats {
        mean,
        std: var.sqrt(),
    }
}

/// Builds train/test/val splits from the merged official train and test pools.
pub fn build_transforming_dataset(
    source: SourceKind,
    raw_train: &RawPool,
    raw_test: &RawPool,
    seed: u64,
    sizes: SplitSizes,
) -> Result<TransformingSplits> {
    let pools = [raw_train, raw_test];
    let mut index: Vec<(usize, usize)> = Vec::new();
    for (p, pool) in pools.iter().enumerate() {
        for (i, &label) in pool.labels.payload.iter().enumerate() {
            if label == EXCLUDED_LABEL {
                continue;
            }
            if label as usize >= NUM_CLASSES {
                return Err(Error::Data(format!("unexpected label {label}")));
            }
            index.push((p, i));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    index.shuffle(&mut rng);

    if index.len() < sizes.train + sizes.val {
        return Err(Error::Data(format!(
            "only {} samples after class removal; need at least {} for train+val",
            index.len(),
            sizes.train + sizes.val
        )));
    }
    let test_available = index.len() - sizes.train - sizes.val;
    let mut warning = None;
    let test_size = if test_available < sizes.test {
        let msg = format!(
            "{source:?}: test split clamped from {} to {test_available} samples",
            sizes.test
        );
        warn!("{msg}");
        warning = Some(msg);
        test_available
    } else {
        sizes.test
    };

    let (train_idx, rest) = index.split_at(sizes.train);
    let (val_idx, rest) = rest.split_at(sizes.val);
    let test_idx = &rest[..test_size];

    let (mut train_px, train_lb) = padded_rows(&pools, train_idx);
    let (mut val_px, val_lb) = padded_rows(&pools, val_idx);
    let (mut test_px, test_lb) = padded_rows(&pools, test_idx);

    let norm = pixel_stats(train_px.view());
    if norm.std.is_nan() || norm.std <= 0.0 {
        return Err(Error::Data("training split has zero pixel variance".into()));
    }
    for px in [&mut train_px, &mut val_px, &mut test_px] {
        px.mapv_inplace(|v| (v - norm.mean) / norm.std);
    }

    let src = DataSource::from(source);
    Ok(TransformingSplits {
        train: Dataset::new(train_px, train_lb, PADDED_SIDE, Split::Train, src, norm)?,
        test: Dataset::new(test_px, test_lb, PADDED_SIDE, Split::Test, src, norm)?,
        val: Dataset::new(val_px, val_lb, PADDED_SIDE, Split::Val, src, norm)?,
        warning,
    })
}

/// Draws one element per image (uniformly, identity included) and applies it.
/// Returns the transformed images and the chosen element indices.
pub fn augment<R: Rng>(
    batch: &[LabeledImage],
    group: &FiniteGroup,
    rng: &mut R,
) -> Result<(Vec<LabeledImage>, Vec<usize>)> {
    let mut out = Vec::with_capacity(batch.len());
    let mut chosen = Vec::with_capacity(batch.len());
    for img in batch {
        let k = rng.random_range(0..group.order());
        let g = group.element(k)?;
        out.push(LabeledImage {
            pixels: g.act(img.pixels.view())?,
            label: img.label,
        });
        chosen.push(k);
    }
    Ok((out, chosen))
}

/// Row-matrix form of [`augment`] used by the training loop.
pub fn augment_rows<R: Rng>(
    rows: &mut Array2<f64>,
    perms: &[Vec<usize>],
    rng: &mut R,
) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(rows.nrows());
    let mut scratch = vec![0.0; rows.ncols()];
    for mut row in rows.axis_iter_mut(Axis(0)) {
        let k = rng.random_range(0..perms.len());
        chosen.push(k);
        if k == 0 {
            continue;
        }
        for (s, &v) in scratch.iter_mut().zip(row.iter()) {
            *s = v;
        }
        for (o, &p) in row.iter_mut().zip(&perms[k]) {
            *o = scratch[p];
        }
    }
    chosen
}

/// Applies element `k` of the group to each row, with `ks[i]` chosen per row.
pub fn act_rows(rows: ArrayView2<f64>, perms: &[Vec<usize>], ks: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros(rows.dim());
    for ((src, mut dst), &k) in rows.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))).zip(ks) {
        for (o, &p) in dst.iter_mut().zip(&perms[k]) {
            *o = src[p];
        }
    }
    out
}

/// Applies a single gather table to every row.
pub fn act_all_rows(rows: ArrayView2<f64>, perm: &[usize]) -> Array2<f64> {
    permute_rows(rows, perm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub beta: f64,
    pub pairing_seed: u64,
}

impl DriftConfig {
    pub fn new(beta: f64, pairing_seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Config(format!("beta {beta} outside [0, 1]")));
        }
        Ok(DriftConfig { beta, pairing_seed })
    }
}

/// For each sample of `d1`, the index of its equal-label partner in `d2`.
///
/// Within each class the partners of `d2` are shuffled by the pairing seed and
/// assigned in order, wrapping around when `d1` has more samples of that class.
pub fn pair_by_label(d1: &Dataset, d2: &Dataset, pairing_seed: u64) -> Result<Vec<usize>> {
    let h1 = d1.class_histogram();
    let h2 = d2.class_histogram();
    let classes1 = h1.iter().filter(|&&c| c > 0).count();
    let classes2 = h2.iter().filter(|&&c| c > 0).count();
    if classes1 != classes2 {
        return Err(Error::ClassMismatch(format!(
            "{classes1} classes vs {classes2} classes"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in d2.labels().iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(pairing_seed);
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
    }
    let mut cursor = [0usize; NUM_CLASSES];
    let mut partners = Vec::with_capacity(d1.len());
    for &l in d1.labels() {
        let members = &by_class[l as usize];
        if members.is_empty() {
            return Err(Error::ClassMismatch(format!("class {l} missing from second dataset")));
        }
        partners.push(members[cursor[l as usize] % members.len()]);
        cursor[l as usize] += 1;
    }
    Ok(partners)
}

/// Pixelwise convex combination `(1 - beta) * d1 + beta * d2` over label-matched pairs.
pub fn blend_datasets(d1: &Dataset, d2: &Dataset, cfg: DriftConfig) -> Result<Dataset> {
    if d1.side() != d2.side() {
        return Err(Error::Data("datasets have different image sizes".into()));
    }
    let cfg = DriftConfig::new(cfg.beta, cfg.pairing_seed)?;
    let partners = pair_by_label(d1, d2, cfg.pairing_seed)?;
    let (a, b) = (1.0 - cfg.beta, cfg.beta);
    let mut pixels = Array2::zeros(d1.pixels().dim());
    for (i, mut row) in pixels.axis_iter_mut(Axis(0)).enumerate() {
        let p1 = d1.row(i);
        let p2 = d2.row(partners[i]);
        for ((o, &u), &v) in row.iter_mut().zip(p1.iter()).zip(p2.iter()) {
            *o = a * u + b * v;
        }
    }
    Dataset::new(
        pixels,
        d1.labels().to_vec(),
        d1.side(),
        d1.split,
        DataSource::Blend(cfg.beta),
        d1.norm,
    )
}

const CACHE_MAGIC: &[u8; 5] = b"GINV1";

/// Header of a prepared-dataset cache file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub source: SourceKind,
    pub split: Split,
    pub seed: u64,
    pub sizes: SplitSizes,
    pub norm: NormStats,
}

/// Serializes one split. Layout (little-endian): `GINV1`, source u8, split u8,
/// seed u64, requested train/test/val sizes u64 x3, stored rows u64, side u64,
/// mean f64, std f64, labels (one byte each), then row-major f64 pixels.
pub fn write_cache<W: Write>(mut w: W, data: &Dataset, header: &CacheHeader) -> Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&[
        match header.source {
            SourceKind::Mnist => 0,
            SourceKind::Fmnist => 1,
        },
        match header.split {
            Split::Train => 0,
            Split::Test => 1,
            Split::Val => 2,
        },
    ])?;
    for v in [
        header.seed,
        header.sizes.train as u64,
        header.sizes.test as u64,
        header.sizes.val as u64,
        data.len() as u64,
        data.side() as u64,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&header.norm.mean.to_le_bytes())?;
    w.write_all(&header.norm.std.to_le_bytes())?;
    w.write_all(data.labels())?;
    let mut buf = Vec::with_capacity(data.pixels().len() * 8);
    for v in data.pixels().iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_cache<R: Read>(mut r: R) -> Result<(Dataset, CacheHeader)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor::new(&bytes);
    if cur.take(5)? != CACHE_MAGIC {
        return Err(Error::Format("not a GINV1 dataset cache".into()));
    }
    let tags = cur.take(2)?;
    let source = match tags[0] {
        0 => SourceKind::Mnist,
        1 => SourceKind::Fmnist,
        t => return Err(Error::Format(format!("unknown source tag {t}"))),
    };
    let split = match tags[1] {
        0 => Split::Train,
        1 => Split::Test,
        2 => Split::Val,
        t => return Err(Error::Format(format!("unknown split tag {t}"))),
    };
    let seed = cur.u64()?;
    let sizes = SplitSizes {
        train: cur.u64()? as usize,
        test: cur.u64()? as usize,
        val: cur.u64()? as usize,
    };
    let n = cur.u64()? as usize;
    let side = cur.u64()? as usize;
    let norm = NormStats {
        mean: cur.f64()?,
        std: cur.f64()?,
    };
    let labels = cur.take(n)?.to_vec();
    let count = n
        .checked_mul(side * side)
        .ok_or_else(|| Error::Format("cache dimensions overflow".into()))?;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(cur.f64()?);
    }
    if cur.remaining() != 0 {
        return Err(Error::Format("trailing bytes in dataset cache".into()));
    }
    let pixels = Array2::from_shape_vec((n, side * side), values)
        .map_err(|e| Error::Format(e.to_string()))?;
    let header = CacheHeader {
        source,
        split,
        seed,
        sizes,
        norm,
    };
    let data = Dataset::new(pixels, labels, side, split, source.into(), norm)?;
    Ok((data, header))
}

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
