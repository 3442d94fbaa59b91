//! On-disk dataset layout.
//!
//! ```text
//! <root>/manifest.txt
//! <root>/{train,val,test}/<id>.img.ppm
//! <root>/{train,val,test}/<id>.sparse.pgm
//! <root>/{train,val,test}/<id>.dense.pgm
//! ```
//!
//! `manifest.txt` holds one tab-separated line per image:
//! `split  id  seed  benign  malignant  pdcg  annotated  dropped`.

use std::fmt;
use std::fs;
use std::path::Path;

use super::mask::{BENIGN, MALIGNANT, PDCG};
use super::netpbm::{read_pgm, read_ppm, write_pgm, write_ppm};
use super::synth::{generate_sample, sparsify, ClassMix, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown split {s:?}")))
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of image `index` in `split`; distinct splits never share a seed
/// stream.
pub fn sample_seed(base: u64, split: Split, index: usize) -> u64 {
    mix64(mix64(base ^ split.tag().rotate_left(48)) ^ index as u64)
}

fn sparsify_seed(sample_seed: u64) -> u64 {
    mix64(sample_seed ^ 0x5350_4152_5345_0000)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenSpec {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub size: usize,
    pub annot_fraction: f64,
    pub mix: ClassMix,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 32 || self.size % 2 != 0 {
            return Err(Error::Config(format!("image size must be even and >= 32, got {}", self.size)));
        }
        if !(self.annot_fraction > 0.0 && self.annot_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "annot_fraction must lie in (0, 1], got {}",
                self.annot_fraction
            )));
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Record {
    pub split: Split,
    pub id: String,
    pub seed: u64,
    pub sample: Sample,
}

impl Record {
    fn manifest_line(&self) -> String {
        let s = &self.sample;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.split,
            self.id,
            self.seed,
            s.count_class(BENIGN),
            s.count_class(MALIGNANT),
            s.count_class(PDCG),
            s.instances.iter().filter(|i| i.annotated).count(),
            s.dropped,
        )
    }
}

pub fn generate_record(spec: &GenSpec, split: Split, index: usize) -> Result<Record> {
    let seed = sample_seed(spec.seed, split, index);
    let dense = generate_sample(seed, spec.size, &spec.mix)?;
    let sample = sparsify(&dense, spec.annot_fraction, sparsify_seed(seed))?;
    Ok(Record {
        split,
        id: format!("{index:05}"),
        seed,
        sample,
    })
}

pub fn generate_split(spec: &GenSpec, split: Split) -> Result<Vec<Sample>> {
    (0..spec.count(split))
        .map(|i| generate_record(spec, split, i).map(|r| r.sample))
        .collect()
}

/// Writes the full layout under `root`, replacing files that already exist.
pub fn write_dataset(root: &Path, spec: &GenSpec) -> Result<()> {
    let mut manifest = String::new();
    for split in Split::ALL {
        let dir = root.join(split.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for index in 0..spec.count(split) {
            let rec = generate_record(spec, split, index)?;
            write_ppm(&dir.join(format!("{}.img.ppm", rec.id)), &rec.sample.image)?;
            write_pgm(&dir.join(format!("{}.sparse.pgm", rec.id)), &rec.sample.sparse_mask)?;
            write_pgm(&dir.join(format!("{}.dense.pgm", rec.id)), &rec.sample.dense_mask)?;
            manifest.push_str(&rec.manifest_line());
            manifest.push('\n');
        }
    }
    let path = root.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Ids of `split`, in manifest order.
pub fn manifest_ids(root: &Path, split: Split) -> Result<Vec<String>> {
    let path = root.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut ids = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 8 {
            return Err(Error::Line {
                line: n + 1,
                detail: format!("manifest row needs 8 tab-separated fields, got {}", fields.len()),
            });
        }
        if Split::parse(fields[0])? == split {
            ids.push(fields[1].to_string());
        }
    }
    Ok(ids)
}

/// Loads `split` from disk. Instance lists are not stored and come back empty.
pub fn load_split(root: &Path, split: Split) -> Result<Vec<(String, Sample)>> {
    let dir = root.join(split.name());
    manifest_ids(root, split)?
        .into_iter()
        .map(|id| {
            let image = read_ppm(&dir.join(format!("{id}.img.ppm")))?;
            let sparse_mask = read_pgm(&dir.join(format!("{id}.sparse.pgm")))?;
            let dense_mask = read_pgm(&dir.join(format!("{id}.dense.pgm")))?;
            let (_, h, w) = image.chw("load")?;
            for m in [&sparse_mask, &dense_mask] {
                if (m.height(), m.width()) != (h, w) {
                    return Err(Error::Data(format!("{id}: mask size differs from image {h}x{w}")));
                }
            }
            Ok((
                id,
                Sample {
                    image,
                    sparse_mask,
                    dense_mask,
                    instances: Vec::new(),
                    dropped: 0,
                },
            ))
        })
        .collect()
}
