//! Synthetic sparse-annotation tiles, augmentation and raster I/O.

mod augment;
mod dataset;
mod mask;
pub mod netpbm;
mod synth;

pub use augment::{augment, denormalize, normalize, transform, Placement, IMAGENET_MEAN, IMAGENET_STD};
pub use dataset::{generate_record, generate_split, load_split, manifest_ids, sample_seed, write_dataset, GenSpec, Record, Split};
pub use mask::{LabelMask, BENIGN, CLASS_NAMES, MALIGNANT, PDCG, STROMA, UNLABELED};
pub use synth::{generate_sample, sparsify, ClassMix, Instance, Sample};
