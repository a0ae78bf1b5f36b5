//! Datasets: synthetic generation, CSV I/O, preprocessing, splits and
//! perturbations.

mod csv_io;
mod perturb;
mod preprocess;
mod record;
pub mod synth;

pub use csv_io::{features_sidecar, load_csv, relevance_sidecar, write_csv};
pub use perturb::{corrupt_gaussian, inflate_missing, Cell};
pub use preprocess::{preprocess, Standardizer};
pub use record::{split, Dataset, Record, SplitSet, STANDARD_SPLIT_SEEDS};
pub use synth::{gen_synthetic, Planted, SynthConfig};
