//! Dataset ingestion: folder manifests, paired and unpaired loading, RGBD
//! assembly, the side-by-side paired format and seeded batch iteration.

pub mod batch;
pub mod dataset;
pub mod io;
pub mod manifest;

pub use batch::{iterate_batches, Batch, BatchIndices, BatchSchedule, DatasetRef};
pub use dataset::{
    assemble_rgbd, build_unpaired_split, concat_side_by_side, list_images, load_paired, load_test_set, split_side_by_side,
    PairedExample, TestExample, UnpairedDataset,
};
pub use manifest::{DatasetManifest, Matching, DATA_ROOT_ENV};
