//! Slice data model, native file formats, preprocessing and dataset manifests.

mod io;
mod manifest;
mod png;
mod preprocess;
mod types;

pub use io::{
    decode_labels, decode_slice, encode_labels, encode_slice, load_labels, load_slice, save_labels,
    save_slice, FORMAT_VERSION, LABEL_MAGIC, SLICE_MAGIC,
};
pub use manifest::{
    build_manifest, parse_stem, DatasetManifest, ManifestEntry, Split, SplitSpec, LABEL_EXT,
    SLICE_EXT,
};
pub use png::{channel_to_gray, load_png, overlay, save_channel_png, save_labels_png, save_overlay_png};
pub use preprocess::{
    center_crop_or_pad, center_crop_or_pad_labels, gaussian_blur, gaussian_highpass, gaussian_kernel,
    inner_ninth, lanczos_kernel, lanczos_resample, resample_to_spacing, LANCZOS_A,
};
pub use types::{
    LabelMap, MultiChannelSlice, ProbabilityMap, SliceId, BACKGROUND, GM, NUM_CLASSES, WM,
};
