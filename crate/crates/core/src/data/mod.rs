//! Images, synthetic videos, whitening and dataset files.

mod batch;
mod container;
mod digits;
mod idx;
mod video;
mod zca;

pub use batch::{batch_iter, BatchIter};
pub use container::{
    decode_videos, encode_videos, load_videos, save_videos, HEADER_BYTES, VIDEO_MAGIC,
    VIDEO_VERSION,
};
pub use digits::DigitSynth;
pub use idx::{
    encode_idx, images_from_idx, load_idx, parse_images, parse_labels, save_idx, IMAGES_MAGIC,
    LABELS_MAGIC,
};
pub use video::{
    rotate_image, rotate_video, rotated_videos, scan_positions, scan_video, scanned_videos,
    ImageDataset, Transform, VideoDataset, VideoMeta,
};
pub use zca::{ZcaEpsilon, ZcaTransform};
