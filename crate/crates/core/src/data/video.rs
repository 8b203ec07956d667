use crate::engine::{Real, Shape4, Tensor4};
use crate::error::{Error, Result};
use crate::par::{map_indexed, Execution};

/// Labelled still images, (N, C, H, W).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset<T> {
    pub images: Tensor4<T>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl<T: Real> ImageDataset<T> {
    pub fn new(images: Tensor4<T>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.shape().n() != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.shape().n(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(ImageDataset {
            images,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Image `i` as a (1, C, H, W) tensor.
    pub fn image(&self, i: usize) -> Tensor4<T> {
        self.images.batch_slice(i, 1).expect("index in range")
    }

    /// The first `count` images.
    pub fn take(&self, count: usize) -> Result<Self> {
        let count = count.min(self.len());
        Self::new(
            self.images.batch_slice(0, count)?,
            self.labels[..count].to_vec(),
            self.class_count,
        )
    }
}

/// How a video was synthesised from its source image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    /// Frames are the original clip (no synthesis).
    Identity,
    Rotate { step_degrees: f64 },
    Scan { window: usize, stride: usize },
}

impl Transform {
    pub(crate) fn code(&self) -> u32 {
        match self {
            Transform::Identity => 0,
            Transform::Rotate { .. } => 1,
            Transform::Scan { .. } => 2,
        }
    }

    pub(crate) fn params(&self) -> (f64, f64) {
        match *self {
            Transform::Identity => (0.0, 0.0),
            Transform::Rotate { step_degrees } => (step_degrees, 0.0),
            Transform::Scan { window, stride } => (window as f64, stride as f64),
        }
    }

    pub(crate) fn from_code(code: u32, a: f64, b: f64) -> Option<Self> {
        match code {
            0 => Some(Transform::Identity),
            1 => Some(Transform::Rotate { step_degrees: a }),
            2 => Some(Transform::Scan {
                window: a as usize,
                stride: b as usize,
            }),
            _ => None,
        }
    }
}

/// Provenance of one video.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VideoMeta {
    pub source: u64,
    pub transform: Transform,
}

/// Labelled videos sharing one (T, C, H, W) frame layout, stored contiguously
/// as (N, T, C, H, W).
#[derive(Clone, Debug, PartialEq)]
pub struct VideoDataset<T> {
    frames: usize,
    frame_shape: Shape4,
    data: Vec<T>,
    labels: Vec<usize>,
    meta: Vec<VideoMeta>,
    class_count: usize,
}

impl<T: Real> VideoDataset<T> {
    /// Empty dataset for frames of `(channels, height, width)`.
    pub fn empty(frames: usize, channels: usize, height: usize, width: usize, class_count: usize) -> Self {
        VideoDataset {
            frames,
            frame_shape: Shape4::new(1, channels, height, width),
            data: Vec::new(),
            labels: Vec::new(),
            meta: Vec::new(),
            class_count,
        }
    }

    pub(crate) fn from_parts(
        frames: usize,
        frame_shape: Shape4,
        data: Vec<T>,
        labels: Vec<usize>,
        meta: Vec<VideoMeta>,
        class_count: usize,
    ) -> Result<Self> {
        let per = frames * frame_shape.sample();
        if data.len() != per * labels.len() || meta.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} values, {} labels and {} metadata rows do not describe whole videos of {per} values",
                data.len(),
                labels.len(),
                meta.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(VideoDataset {
            frames,
            frame_shape,
            data,
            labels,
            meta,
            class_count,
        })
    }

    /// Appends one video; each frame must be (1, C, H, W).
    pub fn push(&mut self, frames: &[Tensor4<T>], label: usize, meta: VideoMeta) -> Result<()> {
        if frames.len() != self.frames {
            return Err(Error::shape(format!(
                "video has {} frames, dataset expects {}",
                frames.len(),
                self.frames
            )));
        }
        if label >= self.class_count {
            return Err(Error::Data(format!(
                "label {label} out of range for {} classes",
                self.class_count
            )));
        }
        for f in frames {
            if f.shape() != self.frame_shape {
                return Err(Error::shape(format!(
                    "frame {} does not match dataset frames {}",
                    f.shape(),
                    self.frame_shape
                )));
            }
        }
        for f in frames {
            self.data.extend_from_slice(f.data());
        }
        self.labels.push(label);
        self.meta.push(meta);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Frames per video.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Shape of one frame, (1, C, H, W).
    pub fn frame_shape(&self) -> Shape4 {
        self.frame_shape
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn meta(&self) -> &[VideoMeta] {
        &self.meta
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn raw(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn raw_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    fn frame_slice(&self, video: usize, t: usize) -> &[T] {
        let per = self.frame_shape.sample();
        let start = (video * self.frames + t) * per;
        &self.data[start..start + per]
    }

    /// Frame `t` of video `video` as (1, C, H, W).
    pub fn frame(&self, video: usize, t: usize) -> Tensor4<T> {
        Tensor4::from_vec(self.frame_shape, self.frame_slice(video, t).to_vec())
            .expect("frame layout")
    }

    pub fn video(&self, video: usize) -> Vec<Tensor4<T>> {
        (0..self.frames).map(|t| self.frame(video, t)).collect()
    }

    /// Per-time-step batches (b, C, H, W) for the given videos, truncated to
    /// the first `frames` frames.
    pub fn batch(&self, indices: &[usize], frames: usize) -> Vec<Tensor4<T>> {
        let s = self.frame_shape;
        (0..frames.min(self.frames))
            .map(|t| {
                let mut data = Vec::with_capacity(indices.len() * s.sample());
                for &v in indices {
                    data.extend_from_slice(self.frame_slice(v, t));
                }
                Tensor4::from_vec(Shape4::new(indices.len(), s.c(), s.h(), s.w()), data)
                    .expect("batch layout")
            })
            .collect()
    }

    /// Videos `indices` as a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let per = self.frames * self.frame_shape.sample();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        VideoDataset {
            frames: self.frames,
            frame_shape: self.frame_shape,
            data,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            meta: indices.iter().map(|&i| self.meta[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Every frame of every video as rows of a (N*T, C, H, W) tensor.
    pub fn all_frames(&self) -> Tensor4<T> {
        let s = self.frame_shape;
        Tensor4::from_vec(
            Shape4::new(self.len() * self.frames, s.c(), s.h(), s.w()),
            self.data.clone(),
        )
        .expect("frame layout")
    }

    pub fn cast<U: Real>(&self) -> VideoDataset<U> {
        VideoDataset {
            frames: self.frames,
            frame_shape: self.frame_shape,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
            labels: self.labels.clone(),
            meta: self.meta.clone(),
            class_count: self.class_count,
        }
    }
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90°.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let turns = deg / 90.0;
    if turns == turns.round() {
        match (turns.round() as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        deg.to_radians().sin_cos()
    }
}

/// Rotates every channel of a (1, C, H, W) image counter-clockwise by
/// `degrees` about the image centre, bilinear sampling with zero fill.
pub fn rotate_image<T: Real>(image: &Tensor4<T>, degrees: f64) -> Tensor4<T> {
    let s = image.shape();
    let (h, w) = (s.h(), s.w());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = sin_cos_deg(degrees);
    let fetch = |n: usize, c: usize, r: isize, q: isize| -> f64 {
        if r < 0 || q < 0 || r >= h as isize || q >= w as isize {
            0.0
        } else {
            image.get([n, c, r as usize, q as usize]).as_f64()
        }
    };
    Tensor4::from_fn(s, |[n, c, i, j]| {
        // Output offset with y pointing up, then the inverse rotation.
        let (x, y) = (j as f64 - cx, cy - i as f64);
        let (xs, ys) = (x * cos + y * sin, -x * sin + y * cos);
        let (col, row) = (cx + xs, cy - ys);
        let (r0, q0) = (row.floor(), col.floor());
        let (fr, fq) = (row - r0, col - q0);
        let (r0, q0) = (r0 as isize, q0 as isize);
        let v = (1.0 - fr) * (1.0 - fq) * fetch(n, c, r0, q0)
            + (1.0 - fr) * fq * fetch(n, c, r0, q0 + 1)
            + fr * (1.0 - fq) * fetch(n, c, r0 + 1, q0)
            + fr * fq * fetch(n, c, r0 + 1, q0 + 1);
        T::lit(v)
    })
}

/// Frame `k` is `image` rotated counter-clockwise by `k * step_degrees`.
pub fn rotate_video<T: Real>(
    image: &Tensor4<T>,
    frames: usize,
    step_degrees: f64,
) -> Result<Vec<Tensor4<T>>> {
    if frames < 2 {
        return Err(Error::config(format!(
            "rotation videos need at least 2 frames, got {frames}"
        )));
    }
    if image.shape().n() != 1 || !matches!(image.shape().c(), 1 | 3) {
        return Err(Error::shape(format!(
            "expected one grayscale or RGB image, got {}",
            image.shape()
        )));
    }
    if !step_degrees.is_finite() {
        return Err(Error::config("rotation step must be finite"));
    }
    Ok((0..frames)
        .map(|k| rotate_image(image, k as f64 * step_degrees))
        .collect())
}

/// Number of window positions per axis, or a configuration error.
pub fn scan_positions(len: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 || window > len || !(len - window).is_multiple_of(stride) {
        return Err(Error::config(format!(
            "window {window} with stride {stride} does not tile an axis of {len}"
        )));
    }
    Ok((len - window) / stride + 1)
}

/// Slides a square window over a (1, C, H, W) image, vertical first from the
/// upper-left corner: all rows of the first column position, then the next.
pub fn scan_video<T: Real>(image: &Tensor4<T>, window: usize, stride: usize) -> Result<Vec<Tensor4<T>>> {
    let s = image.shape();
    if s.n() != 1 {
        return Err(Error::shape(format!("expected a single image, got {s}")));
    }
    let rows = scan_positions(s.h(), window, stride)?;
    let cols = scan_positions(s.w(), window, stride)?;
    let mut out = Vec::with_capacity(rows * cols);
    for cj in 0..cols {
        for ri in 0..rows {
            let (r0, c0) = (ri * stride, cj * stride);
            out.push(Tensor4::from_fn(
                Shape4::new(1, s.c(), window, window),
                |[_, c, i, j]| image.get([0, c, r0 + i, c0 + j]),
            ));
        }
    }
    Ok(out)
}

fn synthesize<T: Real>(
    images: &ImageDataset<T>,
    exec: Execution,
    transform: Transform,
    make: impl Fn(&Tensor4<T>) -> Result<Vec<Tensor4<T>>> + Sync + Send,
) -> Result<VideoDataset<T>> {
    let videos = map_indexed(images.len(), exec, |i| make(&images.image(i)));
    let mut ds: Option<VideoDataset<T>> = None;
    for (i, v) in videos.into_iter().enumerate() {
        let v = v?;
        let s = v[0].shape();
        let ds = ds.get_or_insert_with(|| {
            VideoDataset::empty(v.len(), s.c(), s.h(), s.w(), images.class_count)
        });
        ds.push(
            &v,
            images.labels[i],
            VideoMeta {
                source: i as u64,
                transform,
            },
        )?;
    }
    ds.ok_or_else(|| Error::Data("no source images".into()))
}

/// One rotation video per source image, labels preserved.
pub fn rotated_videos<T: Real>(
    images: &ImageDataset<T>,
    frames: usize,
    step_degrees: f64,
    exec: Execution,
) -> Result<VideoDataset<T>> {
    synthesize(images, exec, Transform::Rotate { step_degrees }, |img| {
        rotate_video(img, frames, step_degrees)
    })
}

/// One scanning-window video per source image, labels preserved.
pub fn scanned_videos<T: Real>(
    images: &ImageDataset<T>,
    window: usize,
    stride: usize,
    exec: Execution,
) -> Result<VideoDataset<T>> {
    synthesize(images, exec, Transform::Scan { window, stride }, |img| {
        scan_video(img, window, stride)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, vals: &[f64]) -> Tensor4<f64> {
        Tensor4::from_f64(Shape4::new(1, 1, h, w), vals).unwrap()
    }

    #[test]
    fn zero_step_repeats_the_image() {
        let x = img(3, 3, &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let v = rotate_video(&x, 4, 0.0).unwrap();
        assert_eq!(v.len(), 4);
        assert!(v.iter().all(|f| *f == x));
    }

    #[test]
    fn quarter_turn_is_a_permutation() {
        let x = img(3, 3, &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let v = rotate_video(&x, 2, 90.0).unwrap();
        // Counter-clockwise: the right column becomes the top row.
        assert_eq!(v[1].data(), &[3., 6., 9., 2., 5., 8., 1., 4., 7.]);
    }

    #[test]
    fn full_turn_in_steps_returns_near_original() {
        let n = 24;
        let c = (n as f64 - 1.0) / 2.0;
        let x = Tensor4::<f64>::from_fn(Shape4::new(1, 1, n, n), |[_, _, i, j]| {
            let (dy, dx) = (i as f64 - c, j as f64 - c);
            (-(dx * dx + 0.5 * dy * dy) / 30.0).exp() + 0.2 * (dx / 4.0).sin()
        });
        let t = 5;
        let v = rotate_video(&x, t, 360.0 / t as f64).unwrap();
        let back = rotate_image(&v[t - 1], 360.0 / t as f64);
        let (mut sum, mut count) = (0.0, 0);
        for i in 6..n - 6 {
            for j in 6..n - 6 {
                sum += (back.get([0, 0, i, j]) - x.get([0, 0, i, j])).abs();
                count += 1;
            }
        }
        assert!(sum / (count as f64) < 0.05, "mad {}", sum / count as f64);
    }

    #[test]
    fn rotation_needs_two_frames() {
        let x = img(2, 2, &[0.; 4]);
        assert!(matches!(rotate_video(&x, 1, 10.0), Err(Error::Config(_))));
    }

    #[test]
    fn scan_is_vertical_first() {
        let x = Tensor4::<f64>::from_fn(Shape4::new(1, 1, 32, 32), |[_, _, i, j]| {
            (i * 32 + j) as f64
        });
        let v = scan_video(&x, 16, 8).unwrap();
        assert_eq!(v.len(), 9);
        assert_eq!(v[0].dims(), [1, 1, 16, 16]);
        assert_eq!(v[0].get([0, 0, 0, 0]), 0.0);
        assert_eq!(v[0].get([0, 0, 15, 15]), (15 * 32 + 15) as f64);
        // Frame 1 is rows 8..24 of the first column position.
        assert_eq!(v[1].get([0, 0, 0, 0]), (8 * 32) as f64);
        assert_eq!(v[3].get([0, 0, 0, 0]), 8.0);
    }

    #[test]
    fn constant_image_scans_to_identical_frames() {
        let x = Tensor4::<f64>::full(Shape4::new(1, 3, 32, 32), 0.7);
        let v = scan_video(&x, 16, 8).unwrap();
        assert!(v.iter().all(|f| *f == v[0]));
    }

    #[test]
    fn scan_rejects_non_tiling_stride() {
        let x = Tensor4::<f64>::zeros(Shape4::new(1, 1, 30, 30));
        assert!(matches!(scan_video(&x, 16, 8), Err(Error::Config(_))));
    }

    #[test]
    fn scan_frame_count_formula() {
        for (h, win, s) in [(32, 16, 8), (28, 10, 6), (20, 20, 4), (25, 5, 5)] {
            let x = Tensor4::<f64>::zeros(Shape4::new(1, 1, h, h));
            let k = (h - win) / s + 1;
            assert_eq!(scan_video(&x, win, s).unwrap().len(), k * k);
        }
    }

    #[test]
    fn synthesized_videos_keep_labels() {
        let images = Tensor4::<f64>::from_fn(Shape4::new(4, 1, 32, 32), |[n, _, i, j]| {
            ((n + i + j) % 5) as f64
        });
        let ds = ImageDataset::new(images, vec![3, 1, 0, 2], 4).unwrap();
        let rot = rotated_videos(&ds, 5, 18.0, Execution::Parallel).unwrap();
        let scan = scanned_videos(&ds, 16, 8, Execution::Sequential).unwrap();
        assert_eq!(rot.labels(), ds.labels.as_slice());
        assert_eq!(scan.labels(), ds.labels.as_slice());
        assert_eq!(rot.frames(), 5);
        assert_eq!(scan.frames(), 9);
        assert_eq!(rot.meta()[2].source, 2);
        assert_eq!(scan.frame(1, 0), scan_video(&ds.image(1), 16, 8).unwrap()[0]);
    }
}
