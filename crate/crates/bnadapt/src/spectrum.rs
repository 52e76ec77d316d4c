//! Fourier amplitude featurization.
//!
//! The reference spectrum is the elementwise mean amplitude over natural
//! images. Per-image features are `ln(|F(x)| / eps + 1)`, flattened over the
//! non-redundant half of the spectrum. `fftshift` is applied only when
//! exporting grids for inspection, never in the feature path; the detector
//! is a fully connected net, so bin order is a fixed convention, not signal.

use crate::corruptions::{CorruptedCorpus, CorruptionLabel};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::numerics::{amplitude, avgpool2, fft2, fftshift, Tensor};

/// Floor applied to every reference bin so the division never blows up.
pub const EPS_FLOOR: f32 = 1e-8;

/// Which channels feed the spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMode {
    /// First channel only (the default).
    FirstChannel,
    /// Mean of per-channel amplitude spectra.
    MeanOverChannels,
}

/// Mean natural amplitude spectrum; strictly positive at every bin.
#[derive(Debug, Clone)]
pub struct NaturalSpectrum {
    grid: Tensor,
    count: usize,
    mode: ChannelMode,
}

impl NaturalSpectrum {
    pub fn from_parts(grid: Tensor, count: usize, mode: ChannelMode) -> Result<Self> {
        if count == 0 {
            return Err(Error::EmptyInput("NaturalSpectrum"));
        }
        if grid.data().iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument {
                context: "NaturalSpectrum",
                detail: "reference bins must be strictly positive".into(),
            });
        }
        Ok(NaturalSpectrum { grid, count, mode })
    }

    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mode(&self) -> ChannelMode {
        self.mode
    }

    pub fn height(&self) -> usize {
        self.grid.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.grid.shape()[1]
    }

    /// Feature length for this geometry: H * (W/2 + 1).
    pub fn feature_len(&self) -> usize {
        self.height() * (self.width() / 2 + 1)
    }
}

/// Flattened normalized half-spectrum of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f32>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// Amplitude spectrum of one image under the given channel mode.
fn image_amplitude(img: &Image, mode: ChannelMode) -> Result<Tensor> {
    match mode {
        ChannelMode::FirstChannel => Ok(amplitude(&fft2(&img.channel(0))?)),
        ChannelMode::MeanOverChannels => {
            let mut acc: Option<Vec<f64>> = None;
            for c in 0..img.channels() {
                let amp = amplitude(&fft2(&img.channel(c))?);
                let acc = acc.get_or_insert_with(|| vec![0.0; amp.len()]);
                for (a, &v) in acc.iter_mut().zip(amp.data()) {
                    *a += v as f64;
                }
            }
            let acc = acc.ok_or(Error::EmptyInput("image has no channels"))?;
            let inv = 1.0 / img.channels() as f64;
            Tensor::from_vec(
                vec![img.height(), img.width()],
                acc.into_iter().map(|v| (v * inv) as f32).collect(),
            )
        }
    }
}

/// Elementwise mean amplitude over `images`, floored at [`EPS_FLOOR`].
pub fn mean_amplitude(images: &[Image], mode: ChannelMode) -> Result<NaturalSpectrum> {
    let first = images.first().ok_or(Error::EmptyInput("mean_amplitude"))?;
    let (h, w) = (first.height(), first.width());
    let mut acc = vec![0.0f64; h * w];
    for img in images {
        if img.height() != h || img.width() != w {
            return Err(Error::ShapeMismatch {
                context: "mean_amplitude",
                expected: vec![h, w],
                got: vec![img.height(), img.width()],
            });
        }
        let amp = image_amplitude(img, mode)?;
        for (a, &v) in acc.iter_mut().zip(amp.data()) {
            *a += v as f64;
        }
    }
    let inv = 1.0 / images.len() as f64;
    let grid = Tensor::from_vec(
        vec![h, w],
        acc.into_iter().map(|v| ((v * inv) as f32).max(EPS_FLOOR)).collect(),
    )?;
    NaturalSpectrum::from_parts(grid, images.len(), mode)
}

/// `ln(amp / eps + 1)` per bin.
pub fn normalize_spectrum(amp: &Tensor, eps: &NaturalSpectrum) -> Result<Tensor> {
    if amp.shape() != eps.grid.shape() {
        return Err(Error::ShapeMismatch {
            context: "normalize_spectrum",
            expected: eps.grid.shape().to_vec(),
            got: amp.shape().to_vec(),
        });
    }
    let data = amp
        .data()
        .iter()
        .zip(eps.grid.data())
        .map(|(&a, &e)| (a / e + 1.0).ln())
        .collect();
    Tensor::from_vec(amp.shape().to_vec(), data)
}

/// Halve a plane with a 2x2 stride-2 average pool.
fn halve_plane(plane: Tensor) -> Result<Tensor> {
    let (h, w) = (plane.shape()[0], plane.shape()[1]);
    let pooled = avgpool2(&plane.reshape(vec![1, 1, h, w])?, 2, 2)?;
    pooled.reshape(vec![h / 2, w / 2])
}

/// Normalized half-spectrum feature of one image.
///
/// Images larger than the reference geometry are average-pooled by factors
/// of two until they match; anything else is a geometry error. The half
/// kept is columns 0..=W/2 of the unshifted spectrum.
pub fn extract_feature(img: &Image, eps: &NaturalSpectrum) -> Result<FeatureVector> {
    let (eh, ew) = (eps.height(), eps.width());
    let mut planes: Vec<Tensor> = match eps.mode {
        ChannelMode::FirstChannel => vec![img.channel(0)],
        ChannelMode::MeanOverChannels => (0..img.channels()).map(|c| img.channel(c)).collect(),
    };
    loop {
        let (h, w) = (planes[0].shape()[0], planes[0].shape()[1]);
        if (h, w) == (eh, ew) {
            break;
        }
        if h > eh && w > ew && h % 2 == 0 && w % 2 == 0 {
            planes = planes.into_iter().map(halve_plane).collect::<Result<_>>()?;
        } else {
            return Err(Error::ShapeMismatch {
                context: "extract_feature geometry",
                expected: vec![eh, ew],
                got: vec![img.height(), img.width()],
            });
        }
    }
    let mut acc = vec![0.0f64; eh * ew];
    for plane in &planes {
        let amp = amplitude(&fft2(plane)?);
        for (a, &v) in acc.iter_mut().zip(amp.data()) {
            *a += v as f64;
        }
    }
    let inv = 1.0 / planes.len() as f64;
    let amp = Tensor::from_vec(vec![eh, ew], acc.into_iter().map(|v| (v * inv) as f32).collect())?;
    let norm = normalize_spectrum(&amp, eps)?;
    let half_w = ew / 2 + 1;
    let mut values = Vec::with_capacity(eh * half_w);
    for y in 0..eh {
        for x in 0..half_w {
            values.push(norm.at2(y, x));
        }
    }
    Ok(FeatureVector(values))
}

/// Per-label normalized mean spectrum, fftshifted for export and optionally
/// clamped to [0, 1].
pub fn mean_corruption_spectrum(
    corpus: &CorruptedCorpus,
    labels: &[CorruptionLabel],
    eps: &NaturalSpectrum,
    clamp_at_one: bool,
) -> Result<Vec<(CorruptionLabel, Tensor)>> {
    let mut out = Vec::with_capacity(labels.len());
    for &label in labels {
        let records = corpus.by_corruption(label);
        if records.is_empty() {
            return Err(Error::MissingCells { cells: vec![label.name().to_string()] });
        }
        let (h, w) = (eps.height(), eps.width());
        let mut acc = vec![0.0f64; h * w];
        for r in &records {
            let amp = image_amplitude(&r.image, eps.mode)?;
            for (a, &v) in acc.iter_mut().zip(amp.data()) {
                *a += v as f64;
            }
        }
        let inv = 1.0 / records.len() as f64;
        let amp =
            Tensor::from_vec(vec![h, w], acc.into_iter().map(|v| (v * inv) as f32).collect())?;
        let mut grid = fftshift(&normalize_spectrum(&amp, eps)?);
        if clamp_at_one {
            for v in grid.data_mut() {
                *v = v.min(1.0);
            }
        }
        out.push((label, grid));
    }
    Ok(out)
}

/// Render a nonnegative grid as a plain-text P2 grayscale grid.
///
/// Values are scaled by 255 / max(1, grid max), so clamped grids map [0, 1]
/// onto 0..=255 directly.
pub fn write_p2(grid: &Tensor) -> String {
    let (h, w) = (grid.shape()[0], grid.shape()[1]);
    let max = grid.data().iter().cloned().fold(0.0f32, f32::max).max(1.0);
    let mut out = format!("P2\n{w} {h}\n255\n");
    for y in 0..h {
        let row: Vec<String> = (0..w)
            .map(|x| (((grid.at2(y, x).max(0.0) / max) * 255.0).round() as u32).to_string())
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}
