//! Spectral low/high-pass filtering.
//!
//! Images are carried into the frequency domain with a unitary 2-D FFT,
//! the spectrum is shifted so the zero-frequency term sits at the center
//! index (N/2, N/2), and a centered square binary mask keeps either the
//! low band (inner square of side s) or the high band (everything outside
//! the inner square of side N - s). Both kinds pass everything at s = N,
//! and `low(s)` and `high(N-s)` are exact complements, so the two
//! filtered images always reconstruct the original.
//!
//! Filtering is linear: no clamping happens here. Evaluation pipelines
//! clamp filtered pixels back to [0, 1] before normalization.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor4};

/// Low keeps the centered square; high keeps the outer band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Low,
    High,
}

impl FilterKind {
    pub fn label(self) -> &'static str {
        match self {
            FilterKind::Low => "low",
            FilterKind::High => "high",
        }
    }

    pub fn parse(text: &str) -> Result<FilterKind> {
        match text.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(FilterKind::Low),
            "high" => Ok(FilterKind::High),
            other => Err(Error::Validation(format!(
                "unknown filter kind '{other}'; supported: low, high"
            ))),
        }
    }
}

/// A mask description: kind plus size s in [0, N].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub size: usize,
}

impl FilterSpec {
    pub fn new(kind: FilterKind, size: usize) -> FilterSpec {
        FilterSpec { kind, size }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.size > n {
            return Err(Error::Validation(format!(
                "filter size {} out of range [0, {n}]",
                self.size
            )));
        }
        Ok(())
    }
}

/// Complex spectrum of a (c, N, N) image, zero frequency at the center.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub channels: usize,
    pub side: usize,
    pub data: Vec<Complex<f64>>,
}

impl Spectrum {
    fn plane(&self, c: usize) -> &[Complex<f64>] {
        let len = self.side * self.side;
        &self.data[c * len..(c + 1) * len]
    }

    /// Magnitudes of one channel plane, row-major.
    pub fn magnitudes(&self, c: usize) -> Vec<f64> {
        self.plane(c).iter().map(|v| v.norm()).collect()
    }
}

fn require_square(shape: Shape) -> Result<usize> {
    if shape.h != shape.w {
        return Err(Error::Dimension(format!(
            "spectral filtering needs square inputs, got {shape}"
        )));
    }
    Ok(shape.h)
}

/// In-place unitary 2-D FFT over one N x N plane (rows then columns, each
/// scaled so the two passes compose to 1/N overall).
fn fft2d_plane(data: &mut [Complex<f64>], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    for row in data.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = data[i * n + j];
        }
        fft.process(&mut col);
        for i in 0..n {
            data[i * n + j] = col[i];
        }
    }
    let scale = 1.0 / n as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Moves the zero-frequency term from index 0 to N/2 along both axes.
fn fftshift(data: &[Complex<f64>], n: usize) -> Vec<Complex<f64>> {
    let half = n / 2;
    let mut out = vec![Complex::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            out[((i + half) % n) * n + ((j + half) % n)] = data[i * n + j];
        }
    }
    out
}

/// Inverse of [`fftshift`] (distinct for odd N).
fn ifftshift(data: &[Complex<f64>], n: usize) -> Vec<Complex<f64>> {
    let half = n - n / 2;
    let mut out = vec![Complex::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            out[((i + half) % n) * n + ((j + half) % n)] = data[i * n + j];
        }
    }
    out
}

/// Forward transform of a (1, c, N, N) image; output is centered.
pub fn fft2d(image: &Tensor4<f64>) -> Result<Spectrum> {
    let s = image.shape();
    if s.n != 1 {
        return Err(Error::Dimension(format!(
            "fft2d expects a single image (1, c, N, N), got {s}"
        )));
    }
    let n = require_square(s)?;
    let mut data = Vec::with_capacity(s.c * n * n);
    for c in 0..s.c {
        let mut plane: Vec<Complex<f64>> = (0..n * n)
            .map(|idx| Complex::new(image.at(0, c, idx / n, idx % n), 0.0))
            .collect();
        fft2d_plane(&mut plane, n, false);
        data.extend(fftshift(&plane, n));
    }
    Ok(Spectrum {
        channels: s.c,
        side: n,
        data,
    })
}

/// Inverse transform; returns the real part and the largest imaginary
/// residue relative to the plane's magnitude scale.
pub fn ifft2d_with_residue(spectrum: &Spectrum) -> Result<(Tensor4<f64>, f64)> {
    let n = spectrum.side;
    let shape = Shape::new(1, spectrum.channels, n, n);
    let mut out = Tensor4::zeros(shape);
    let mut residue: f64 = 0.0;
    for c in 0..spectrum.channels {
        let mut plane = ifftshift(spectrum.plane(c), n);
        fft2d_plane(&mut plane, n, true);
        let scale = plane
            .iter()
            .map(|v| v.norm())
            .fold(0.0f64, f64::max)
            .max(1e-300);
        for (idx, v) in plane.iter().enumerate() {
            *out.at_mut(0, c, idx / n, idx % n) = v.re;
            residue = residue.max(v.im.abs() / scale);
        }
    }
    Ok((out, residue))
}

/// Inverse transform, real part only.
pub fn ifft2d(spectrum: &Spectrum) -> Result<Tensor4<f64>> {
    Ok(ifft2d_with_residue(spectrum)?.0)
}

/// Indicator of the kept centered square of side s.
///
/// For s < N the square is symmetric around the center index
/// (max(|i - N/2|, |j - N/2|) < s/2, strict so s = 0 keeps nothing);
/// s = N keeps everything, including the self-conjugate Nyquist row and
/// column at index 0 which sit exactly N/2 from the center.
fn kept_square(s: usize, n: usize) -> Vec<f64> {
    let mut mask = vec![0.0; n * n];
    if s >= n {
        mask.fill(1.0);
        return mask;
    }
    let center = n as isize / 2;
    let half = s as f64 / 2.0;
    for i in 0..n {
        for j in 0..n {
            let di = (i as isize - center).abs() as f64;
            let dj = (j as isize - center).abs() as f64;
            if di.max(dj) < half {
                mask[i * n + j] = 1.0;
            }
        }
    }
    mask
}

/// Binary mask for a filter over an N x N centered spectrum; low(s) keeps
/// the inner square of side s, high(s) removes the inner square of side
/// N - s, so low(s) and high(N - s) are exact complements.
pub fn make_mask(filter: &FilterSpec, n: usize) -> Result<Vec<f64>> {
    filter.validate(n)?;
    match filter.kind {
        FilterKind::Low => Ok(kept_square(filter.size, n)),
        FilterKind::High => Ok(kept_square(n - filter.size, n)
            .into_iter()
            .map(|v| 1.0 - v)
            .collect()),
    }
}

/// Mask as 8-bit grayscale (white = passed, black = removed), for visual
/// inspection dumps.
pub fn mask_to_gray(mask: &[f64]) -> Vec<u8> {
    mask.iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect()
}

/// Filters every (sample, channel) plane of a batch of square images:
/// forward transform, mask multiply, inverse transform (real part).
/// Computation runs in f64 regardless of the storage mode.
pub fn apply_filter<S: Scalar>(images: &Tensor4<S>, filter: &FilterSpec) -> Result<Tensor4<S>> {
    let s = images.shape();
    let n = require_square(s)?;
    filter.validate(n)?;
    let mask = make_mask(filter, n)?;
    let mut out = Tensor4::zeros(s);
    for b in 0..s.n {
        let single = Tensor4::from_fn(Shape::new(1, s.c, n, n), |_, c, k, l| {
            images.at(b, c, k, l).to_f64()
        });
        let mut spectrum = fft2d(&single)?;
        for c in 0..s.c {
            let plane_start = c * n * n;
            for (idx, &m) in mask.iter().enumerate() {
                spectrum.data[plane_start + idx] *= m;
            }
        }
        let filtered = ifft2d(&spectrum)?;
        for c in 0..s.c {
            for k in 0..n {
                for l in 0..n {
                    *out.at_mut(b, c, k, l) = S::from_f64(filtered.at(0, c, k, l));
                }
            }
        }
    }
    Ok(out)
}

/// One row of the accuracy-vs-filter-size sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub kind: FilterKind,
    pub size: usize,
    pub top1: f64,
    pub top5: f64,
    pub n: usize,
}

pub fn sweep_csv_header() -> &'static str {
    "kind,size,top1,top5,n"
}

impl SweepRow {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.kind.label(),
            self.size,
            self.top1,
            self.top5,
            self.n
        )
    }
}

/// Evaluates the model over the dataset once per filter size, filtering
/// every image before the eval-mode forward pass. Rows come back in the
/// order the sizes were given.
pub fn sweep<S: Scalar>(
    net: &crate::arch::Network<S>,
    data: &crate::train::dataset::Dataset,
    norm: &crate::train::dataset::Normalization,
    kind: FilterKind,
    sizes: &[usize],
    opts: crate::train::EvalOptions,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let filter = FilterSpec::new(kind, size);
        let metrics = crate::train::evaluate(net, data, norm, Some(&filter), opts)?;
        rows.push(SweepRow {
            kind,
            size,
            top1: metrics.top1,
            top5: metrics.top5,
            n: metrics.n,
        });
    }
    Ok(rows)
}
