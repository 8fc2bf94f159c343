//! Browser demo bindings.
//!
//! Three interactive operations over the engine, all working on RGBA
//! canvas buffers:
//! - spectral low/high-pass filtering of an image at an adjustable size,
//!   with the mask and the log-magnitude spectrum as companion views;
//! - a static cost explorer: depth/width/downsample in, GFLOPs and
//!   parameter millions out;
//! - synthetic grating generation and four-phase sub-grid decomposition,
//!   the spatial view behind the dilated pooling downsampler.
//!
//! The crate also compiles natively so the bindings are unit-testable
//! without a browser.

use wasm_bindgen::prelude::wasm_bindgen;

use scenenet::arch::{build, config as arch_config, Network};
use scenenet::cost;
use scenenet::freq::{apply_filter, fft2d, make_mask, FilterKind, FilterSpec};
use scenenet::layers::phase_decompose;
use scenenet::tensor::{Shape, Tensor4};
use scenenet::train::dataset::{synthetic_dataset, SyntheticSpec};

fn rgba_to_tensor(pixels: &[u8], side: usize) -> Result<Tensor4<f64>, String> {
    if pixels.len() != side * side * 4 {
        return Err(format!(
            "expected {} RGBA bytes for side {side}, got {}",
            side * side * 4,
            pixels.len()
        ));
    }
    Ok(Tensor4::from_fn(Shape::new(1, 3, side, side), |_, c, k, l| {
        pixels[(k * side + l) * 4 + c] as f64 / 255.0
    }))
}

fn tensor_to_rgba(t: &Tensor4<f64>) -> Vec<u8> {
    let s = t.shape();
    let mut out = Vec::with_capacity(s.h * s.w * 4);
    for k in 0..s.h {
        for l in 0..s.w {
            for c in 0..3 {
                let v = if s.c == 1 { t.at(0, 0, k, l) } else { t.at(0, c, k, l) };
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
    }
    out
}

fn parse_filter(kind: &str, size: usize, side: usize) -> Result<FilterSpec, String> {
    let kind = FilterKind::parse(kind).map_err(|e| e.to_string())?;
    let filter = FilterSpec::new(kind, size);
    filter.validate(side).map_err(|e| e.to_string())?;
    Ok(filter)
}

/// Filters a square RGBA image in the frequency domain and returns the
/// filtered RGBA buffer (clamped back to displayable range).
#[wasm_bindgen]
pub fn filter_image(pixels: &[u8], side: usize, kind: &str, size: usize) -> Result<Vec<u8>, String> {
    let image = rgba_to_tensor(pixels, side)?;
    let filter = parse_filter(kind, size, side)?;
    let filtered = apply_filter(&image, &filter).map_err(|e| e.to_string())?;
    Ok(tensor_to_rgba(&filtered))
}

/// The binary mask for a filter, as an RGBA image (white = passed).
#[wasm_bindgen]
pub fn filter_mask(side: usize, kind: &str, size: usize) -> Result<Vec<u8>, String> {
    let filter = parse_filter(kind, size, side)?;
    let mask = make_mask(&filter, side).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(side * side * 4);
    for v in mask {
        let g = if v > 0.5 { 255 } else { 0 };
        out.extend_from_slice(&[g, g, g, 255]);
    }
    Ok(out)
}

/// Log-scaled magnitude spectrum of the luma channel, as RGBA.
#[wasm_bindgen]
pub fn spectrum_view(pixels: &[u8], side: usize) -> Result<Vec<u8>, String> {
    let rgb = rgba_to_tensor(pixels, side)?;
    let luma = Tensor4::from_fn(Shape::new(1, 1, side, side), |_, _, k, l| {
        0.299 * rgb.at(0, 0, k, l) + 0.587 * rgb.at(0, 1, k, l) + 0.114 * rgb.at(0, 2, k, l)
    });
    let spectrum = fft2d(&luma).map_err(|e| e.to_string())?;
    let mags = spectrum.magnitudes(0);
    let logs: Vec<f64> = mags.iter().map(|m| (1.0 + m * side as f64).ln()).collect();
    let max = logs.iter().cloned().fold(f64::MIN, f64::max).max(1e-12);
    let mut out = Vec::with_capacity(side * side * 4);
    for v in logs {
        let g = ((v / max).clamp(0.0, 1.0) * 255.0).round() as u8;
        out.extend_from_slice(&[g, g, g, 255]);
    }
    Ok(out)
}

/// Cost summary for an inline architecture spec; returns
/// `model,gflops,params_m,weighted_layers` as one CSV row.
#[wasm_bindgen]
pub fn cost_summary(arch: &str, input: usize) -> Result<String, String> {
    let spec = arch_config::from_inline(arch).map_err(|e| e.to_string())?;
    let net: Network<f32> = build(&spec, 0).map_err(|e| e.to_string())?;
    let report = cost::report(&net, (input, input)).map_err(|e| e.to_string())?;
    Ok(format!(
        "{},{:.4},{:.4},{}",
        report.model,
        report.total_gflops(),
        report.total_params_m(),
        net.weighted_depth()
    ))
}

/// Per-layer cost rows (`layer,macs,params` CSV) for plotting.
#[wasm_bindgen]
pub fn cost_csv(arch: &str, input: usize) -> Result<String, String> {
    let spec = arch_config::from_inline(arch).map_err(|e| e.to_string())?;
    let net: Network<f32> = build(&spec, 0).map_err(|e| e.to_string())?;
    let report = cost::report(&net, (input, input)).map_err(|e| e.to_string())?;
    Ok(report.to_csv())
}

/// One synthetic grating image (RGBA) from the desk-scale generator.
#[wasm_bindgen]
pub fn synthetic_grating(
    class_index: usize,
    num_classes: usize,
    side: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<u8>, String> {
    if num_classes == 0 || class_index >= num_classes {
        return Err(format!(
            "class index {class_index} out of range [0, {num_classes})"
        ));
    }
    let spec = SyntheticSpec {
        num_classes,
        side,
        per_class: 1,
        sigma,
    };
    let data = synthetic_dataset(&spec, seed).map_err(|e| e.to_string())?;
    let image = &data.images[class_index];
    let mut out = Vec::with_capacity(side * side * 4);
    for px in image.chunks_exact(3) {
        out.extend_from_slice(&[px[0], px[1], px[2], 255]);
    }
    Ok(out)
}

/// The four spatial phase sub-grids of an image, tiled into one RGBA
/// buffer of the same side (each quadrant is one half-resolution grid:
/// top-left (even, even), top-right (even, odd), bottom-left (odd, even),
/// bottom-right (odd, odd)).
#[wasm_bindgen]
pub fn phase_grid_view(pixels: &[u8], side: usize) -> Result<Vec<u8>, String> {
    if side % 2 != 0 {
        return Err(format!("side must be even, got {side}"));
    }
    let image = rgba_to_tensor(pixels, side)?;
    let grids = phase_decompose(&image).map_err(|e| e.to_string())?;
    let half = side / 2;
    let collage = Tensor4::from_fn(Shape::new(1, 3, side, side), |_, c, k, l| {
        let (quad_row, k_in) = if k < half { (0, k) } else { (1, k - half) };
        let (quad_col, l_in) = if l < half { (0, l) } else { (1, l - half) };
        grids.grids[2 * quad_row + quad_col].at(0, c, k_in, l_in)
    });
    Ok(tensor_to_rgba(&collage))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard_rgba(side: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(side * side * 4);
        for k in 0..side {
            for l in 0..side {
                let v = if (k + l) % 2 == 0 { 255 } else { 0 };
                out.extend_from_slice(&[v, v, v, 255]);
            }
        }
        out
    }

    #[test]
    fn full_size_filter_is_identity_on_bytes() {
        let side = 16;
        let image = checkerboard_rgba(side);
        for kind in ["low", "high"] {
            let filtered = filter_image(&image, side, kind, side).unwrap();
            assert_eq!(filtered, image);
        }
    }

    #[test]
    fn mask_shrinks_with_size() {
        let side = 16;
        let count_white = |buf: &[u8]| buf.chunks_exact(4).filter(|px| px[0] == 255).count();
        let small = count_white(&filter_mask(side, "low", 4).unwrap());
        let large = count_white(&filter_mask(side, "low", 12).unwrap());
        assert!(small < large);
        assert_eq!(count_white(&filter_mask(side, "low", side).unwrap()), side * side);
    }

    #[test]
    fn cost_summary_matches_engine_numbers() {
        let row = cost_summary("depth=101,width_factor=0.5,classes=365,downsample=dilated_pool", 224).unwrap();
        let parts: Vec<&str> = row.split(',').collect();
        assert_eq!(parts.len(), 4);
        let gflops: f64 = parts[1].parse().unwrap();
        let params: f64 = parts[2].parse().unwrap();
        assert!((gflops - 1.98).abs() < 0.02, "{gflops}");
        assert!((params - 11.03).abs() < 0.02, "{params}");
        assert_eq!(parts[3], "101");
    }

    #[test]
    fn grating_is_deterministic_and_class_dependent() {
        let a = synthetic_grating(0, 10, 32, 0.0, 1).unwrap();
        let b = synthetic_grating(0, 10, 32, 0.0, 1).unwrap();
        let c = synthetic_grating(3, 10, 32, 0.0, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn phase_view_quadrants_hold_the_sub_grids() {
        let side = 8;
        let mut pixels = vec![0u8; side * side * 4];
        // Put a marker at (0, 0): parity (even, even) lands top-left.
        pixels[0] = 255;
        pixels[3] = 255;
        for px in pixels.chunks_exact_mut(4) {
            px[3] = 255;
        }
        let view = phase_grid_view(&pixels, side).unwrap();
        assert_eq!(view[0], 255);
        // Marker at (1, 1): parity (odd, odd) lands bottom-right quadrant.
        let mut pixels2 = vec![0u8; side * side * 4];
        for px in pixels2.chunks_exact_mut(4) {
            px[3] = 255;
        }
        pixels2[(side + 1) * 4] = 255;
        let view2 = phase_grid_view(&pixels2, side).unwrap();
        let half = side / 2;
        let br = ((half * side) + half) * 4;
        assert_eq!(view2[br], 255);
    }

    #[test]
    fn spectrum_view_of_constant_image_peaks_at_center() {
        let side = 8;
        let pixels = vec![128u8; side * side * 4];
        let view = spectrum_view(&pixels, side).unwrap();
        let center = ((side / 2) * side + side / 2) * 4;
        assert_eq!(view[center], 255);
    }
}
