//! WebAssembly bindings for the depthcls demo page.

use wasm_bindgen::prelude::*;

use depthcls::densecrf::{infer, CrfModel, InferenceMode, KernelParams};
use depthcls::depth::{argmax_decode, make_binning, quantize_depthmap, BinSpace, DepthMap};
use depthcls::infogain::build_infogain;
use depthcls::metrics::evaluate;
use depthcls::synth::{generate, label_scores, Layout, SceneSpec};

const D_MIN: f64 = 0.7;
const D_MAX: f64 = 10.0;

fn js_err(e: depthcls::Error) -> String {
    e.to_string()
}

/// Relative error and δ<1.25 percentage of quantizing a synthetic gradient
/// scene into `bins` bins, spaced in `"log"` or `"linear"` depth.
#[wasm_bindgen]
pub fn quantization_error(bins: usize, space: &str, size: usize) -> Result<Vec<f64>, String> {
    let space: BinSpace = space.parse().map_err(js_err)?;
    let binning = make_binning(bins, D_MIN, D_MAX, space).map_err(js_err)?;
    let scene = generate(&SceneSpec::new(0, size, size, Layout::GradientPlane)).map_err(js_err)?;
    let quantized = quantize_depthmap(&scene.depth, &binning).map_err(js_err)?;
    let report = evaluate(&scene.depth, &quantized).map_err(js_err)?;
    Ok(vec![report.rel, report.delta1])
}

/// Row-major `bins x bins` information-gain matrix.
#[wasm_bindgen]
pub fn infogain_matrix(bins: usize, alpha: f64) -> Result<Vec<f64>, String> {
    let h = build_infogain(bins, alpha).map_err(js_err)?;
    Ok((0..bins).flat_map(|p| h.row(p).to_vec()).collect())
}

/// Outcome of refining a corrupted two-region scene.
#[wasm_bindgen]
pub struct CrfDemo {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
    before: Vec<u8>,
    after: Vec<u8>,
    delta1_before: f64,
    delta1_after: f64,
    iterations: usize,
}

#[wasm_bindgen]
impl CrfDemo {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Scene colors as RGBA bytes.
    #[wasm_bindgen(getter)]
    pub fn rgb(&self) -> Vec<u8> {
        self.rgb.clone()
    }

    /// Argmax depth before refinement as RGBA bytes.
    #[wasm_bindgen(getter)]
    pub fn before(&self) -> Vec<u8> {
        self.before.clone()
    }

    /// Depth after refinement as RGBA bytes.
    #[wasm_bindgen(getter)]
    pub fn after(&self) -> Vec<u8> {
        self.after.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn delta1_before(&self) -> f64 {
        self.delta1_before
    }

    #[wasm_bindgen(getter)]
    pub fn delta1_after(&self) -> f64 {
        self.delta1_after
    }

    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// Corrupts `corruption` of the pixel scores of a two-region scene, then
/// refines them with the fully connected CRF.
#[wasm_bindgen]
pub fn crf_refine(
    seed: u64,
    size: usize,
    bins: usize,
    corruption: f64,
    w1: f64,
    w2: f64,
) -> Result<CrfDemo, String> {
    let scene = generate(&SceneSpec::new(seed, size, size, Layout::TwoRegions)).map_err(js_err)?;
    let binning = make_binning(bins, D_MIN, D_MAX, BinSpace::Log).map_err(js_err)?;
    let (probs, _) = label_scores(&scene.depth, &binning, 1.0, corruption, seed).map_err(js_err)?;
    let (_, before) = argmax_decode(&probs, &binning).map_err(js_err)?;
    let params = KernelParams {
        w1,
        w2,
        ..KernelParams::default()
    };
    let model = CrfModel::from_probabilities(&probs, &scene.rgb, params).map_err(js_err)?;
    let refined = infer(&model, 10, 1e-3, InferenceMode::Filtered).map_err(js_err)?;
    let after = refined.labels.to_depth(&binning).map_err(js_err)?;
    Ok(CrfDemo {
        width: size,
        height: size,
        rgb: (0..scene.rgb.pixels())
            .flat_map(|i| {
                let [r, g, b] = scene.rgb.pixel(i);
                [r, g, b, 255]
            })
            .collect(),
        delta1_before: evaluate(&scene.depth, &before).map_err(js_err)?.delta1,
        delta1_after: evaluate(&scene.depth, &after).map_err(js_err)?.delta1,
        before: depth_rgba(&before),
        after: depth_rgba(&after),
        iterations: refined.changes.len(),
    })
}

/// Near is bright, far is dark, on a log scale; invalid pixels are red.
fn depth_rgba(depth: &DepthMap) -> Vec<u8> {
    (0..depth.len())
        .flat_map(|i| match depth.get(i) {
            Some(d) => {
                let t = ((d / D_MIN).ln() / (D_MAX / D_MIN).ln()).clamp(0.0, 1.0);
                let v = (255.0 * (1.0 - t)).round() as u8;
                [v, v, v, 255]
            }
            None => [255, 0, 0, 255],
        })
        .collect()
}
