//! Browser bindings for three small demos. Each binding wraps a plain Rust
//! function so the logic is testable off the browser.

use passt::bench::{default_patchout, sequence_counts};
use passt::dsp::{log_mel, mel_center_frequencies, HopPreset, Waveform};
use passt::patch::PatchGeometry;
use passt::patchout::{self, PatchoutSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// Log-mel of a `seconds`-long sine at `freq_hz`, band-major, with the
/// band count, frame count and the argmax band of the middle frame in front.
pub fn tone_mel(freq_hz: f64, seconds: f64, preset: &str) -> Result<Vec<f32>, String> {
    let preset: HopPreset = preset.parse().map_err(|e: passt::Error| e.to_string())?;
    let cfg = preset.config();
    if !(freq_hz > 0.0 && freq_hz < cfg.fmax) || !(seconds > 0.0 && seconds <= 10.0) {
        return Err(format!("need 0 < freq < {} Hz and 0 < seconds <= 10", cfg.fmax));
    }
    let sr = cfg.sample_rate as f64;
    let n = (seconds * sr).round() as usize;
    let samples = (0..n)
        .map(|t| 0.5 * (2.0 * std::f64::consts::PI * freq_hz * t as f64 / sr).cos())
        .collect();
    let wave = Waveform::new(samples, cfg.sample_rate).map_err(|e| e.to_string())?;
    let mel = log_mel(&wave, &cfg).map_err(|e| e.to_string())?;
    let mut out = vec![mel.n_mels as f32, mel.n_frames as f32, mel.argmax_band(mel.n_frames / 2) as f32];
    out.extend((0..mel.n_mels).flat_map(|m| mel.band(m).iter().map(|&v| v as f32).collect::<Vec<_>>()));
    Ok(out)
}

/// Center frequency in Hz of every mel band at `preset`.
pub fn band_centers(preset: &str) -> Result<Vec<f64>, String> {
    let preset: HopPreset = preset.parse().map_err(|e: passt::Error| e.to_string())?;
    Ok(mel_center_frequencies(&preset.config()))
}

/// Token counts as JSON for a clip; `f_drop`/`t_drop` of -1 use the preset defaults.
pub fn token_counts(preset: &str, clip_s: f64, f_drop: i32, t_drop: i32) -> Result<String, String> {
    let preset: HopPreset = preset.parse().map_err(|e: passt::Error| e.to_string())?;
    let default = default_patchout(preset);
    let pick = |v: i32, d: usize| if v < 0 { d } else { v as usize };
    let spec = PatchoutSpec::structured(pick(f_drop, default.f_drop), pick(t_drop, default.t_drop));
    let counts = sequence_counts(preset, &PatchGeometry::default(), clip_s, &spec).map_err(|e| e.to_string())?;
    serde_json::to_string(&counts).map_err(|e| e.to_string())
}

/// Kept-patch mask (1 kept, 0 dropped), frequency-row major, for one draw.
pub fn patchout_mask(grid_f: usize, grid_t: usize, f_drop: usize, t_drop: usize, seed: u64) -> Result<Vec<u8>, String> {
    let spec = PatchoutSpec::structured(f_drop, t_drop);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kept = patchout::draw(&spec, grid_f, grid_t, &mut rng).map_err(|e| e.to_string())?;
    let mut mask = vec![0u8; grid_f * grid_t];
    for &f in &kept.rows {
        for &t in &kept.cols {
            mask[f * grid_t + t] = 1;
        }
    }
    Ok(mask)
}

fn js<T>(r: Result<T, String>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = toneMel)]
pub fn tone_mel_js(freq_hz: f64, seconds: f64, preset: &str) -> Result<Vec<f32>, JsError> {
    js(tone_mel(freq_hz, seconds, preset))
}

#[wasm_bindgen(js_name = bandCenters)]
pub fn band_centers_js(preset: &str) -> Result<Vec<f64>, JsError> {
    js(band_centers(preset))
}

#[wasm_bindgen(js_name = tokenCounts)]
pub fn token_counts_js(preset: &str, clip_s: f64, f_drop: i32, t_drop: i32) -> Result<String, JsError> {
    js(token_counts(preset, clip_s, f_drop, t_drop))
}

#[wasm_bindgen(js_name = patchoutMask)]
pub fn patchout_mask_js(grid_f: usize, grid_t: usize, f_drop: usize, t_drop: usize, seed: u64) -> Result<Vec<u8>, JsError> {
    js(patchout_mask(grid_f, grid_t, f_drop, t_drop, seed))
}
