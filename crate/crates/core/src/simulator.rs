//! Synthetic multispectral tissue measurements.
//!
//! Tissue is described by eight values: blood volume fraction and
//! oxygenation for each of three layers plus a shared scattering amplitude
//! and power. Reflectance on a 450–720 nm grid comes from an analytic
//! three-layer Beer–Lambert surrogate with Gaussian-bump hemoglobin
//! extinction curves; virtual cameras integrate it through Gaussian filter
//! responses under a xenon-like (flat) or LED-like illuminant and
//! L1-normalize the band vector.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;

use crate::datasets::{hex_digest, Dataset, DatasetMeta, SplitTag};
use crate::error::{Error, Result};
use crate::numcore::{mix_seed, Rng};

pub const GRID_START_NM: f64 = 450.0;
pub const GRID_END_NM: f64 = 720.0;
pub const GRID_STEP_NM: f64 = 2.0;
pub const GRID_LEN: usize = 136;

pub const LAYER_THICKNESS_CM: [f64; 3] = [0.05, 0.1, 0.2];
pub const LAYER_WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];

pub const BLOOD_VOLUME_RANGE: (f64, f64) = (0.0, 0.3);
pub const OXYGENATION_RANGE: (f64, f64) = (0.0, 1.0);
pub const SCATTERING_AMPLITUDE_RANGE: (f64, f64) = (5.0, 50.0);
pub const SCATTERING_POWER_RANGE: (f64, f64) = (0.3, 3.0);

/// Number of tissue parameters per sample.
pub const N_TISSUE_PARAMS: usize = 8;
/// Column of layer-1 oxygenation in the label vector
/// `[v1, s1, v2, s2, v3, s3, a, b]`.
pub const OXYGENATION_L1: usize = 1;

const MIN_REFLECTANCE: f64 = 1e-6;

pub fn wavelength_grid() -> Vec<f64> {
    (0..GRID_LEN).map(|i| GRID_START_NM + GRID_STEP_NM * i as f64).collect()
}

/// Index of `lambda` on the grid, if it is a grid point.
pub fn grid_index(lambda: f64) -> Option<usize> {
    let pos = (lambda - GRID_START_NM) / GRID_STEP_NM;
    let idx = pos.round();
    ((pos - idx).abs() < 1e-9 && idx >= 0.0 && (idx as usize) < GRID_LEN).then_some(idx as usize)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueParams {
    pub blood_volume: [f64; 3],
    pub oxygenation: [f64; 3],
    /// 1/cm at 500 nm
    pub scattering_amplitude: f64,
    pub scattering_power: f64,
}

impl TissueParams {
    pub fn to_vector(&self) -> [f64; N_TISSUE_PARAMS] {
        let [v1, v2, v3] = self.blood_volume;
        let [s1, s2, s3] = self.oxygenation;
        [v1, s1, v2, s2, v3, s3, self.scattering_amplitude, self.scattering_power]
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != N_TISSUE_PARAMS {
            return Err(Error::shape("tissue parameter vector", N_TISSUE_PARAMS, values.len()));
        }
        let p = Self {
            blood_volume: [values[0], values[2], values[4]],
            oxygenation: [values[1], values[3], values[5]],
            scattering_amplitude: values[6],
            scattering_power: values[7],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, (lo, hi): (f64, f64)| {
            if v >= lo && v <= hi {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} = {v} outside [{lo}, {hi}]")))
            }
        };
        for l in 0..3 {
            check("blood volume", self.blood_volume[l], BLOOD_VOLUME_RANGE)?;
            check("oxygenation", self.oxygenation[l], OXYGENATION_RANGE)?;
        }
        check("scattering amplitude", self.scattering_amplitude, SCATTERING_AMPLITUDE_RANGE)?;
        check("scattering power", self.scattering_power, SCATTERING_POWER_RANGE)
    }
}

/// Independent uniform draws over every parameter range.
pub fn sample_tissue_params(rng: &mut Rng) -> TissueParams {
    let mut blood_volume = [0.0; 3];
    let mut oxygenation = [0.0; 3];
    for l in 0..3 {
        blood_volume[l] = rng.uniform_range(BLOOD_VOLUME_RANGE.0, BLOOD_VOLUME_RANGE.1);
        oxygenation[l] = rng.uniform_range(OXYGENATION_RANGE.0, OXYGENATION_RANGE.1);
    }
    TissueParams {
        blood_volume,
        oxygenation,
        scattering_amplitude: rng.uniform_range(SCATTERING_AMPLITUDE_RANGE.0, SCATTERING_AMPLITUDE_RANGE.1),
        scattering_power: rng.uniform_range(SCATTERING_POWER_RANGE.0, SCATTERING_POWER_RANGE.1),
    }
}

/// Unit-height Gaussian; `width` is the standard deviation in nm.
pub fn gaussian_bump(lambda: f64, center: f64, width: f64) -> f64 {
    let u = (lambda - center) / width;
    (-0.5 * u * u).exp()
}

/// Oxygenated hemoglobin stand-in, 1/cm.
pub fn extinction_oxy(lambda: f64) -> f64 {
    20.0 * gaussian_bump(lambda, 545.0, 18.0) + 18.0 * gaussian_bump(lambda, 577.0, 16.0) + 2.0
}

/// Deoxygenated hemoglobin stand-in, 1/cm.
pub fn extinction_deoxy(lambda: f64) -> f64 {
    30.0 * gaussian_bump(lambda, 557.0, 25.0) + 2.0
}

fn absorption_at(params: &TissueParams, layer: usize, lambda: f64) -> f64 {
    let s = params.oxygenation[layer];
    params.blood_volume[layer] * (s * extinction_oxy(lambda) + (1.0 - s) * extinction_deoxy(lambda))
}

/// `μa` of `layer` (0-based) at a grid wavelength, 1/cm.
pub fn absorption_coefficient(params: &TissueParams, layer: usize, lambda: f64) -> Result<f64> {
    if layer >= 3 {
        return Err(Error::Domain(format!("layer {layer} does not exist")));
    }
    if grid_index(lambda).is_none() {
        return Err(Error::Domain(format!("{lambda} nm is not on the wavelength grid")));
    }
    Ok(absorption_at(params, layer, lambda))
}

/// `μs′(λ) = a·(λ/500)^(−b)`, 1/cm.
pub fn reduced_scattering(params: &TissueParams, lambda: f64) -> f64 {
    params.scattering_amplitude * (lambda / 500.0).powf(-params.scattering_power)
}

/// Absorber absent from the training simulations, added to every layer to
/// model out-of-domain tissue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtraAbsorber {
    pub center_nm: f64,
    pub width_nm: f64,
    /// Peak absorption, 1/cm.
    pub strength: f64,
}

impl Default for ExtraAbsorber {
    fn default() -> Self {
        Self {
            center_nm: 605.0,
            width_nm: 15.0,
            strength: 8.0,
        }
    }
}

/// Reflectance at an arbitrary wavelength, before clipping.
pub fn reflectance_at(params: &TissueParams, lambda: f64, extra: Option<&ExtraAbsorber>) -> f64 {
    let mus = reduced_scattering(params, lambda);
    let extra_mua = extra.map_or(0.0, |e| e.strength * gaussian_bump(lambda, e.center_nm, e.width_nm));
    (0..3)
        .map(|l| {
            let mua = absorption_at(params, l, lambda) + extra_mua;
            let attenuation = (-2.0 * (mua + mus / 10.0) * LAYER_THICKNESS_CM[l]).exp();
            let albedo = if mus + mua > 0.0 { mus / (mus + mua) } else { 1.0 };
            LAYER_WEIGHTS[l] * attenuation * albedo
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighResSpectrum {
    /// One value per grid wavelength, in `(0, 1]`.
    pub reflectance: Vec<f64>,
}

impl HighResSpectrum {
    pub fn wavelengths(&self) -> Vec<f64> {
        wavelength_grid()
    }
}

pub fn reflectance_spectrum(params: &TissueParams) -> HighResSpectrum {
    reflectance_spectrum_with(params, None)
}

pub fn reflectance_spectrum_with(params: &TissueParams, extra: Option<&ExtraAbsorber>) -> HighResSpectrum {
    HighResSpectrum {
        reflectance: wavelength_grid()
            .into_iter()
            .map(|l| reflectance_at(params, l, extra).clamp(MIN_REFLECTANCE, 1.0))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CameraKind {
    /// 8 bands, 470–700 nm, FWHM 30 nm.
    SpectroCam8,
    /// 16 bands, 465–630 nm, FWHM 15 nm.
    Ximea16,
}

impl CameraKind {
    pub fn name(self) -> &'static str {
        match self {
            CameraKind::SpectroCam8 => "spectrocam8",
            CameraKind::Ximea16 => "ximea16",
        }
    }
}

impl FromStr for CameraKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectrocam8" => Ok(CameraKind::SpectroCam8),
            "ximea16" => Ok(CameraKind::Ximea16),
            other => Err(Error::Usage(format!("unknown camera '{other}' (spectrocam8, ximea16)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Illuminant {
    /// Flat spectrum.
    Xenon,
    /// Blue peak at 460 nm plus a broad phosphor hump.
    Led,
}

impl Illuminant {
    pub fn name(self) -> &'static str {
        match self {
            Illuminant::Xenon => "xenon",
            Illuminant::Led => "led",
        }
    }

    pub fn power_at(self, lambda: f64) -> f64 {
        match self {
            Illuminant::Xenon => 1.0,
            Illuminant::Led => {
                0.3 + gaussian_bump(lambda, 460.0, 12.0) + 0.8 * gaussian_bump(lambda, 560.0, 50.0)
            }
        }
    }
}

impl fmt::Display for Illuminant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Illuminant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xenon" => Ok(Illuminant::Xenon),
            "led" => Ok(Illuminant::Led),
            other => Err(Error::Usage(format!("unknown illuminant '{other}' (xenon, led)"))),
        }
    }
}

/// Filter bank plus illuminant, sampled on the wavelength grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub name: String,
    pub illuminant_name: String,
    pub band_centers: Vec<f64>,
    pub fwhm_nm: f64,
    responses: Vec<Vec<f64>>,
    illuminant: Vec<f64>,
}

impl CameraModel {
    /// Gaussian filters of the given FWHM at `band_centers`.
    pub fn new(
        name: impl Into<String>,
        band_centers: Vec<f64>,
        fwhm_nm: f64,
        illuminant_name: impl Into<String>,
        illuminant: Vec<f64>,
    ) -> Result<Self> {
        if band_centers.is_empty() {
            return Err(Error::Usage("a camera needs at least one band".into()));
        }
        if !(fwhm_nm > 0.0) {
            return Err(Error::Usage(format!("FWHM must be positive, got {fwhm_nm}")));
        }
        if illuminant.len() != GRID_LEN || illuminant.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Usage("illuminant must be non-negative on the grid".into()));
        }
        let sigma = fwhm_nm / (2.0 * (2.0 * 2f64.ln()).sqrt());
        let grid = wavelength_grid();
        let responses: Vec<Vec<f64>> = band_centers
            .iter()
            .map(|&c| grid.iter().map(|&l| gaussian_bump(l, c, sigma)).collect())
            .collect();
        if responses.iter().any(|r| r.iter().sum::<f64>() <= 0.0) {
            return Err(Error::Usage("a filter response vanishes on the grid".into()));
        }
        Ok(Self {
            name: name.into(),
            illuminant_name: illuminant_name.into(),
            band_centers,
            fwhm_nm,
            responses,
            illuminant,
        })
    }

    pub fn n_bands(&self) -> usize {
        self.band_centers.len()
    }

    pub fn responses(&self) -> &[Vec<f64>] {
        &self.responses
    }

    pub fn illuminant_spd(&self) -> &[f64] {
        &self.illuminant
    }

    /// Plain-text table: `wavelength_nm, F_0 .. F_{b-1}, illuminant`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("wavelength_nm");
        for b in 0..self.n_bands() {
            out.push_str(&format!(",filter_{b}"));
        }
        out.push_str(",illuminant\n");
        for (i, l) in wavelength_grid().iter().enumerate() {
            out.push_str(&format!("{l}"));
            for r in &self.responses {
                out.push_str(&format!(",{:.16e}", r[i]));
            }
            out.push_str(&format!(",{:.16e}\n", self.illuminant[i]));
        }
        out
    }
}

fn evenly_spaced(start: f64, end: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn make_camera(kind: CameraKind, illuminant: Illuminant) -> CameraModel {
    let (centers, fwhm) = match kind {
        CameraKind::SpectroCam8 => (evenly_spaced(470.0, 700.0, 8), 30.0),
        CameraKind::Ximea16 => (evenly_spaced(465.0, 630.0, 16), 15.0),
    };
    let spd = wavelength_grid().into_iter().map(|l| illuminant.power_at(l)).collect();
    CameraModel::new(kind.name(), centers, fwhm, illuminant.name(), spd).expect("built-in cameras are valid")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub camera: String,
    pub illuminant: String,
    pub noise_seed: Option<u64>,
}

/// Non-negative band vector summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMeasurement {
    pub bands: Vec<f64>,
    pub provenance: Provenance,
}

/// `raw_b = Σ_λ F_b(λ)·L(λ)·r(λ)·Δλ`, then L1 normalization.
pub fn apply_camera(spectrum: &HighResSpectrum, camera: &CameraModel) -> Result<BandMeasurement> {
    if spectrum.reflectance.len() != GRID_LEN {
        return Err(Error::shape("spectrum grid", GRID_LEN, spectrum.reflectance.len()));
    }
    let raw: Vec<f64> = camera
        .responses
        .iter()
        .map(|f| {
            f.iter()
                .zip(&camera.illuminant)
                .zip(&spectrum.reflectance)
                .map(|((f, l), r)| f * l * r * GRID_STEP_NM)
                .sum()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateMeasurement);
    }
    Ok(BandMeasurement {
        bands: raw.iter().map(|r| r / total).collect(),
        provenance: Provenance {
            camera: camera.name.clone(),
            illuminant: camera.illuminant_name.clone(),
            noise_seed: None,
        },
    })
}

/// Multiplicative Gaussian noise per band, clipped at 0 and re-normalized.
pub fn add_noise(measurement: &BandMeasurement, relative_sigma: f64, rng: &mut Rng) -> BandMeasurement {
    if relative_sigma <= 0.0 {
        return measurement.clone();
    }
    let noisy: Vec<f64> = measurement
        .bands
        .iter()
        .map(|b| (b * (1.0 + relative_sigma * rng.normal())).max(0.0))
        .collect();
    let total: f64 = noisy.iter().sum();
    if !(total > 0.0) {
        return measurement.clone();
    }
    BandMeasurement {
        bands: noisy.iter().map(|b| b / total).collect(),
        provenance: Provenance {
            noise_seed: Some(rng.seed()),
            ..measurement.provenance.clone()
        },
    }
}

/// Measurement of one tissue sample: reflectance, camera, then noise.
pub fn measure(
    params: &TissueParams,
    camera: &CameraModel,
    noise_sigma: f64,
    extra: Option<&ExtraAbsorber>,
    rng: &mut Rng,
) -> Result<BandMeasurement> {
    let spectrum = reflectance_spectrum_with(params, extra);
    let clean = apply_camera(&spectrum, camera)?;
    Ok(add_noise(&clean, noise_sigma, rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub rows: usize,
    pub camera: CameraKind,
    pub illuminant: Illuminant,
    pub noise_sigma: f64,
    pub extra_absorber: Option<ExtraAbsorber>,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn new(rows: usize, camera: CameraKind, illuminant: Illuminant, seed: u64) -> Self {
        Self {
            rows,
            camera,
            illuminant,
            noise_sigma: 0.0,
            extra_absorber: None,
            seed,
        }
    }

    fn describe(&self) -> String {
        format!(
            "rows={} camera={} illuminant={} noise_sigma={:.16e} extra_absorber={:?} seed={}",
            self.rows,
            self.camera.name(),
            self.illuminant.name(),
            self.noise_sigma,
            self.extra_absorber,
            self.seed
        )
    }
}

/// Labeled dataset of `config.rows` measurements. Row `i` draws from its own
/// generator seeded with `mix_seed(seed, i)`, so rows can be generated in
/// any order (or in parallel) with identical results.
pub fn simulate_dataset(config: &SimulationConfig, parallel: bool) -> Result<Dataset> {
    if config.rows == 0 {
        return Err(Error::Usage("simulate_dataset needs at least one row".into()));
    }
    if !(config.noise_sigma >= 0.0) {
        return Err(Error::Usage(format!("noise sigma must be ≥ 0, got {}", config.noise_sigma)));
    }
    let camera = make_camera(config.camera, config.illuminant);
    let extra = config.extra_absorber;
    let row = |i: usize| -> Result<(Vec<f64>, [f64; N_TISSUE_PARAMS])> {
        let mut rng = Rng::new(mix_seed(config.seed, i as u64));
        let params = sample_tissue_params(&mut rng);
        let m = measure(&params, &camera, config.noise_sigma, extra.as_ref(), &mut rng)?;
        Ok((m.bands, params.to_vector()))
    };
    let rows: Vec<_> = if parallel {
        (0..config.rows).into_par_iter().map(row).collect::<Result<_>>()?
    } else {
        (0..config.rows).map(row).collect::<Result<_>>()?
    };
    let d = camera.n_bands();
    let mut measurements = Array2::zeros((config.rows, d));
    let mut labels = Array2::zeros((config.rows, N_TISSUE_PARAMS));
    for (i, (bands, params)) in rows.into_iter().enumerate() {
        measurements.row_mut(i).assign(&ndarray::ArrayView1::from(&bands[..]));
        labels.row_mut(i).assign(&ndarray::ArrayView1::from(&params[..]));
    }
    let meta = DatasetMeta {
        camera: config.camera.name().to_string(),
        illuminant: config.illuminant.name().to_string(),
        seed: config.seed,
        config_hash: hex_digest(config.describe().as_bytes()),
    };
    Dataset::new(measurements, Some(labels), vec![SplitTag::None; config.rows], meta)
}
