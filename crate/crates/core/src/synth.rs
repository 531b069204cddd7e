//! Synthetic desk-scale world: smooth correlated predictor fields, a
//! documented closed-form HI truth with a built-in greening interaction,
//! monthly temperature/humidity fields that reproduce that truth through the
//! Heat Index algorithm, and noisy validation stations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{align_stack, FeatureStack, Grid, GridError, GridHeader};
use crate::heat_index::{heat_index_c, MamMonth, MeteoSample};
use crate::numeric::quantile;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("world must be at least 32x32, got {rows}x{cols}")]
    TooSmall { rows: usize, cols: usize },
    #[error("at least one year is required")]
    NoYears,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Coefficients of the generative Heat Index equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerativeCoeffs {
    /// Baseline HI (°C).
    pub base: f64,
    /// Per °C of (LST - 30).
    pub lst: f64,
    /// Per °C of (DPT - 16).
    pub dpt: f64,
    /// Cooling synergy on EVI*LAI (subtracted).
    pub evi_lai: f64,
    /// Warming interaction on the centered product
    /// (EVI - 0.45)*(FPAR - 0.45) inside the humid zone. Centering makes it
    /// a pure interaction pair with a known H² answer.
    pub evi_fpar_humid: f64,
    /// Built-intensity term on NTL/60.
    pub ntl: f64,
}

impl Default for GenerativeCoeffs {
    fn default() -> Self {
        GenerativeCoeffs {
            base: 31.0,
            lst: 0.40,
            dpt: 0.15,
            evi_lai: 0.50,
            evi_fpar_humid: 3.0,
            ntl: 0.30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorldSpec {
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub years: Vec<i32>,
    /// Pixel noise added to the HI truth (°C).
    pub noise_sigma: f64,
    pub coeffs: GenerativeCoeffs,
    pub n_stations: usize,
    /// Observation noise of the synthetic stations (°C).
    pub station_noise_sigma: f64,
    /// Multiplier on the per-layer pixel texture; raise it to decouple the
    /// layers from shared spatial structure.
    #[serde(default = "default_texture_scale")]
    pub texture_scale: f64,
}

fn default_texture_scale() -> f64 {
    1.0
}

impl Default for SyntheticWorldSpec {
    fn default() -> Self {
        SyntheticWorldSpec {
            rows: 64,
            cols: 64,
            seed: 20_030,
            years: vec![2003, 2004, 2005],
            noise_sigma: 0.5,
            coeffs: GenerativeCoeffs::default(),
            n_stations: 40,
            station_noise_sigma: 1.0,
            texture_scale: 1.0,
        }
    }
}

/// One in-situ style validation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub station_id: String,
    pub lat: f64,
    pub lon: f64,
    pub year: i32,
    pub observed_hi: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticYear {
    pub year: i32,
    /// All downscaling and greening layers, co-registered.
    pub stack: FeatureStack,
    /// The generative HI truth, reproduced exactly by the HI algorithm
    /// applied to the monthly fields below.
    pub hi_true: Grid,
    /// Per month: (month, temperature °C, relative humidity %).
    pub monthly_meteo: Vec<(MamMonth, Grid, Grid)>,
    pub stations: Vec<StationRecord>,
    /// DPT value separating the humid zone in the generative equation.
    pub humid_threshold: f64,
}

/// Provenance of the generative model, stored alongside outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthMetadata {
    pub equation: String,
    pub coeffs: GenerativeCoeffs,
    pub noise_sigma: f64,
    pub seed: u64,
    pub humid_thresholds: Vec<(i32, f64)>,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub spec: SyntheticWorldSpec,
    pub years: Vec<SyntheticYear>,
    pub truth: TruthMetadata,
}

/// Stable sub-seed derivation for independent random streams.
pub fn subseed(master: u64, tag: &str, year: i32) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(year.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Mixture of Gaussian bumps over normalized grid coordinates, in [0, 1].
fn bump_field(header: &GridHeader, seed: u64, n_bumps: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..n_bumps)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),   // center u
                rng.random_range(0.0..1.0),   // center v
                rng.random_range(0.12..0.35), // width
                rng.random_range(0.4..1.0),   // amplitude
            )
        })
        .collect();
    let mut values = Vec::with_capacity(header.n_cells());
    let mut max_v = f64::MIN;
    let mut min_v = f64::MAX;
    for r in 0..header.rows {
        let v = r as f64 / (header.rows - 1).max(1) as f64;
        for c in 0..header.cols {
            let u = c as f64 / (header.cols - 1).max(1) as f64;
            let mut acc = 0.0;
            for (cu, cv, w, a) in &bumps {
                let d2 = (u - cu) * (u - cu) + (v - cv) * (v - cv);
                acc += a * (-d2 / (2.0 * w * w)).exp();
            }
            max_v = max_v.max(acc);
            min_v = min_v.min(acc);
            values.push(acc);
        }
    }
    let span = (max_v - min_v).max(1e-12);
    values.iter().map(|v| (v - min_v) / span).collect()
}

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

fn grid_from(header: GridHeader, values: Vec<f64>, units: &str) -> Result<Grid, GridError> {
    Grid::new(header, values.into_iter().map(f32_round).collect(), units)
}

/// Bisection inverse of the Heat Index in temperature at fixed humidity.
/// The NWS branch switch makes HI slightly discontinuous, so the result is
/// the bracketing temperature; the truth field is recomputed from it.
fn invert_hi_temperature(target_hi_c: f64, rh: f64) -> f64 {
    let hi = |t: f64| {
        heat_index_c(MeteoSample {
            t_celsius: t,
            rh_percent: rh,
        })
        .expect("rh within range")
        .hi_c
    };
    let mut lo = -20.0;
    let mut hi_t = 80.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi_t);
        if hi(mid) < target_hi_c {
            lo = mid;
        } else {
            hi_t = mid;
        }
    }
    0.5 * (lo + hi_t)
}

pub fn generate_synthetic_world(spec: &SyntheticWorldSpec) -> Result<SyntheticWorld, SynthError> {
    if spec.rows < 32 || spec.cols < 32 {
        return Err(SynthError::TooSmall {
            rows: spec.rows,
            cols: spec.cols,
        });
    }
    if spec.years.is_empty() {
        return Err(SynthError::NoYears);
    }
    let header = GridHeader::new(spec.rows, spec.cols, 18.0, 73.0, 0.01)?;
    let n = header.n_cells();

    // Persistent spatial structure shared across years.
    let urban = bump_field(&header, subseed(spec.seed, "urban", 0), 3);
    let veg_raw = bump_field(&header, subseed(spec.seed, "veg", 0), 5);
    let moist = bump_field(&header, subseed(spec.seed, "moist", 0), 4);
    let fpar_extra = bump_field(&header, subseed(spec.seed, "fpar", 0), 4);
    let lai_extra = bump_field(&header, subseed(spec.seed, "lai", 0), 4);
    let rad_base = bump_field(&header, subseed(spec.seed, "rad", 0), 3);
    let coast_jitter = bump_field(&header, subseed(spec.seed, "coast", 0), 3);

    let mut years = Vec::new();
    let mut humid_thresholds = Vec::new();
    let y0 = spec.years[0];

    for &year in &spec.years {
        let drift = bump_field(&header, subseed(spec.seed, "drift", year), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(subseed(spec.seed, "noise", year));
        let normal = Normal::new(0.0, spec.noise_sigma.max(0.0)).unwrap();

        // Pixel-scale texture per layer: real rasters are not smooth, and
        // without independent per-layer variation every layer is a position
        // proxy for every other, which defeats attribution.
        let mut texture_rng = ChaCha8Rng::seed_from_u64(subseed(spec.seed, "texture", year));
        let unit = Normal::new(0.0, 1.0).unwrap();
        let ts = spec.texture_scale;
        let mut texture = |_tag: &str| -> Vec<f64> {
            (0..n).map(|_| ts * unit.sample(&mut texture_rng)).collect()
        };
        let tex_lst = texture("lst");
        let tex_dpt = texture("dpt");
        let tex_evi = texture("evi");
        let tex_lai = texture("lai");
        let tex_fpar = texture("fpar");
        let tex_ntl = texture("ntl");

        let mut lst = Vec::with_capacity(n);
        let mut wsa = Vec::with_capacity(n);
        let mut pop = Vec::with_capacity(n);
        let mut rad = Vec::with_capacity(n);
        let mut dpt = Vec::with_capacity(n);
        let mut imp = Vec::with_capacity(n);
        let mut dcoast = Vec::with_capacity(n);
        let mut lat = Vec::with_capacity(n);
        let mut lon = Vec::with_capacity(n);
        let mut evi = Vec::with_capacity(n);
        let mut lai = Vec::with_capacity(n);
        let mut fpar = Vec::with_capacity(n);
        let mut ntl = Vec::with_capacity(n);
        let mut lcz_compact = Vec::with_capacity(n);
        let mut lcz_open = Vec::with_capacity(n);
        let mut lcz_veg = Vec::with_capacity(n);

        for r in 0..spec.rows {
            for c in 0..spec.cols {
                let i = r * spec.cols + c;
                let lat_v = header.row_lat(r);
                let lon_v = header.col_lon(c);
                let veg_v = (veg_raw[i] * (1.0 - 0.5 * urban[i])).clamp(0.0, 1.0);

                lst.push(
                    30.0 + 5.0 * urban[i] - 2.0 * veg_v
                        + 1.5 * (drift[i] - 0.5)
                        + 0.3 * tex_lst[i]
                        + 0.05 * (year - y0) as f64,
                );
                wsa.push((0.10 + 0.12 * (1.0 - veg_v) + 0.05 * urban[i]).clamp(0.02, 0.6));
                pop.push(8000.0 * urban[i] * urban[i] + 50.0 * drift[i]);
                rad.push(180.0 + 50.0 * rad_base[i] + 5.0 * (drift[i] - 0.5));
                dpt.push(10.0 + 9.0 * moist[i] + 0.8 * (drift[i] - 0.5) + 0.3 * tex_dpt[i]);
                imp.push((0.85 * urban[i] + 0.05).clamp(0.0, 1.0));
                dcoast.push(111.0 * (lon_v - header.lon_min) + 15.0 * coast_jitter[i]);
                lat.push(lat_v);
                lon.push(lon_v);
                let evi_v = (0.10 + 0.70 * veg_v + 0.05 * (drift[i] - 0.5)
                    + 0.06 * tex_evi[i])
                    .clamp(0.0, 0.9);
                evi.push(evi_v);
                lai.push(
                    (0.2 + 2.2 * (0.3 * veg_v + 0.7 * lai_extra[i])
                        + 0.1 * (drift[i] - 0.5)
                        + 0.15 * tex_lai[i])
                        .clamp(0.0, 3.0),
                );
                fpar.push(
                    (0.12 + 0.72 * (0.3 * veg_v + 0.7 * fpar_extra[i])
                        + 0.05 * (drift[i] - 0.5)
                        + 0.06 * tex_fpar[i])
                        .clamp(0.0, 1.0),
                );
                ntl.push((60.0 * urban[i] * (0.7 + 0.3 * drift[i]) + 3.0 * tex_ntl[i]).max(0.0));
                lcz_compact.push((0.8 * urban[i]).clamp(0.0, 1.0));
                lcz_open.push(((1.0 - urban[i]) * 0.4 + 0.2 * drift[i]).clamp(0.0, 1.0));
                lcz_veg.push((0.7 * veg_v).clamp(0.0, 1.0));
            }
        }

        let layers: Vec<(String, Vec<f64>, &str)> = vec![
            ("LST".into(), lst, "degC"),
            ("WSA".into(), wsa, "fraction"),
            ("POP".into(), pop, "people"),
            ("RAD".into(), rad, "W/m2"),
            ("DPT".into(), dpt, "degC"),
            ("IMP".into(), imp, "fraction"),
            ("DCOAST".into(), dcoast, "km"),
            ("LAT".into(), lat, "deg"),
            ("LON".into(), lon, "deg"),
            ("EVI".into(), evi, "index"),
            ("LAI".into(), lai, "index"),
            ("FPAR".into(), fpar, "fraction"),
            ("NTL".into(), ntl, "nW/cm2/sr"),
            ("LCZ_COMPACT".into(), lcz_compact, "fraction"),
            ("LCZ_OPEN".into(), lcz_open, "fraction"),
            ("LCZ_VEG".into(), lcz_veg, "fraction"),
        ];
        let stack = align_stack(
            layers
                .into_iter()
                .map(|(name, values, units)| {
                    grid_from(header, values, units).map(|g| (name, g))
                })
                .collect::<Result<Vec<_>, _>>()?,
        )?;

        // HI truth from the stored (float32-rounded) layers. Noise is
        // heteroscedastic: pre-monsoon heat volatility concentrates in the
        // hot built-up zone, so the noise scale rises with urban intensity
        // (bulk pixels sit near 0.35 sigma, dense cores at the full sigma).
        let dpt_vals: Vec<f64> = stack.layer("DPT")?.values().to_vec();
        let humid_threshold = quantile(&dpt_vals, 0.5);
        let cf = &spec.coeffs;
        let mut desired = Vec::with_capacity(n);
        for i in 0..n {
            let lst_v = stack.layer("LST")?.values()[i];
            let dpt_v = dpt_vals[i];
            let evi_v = stack.layer("EVI")?.values()[i];
            let lai_v = stack.layer("LAI")?.values()[i];
            let fpar_v = stack.layer("FPAR")?.values()[i];
            let ntl_v = stack.layer("NTL")?.values()[i];
            let humid = if dpt_v >= humid_threshold { 1.0 } else { 0.0 };
            let noise_scale = 0.35 + 0.65 * urban[i];
            let value = cf.base
                + cf.lst * (lst_v - 30.0)
                + cf.dpt * (dpt_v - 16.0)
                - cf.evi_lai * evi_v * lai_v
                + cf.evi_fpar_humid * (evi_v - 0.45) * (fpar_v - 0.45) * humid
                + cf.ntl * ntl_v / 60.0
                + noise_scale * normal.sample(&mut rng);
            desired.push(value);
        }

        // Monthly meteo fields whose Heat Index reproduces the desired truth:
        // month offsets average to zero, humidity is a smooth field, and the
        // temperature is obtained by inverting the HI algorithm per pixel.
        let rh_values: Vec<f64> = (0..n)
            .map(|i| f32_round((40.0 + 35.0 * moist[i]).clamp(25.0, 85.0)))
            .collect();
        let mut monthly_meteo = Vec::new();
        let mut month_his: Vec<Vec<f64>> = Vec::new();
        for (month, offset) in [
            (MamMonth::Mar, -0.8),
            (MamMonth::Apr, 0.0),
            (MamMonth::May, 0.8),
        ] {
            let t_values: Vec<f64> = (0..n)
                .map(|i| f32_round(invert_hi_temperature(desired[i] + offset, rh_values[i])))
                .collect();
            let hi: Vec<f64> = t_values
                .iter()
                .zip(&rh_values)
                .map(|(t, rh)| {
                    heat_index_c(MeteoSample {
                        t_celsius: *t,
                        rh_percent: *rh,
                    })
                    .expect("rh in range")
                    .hi_c
                })
                .collect();
            month_his.push(hi);
            monthly_meteo.push((
                month,
                Grid::new(header, t_values, "degC")?,
                Grid::new(header, rh_values.clone(), "pct")?,
            ));
        }

        // The actual truth: mean of the monthly HI fields as the HI stage
        // will compute it.
        let hi_true_values: Vec<f64> = (0..n)
            .map(|i| (month_his[0][i] + month_his[1][i] + month_his[2][i]) / 3.0)
            .collect();
        let hi_true = Grid::new(header, hi_true_values, "degC")?;

        // Noisy stations at random in-footprint locations.
        let mut station_rng = ChaCha8Rng::seed_from_u64(subseed(spec.seed, "stations", year));
        let station_noise = Normal::new(0.0, spec.station_noise_sigma.max(0.0)).unwrap();
        let stations = (0..spec.n_stations)
            .map(|s| {
                let lat_v = station_rng.random_range(header.lat_min..header.lat_max);
                let lon_v = station_rng.random_range(header.lon_min..header.lon_max);
                let cell = header
                    .cell_containing(lat_v, lon_v)
                    .expect("sampled inside footprint");
                StationRecord {
                    station_id: format!("S{s:03}"),
                    lat: lat_v,
                    lon: lon_v,
                    year,
                    observed_hi: hi_true.values()[cell] + station_noise.sample(&mut station_rng),
                }
            })
            .collect();

        humid_thresholds.push((year, humid_threshold));
        years.push(SyntheticYear {
            year,
            stack,
            hi_true,
            monthly_meteo,
            stations,
            humid_threshold,
        });
    }

    let cf = &spec.coeffs;
    let truth = TruthMetadata {
        equation: format!(
            "HI = {} + {}*(LST-30) + {}*(DPT-16) - {}*EVI*LAI + {}*(EVI-0.45)*(FPAR-0.45)*[DPT>=median(DPT)] + {}*NTL/60 + (0.35 + 0.65*urban)*Normal(0, {})",
            cf.base, cf.lst, cf.dpt, cf.evi_lai, cf.evi_fpar_humid, cf.ntl, spec.noise_sigma
        ),
        coeffs: *cf,
        noise_sigma: spec.noise_sigma,
        seed: spec.seed,
        humid_thresholds,
    };

    Ok(SyntheticWorld {
        spec: spec.clone(),
        years,
        truth,
    })
}
