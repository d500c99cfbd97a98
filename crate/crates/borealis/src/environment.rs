//! Ground-truth physics: per-transect soil temperatures with geothermal
//! warming offsets, seasonal link attenuation (spruce foliage in summer,
//! snow burial in winter), and per-packet delivery draws.
//!
//! Everything here is a pure function of the scenario seed and the query
//! arguments; the only stateful randomness is the caller-owned RNG handed
//! to the draw functions.

use crate::rng::{mix_words, Purpose};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Deployment site. GN 1-3 and GN 4-5 are independent star networks at
/// the recently warmed grassland; GO is the old warmed grassland.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Site {
    #[serde(rename = "GN13")]
    Gn13,
    #[serde(rename = "GN45")]
    Gn45,
    #[serde(rename = "GO")]
    Go,
}

impl Site {
    pub fn label(self) -> &'static str {
        match self {
            Site::Gn13 => "GN13",
            Site::Gn45 => "GN45",
            Site::Go => "GO",
        }
    }

    fn code(self) -> u64 {
        match self {
            Site::Gn13 => 1,
            Site::Gn45 => 2,
            Site::Go => 3,
        }
    }
}

/// Soil-warming transect within a plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Transect {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl Transect {
    pub const ALL: [Transect; 6] = [
        Transect::A,
        Transect::B,
        Transect::C,
        Transect::D,
        Transect::E,
        Transect::F,
    ];

    pub fn label(self) -> char {
        match self {
            Transect::A => 'A',
            Transect::B => 'B',
            Transect::C => 'C',
            Transect::D => 'D',
            Transect::E => 'E',
            Transect::F => 'F',
        }
    }

    fn code(self) -> u64 {
        self.label() as u64
    }
}

/// Site layout: instrumented plot count and radio geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteLayout {
    pub site: Site,
    pub plot_count: u8,
    #[serde(default)]
    pub gateway_position: (f64, f64),
    pub max_span_m: f64,
}

impl SiteLayout {
    /// The three canonical layouts: 3/2/4 instrumented plots of six
    /// transects each (54 soil-temperature locations total), a 300 m
    /// node span at GN 1-3 and 150 m coverage diameters elsewhere.
    pub fn standard() -> Vec<SiteLayout> {
        vec![
            SiteLayout {
                site: Site::Gn13,
                plot_count: 3,
                gateway_position: (0.0, 0.0),
                max_span_m: 300.0,
            },
            SiteLayout {
                site: Site::Gn45,
                plot_count: 2,
                gateway_position: (0.0, 0.0),
                max_span_m: 150.0,
            },
            SiteLayout {
                site: Site::Go,
                plot_count: 4,
                gateway_position: (0.0, 0.0),
                max_span_m: 150.0,
            },
        ]
    }

    pub fn soil_location_count(&self) -> usize {
        self.plot_count as usize * Transect::ALL.len()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("transect {0} not present in the {1} layout")]
    UnknownTransect(char, String),
}

/// Climate model parameters. The baseline is a stand-in sinusoid; only
/// the relative transect offsets carry over to analytics assertions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClimateParams {
    /// Annual mean of the unwarmed baseline, degrees C.
    pub baseline_mean_c: f64,
    /// Annual amplitude, degrees C.
    pub baseline_amp_c: f64,
    /// Diurnal amplitude, degrees C.
    pub diurnal_amp_c: f64,
    /// Std-dev of the seeded measurement noise, degrees C. Zero for the
    /// deterministic fixtures.
    pub noise_sigma_c: f64,
    /// Warming offset of transect E, which the 2013-2016 campaigns left
    /// uncharacterized; midpoint of D and F.
    pub transect_e_offset_c: f64,
    /// Day of year (1-based, fractional allowed) of the scenario epoch.
    pub epoch_day_of_year: f64,
}

impl Default for ClimateParams {
    fn default() -> Self {
        ClimateParams {
            baseline_mean_c: 5.0,
            baseline_amp_c: 8.0,
            diurnal_amp_c: 1.5,
            noise_sigma_c: 0.2,
            transect_e_offset_c: 7.0,
            epoch_day_of_year: 1.0,
        }
    }
}

const DAYS_PER_YEAR: f64 = 365.25;
const SECONDS_PER_DAY: f64 = 86400.0;

/// Geothermal warming offset of a transect relative to transect A.
pub fn warming_offset_c(transect: Transect, params: &ClimateParams) -> f64 {
    match transect {
        Transect::A => 0.0,
        Transect::B => 1.0,
        Transect::C => 3.0,
        Transect::D => 5.0,
        Transect::E => params.transect_e_offset_c,
        Transect::F => 10.0,
    }
}

fn annual_phase(params: &ClimateParams, t_s: f64) -> f64 {
    let doy = params.epoch_day_of_year + t_s / SECONDS_PER_DAY;
    2.0 * std::f64::consts::PI * doy / DAYS_PER_YEAR
}

fn seeded_normal(seed: u64, words: &[u64]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_words(
        &[&[seed, Purpose::EnvNoise as u64], words].concat(),
    ));
    standard_normal(&mut rng)
}

/// One standard-normal draw (Box-Muller).
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Ground-truth soil temperature at 10 cm for one transect.
pub fn soil_temperature(
    seed: u64,
    site: Site,
    plot: u8,
    transect: Transect,
    t_s: f64,
    params: &ClimateParams,
) -> f64 {
    let baseline = params.baseline_mean_c + params.baseline_amp_c * annual_phase(params, t_s).sin();
    let diurnal = params.diurnal_amp_c * (2.0 * std::f64::consts::PI * t_s / SECONDS_PER_DAY).sin();
    let noise = if params.noise_sigma_c > 0.0 {
        params.noise_sigma_c
            * seeded_normal(
                seed,
                &[site.code(), plot as u64, transect.code(), t_s.to_bits()],
            )
    } else {
        0.0
    };
    baseline + warming_offset_c(transect, params) + diurnal + noise
}

/// Ground-truth volumetric water content, percent.
pub fn water_content(seed: u64, site: Site, plot: u8, t_s: f64, params: &ClimateParams) -> f64 {
    let seasonal = 35.0 - 5.0 * annual_phase(params, t_s).sin();
    let noise = if params.noise_sigma_c > 0.0 {
        params.noise_sigma_c * seeded_normal(seed, &[site.code(), plot as u64, 0x77, t_s.to_bits()])
    } else {
        0.0
    };
    seasonal + noise
}

/// Ground-truth air temperature (weather-station channel).
pub fn air_temperature(seed: u64, site: Site, t_s: f64, params: &ClimateParams) -> f64 {
    let baseline = params.baseline_mean_c + 10.0 * annual_phase(params, t_s).sin();
    let noise = if params.noise_sigma_c > 0.0 {
        params.noise_sigma_c * seeded_normal(seed, &[site.code(), 0xA1, t_s.to_bits()])
    } else {
        0.0
    };
    baseline + noise
}

/// Seasonal attenuation state, derived from the day of year.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeasonState {
    pub day_of_year: f64,
    /// 0..1, peaks around July 1 (spruce growing season).
    pub foliage_factor: f64,
    /// 0..1, peaks around January 15 (snow burial).
    pub snow_factor: f64,
}

impl SeasonState {
    pub fn from_day_of_year(doy: f64) -> Self {
        // Raised-cosine bumps sharpened by the fourth power so the
        // attenuation is concentrated around each peak.
        let bump = |peak_doy: f64| {
            let phase = 2.0 * std::f64::consts::PI * (doy - peak_doy) / DAYS_PER_YEAR;
            ((1.0 + phase.cos()) / 2.0).powi(4)
        };
        SeasonState {
            day_of_year: doy,
            foliage_factor: bump(182.0),
            snow_factor: bump(15.0),
        }
    }

    pub fn at(params: &ClimateParams, t_s: f64) -> Self {
        Self::from_day_of_year(params.epoch_day_of_year + t_s / SECONDS_PER_DAY)
    }
}

/// Log-distance path loss with Gaussian shadowing and a delivery
/// threshold. Defaults are calibrated so a clear-sky link is 50/50 at
/// the 2 km range edge and essentially lossless at 150 m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkModelParams {
    pub tx_power_dbm: f64,
    /// Loss at the 1 m reference distance, dB.
    pub reference_loss_db: f64,
    pub path_loss_exponent: f64,
    /// Delivery threshold: a packet arrives iff its shadowed RSSI is at
    /// or above this floor.
    pub rssi_floor_dbm: f64,
    /// Peak summer foliage attenuation, dB. Applies to GN 1-3 only.
    pub foliage_peak_db: f64,
    /// Peak winter snow attenuation, dB.
    pub snow_peak_db: f64,
    pub noise_sigma_db: f64,
}

impl Default for LinkModelParams {
    fn default() -> Self {
        let tx_power_dbm = 14.0;
        let reference_loss_db = 40.0;
        let path_loss_exponent = 2.7;
        LinkModelParams {
            tx_power_dbm,
            reference_loss_db,
            path_loss_exponent,
            // Solved from the calibration anchor p(2000 m, clear) = 0.5.
            rssi_floor_dbm: tx_power_dbm
                - reference_loss_db
                - 10.0 * path_loss_exponent * 2000f64.log10(),
            foliage_peak_db: 25.0,
            snow_peak_db: 20.0,
            noise_sigma_db: 4.0,
        }
    }
}

impl LinkModelParams {
    /// Parameters that deliver every packet regardless of distance or
    /// season; used by the deterministic fixtures.
    pub fn lossless() -> Self {
        LinkModelParams {
            rssi_floor_dbm: -500.0,
            foliage_peak_db: 0.0,
            snow_peak_db: 0.0,
            ..Default::default()
        }
    }

    /// Seasonal attenuation in dB for a given site.
    pub fn seasonal_attenuation_db(&self, site: Site, season: &SeasonState) -> f64 {
        let foliage = if site == Site::Gn13 {
            self.foliage_peak_db * season.foliage_factor
        } else {
            0.0
        };
        foliage + self.snow_peak_db * season.snow_factor
    }

    /// Mean (unshadowed) RSSI at the receiver, dBm.
    pub fn rssi_mean_dbm(&self, distance_m: f64, attenuation_db: f64) -> f64 {
        self.tx_power_dbm
            - self.reference_loss_db
            - 10.0 * self.path_loss_exponent * distance_m.max(1.0).log10()
            - attenuation_db
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// Probability that one packet crosses the link.
pub fn delivery_probability(
    distance_m: f64,
    season: &SeasonState,
    params: &LinkModelParams,
    site: Site,
) -> f64 {
    delivery_probability_with_extra(distance_m, season, params, site, 0.0)
}

/// Same, with extra per-node attenuation (snow-burial faults).
pub fn delivery_probability_with_extra(
    distance_m: f64,
    season: &SeasonState,
    params: &LinkModelParams,
    site: Site,
    extra_db: f64,
) -> f64 {
    let atten = params.seasonal_attenuation_db(site, season) + extra_db;
    let mean = params.rssi_mean_dbm(distance_m, atten);
    if params.noise_sigma_db <= 0.0 {
        return if mean >= params.rssi_floor_dbm { 1.0 } else { 0.0 };
    }
    normal_cdf((mean - params.rssi_floor_dbm) / params.noise_sigma_db)
}

/// One Bernoulli delivery draw from the caller's stream.
pub fn draw_delivery<R: Rng>(rng: &mut R, p: f64) -> bool {
    if p >= 1.0 {
        true
    } else if p <= 0.0 {
        false
    } else {
        rng.gen::<f64>() < p
    }
}

/// Single shadowed-link draw: the packet is delivered iff its sampled
/// RSSI clears the floor, so the success probability equals
/// `delivery_probability` for the same arguments.
pub fn draw_link<R: Rng>(
    rng: &mut R,
    distance_m: f64,
    season: &SeasonState,
    params: &LinkModelParams,
    site: Site,
    extra_db: f64,
) -> (bool, f64) {
    let atten = params.seasonal_attenuation_db(site, season) + extra_db;
    let mean = params.rssi_mean_dbm(distance_m, atten);
    let rssi = if params.noise_sigma_db > 0.0 {
        mean + params.noise_sigma_db * standard_normal(rng)
    } else {
        mean
    };
    (rssi >= params.rssi_floor_dbm, rssi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn zero_noise() -> ClimateParams {
        ClimateParams {
            noise_sigma_c: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn transect_offset_difference_is_exact() {
        let p = zero_noise();
        for t in [0.0, 86400.0, 5e6] {
            let a = soil_temperature(1, Site::Gn13, 1, Transect::A, t, &p);
            let f = soil_temperature(1, Site::Gn13, 1, Transect::F, t, &p);
            assert!((a - f + 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn annual_mean_of_transect_a_near_baseline() {
        let p = zero_noise();
        let mut sum = 0.0;
        let n = 365 * 24;
        for i in 0..n {
            let t = i as f64 * 3600.0;
            sum += soil_temperature(1, Site::Gn45, 1, Transect::A, t, &p);
        }
        let mean = sum / n as f64;
        assert!((mean - 5.0).abs() < 0.2, "annual mean {mean}");
    }

    #[test]
    fn soil_temperature_deterministic_per_seed() {
        let p = ClimateParams::default();
        let a = soil_temperature(7, Site::Go, 2, Transect::C, 1234.0, &p);
        let b = soil_temperature(7, Site::Go, 2, Transect::C, 1234.0, &p);
        let c = soil_temperature(8, Site::Go, 2, Transect::C, 1234.0, &p);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn calibration_anchor_at_range_edge() {
        // Closed-form inversion: the default floor is solved from
        // p(2000 m, clear) = 0.5, so the margin is identically zero.
        let params = LinkModelParams::default();
        let clear = SeasonState::from_day_of_year(280.0);
        assert!(clear.foliage_factor < 0.05 && clear.snow_factor < 0.05);
        let p = delivery_probability(2000.0, &SeasonState { foliage_factor: 0.0, snow_factor: 0.0, day_of_year: 0.0 }, &params, Site::Gn45);
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn short_link_is_essentially_lossless() {
        let params = LinkModelParams::default();
        let clear = SeasonState {
            foliage_factor: 0.0,
            snow_factor: 0.0,
            day_of_year: 0.0,
        };
        assert!(delivery_probability(150.0, &clear, &params, Site::Gn45) >= 0.99);
    }

    #[test]
    fn foliage_strictly_hurts_gn13() {
        let params = LinkModelParams::default();
        let clear = SeasonState {
            foliage_factor: 0.0,
            snow_factor: 0.0,
            day_of_year: 0.0,
        };
        let summer = SeasonState::from_day_of_year(182.0);
        let p_clear = delivery_probability(300.0, &clear, &params, Site::Gn13);
        let p_summer = delivery_probability(300.0, &summer, &params, Site::Gn13);
        assert!(p_summer < p_clear);
        // No spruce blockage at GN 4-5.
        let p45 = delivery_probability(300.0, &summer, &params, Site::Gn45);
        assert!(p45 > p_summer);
    }

    #[test]
    fn monotone_in_distance_and_attenuation() {
        let params = LinkModelParams::default();
        let clear = SeasonState {
            foliage_factor: 0.0,
            snow_factor: 0.0,
            day_of_year: 0.0,
        };
        let mut last = 1.0;
        for d in [10.0, 50.0, 150.0, 300.0, 1000.0, 2000.0, 5000.0] {
            let p = delivery_probability(d, &clear, &params, Site::Go);
            assert!(p <= last + 1e-15);
            last = p;
        }
        let mut last_extra = 1.0;
        for extra in [0.0, 5.0, 10.0, 20.0] {
            let p =
                delivery_probability_with_extra(300.0, &clear, &params, Site::Go, extra);
            assert!(p < last_extra);
            last_extra = p;
        }
    }

    #[test]
    fn draw_delivery_edges_and_mean() {
        let mut rng = stream(1, Purpose::UplinkLink, 1);
        for _ in 0..100 {
            assert!(draw_delivery(&mut rng, 1.0));
            assert!(!draw_delivery(&mut rng, 0.0));
        }
        let p = 0.37;
        let n = 100_000;
        let hits = (0..n).filter(|_| draw_delivery(&mut rng, p)).count();
        let mean = hits as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((mean - p).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn draw_link_matches_delivery_probability() {
        let params = LinkModelParams::default();
        let season = SeasonState::from_day_of_year(182.0);
        let p = delivery_probability(700.0, &season, &params, Site::Gn13);
        let mut rng = stream(3, Purpose::UplinkLink, 9);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| draw_link(&mut rng, 700.0, &season, &params, Site::Gn13, 0.0).0)
            .count();
        let mean = hits as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((mean - p).abs() < 4.0 * sigma, "mean {mean} vs p {p}");
    }

    #[test]
    fn layout_census() {
        let layouts = SiteLayout::standard();
        let total: usize = layouts.iter().map(|l| l.soil_location_count()).sum();
        assert_eq!(total, 54);
        assert_eq!(layouts[0].soil_location_count(), 18);
        assert_eq!(layouts[1].soil_location_count(), 12);
        assert_eq!(layouts[2].soil_location_count(), 24);
    }

    #[test]
    fn season_factors_peak_where_expected() {
        let july = SeasonState::from_day_of_year(182.0);
        let jan = SeasonState::from_day_of_year(15.0);
        let may = SeasonState::from_day_of_year(135.0);
        assert!(july.foliage_factor > 0.99);
        assert!(jan.snow_factor > 0.99);
        assert!(may.foliage_factor < july.foliage_factor);
        assert!(may.snow_factor < 0.1);
    }
}
