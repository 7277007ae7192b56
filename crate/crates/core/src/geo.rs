//! Pixel geolocation and viewing geometry.

use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::channels::Satellite;

/// Regular latitude/longitude grid. Pixel `(i, j)` has its centre at
/// `(lat0 + i * dlat, lon0 + j * dlon)`; `dlat` is negative for north-up images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoGrid {
    pub lat0: f64,
    pub lon0: f64,
    pub dlat: f64,
    pub dlon: f64,
    pub rows: usize,
    pub cols: usize,
}

// Nearest integer with halves going down: 0.5 -> 0, 1.5 -> 1.
fn round_half_down(x: f64) -> f64 {
    (x - 0.5).ceil()
}

impl GeoGrid {
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (self.lat0 + i as f64 * self.dlat, self.lon0 + j as f64 * self.dlon)
    }

    /// Continuous pixel coordinates of a location.
    pub fn to_pixel(&self, lat: f64, lon: f64) -> (f64, f64) {
        ((lat - self.lat0) / self.dlat, (lon - self.lon0) / self.dlon)
    }

    pub fn from_pixel(&self, row: f64, col: f64) -> (f64, f64) {
        (self.lat0 + row * self.dlat, self.lon0 + col * self.dlon)
    }

    /// Pixel whose centre is nearest (Euclidean in lat/lon); equidistant
    /// candidates resolve to the lower index. `None` outside the grid.
    pub fn nearest(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        let (r, c) = self.to_pixel(lat, lon);
        // on a regular grid the nearest centre is found per axis
        let (r, c) = (round_half_down(r), round_half_down(c));
        if r < 0.0 || c < 0.0 || r >= self.rows as f64 || c >= self.cols as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }

    /// Grid covering rows `top..top+rows`, cols `left..left+cols`.
    pub fn window(&self, top: usize, left: usize, rows: usize, cols: usize) -> GeoGrid {
        let (lat0, lon0) = self.center(top, left);
        GeoGrid {
            lat0,
            lon0,
            dlat: self.dlat,
            dlon: self.dlon,
            rows,
            cols,
        }
    }
}

/// Acquisition time and viewing geometry at a patch centre. Angles in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// UTC seconds since the Unix epoch.
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    pub solar_zenith: f64,
    pub solar_azimuth: f64,
    pub sat_zenith: f64,
    pub sat_azimuth: f64,
}

impl Geometry {
    pub fn compute(timestamp: i64, lat: f64, lon: f64, sat: Satellite) -> Self {
        let (solar_zenith, solar_azimuth) = solar_angles(timestamp, lat, lon);
        let (sat_zenith, sat_azimuth) = satellite_angles(lat, lon, sat.sub_longitude());
        Self {
            timestamp,
            lat,
            lon,
            solar_zenith,
            solar_azimuth,
            sat_zenith,
            sat_azimuth,
        }
    }

    pub fn datetime(&self) -> DateTime<Utc> {
        DateTime::from_timestamp(self.timestamp, 0).unwrap_or_default()
    }

    pub fn fraction_of_day(&self) -> f64 {
        let t = self.datetime();
        t.num_seconds_from_midnight() as f64 / 86_400.0
    }

    pub fn fraction_of_year(&self) -> f64 {
        let t = self.datetime();
        let days = if chrono::NaiveDate::from_ymd_opt(t.year(), 2, 29).is_some() {
            366.0
        } else {
            365.0
        };
        (t.ordinal0() as f64 + self.fraction_of_day()) / days
    }
}

fn wrap360(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

/// Approximate solar zenith and azimuth (degrees, azimuth clockwise from north).
pub fn solar_angles(timestamp: i64, lat: f64, lon: f64) -> (f64, f64) {
    let t = DateTime::from_timestamp(timestamp, 0).unwrap_or_default();
    let doy = t.ordinal() as f64;
    let hours = t.num_seconds_from_midnight() as f64 / 3600.0;
    let decl = 23.44f64.to_radians() * libm::sin(2.0 * std::f64::consts::PI * (284.0 + doy) / 365.0);
    let solar_time = hours + lon / 15.0;
    let h = (15.0 * (solar_time - 12.0)).to_radians();
    let phi = lat.to_radians();
    let cos_z = (libm::sin(phi) * libm::sin(decl) + libm::cos(phi) * libm::cos(decl) * libm::cos(h)).clamp(-1.0, 1.0);
    let zen = libm::acos(cos_z).to_degrees();
    let az = libm::atan2(
        libm::sin(h),
        libm::cos(h) * libm::sin(phi) - libm::tan(decl) * libm::cos(phi),
    )
    .to_degrees()
        + 180.0;
    (zen, wrap360(az))
}

const EARTH_RADIUS_KM: f64 = 6378.137;
const GEO_RADIUS_KM: f64 = 42_164.0;

/// Zenith and azimuth of a geostationary satellite seen from the ground.
pub fn satellite_angles(lat: f64, lon: f64, sub_lon: f64) -> (f64, f64) {
    let (phi, lam) = (lat.to_radians(), lon.to_radians());
    let ls = sub_lon.to_radians();
    let obs = [
        EARTH_RADIUS_KM * libm::cos(phi) * libm::cos(lam),
        EARTH_RADIUS_KM * libm::cos(phi) * libm::sin(lam),
        EARTH_RADIUS_KM * libm::sin(phi),
    ];
    let sat = [GEO_RADIUS_KM * libm::cos(ls), GEO_RADIUS_KM * libm::sin(ls), 0.0];
    let d = [sat[0] - obs[0], sat[1] - obs[1], sat[2] - obs[2]];
    let up = [
        libm::cos(phi) * libm::cos(lam),
        libm::cos(phi) * libm::sin(lam),
        libm::sin(phi),
    ];
    let east = [-libm::sin(lam), libm::cos(lam), 0.0];
    let north = [
        -libm::sin(phi) * libm::cos(lam),
        -libm::sin(phi) * libm::sin(lam),
        libm::cos(phi),
    ];
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let norm = dot(d, d).sqrt();
    let zen = libm::acos((dot(d, up) / norm).clamp(-1.0, 1.0)).to_degrees();
    let az = libm::atan2(dot(d, east), dot(d, north)).to_degrees();
    (zen, wrap360(az))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_pixel_with_integer_centres() {
        let g = GeoGrid {
            lat0: 0.0,
            lon0: 0.0,
            dlat: 1.0,
            dlon: 1.0,
            rows: 4,
            cols: 4,
        };
        assert_eq!(g.nearest(0.4, 0.6), Some((0, 1)));
        assert_eq!(g.nearest(0.5, 1.5), Some((0, 1)));
        assert_eq!(g.nearest(-0.6, 0.0), None);
        assert_eq!(g.nearest(3.4, 3.49), Some((3, 3)));
        assert_eq!(g.nearest(3.6, 0.0), None);
    }

    #[test]
    fn subsatellite_point_looks_straight_up() {
        let (z, _) = satellite_angles(0.0, 0.0, 0.0);
        assert!(z.abs() < 1e-9);
        let (z2, az2) = satellite_angles(45.0, 0.0, 0.0);
        assert!(z2 > 45.0 && z2 < 60.0);
        assert!((az2 - 180.0).abs() < 1e-6);
    }

    #[test]
    fn noon_sun_is_high_in_the_tropics() {
        // 2021-03-21 12:00 UTC at (0, 0)
        let (z, _) = solar_angles(1_616_328_000, 0.0, 0.0);
        assert!(z < 5.0, "{z}");
        let (z_night, _) = solar_angles(1_616_328_000 + 12 * 3600, 0.0, 0.0);
        assert!(z_night > 170.0);
    }
}
