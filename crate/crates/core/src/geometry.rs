//! Solar position, clear-sky irradiance and calendar encodings.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Minutes between consecutive samples.
pub const STEP_MINUTES: i64 = 15;

const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
    #[serde(default)]
    pub altitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self> {
        Self::with_altitude(latitude, longitude, 0.0)
    }

    pub fn with_altitude(latitude: f64, longitude: f64, altitude: f64) -> Result<Self> {
        let p = GeoPoint {
            latitude,
            longitude,
            altitude,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.latitude) || !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Error::invalid(format!(
                "coordinates out of range: lat {}, lon {}",
                self.latitude, self.longitude
            )));
        }
        Ok(())
    }

    /// Great-circle distance in kilometres on a 6371 km sphere.
    pub fn haversine_km(&self, other: &GeoPoint) -> f64 {
        let (p1, p2) = (self.latitude.to_radians(), other.latitude.to_radians());
        let dp = p2 - p1;
        let dl = (other.longitude - self.longitude).to_radians();
        let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
    }
}

/// Longitude/latitude rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lon_min: f64,
    pub lat_min: f64,
    pub lon_max: f64,
    pub lat_max: f64,
}

impl BoundingBox {
    pub fn new(lon_min: f64, lat_min: f64, lon_max: f64, lat_max: f64) -> Result<Self> {
        let b = BoundingBox {
            lon_min,
            lat_min,
            lon_max,
            lat_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        GeoPoint::new(self.lat_min, self.lon_min)?;
        GeoPoint::new(self.lat_max, self.lon_max)?;
        if !(self.lon_max > self.lon_min && self.lat_max > self.lat_min) {
            return Err(Error::invalid(format!("degenerate bounding box {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        (self.lon_min..=self.lon_max).contains(&p.longitude) && (self.lat_min..=self.lat_max).contains(&p.latitude)
    }

    /// Linear map of a point to `[0, scale]²` as `(lon, lat)` coordinates.
    pub fn normalize(&self, p: &GeoPoint, scale: f64) -> (f64, f64) {
        (
            (p.longitude - self.lon_min) / (self.lon_max - self.lon_min) * scale,
            (p.latitude - self.lat_min) / (self.lat_max - self.lat_min) * scale,
        )
    }

    /// Center of pixel `(row, col)` on a regular `height × width` grid
    /// spanning the box; row 0 is the northern edge.
    pub fn pixel_center(&self, height: usize, width: usize, row: f64, col: f64) -> GeoPoint {
        let dlon = (self.lon_max - self.lon_min) / width as f64;
        let dlat = (self.lat_max - self.lat_min) / height as f64;
        GeoPoint {
            latitude: self.lat_max - (row + 0.5) * dlat,
            longitude: self.lon_min + (col + 0.5) * dlon,
            altitude: 0.0,
        }
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            latitude: 0.5 * (self.lat_min + self.lat_max),
            longitude: 0.5 * (self.lon_min + self.lon_max),
            altitude: 0.0,
        }
    }
}

/// A UTC instant on the 15-minute grid, stored as minutes since the Unix
/// epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeStamp(i64);

impl TimeStamp {
    pub fn from_minutes(minutes: i64) -> Result<Self> {
        if minutes.rem_euclid(STEP_MINUTES) != 0 {
            return Err(Error::invalid(format!(
                "timestamp {minutes} min is not on the {STEP_MINUTES}-minute grid"
            )));
        }
        Ok(TimeStamp(minutes))
    }

    pub fn from_ymd_hm(year: i32, month: u32, day: u32, hour: u32, minute: u32) -> Result<Self> {
        let dt = NaiveDate::from_ymd_opt(year, month, day)
            .and_then(|d| d.and_hms_opt(hour, minute, 0))
            .ok_or_else(|| Error::invalid(format!("invalid date {year}-{month}-{day} {hour}:{minute}")))?;
        Self::from_minutes(dt.and_utc().timestamp() / 60)
    }

    pub fn minutes(self) -> i64 {
        self.0
    }

    pub fn plus_steps(self, steps: i64) -> Self {
        TimeStamp(self.0 + steps * STEP_MINUTES)
    }

    /// Signed number of grid steps from `self` to `later`.
    pub fn steps_until(self, later: TimeStamp) -> i64 {
        (later.0 - self.0) / STEP_MINUTES
    }

    fn datetime(self) -> NaiveDateTime {
        DateTime::from_timestamp(self.0 * 60, 0)
            .expect("timestamp within chrono range")
            .naive_utc()
    }

    pub fn hour(self) -> u32 {
        self.datetime().hour()
    }

    pub fn minute(self) -> u32 {
        self.datetime().minute()
    }

    /// Minutes since UTC midnight.
    pub fn minute_of_day(self) -> u32 {
        self.0.rem_euclid(1440) as u32
    }

    pub fn day_of_year(self) -> u32 {
        self.datetime().ordinal()
    }
}

impl fmt::Display for TimeStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.datetime().format("%Y-%m-%dT%H:%M"))
    }
}

impl FromStr for TimeStamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_end_matches('Z');
        let dt = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M")
            .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S"))
            .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M"))
            .map_err(|e| Error::invalid(format!("cannot parse timestamp {s:?}: {e}")))?;
        if dt.second() != 0 {
            return Err(Error::invalid(format!("timestamp {s:?} has a seconds component")));
        }
        Self::from_minutes(dt.and_utc().timestamp() / 60)
    }
}

impl Serialize for TimeStamp {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TimeStamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Solar zenith angle in degrees from the NOAA fractional-year series
/// (~0.5° accuracy). The hour angle uses UTC and the point's longitude.
pub fn solar_zenith(p: &GeoPoint, t: TimeStamp) -> f64 {
    let minute_of_day = t.minute_of_day() as f64;
    let gamma = 2.0 * PI / 365.0 * (t.day_of_year() as f64 - 1.0 + (minute_of_day / 60.0 - 12.0) / 24.0);
    let eqtime = 229.18
        * (0.000075 + 0.001868 * gamma.cos()
            - 0.032077 * gamma.sin()
            - 0.014615 * (2.0 * gamma).cos()
            - 0.040849 * (2.0 * gamma).sin());
    let decl = 0.006918 - 0.399912 * gamma.cos() + 0.070257 * gamma.sin() - 0.006758 * (2.0 * gamma).cos()
        + 0.000907 * (2.0 * gamma).sin()
        - 0.002697 * (3.0 * gamma).cos()
        + 0.00148 * (3.0 * gamma).sin();
    let true_solar_minutes = minute_of_day + eqtime + 4.0 * p.longitude;
    let hour_angle = (true_solar_minutes / 4.0 - 180.0).to_radians();
    let lat = p.latitude.to_radians();
    let cos_z = lat.sin() * decl.sin() + lat.cos() * decl.cos() * hour_angle.cos();
    cos_z.clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn solar_elevation(p: &GeoPoint, t: TimeStamp) -> f64 {
    90.0 - solar_zenith(p, t)
}

/// Haurwitz clear-sky GHI in W/m² for a zenith angle in degrees.
pub fn haurwitz(zenith_deg: f64) -> f64 {
    if zenith_deg >= 90.0 {
        return 0.0;
    }
    let c = zenith_deg.to_radians().cos();
    if c <= 0.0 {
        return 0.0;
    }
    1098.0 * c * (-0.057 / c).exp()
}

/// Clear-sky GHI in W/m².
pub fn clearsky_ghi(p: &GeoPoint, t: TimeStamp) -> f64 {
    haurwitz(solar_zenith(p, t))
}

/// Clear-sky GHI in kW/m².
pub fn clearsky_ghi_kw(p: &GeoPoint, t: TimeStamp) -> f64 {
    clearsky_ghi(p, t) / 1000.0
}

/// `[sin, cos]` of the minute within the hour followed by `[sin, cos]` of the
/// UTC hour of day.
pub fn cyclical_encode(t: TimeStamp) -> [f64; 4] {
    let minute = (2.0 * PI * t.minute() as f64 / 60.0).sin_cos();
    let hour = (2.0 * PI * t.hour() as f64 / 24.0).sin_cos();
    [minute.0, minute.1, hour.0, hour.1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equator_equinox_noon_is_overhead() {
        // 1.9°E puts local solar noon at 12:00 UTC on this date
        let p = GeoPoint::new(0.0, 1.9).unwrap();
        let t = TimeStamp::from_ymd_hm(2024, 3, 20, 12, 0).unwrap();
        assert!(solar_zenith(&p, t) < 1.0, "{}", solar_zenith(&p, t));
        let midnight = TimeStamp::from_ymd_hm(2024, 3, 20, 0, 0).unwrap();
        assert!(solar_zenith(&p, midnight) > 90.0);
    }

    #[test]
    fn solstice_noon_at_47n() {
        let p = GeoPoint::new(47.0, 1.9).unwrap();
        let t = TimeStamp::from_ymd_hm(2024, 6, 20, 12, 0).unwrap();
        let z = solar_zenith(&p, t);
        assert!((z - (47.0 - 23.44)).abs() < 0.5, "{z}");
    }

    #[test]
    fn haurwitz_values() {
        assert_eq!(haurwitz(90.0), 0.0);
        assert_eq!(haurwitz(120.0), 0.0);
        let overhead = 1098.0 * (-0.057f64).exp();
        assert!((haurwitz(0.0) - overhead).abs() < 1e-9);
        assert!((haurwitz(0.0) - 1_037.164_288).abs() < 1e-6);
        // cos θ = 0.5 → 1098 · 0.5 · e^{-0.114}
        assert!((haurwitz(60.0) - 489.849_618).abs() < 1e-6, "{}", haurwitz(60.0));
    }

    #[test]
    fn cyclical_examples() {
        let t = TimeStamp::from_ymd_hm(2024, 1, 1, 0, 0).unwrap();
        let e = cyclical_encode(t);
        assert_eq!(e, [0.0, 1.0, 0.0, 1.0]);
        let e = cyclical_encode(TimeStamp::from_ymd_hm(2024, 1, 1, 6, 0).unwrap());
        assert!((e[2] - 1.0).abs() < 1e-15 && e[3].abs() < 1e-15);
        let e = cyclical_encode(TimeStamp::from_ymd_hm(2024, 1, 1, 6, 45).unwrap());
        assert!((e[0] + 1.0).abs() < 1e-15 && e[1].abs() < 1e-15);
    }

    #[test]
    fn off_grid_timestamps_rejected() {
        assert!(TimeStamp::from_ymd_hm(2024, 1, 1, 0, 10).is_err());
        assert!("2024-01-01T00:10".parse::<TimeStamp>().is_err());
        let t: TimeStamp = "2024-01-01T00:15".parse().unwrap();
        assert_eq!(t.to_string(), "2024-01-01T00:15");
    }

    #[test]
    fn haversine_one_degree_latitude() {
        let a = GeoPoint::new(46.0, 7.0).unwrap();
        let b = GeoPoint::new(47.0, 7.0).unwrap();
        assert!((a.haversine_km(&b) - 6371.0 * PI / 180.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn encoding_is_daily_periodic(step in 0i64..200_000) {
            let t = TimeStamp::from_minutes(step * STEP_MINUTES).unwrap();
            prop_assert_eq!(cyclical_encode(t), cyclical_encode(t.plus_steps(96)));
            for v in cyclical_encode(t) {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn zenith_and_elevation_complement(lat in -90.0f64..90.0, lon in -180.0f64..180.0, step in 0i64..100_000) {
            let p = GeoPoint::new(lat, lon).unwrap();
            let t = TimeStamp::from_minutes(step * STEP_MINUTES).unwrap();
            let z = solar_zenith(&p, t);
            prop_assert!((0.0..=180.0).contains(&z));
            prop_assert!((z + solar_elevation(&p, t) - 90.0).abs() < 1e-12);
            let ghi = clearsky_ghi(&p, t);
            prop_assert!(ghi >= 0.0);
            if z >= 90.0 { prop_assert_eq!(ghi, 0.0); }
        }
    }
}
