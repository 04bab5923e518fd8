#![allow(dead_code)]

use chrono::{TimeZone, Utc};
use poi_rag::{CheckIn, GeoPoint, PoiId, Trajectory, UserId};

pub fn point(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(lat, lon).unwrap()
}

pub fn checkin(user: &str, poi: &str, p: GeoPoint, secs: i64) -> CheckIn {
    CheckIn {
        user: UserId::new(user),
        poi: PoiId::new(poi).unwrap(),
        point: p,
        timestamp: Utc.timestamp_opt(1_333_000_000 + secs, 0).unwrap(),
        tz_offset_min: 0,
        category: None,
    }
}

/// Trajectory of `(poi, point)` steps an hour apart.
pub fn trajectory(user: &str, steps: &[(&str, GeoPoint)]) -> Trajectory {
    let steps = steps
        .iter()
        .enumerate()
        .map(|(i, (poi, p))| checkin(user, poi, *p, i as i64 * 3600))
        .collect();
    Trajectory::new(UserId::new(user), steps, None).unwrap()
}
