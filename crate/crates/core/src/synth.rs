//! Seeded synthetic check-in generator in the Foursquare TSV layout.
//!
//! Users live in one of several neighbourhood clusters and walk between
//! nearby POIs, with the occasional trip to another cluster. The output
//! survives the default preprocessing thresholds.

use std::fmt::Write as _;

use chrono::{Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub users: usize,
    pub sessions_per_user: usize,
    pub clusters: usize,
    pub pois_per_cluster: usize,
    pub min_session_len: usize,
    pub max_session_len: usize,
    /// Chance that a step visits a POI outside the user's home cluster.
    pub cross_cluster_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            users: 50,
            sessions_per_user: 10,
            clusters: 8,
            pois_per_cluster: 10,
            min_session_len: 4,
            max_session_len: 7,
            cross_cluster_prob: 0.1,
        }
    }
}

const CATEGORIES: [&str; 6] = ["Cafe", "Bar", "Park", "Museum", "Restaurant", "Gym"];
const CENTER: (f64, f64) = (40.73, -73.99);

/// Generates check-ins as TSV text, one line per check-in, in time order per
/// user. Identical configs give byte-identical output.
pub fn generate_tsv(cfg: &SynthConfig) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pois = Vec::with_capacity(cfg.clusters * cfg.pois_per_cluster);
    for c in 0..cfg.clusters {
        let angle = c as f64 / cfg.clusters.max(1) as f64 * std::f64::consts::TAU;
        let (clat, clon) = (CENTER.0 + 0.08 * angle.sin(), CENTER.1 + 0.1 * angle.cos());
        for p in 0..cfg.pois_per_cluster {
            let lat = clat + rng.gen_range(-0.006..0.006);
            let lon = clon + rng.gen_range(-0.008..0.008);
            let cat = CATEGORIES[(c + p) % CATEGORIES.len()];
            pois.push((
                format!("poi{:03}", c * cfg.pois_per_cluster + p),
                lat,
                lon,
                cat,
            ));
        }
    }

    let start = Utc.with_ymd_and_hms(2012, 4, 3, 0, 0, 0).unwrap();
    let mut out = String::new();
    for u in 0..cfg.users {
        let home = u % cfg.clusters.max(1);
        let mut day = start + Duration::days(rng.gen_range(0..3));
        for _ in 0..cfg.sessions_per_user {
            let len = rng.gen_range(cfg.min_session_len..=cfg.max_session_len);
            let mut t = day
                + Duration::hours(rng.gen_range(8..12))
                + Duration::minutes(rng.gen_range(0..60));
            let mut local = rng.gen_range(0..cfg.pois_per_cluster);
            for _ in 0..len {
                let idx = if rng.gen_bool(cfg.cross_cluster_prob) {
                    let other = rng.gen_range(0..cfg.clusters);
                    other * cfg.pois_per_cluster + rng.gen_range(0..cfg.pois_per_cluster)
                } else {
                    local = (local + rng.gen_range(1..=2)) % cfg.pois_per_cluster;
                    home * cfg.pois_per_cluster + local
                };
                let (id, lat, lon, cat) = &pois[idx];
                writeln!(
                    out,
                    "user{u:03}\t{id}\tcat{}\t{cat}\t{lat:.6}\t{lon:.6}\t-240\t{}",
                    CATEGORIES.iter().position(|c| c == cat).unwrap(),
                    t.format("%a %b %d %H:%M:%S +0000 %Y")
                )
                .unwrap();
                t += Duration::minutes(rng.gen_range(20..90));
            }
            day += Duration::days(rng.gen_range(2..=3));
        }
    }
    out
}
