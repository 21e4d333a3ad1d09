//! Synthetic yield data from a parametric response surface.
//!
//! Noise-free yield of one grid cell:
//!
//! ```text
//! base(soil) * factor(cultivar)
//!     * exp(-((ahu - ahu_opt) / ahu_width)^2)
//!     * (nitrogen + n_offset) / (nitrogen + n_offset + n_half)
//! ```
//!
//! a Gaussian heat-unit optimum times a saturating nitrogen response. It is a
//! smooth stand-in for a process-based crop model, not a reproduction of one.
//!
//! # Config file
//!
//! One `key = value` per line; `#` starts a comment. Lists are
//! comma-separated and map entries are `label:value`.
//!
//! | key | value |
//! |-----|-------|
//! | `seed` | unsigned 64-bit noise seed |
//! | `soils` | `label:base_yield_kg_ha, ...` |
//! | `cultivars` | `label:factor, ...` |
//! | `ahu_opt`, `ahu_width` | heat-unit optimum and width, °F·day |
//! | `n_half`, `n_offset` | nitrogen half-saturation and offset, kg/ha |
//! | `noise_sd` | yield noise standard deviation, kg/ha |
//! | `nitrogen` | nitrogen levels, kg/ha |
//! | `locations`, `years` | season grid |
//! | `ahu` | one AHU per season, locations outer and years inner |
//! | `weather_dir` | instead of `ahu`: directory of `<location>_<year>.csv` weather files, relative to the config file |
//! | `clamp` | optional, with `weather_dir`: clamp negative degree days (default `true`) |
//!
//! Rows are emitted for every season × soil × cultivar × nitrogen level, in
//! that nesting order, all in config order. The noise of row `i` is one
//! Box-Muller draw from a [`SplitMix64`] seeded with `mix(seed, i)`, so each
//! row's value depends only on its position in the grid.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::{write_records_csv, DatasetError, YieldRecord, MAX_NITROGEN_KG_HA};
use crate::rng::{mix, SplitMix64};
use crate::weather::{accumulate_heat_units, load_weather_csv, WeatherError};

/// The shipped default config: 3 soils, 2 cultivars, 4 nitrogen levels and
/// six seasons (2017-2022) at one site, 144 rows.
pub const DEFAULT_CONFIG: &str = include_str!("../data/synth_default.conf");

/// The default surface on a denser grid: 3 sites × 7 years, 16 nitrogen
/// levels, 2016 rows.
pub const DENSE_CONFIG: &str = include_str!("../data/synth_dense.conf");

/// Smallest yield a generated row can have, kg/ha.
pub const MIN_YIELD_KG_HA: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("MissingKey: {0}")]
    MissingKey(String),
    #[error("UnknownKey: {0}")]
    UnknownKey(String),
    #[error("InvalidConfig: {key}: {reason}")]
    InvalidConfig { key: String, reason: String },
    #[error("EmptyGrid: {0} has no values")]
    EmptyGrid(String),
    #[error("UnknownLabel: {column} {label:?}")]
    UnknownLabel { column: &'static str, label: String },
    #[error("InvalidInput: {0}")]
    InvalidInput(String),
    #[error("weather for {location} {year}: {source}")]
    Weather {
        location: String,
        year: i32,
        #[source]
        source: WeatherError,
    },
    #[error("io: {0}")]
    Io(String),
}

impl From<DatasetError> for SynthError {
    fn from(e: DatasetError) -> Self {
        SynthError::Io(e.to_string())
    }
}

/// Per-season AHU source.
#[derive(Debug, Clone, PartialEq)]
pub enum SeasonAhu {
    /// One value per (location, year), locations outer.
    Values(Vec<f64>),
    /// Computed from `<dir>/<location>_<year>.csv`.
    WeatherDir { dir: PathBuf, clamp: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    /// Soil label and base yield (kg/ha), in output order.
    pub soils: Vec<(String, f64)>,
    /// Cultivar label and multiplicative factor, in output order.
    pub cultivars: Vec<(String, f64)>,
    pub ahu_opt: f64,
    pub ahu_width: f64,
    pub n_half: f64,
    pub n_offset: f64,
    pub noise_sd: f64,
    pub nitrogen: Vec<f64>,
    pub locations: Vec<String>,
    pub years: Vec<i32>,
    pub ahu: SeasonAhu,
}

const KEYS: [&str; 14] = [
    "seed",
    "soils",
    "cultivars",
    "ahu_opt",
    "ahu_width",
    "n_half",
    "n_offset",
    "noise_sd",
    "nitrogen",
    "locations",
    "years",
    "ahu",
    "weather_dir",
    "clamp",
];

fn invalid(key: &str, reason: impl Into<String>) -> SynthError {
    SynthError::InvalidConfig {
        key: key.to_owned(),
        reason: reason.into(),
    }
}

fn split_list(raw: &str) -> Vec<&str> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_num<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, SynthError> {
    raw.trim()
        .parse()
        .map_err(|_| invalid(key, format!("cannot parse {raw:?}")))
}

fn parse_map(key: &str, raw: &str) -> Result<Vec<(String, f64)>, SynthError> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for item in split_list(raw) {
        let (label, value) = item
            .rsplit_once(':')
            .ok_or_else(|| invalid(key, format!("expected label:value, got {item:?}")))?;
        let label = label.trim();
        if label.is_empty() {
            return Err(invalid(key, "empty label"));
        }
        if out.iter().any(|(l, _)| l == label) {
            return Err(invalid(key, format!("duplicate label {label:?}")));
        }
        out.push((label.to_owned(), parse_num(key, value)?));
    }
    Ok(out)
}

impl SynthConfig {
    pub fn shipped_default() -> Self {
        Self::parse(DEFAULT_CONFIG, Path::new(".")).expect("shipped default config is valid")
    }

    pub fn shipped_dense() -> Self {
        Self::parse(DENSE_CONFIG, Path::new(".")).expect("shipped dense config is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SynthError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses config text; `weather_dir` is resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, SynthError> {
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| SynthError::Syntax {
                line: i + 1,
                reason: format!("expected key = value, got {line:?}"),
            })?;
            let k = k.trim();
            if k.is_empty() || !KEYS.contains(&k) {
                return Err(SynthError::UnknownKey(k.to_owned()));
            }
            if kv.insert(k, v.trim()).is_some() {
                return Err(SynthError::Syntax {
                    line: i + 1,
                    reason: format!("duplicate key {k}"),
                });
            }
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| SynthError::MissingKey(k.to_owned()))
        };

        let ahu = match (kv.get("ahu"), kv.get("weather_dir")) {
            (Some(v), None) => SeasonAhu::Values(
                split_list(v)
                    .into_iter()
                    .map(|x| parse_num("ahu", x))
                    .collect::<Result<_, _>>()?,
            ),
            (None, Some(dir)) => SeasonAhu::WeatherDir {
                dir: base_dir.join(dir),
                clamp: kv
                    .get("clamp")
                    .map(|c| parse_num("clamp", c))
                    .transpose()?
                    .unwrap_or(true),
            },
            (Some(_), Some(_)) => {
                return Err(invalid("ahu", "give either ahu or weather_dir, not both"))
            }
            (None, None) => return Err(SynthError::MissingKey("ahu".into())),
        };
        if kv.contains_key("clamp") && matches!(ahu, SeasonAhu::Values(_)) {
            return Err(invalid("clamp", "only applies with weather_dir"));
        }

        let config = SynthConfig {
            seed: parse_num("seed", get("seed")?)?,
            soils: parse_map("soils", get("soils")?)?,
            cultivars: parse_map("cultivars", get("cultivars")?)?,
            ahu_opt: parse_num("ahu_opt", get("ahu_opt")?)?,
            ahu_width: parse_num("ahu_width", get("ahu_width")?)?,
            n_half: parse_num("n_half", get("n_half")?)?,
            n_offset: parse_num("n_offset", get("n_offset")?)?,
            noise_sd: parse_num("noise_sd", get("noise_sd")?)?,
            nitrogen: split_list(get("nitrogen")?)
                .into_iter()
                .map(|x| parse_num("nitrogen", x))
                .collect::<Result<_, _>>()?,
            locations: split_list(get("locations")?)
                .into_iter()
                .map(str::to_owned)
                .collect(),
            years: split_list(get("years")?)
                .into_iter()
                .map(|x| parse_num("years", x))
                .collect::<Result<_, _>>()?,
            ahu,
        };
        config.validate()?;
        Ok(config)
    }

    /// Renders the config in the file format. Parsing the output gives back
    /// an equal config (weather directories as written).
    pub fn to_config_text(&self) -> String {
        let map = |m: &[(String, f64)]| {
            m.iter()
                .map(|(l, v)| format!("{l}:{v}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
        let mut out = format!(
            "seed = {}\nsoils = {}\ncultivars = {}\nahu_opt = {}\nahu_width = {}\nn_half = {}\nn_offset = {}\nnoise_sd = {}\nnitrogen = {}\nlocations = {}\nyears = {}\n",
            self.seed,
            map(&self.soils),
            map(&self.cultivars),
            self.ahu_opt,
            self.ahu_width,
            self.n_half,
            self.n_offset,
            self.noise_sd,
            list(&self.nitrogen),
            self.locations.join(", "),
            self.years.iter().map(i32::to_string).collect::<Vec<_>>().join(", "),
        );
        match &self.ahu {
            SeasonAhu::Values(v) => out.push_str(&format!("ahu = {}\n", list(v))),
            SeasonAhu::WeatherDir { dir, clamp } => out.push_str(&format!(
                "weather_dir = {}\nclamp = {clamp}\n",
                dir.display()
            )),
        }
        out
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (key, empty) in [
            ("soils", self.soils.is_empty()),
            ("cultivars", self.cultivars.is_empty()),
            ("nitrogen", self.nitrogen.is_empty()),
            ("locations", self.locations.is_empty()),
            ("years", self.years.is_empty()),
        ] {
            if empty {
                return Err(SynthError::EmptyGrid(key.into()));
            }
        }
        if let Some((l, _)) = self
            .soils
            .iter()
            .find(|(_, b)| !(b.is_finite() && *b > 0.0))
        {
            return Err(invalid(
                "soils",
                format!("base yield of {l} must be positive"),
            ));
        }
        if let Some((l, _)) = self
            .cultivars
            .iter()
            .find(|(_, f)| !(f.is_finite() && *f > 0.0))
        {
            return Err(invalid(
                "cultivars",
                format!("factor of {l} must be positive"),
            ));
        }
        if !(self.ahu_width.is_finite() && self.ahu_width > 0.0) {
            return Err(invalid("ahu_width", "must be positive"));
        }
        if !self.ahu_opt.is_finite() {
            return Err(invalid("ahu_opt", "must be finite"));
        }
        if !(self.n_half.is_finite() && self.n_half > 0.0) {
            return Err(invalid("n_half", "must be positive"));
        }
        if !(self.n_offset.is_finite() && self.n_offset >= 0.0) {
            return Err(invalid("n_offset", "must be non-negative"));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(invalid("noise_sd", "must be non-negative"));
        }
        if let Some(n) = self
            .nitrogen
            .iter()
            .find(|n| !(**n >= 0.0 && **n <= MAX_NITROGEN_KG_HA))
        {
            return Err(invalid(
                "nitrogen",
                format!("{n} outside [0, {MAX_NITROGEN_KG_HA}]"),
            ));
        }
        if let Some(l) = self.locations.iter().find(|l| l.contains(['/', '\\'])) {
            return Err(invalid(
                "locations",
                format!("{l:?} contains a path separator"),
            ));
        }
        if let SeasonAhu::Values(v) = &self.ahu {
            let seasons = self.locations.len() * self.years.len();
            if v.len() != seasons {
                return Err(invalid(
                    "ahu",
                    format!("{} values for {} location-year seasons", v.len(), seasons),
                ));
            }
            if v.iter().any(|a| !a.is_finite()) {
                return Err(invalid("ahu", "values must be finite"));
            }
        }
        Ok(())
    }

    /// Number of rows [`generate`] will produce.
    pub fn row_count(&self) -> usize {
        self.locations.len()
            * self.years.len()
            * self.soils.len()
            * self.cultivars.len()
            * self.nitrogen.len()
    }

    fn season_ahu(&self) -> Result<Vec<f64>, SynthError> {
        match &self.ahu {
            SeasonAhu::Values(v) => Ok(v.clone()),
            SeasonAhu::WeatherDir { dir, clamp } => {
                let mut out = Vec::new();
                for loc in &self.locations {
                    for &year in &self.years {
                        let wrap = |source| SynthError::Weather {
                            location: loc.clone(),
                            year,
                            source,
                        };
                        let series = load_weather_csv(dir.join(format!("{loc}_{year}.csv")))
                            .map_err(wrap)?;
                        out.push(accumulate_heat_units(&series, *clamp).map_err(wrap)?);
                    }
                }
                Ok(out)
            }
        }
    }
}

fn lookup(map: &[(String, f64)], column: &'static str, label: &str) -> Result<f64, SynthError> {
    map.iter()
        .find(|(l, _)| l == label)
        .map(|(_, v)| *v)
        .ok_or_else(|| SynthError::UnknownLabel {
            column,
            label: label.to_owned(),
        })
}

/// Gaussian heat-unit response, 1 at `ahu_opt`.
pub fn ahu_response(config: &SynthConfig, ahu: f64) -> f64 {
    let z = (ahu - config.ahu_opt) / config.ahu_width;
    libm::exp(-(z * z))
}

/// Saturating nitrogen response in `(0, 1)`.
pub fn nitrogen_response(config: &SynthConfig, nitrogen: f64) -> f64 {
    let n = nitrogen + config.n_offset;
    n / (n + config.n_half)
}

/// Noise-free yield of one cell, kg/ha.
pub fn true_yield(
    config: &SynthConfig,
    soil: &str,
    cultivar: &str,
    nitrogen: f64,
    ahu: f64,
) -> Result<f64, SynthError> {
    if !(nitrogen.is_finite() && nitrogen >= 0.0) {
        return Err(SynthError::InvalidInput(format!(
            "nitrogen must be a non-negative number, got {nitrogen}"
        )));
    }
    if !ahu.is_finite() {
        return Err(SynthError::InvalidInput("ahu must be finite".into()));
    }
    let base = lookup(&config.soils, "soil", soil)?;
    let factor = lookup(&config.cultivars, "cultivar", cultivar)?;
    Ok(base * factor * ahu_response(config, ahu) * nitrogen_response(config, nitrogen))
}

/// Every grid cell with its noisy yield, in grid order.
pub fn generate(config: &SynthConfig) -> Result<Vec<YieldRecord>, SynthError> {
    config.validate()?;
    let seasons = config.season_ahu()?;
    let mut out = Vec::with_capacity(config.row_count());
    let mut season = 0;
    for loc in &config.locations {
        for &year in &config.years {
            let ahu = seasons[season];
            season += 1;
            for (soil, _) in &config.soils {
                for (cultivar, _) in &config.cultivars {
                    for &n in &config.nitrogen {
                        let clean = true_yield(config, soil, cultivar, n, ahu)?;
                        let index = out.len() as u64;
                        let noisy = if config.noise_sd > 0.0 {
                            clean
                                + config.noise_sd
                                    * SplitMix64::new(mix(config.seed, index)).next_gaussian()
                        } else {
                            clean
                        };
                        out.push(YieldRecord {
                            location: loc.clone(),
                            year,
                            cultivar: cultivar.clone(),
                            soil: soil.clone(),
                            nitrogen_kg_ha: n,
                            ahu,
                            yield_kg_ha: Some(noisy.max(MIN_YIELD_KG_HA)),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// [`generate`] written as a record CSV.
pub fn generate_csv<W: Write>(config: &SynthConfig, writer: W) -> Result<usize, SynthError> {
    let records = generate(config)?;
    write_records_csv(writer, &records)?;
    Ok(records.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{read_records_csv, AhuSource};

    fn config() -> SynthConfig {
        SynthConfig::shipped_default()
    }

    #[test]
    fn shipped_default_has_table_two_shape() {
        let c = config();
        assert_eq!(c.soils.len(), 3);
        assert_eq!(c.cultivars.len(), 2);
        assert_eq!(c.nitrogen.len(), 4);
        assert!(c.nitrogen.iter().all(|&n| (0.0..=300.0).contains(&n)));
        assert_eq!(c.years, (2017..=2022).collect::<Vec<_>>());
        assert_eq!(generate(&c).unwrap().len(), 144);
        assert!(SynthConfig::shipped_dense().row_count() >= 2000);
    }

    #[test]
    fn optimum_and_saturation_limit() {
        let c = config();
        let (soil, base) = c.soils[0].clone();
        let (cultivar, factor) = c.cultivars[1].clone();
        let y = true_yield(&c, &soil, &cultivar, 1e12, c.ahu_opt).unwrap();
        assert!((y - base * factor).abs() < 1e-6 * base);
    }

    #[test]
    fn one_width_off_optimum_is_e_inverse() {
        let c = config();
        let at_opt = true_yield(&c, "clay", "DP1646", 150.0, c.ahu_opt).unwrap();
        for ahu in [c.ahu_opt - c.ahu_width, c.ahu_opt + c.ahu_width] {
            let y = true_yield(&c, "clay", "DP1646", 150.0, ahu).unwrap();
            assert!((y - at_opt * (-1.0f64).exp()).abs() < 1e-9 * at_opt);
        }
    }

    #[test]
    fn nitrogen_strictly_increases_yield() {
        let c = config();
        let mut prev = 0.0;
        for n in [0.0, 1.0, 50.0, 100.0, 299.0, 300.0] {
            let y = true_yield(&c, "loam", "ST5020", n, 2500.0).unwrap();
            assert!(y > prev);
            prev = y;
        }
    }

    #[test]
    fn true_yield_errors() {
        let c = config();
        assert!(matches!(
            true_yield(&c, "peat", "DP1646", 0.0, 2000.0),
            Err(SynthError::UnknownLabel { column: "soil", .. })
        ));
        assert!(matches!(
            true_yield(&c, "clay", "X", 0.0, 2000.0),
            Err(SynthError::UnknownLabel {
                column: "cultivar",
                ..
            })
        ));
        assert!(matches!(
            true_yield(&c, "clay", "DP1646", -1.0, 2000.0),
            Err(SynthError::InvalidInput(_))
        ));
    }

    #[test]
    fn noise_free_rows_equal_true_yield() {
        let mut c = config();
        c.noise_sd = 0.0;
        for r in generate(&c).unwrap() {
            let t = true_yield(&c, &r.soil, &r.cultivar, r.nitrogen_kg_ha, r.ahu).unwrap();
            assert_eq!(r.yield_kg_ha, Some(t.max(MIN_YIELD_KG_HA)));
        }
    }

    #[test]
    fn generation_is_deterministic_and_seeded() {
        let c = config();
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate_csv(&c, &mut a).unwrap();
        generate_csv(&c, &mut b).unwrap();
        assert_eq!(a, b);
        let other = SynthConfig {
            seed: c.seed + 1,
            ..c
        };
        let mut d = Vec::new();
        generate_csv(&other, &mut d).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn generated_csv_ingests_cleanly() {
        let c = SynthConfig::shipped_dense();
        let mut buf = Vec::new();
        let n = generate_csv(&c, &mut buf).unwrap();
        let back = read_records_csv(buf.as_slice(), &AhuSource::Column).unwrap();
        assert_eq!(back.len(), n);
        assert_eq!(back, generate(&c).unwrap());
    }

    #[test]
    fn noise_is_floored_at_one() {
        let mut c = config();
        c.noise_sd = 1e6;
        assert!(generate(&c)
            .unwrap()
            .iter()
            .all(|r| r.yield_kg_ha.unwrap() >= MIN_YIELD_KG_HA));
    }

    #[test]
    fn config_text_round_trips() {
        let c = config();
        let again = SynthConfig::parse(&c.to_config_text(), Path::new(".")).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn config_errors_name_the_key() {
        let text = config().to_config_text();
        let without_seed: String = text
            .lines()
            .filter(|l| !l.starts_with("seed"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert_eq!(
            SynthConfig::parse(&without_seed, Path::new(".")),
            Err(SynthError::MissingKey("seed".into()))
        );

        let typo = text.replace("noise_sd", "noise");
        assert_eq!(
            SynthConfig::parse(&typo, Path::new(".")),
            Err(SynthError::UnknownKey("noise".into()))
        );

        let short_ahu = text.replace("ahu = ", "ahu = 2000, ");
        assert!(
            matches!(SynthConfig::parse(&short_ahu, Path::new(".")), Err(SynthError::InvalidConfig { ref key, .. }) if key == "ahu")
        );

        let bad_width = text.replace("ahu_width = ", "ahu_width = -");
        assert!(
            matches!(SynthConfig::parse(&bad_width, Path::new(".")), Err(SynthError::InvalidConfig { ref key, .. }) if key == "ahu_width")
        );

        let no_n = text
            .lines()
            .map(|l| {
                if l.starts_with("nitrogen") {
                    "nitrogen =".to_string()
                } else {
                    l.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
        assert_eq!(
            SynthConfig::parse(&no_n, Path::new(".")),
            Err(SynthError::EmptyGrid("nitrogen".into()))
        );
    }

    #[test]
    fn weather_dir_seasons() {
        let dir = tempfile::tempdir().unwrap();
        for (year, hi) in [(2020, 95), (2021, 90)] {
            std::fs::write(
                dir.path().join(format!("Site_{year}.csv")),
                format!("date,tmax_f,tmin_f\n{year}-05-01,{hi},65\n{year}-05-02,60,60\n"),
            )
            .unwrap();
        }
        let text = "seed = 1\nsoils = clay:1500\ncultivars = A:1\nahu_opt = 20\nahu_width = 10\nn_half = 50\nn_offset = 0\nnoise_sd = 0\nnitrogen = 100\nlocations = Site\nyears = 2020, 2021\nweather_dir = .\n";
        let c = SynthConfig::parse(text, dir.path()).unwrap();
        let recs = generate(&c).unwrap();
        assert_eq!(
            recs.iter().map(|r| r.ahu).collect::<Vec<_>>(),
            vec![20.0, 17.5]
        );
    }

    #[test]
    fn noise_depends_on_row_position_only() {
        let c = config();
        let full = generate(&c).unwrap();
        // Dropping the last location-year keeps every earlier row identical.
        let mut trimmed = c.clone();
        trimmed.years.pop();
        if let SeasonAhu::Values(v) = &mut trimmed.ahu {
            v.pop();
        }
        let part = generate(&trimmed).unwrap();
        assert_eq!(&full[..part.len()], &part[..]);
    }
}
