//! Seeded generator for the sustainability corpus: an office registry and
//! six per-office metric tables (three emission scopes, water, electricity,
//! renewable electricity).
//!
//! Every metric table holds one row per office with monthly columns for
//! 2021–2023, yearly totals that are exact sums of the months, quarterly
//! 2023 sums and a 2023 breakdown that sums to the 2023 total. Each metric
//! has a planted country whose 2023 total is the unique maximum, and water
//! additionally has a planted city with the unique maximum for December
//! 2022. The [`CorpusManifest`] records these plants together with
//! independently accumulated city and country totals.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::{write_csv, ColumnDef, PhysicalTable, ScalarType, StoreError, Value};
use crate::catalog::{Catalog, TableConfiguration};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub seed: u64,
    pub rows_per_table: usize,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            rows_per_table: 1000,
        }
    }
}

impl SyntheticCorpusSpec {
    /// Desk-scale default row count times `scale`, at least one row per city.
    pub fn scaled(seed: u64, scale: f64) -> Self {
        let rows = ((1000.0 * scale).round() as usize).max(CITIES.len());
        Self {
            seed,
            rows_per_table: rows,
        }
    }
}

pub struct City {
    pub name: &'static str,
    pub country: &'static str,
    pub continent: &'static str,
    pub sub_region: &'static str,
    pub timezone: &'static str,
    pub currency: &'static str,
    pub lat: i64,
    pub lon: i64,
}

macro_rules! city {
    ($n:expr, $c:expr, $k:expr, $s:expr, $tz:expr, $cur:expr, $lat:expr, $lon:expr) => {
        City {
            name: $n,
            country: $c,
            continent: $k,
            sub_region: $s,
            timezone: $tz,
            currency: $cur,
            lat: $lat,
            lon: $lon,
        }
    };
}

/// The city → country → continent hierarchy. Latitude and longitude are
/// in hundredths of a degree.
pub const CITIES: &[City] = &[
    city!(
        "New York",
        "USA",
        "North America",
        "Northeast",
        "America/New_York",
        "USD",
        4071,
        -7401
    ),
    city!(
        "Austin",
        "USA",
        "North America",
        "South",
        "America/Chicago",
        "USD",
        3027,
        -9774
    ),
    city!(
        "Chicago",
        "USA",
        "North America",
        "Midwest",
        "America/Chicago",
        "USD",
        4188,
        -8763
    ),
    city!(
        "Seattle",
        "USA",
        "North America",
        "West",
        "America/Los_Angeles",
        "USD",
        4761,
        -12233
    ),
    city!(
        "San Francisco",
        "USA",
        "North America",
        "West",
        "America/Los_Angeles",
        "USD",
        3777,
        -12242
    ),
    city!(
        "Toronto",
        "Canada",
        "North America",
        "Ontario",
        "America/Toronto",
        "CAD",
        4365,
        -7938
    ),
    city!(
        "Vancouver",
        "Canada",
        "North America",
        "British Columbia",
        "America/Vancouver",
        "CAD",
        4928,
        -12312
    ),
    city!(
        "Mexico City",
        "Mexico",
        "North America",
        "Central Mexico",
        "America/Mexico_City",
        "MXN",
        1943,
        -9913
    ),
    city!(
        "Monterrey",
        "Mexico",
        "North America",
        "Northern Mexico",
        "America/Monterrey",
        "MXN",
        2569,
        -10032
    ),
    city!(
        "Buenos Aires",
        "Argentina",
        "South America",
        "Pampas",
        "America/Argentina/Buenos_Aires",
        "ARS",
        -3460,
        -5838
    ),
    city!(
        "Cordoba",
        "Argentina",
        "South America",
        "Central Argentina",
        "America/Argentina/Cordoba",
        "ARS",
        -3142,
        -6418
    ),
    city!(
        "Sao Paulo",
        "Brazil",
        "South America",
        "Southeast",
        "America/Sao_Paulo",
        "BRL",
        -2355,
        -4663
    ),
    city!(
        "Rio de Janeiro",
        "Brazil",
        "South America",
        "Southeast",
        "America/Sao_Paulo",
        "BRL",
        -2291,
        -4317
    ),
    city!(
        "Santiago",
        "Chile",
        "South America",
        "Central Chile",
        "America/Santiago",
        "CLP",
        -3345,
        -7067
    ),
    city!(
        "London",
        "UK",
        "Europe",
        "Greater London",
        "Europe/London",
        "GBP",
        5151,
        -13
    ),
    city!(
        "Manchester",
        "UK",
        "Europe",
        "North West",
        "Europe/London",
        "GBP",
        5348,
        -224
    ),
    city!(
        "Berlin",
        "Germany",
        "Europe",
        "Berlin-Brandenburg",
        "Europe/Berlin",
        "EUR",
        5252,
        1340
    ),
    city!(
        "Munich",
        "Germany",
        "Europe",
        "Bavaria",
        "Europe/Berlin",
        "EUR",
        4814,
        1158
    ),
    city!(
        "Paris",
        "France",
        "Europe",
        "Ile-de-France",
        "Europe/Paris",
        "EUR",
        4886,
        235
    ),
    city!(
        "Lyon",
        "France",
        "Europe",
        "Auvergne-Rhone-Alpes",
        "Europe/Paris",
        "EUR",
        4576,
        484
    ),
    city!(
        "Madrid",
        "Spain",
        "Europe",
        "Community of Madrid",
        "Europe/Madrid",
        "EUR",
        4042,
        -370
    ),
    city!(
        "Barcelona",
        "Spain",
        "Europe",
        "Catalonia",
        "Europe/Madrid",
        "EUR",
        4139,
        217
    ),
    city!(
        "Bangalore",
        "India",
        "Asia",
        "Karnataka",
        "Asia/Kolkata",
        "INR",
        1297,
        7759
    ),
    city!(
        "Mumbai",
        "India",
        "Asia",
        "Maharashtra",
        "Asia/Kolkata",
        "INR",
        1908,
        7288
    ),
    city!("Tokyo", "Japan", "Asia", "Kanto", "Asia/Tokyo", "JPY", 3568, 13976),
    city!("Osaka", "Japan", "Asia", "Kansai", "Asia/Tokyo", "JPY", 3469, 13550),
    city!(
        "Singapore",
        "Singapore",
        "Asia",
        "Central Region",
        "Asia/Singapore",
        "SGD",
        135,
        10382
    ),
    city!(
        "Shanghai",
        "China",
        "Asia",
        "East China",
        "Asia/Shanghai",
        "CNY",
        3123,
        12147
    ),
    city!(
        "Sydney",
        "Australia",
        "Oceania",
        "New South Wales",
        "Australia/Sydney",
        "AUD",
        -3387,
        15121
    ),
    city!(
        "Melbourne",
        "Australia",
        "Oceania",
        "Victoria",
        "Australia/Melbourne",
        "AUD",
        -3781,
        14496
    ),
    city!(
        "Johannesburg",
        "South Africa",
        "Africa",
        "Gauteng",
        "Africa/Johannesburg",
        "ZAR",
        -2620,
        2805
    ),
    city!(
        "Cape Town",
        "South Africa",
        "Africa",
        "Western Cape",
        "Africa/Johannesburg",
        "ZAR",
        -3392,
        1842
    ),
    city!(
        "Nairobi",
        "Kenya",
        "Africa",
        "Nairobi County",
        "Africa/Nairobi",
        "KES",
        -129,
        3682
    ),
    city!(
        "Cairo",
        "Egypt",
        "Africa",
        "Cairo Governorate",
        "Africa/Cairo",
        "EGP",
        3004,
        3124
    ),
];

/// Distinct countries in first-appearance order.
pub fn countries() -> Vec<&'static str> {
    let mut out: Vec<&str> = Vec::new();
    for c in CITIES {
        if !out.contains(&c.country) {
            out.push(c.country);
        }
    }
    out
}

pub fn continents() -> Vec<&'static str> {
    let mut out: Vec<&str> = Vec::new();
    for c in CITIES {
        if !out.contains(&c.continent) {
            out.push(c.continent);
        }
    }
    out
}

pub fn continent_of(country: &str) -> Option<&'static str> {
    CITIES.iter().find(|c| c.country == country).map(|c| c.continent)
}

pub const YEARS: [u32; 3] = [2021, 2022, 2023];
pub const MONTH_NAMES: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

/// Monthly column name, e.g. `m2022_12`.
pub fn month_column(year: u32, month: usize) -> String {
    format!("m{year}_{month:02}")
}

pub const REGISTRY_TABLE: &str = "office_registry";

pub struct MetricTemplate {
    pub table: &'static str,
    pub label: &'static str,
    pub unit: &'static str,
    pub breakdown: [&'static str; 4],
    /// Monthly base range in hundredths of a unit.
    pub low_cents: i64,
    pub high_cents: i64,
    /// Percent multiplier per year 2021, 2022, 2023.
    pub trend: [i64; 3],
}

pub const METRICS: &[MetricTemplate] = &[
    MetricTemplate {
        table: "emissions_scope1",
        label: "scope 1 emissions",
        unit: "tCO2e",
        breakdown: [
            "stationary_combustion",
            "mobile_combustion",
            "fugitive_emissions",
            "process_emissions",
        ],
        low_cents: 500,
        high_cents: 6000,
        trend: [100, 96, 91],
    },
    MetricTemplate {
        table: "emissions_scope2",
        label: "scope 2 emissions",
        unit: "tCO2e",
        breakdown: [
            "purchased_electricity",
            "purchased_heat",
            "purchased_steam",
            "purchased_cooling",
        ],
        low_cents: 1000,
        high_cents: 12000,
        trend: [100, 95, 88],
    },
    MetricTemplate {
        table: "emissions_scope3",
        label: "scope 3 emissions",
        unit: "tCO2e",
        breakdown: [
            "business_travel",
            "employee_commuting",
            "purchased_goods",
            "waste_generated",
        ],
        low_cents: 2000,
        high_cents: 30000,
        trend: [100, 97, 94],
    },
    MetricTemplate {
        table: "water_consumption",
        label: "water consumption",
        unit: "m3",
        breakdown: ["potable_water", "process_water", "irrigation", "cooling_tower"],
        low_cents: 10000,
        high_cents: 200000,
        trend: [100, 98, 97],
    },
    MetricTemplate {
        table: "electricity_consumption",
        label: "electricity consumption",
        unit: "kWh",
        breakdown: ["lighting", "hvac", "it_equipment", "other_loads"],
        low_cents: 500000,
        high_cents: 8000000,
        trend: [100, 97, 95],
    },
    MetricTemplate {
        table: "renewable_energy",
        label: "renewable electricity",
        unit: "kWh",
        breakdown: ["solar_onsite", "wind_ppa", "hydro_ppa", "renewable_certificates"],
        low_cents: 0,
        high_cents: 0,
        trend: [100, 100, 100],
    },
];

pub fn metric(table: &str) -> Option<&'static MetricTemplate> {
    METRICS.iter().find(|m| m.table == table)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricManifest {
    pub table: String,
    pub unit: String,
    pub planted_max_country: String,
    pub total_2023: Decimal,
    pub country_totals: BTreeMap<u32, BTreeMap<String, Decimal>>,
    pub city_totals: BTreeMap<u32, BTreeMap<String, Decimal>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted_max_city_dec_2022: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub rows_per_table: usize,
    pub metrics: BTreeMap<String, MetricManifest>,
    /// Offices whose 2023 renewable share is exactly 100%.
    pub full_renewable_offices: usize,
    pub offices_per_country: BTreeMap<String, usize>,
}

pub struct SyntheticCorpus {
    pub tables: Vec<PhysicalTable>,
    pub catalog: Catalog,
    pub manifest: CorpusManifest,
}

/// Monthly values per office, in hundredths, indexed [office][year][month].
type Series = Vec<[[i64; 12]; 3]>;

struct Office {
    id: i64,
    city: &'static City,
    size_pct: i64,
}

/// Generates the corpus. Pure function of the spec.
pub fn generate(spec: SyntheticCorpusSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.rows_per_table.max(1);
    let offices: Vec<Office> = (0..n)
        .map(|i| Office {
            id: i as i64 + 1,
            city: if i < CITIES.len() {
                &CITIES[i]
            } else {
                &CITIES[rng.random_range(0..CITIES.len())]
            },
            size_pct: rng.random_range(50..=200),
        })
        .collect();

    let mut plant_order = countries();
    plant_order.shuffle(&mut rng);
    let water_city = CITIES[rng.random_range(0..CITIES.len())].name;

    let mut series: BTreeMap<&str, Series> = BTreeMap::new();
    for m in METRICS.iter().filter(|m| m.table != "renewable_energy") {
        let s: Series = offices
            .iter()
            .map(|o| {
                let mut years = [[0i64; 12]; 3];
                for (y, months) in years.iter_mut().enumerate() {
                    for v in months.iter_mut() {
                        let base = rng.random_range(m.low_cents..=m.high_cents);
                        *v = base * o.size_pct / 100 * m.trend[y] / 100;
                    }
                }
                years
            })
            .collect();
        series.insert(m.table, s);
    }

    // Renewable share per office and year; about one office in twelve is
    // fully renewable in every year.
    let shares: Vec<[i64; 3]> = offices
        .iter()
        .map(|_| {
            if rng.random_range(0..12) == 0 {
                [100; 3]
            } else {
                let base = rng.random_range(5..=80);
                [
                    base,
                    (base + rng.random_range(0..=8)).min(95),
                    (base + rng.random_range(5..=15)).min(95),
                ]
            }
        })
        .collect();
    let elec = series["electricity_consumption"].clone();
    let renewable: Series = elec
        .iter()
        .zip(&shares)
        .map(|(years, share)| {
            let mut out = [[0i64; 12]; 3];
            for y in 0..3 {
                for m in 0..12 {
                    out[y][m] = years[y][m] * share[y] / 100;
                }
            }
            out
        })
        .collect();
    series.insert("renewable_energy", renewable);

    let planted: BTreeMap<&str, &str> = METRICS
        .iter()
        .zip(plant_order.iter().cycle())
        .map(|(m, c)| (m.table, *c))
        .collect();

    // Renewable first: its bump is mirrored into electricity so that
    // renewable never exceeds consumption.
    let ren_country = planted["renewable_energy"];
    if let Some((office, bump)) = plant_max(&offices, &series["renewable_energy"], ren_country, 2) {
        series.get_mut("renewable_energy").unwrap()[office][2][11] += bump;
        series.get_mut("electricity_consumption").unwrap()[office][2][11] += bump;
    }
    for m in METRICS.iter().filter(|m| m.table != "renewable_energy") {
        let country = planted[m.table];
        if let Some((office, bump)) = plant_max(&offices, &series[m.table], country, 2) {
            series.get_mut(m.table).unwrap()[office][2][11] += bump;
        }
    }
    if let Some((office, bump)) = plant_city_max(&offices, &series["water_consumption"], water_city, 1, 11) {
        series.get_mut("water_consumption").unwrap()[office][1][11] += bump;
    }

    let mut tables = Vec::with_capacity(METRICS.len() + 1);
    tables.push(registry_table(&offices, &mut rng));
    let mut manifest = CorpusManifest {
        seed: spec.seed,
        rows_per_table: n,
        metrics: BTreeMap::new(),
        full_renewable_offices: 0,
        offices_per_country: BTreeMap::new(),
    };
    for o in &offices {
        *manifest
            .offices_per_country
            .entry(o.city.country.to_string())
            .or_default() += 1;
    }
    let elec = &series["electricity_consumption"];
    for m in METRICS {
        let s = &series[m.table];
        tables.push(metric_table(m, &offices, s, elec, &mut rng));
        manifest.metrics.insert(
            m.table.to_string(),
            metric_manifest(
                m,
                &offices,
                s,
                planted[m.table],
                (m.table == "water_consumption").then_some(water_city),
            ),
        );
    }
    let ren = &series["renewable_energy"];
    let el = &series["electricity_consumption"];
    manifest.full_renewable_offices = (0..n)
        .filter(|&i| ren[i][2].iter().sum::<i64>() == el[i][2].iter().sum::<i64>() && el[i][2].iter().sum::<i64>() > 0)
        .count();

    let catalog = build_catalog(&tables);
    SyntheticCorpus {
        tables,
        catalog,
        manifest,
    }
}

/// Bump (in hundredths) for one office of `country` making the country's
/// total for `year` the unique maximum.
fn plant_max(offices: &[Office], s: &Series, country: &str, year: usize) -> Option<(usize, i64)> {
    let mut totals: BTreeMap<&str, i64> = BTreeMap::new();
    for (o, v) in offices.iter().zip(s) {
        *totals.entry(o.city.country).or_default() += v[year].iter().sum::<i64>();
    }
    let target = offices.iter().position(|o| o.city.country == country)?;
    let mine = totals[country];
    let best_other = totals
        .iter()
        .filter(|(c, _)| **c != country)
        .map(|(_, v)| *v)
        .max()
        .unwrap_or(0);
    let margin = (best_other / 10).max(100);
    (mine < best_other + margin).then(|| (target, best_other + margin - mine))
}

fn plant_city_max(offices: &[Office], s: &Series, city: &str, year: usize, month: usize) -> Option<(usize, i64)> {
    let mut totals: BTreeMap<&str, i64> = BTreeMap::new();
    for (o, v) in offices.iter().zip(s) {
        *totals.entry(o.city.name).or_default() += v[year][month];
    }
    let target = offices.iter().position(|o| o.city.name == city)?;
    let mine = totals[city];
    let best_other = totals
        .iter()
        .filter(|(c, _)| **c != city)
        .map(|(_, v)| *v)
        .max()
        .unwrap_or(0);
    let margin = (best_other / 10).max(100);
    (mine < best_other + margin).then(|| (target, best_other + margin - mine))
}

fn dec(cents: i64) -> Value {
    Value::Number(Decimal::new(cents, 2))
}

fn text(s: impl Into<String>) -> Value {
    Value::Text(s.into())
}

fn metric_columns(m: &MetricTemplate) -> Vec<ColumnDef> {
    let mut cols = vec![
        ColumnDef::new("office_id", ScalarType::Integer),
        ColumnDef::new("city", ScalarType::Text),
        ColumnDef::new("country", ScalarType::Text),
        ColumnDef::new("continent", ScalarType::Text),
        ColumnDef::new("unit", ScalarType::Text),
    ];
    for y in YEARS {
        cols.push(ColumnDef::new(format!("total_{y}"), ScalarType::Decimal));
    }
    for y in YEARS {
        for mo in 1..=12 {
            cols.push(ColumnDef::new(month_column(y, mo), ScalarType::Decimal));
        }
    }
    for q in 1..=4 {
        cols.push(ColumnDef::new(format!("q2023_{q}"), ScalarType::Decimal));
    }
    for b in m.breakdown {
        cols.push(ColumnDef::new(b, ScalarType::Decimal));
    }
    cols.push(ColumnDef::new("yoy_change_2023", ScalarType::Decimal));
    if m.table == "renewable_energy" {
        cols.push(ColumnDef::new("renewable_share_2023", ScalarType::Decimal));
    }
    cols
}

fn metric_table(
    m: &MetricTemplate,
    offices: &[Office],
    s: &Series,
    elec: &Series,
    rng: &mut ChaCha8Rng,
) -> PhysicalTable {
    let mut rows = Vec::with_capacity(offices.len());
    for (i, o) in offices.iter().enumerate() {
        let v = &s[i];
        let totals: Vec<i64> = v.iter().map(|y| y.iter().sum()).collect();
        let mut row = vec![
            Value::int(o.id),
            text(o.city.name),
            text(o.city.country),
            text(o.city.continent),
            text(m.unit),
        ];
        row.extend(totals.iter().map(|t| dec(*t)));
        for y in v {
            row.extend(y.iter().map(|c| dec(*c)));
        }
        for q in 0..4 {
            row.push(dec(v[2][q * 3..q * 3 + 3].iter().sum()));
        }
        // Breakdown of the 2023 total into four non-negative parts.
        let mut remaining = totals[2];
        for _ in 0..3 {
            let part = remaining * rng.random_range(10..=45) / 100;
            row.push(dec(part));
            remaining -= part;
        }
        row.push(dec(remaining));
        row.push(dec(totals[2] - totals[1]));
        if m.table == "renewable_energy" {
            let e: i64 = elec[i][2].iter().sum();
            let share = if e == 0 {
                Decimal::ZERO
            } else {
                (Decimal::from(totals[2] * 100) / Decimal::from(e)).round_dp(2)
            };
            row.push(Value::Number(share));
        }
        rows.push(row);
    }
    PhysicalTable::new(m.table, metric_columns(m), rows).expect("generated rows match the template")
}

fn metric_manifest(
    m: &MetricTemplate,
    offices: &[Office],
    s: &Series,
    planted_country: &str,
    water_city: Option<&str>,
) -> MetricManifest {
    let mut country_totals: BTreeMap<u32, BTreeMap<String, Decimal>> = BTreeMap::new();
    let mut city_totals: BTreeMap<u32, BTreeMap<String, Decimal>> = BTreeMap::new();
    let mut total_2023 = Decimal::ZERO;
    for (o, v) in offices.iter().zip(s) {
        for (yi, y) in YEARS.iter().enumerate() {
            let t = Decimal::new(v[yi].iter().sum(), 2);
            *country_totals
                .entry(*y)
                .or_default()
                .entry(o.city.country.to_string())
                .or_default() += t;
            *city_totals
                .entry(*y)
                .or_default()
                .entry(o.city.name.to_string())
                .or_default() += t;
            if *y == 2023 {
                total_2023 += t;
            }
        }
    }
    MetricManifest {
        table: m.table.to_string(),
        unit: m.unit.to_string(),
        planted_max_country: planted_country.to_string(),
        total_2023,
        country_totals,
        city_totals,
        planted_max_city_dec_2022: water_city.map(str::to_string),
    }
}

const BUILDING_TYPES: &[&str] = &["high-rise", "mid-rise", "campus", "low-rise", "mixed-use"];
const OWNERSHIP: &[&str] = &["owned", "leased"];
const CERTIFICATIONS: &[&str] = &["LEED Platinum", "LEED Gold", "LEED Silver", "BREEAM Excellent", "none"];
const BUSINESS_UNITS: &[&str] = &["Sales", "Engineering", "Operations", "Finance", "Research", "Support"];
const FIRST_NAMES: &[&str] = &[
    "Alex", "Sam", "Jordan", "Taylor", "Morgan", "Casey", "Riley", "Avery", "Jamie", "Robin",
];
const LAST_NAMES: &[&str] = &[
    "Lee", "Garcia", "Patel", "Kim", "Muller", "Rossi", "Silva", "Okafor", "Tanaka", "Brown",
];
const UTILITIES: &[&str] = &[
    "Metro Power",
    "GridCo",
    "City Utilities",
    "National Energy",
    "Green Grid",
];
const WATER_SOURCES: &[&str] = &["municipal", "groundwater", "recycled", "rainwater"];
const HEATING: &[&str] = &["gas boiler", "heat pump", "district heating", "electric resistance"];
const COOLING: &[&str] = &["chiller", "split units", "district cooling", "evaporative"];
const LIGHTING: &[&str] = &["LED", "fluorescent", "mixed"];
const STATUS: &[&str] = &["active", "active", "active", "under renovation"];
const SECURITY: &[&str] = &["standard", "elevated", "restricted"];

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

fn registry_columns() -> Vec<ColumnDef> {
    use ScalarType::*;
    [
        ("office_id", Integer),
        ("office_name", Text),
        ("city", Text),
        ("country", Text),
        ("continent", Text),
        ("sub_region", Text),
        ("address", Text),
        ("postal_code", Text),
        ("latitude", Decimal),
        ("longitude", Decimal),
        ("timezone", Text),
        ("currency", Text),
        ("opened_year", Integer),
        ("floor_area_m2", Integer),
        ("floors", Integer),
        ("headcount", Integer),
        ("desks", Integer),
        ("meeting_rooms", Integer),
        ("parking_spaces", Integer),
        ("bike_racks", Integer),
        ("building_type", Text),
        ("ownership", Text),
        ("certification", Text),
        ("energy_star_score", Integer),
        ("occupancy_rate", Decimal),
        ("remote_work_share", Decimal),
        ("business_unit", Text),
        ("cost_center", Text),
        ("site_manager", Text),
        ("phone_extension", Integer),
        ("grid_region", Text),
        ("utility_provider", Text),
        ("water_source", Text),
        ("heating_type", Text),
        ("cooling_type", Text),
        ("hvac_age_years", Integer),
        ("lighting_type", Text),
        ("renovation_year", Integer),
        ("lease_expiry_year", Integer),
        ("annual_rent_usd", Decimal),
        ("has_onsite_solar", Boolean),
        ("has_ev_chargers", Boolean),
        ("has_green_roof", Boolean),
        ("has_data_center", Boolean),
        ("waste_recycling_rate", Decimal),
        ("last_energy_audit_year", Integer),
        ("status", Text),
        ("operating_hours", Integer),
        ("security_level", Text),
        ("notes", Text),
    ]
    .into_iter()
    .map(|(n, t)| ColumnDef::new(n, t))
    .collect()
}

fn registry_table(offices: &[Office], rng: &mut ChaCha8Rng) -> PhysicalTable {
    let mut per_city: BTreeMap<&str, usize> = BTreeMap::new();
    let mut rows = Vec::with_capacity(offices.len());
    for o in offices {
        let c = o.city;
        let k = per_city.entry(c.name).or_default();
        *k += 1;
        let area = 800 * o.size_pct + rng.random_range(0..2000);
        let headcount = area / rng.random_range(12..=20);
        let opened = rng.random_range(1985..=2020);
        let ownership = pick(rng, OWNERSHIP);
        rows.push(vec![
            Value::int(o.id),
            text(format!("{} Office {}", c.name, k)),
            text(c.name),
            text(c.country),
            text(c.continent),
            text(c.sub_region),
            text(format!("{} Market Street", rng.random_range(1..=999))),
            text(format!("{:05}", rng.random_range(1000..=99999))),
            Value::Number(Decimal::new(c.lat * 100 + rng.random_range(-50..=50), 4)),
            Value::Number(Decimal::new(c.lon * 100 + rng.random_range(-50..=50), 4)),
            text(c.timezone),
            text(c.currency),
            Value::int(opened),
            Value::int(area),
            Value::int(rng.random_range(1..=40)),
            Value::int(headcount),
            Value::int(headcount * rng.random_range(70..=100) / 100),
            Value::int(rng.random_range(2..=60)),
            Value::int(rng.random_range(0..=400)),
            Value::int(rng.random_range(0..=120)),
            text(pick(rng, BUILDING_TYPES)),
            text(ownership),
            text(pick(rng, CERTIFICATIONS)),
            Value::int(rng.random_range(40..=99)),
            Value::Number(Decimal::new(rng.random_range(4000..=9800), 4)),
            Value::Number(Decimal::new(rng.random_range(500..=6000), 4)),
            text(pick(rng, BUSINESS_UNITS)),
            text(format!("CC-{:04}", rng.random_range(1000..=9999))),
            text(format!("{} {}", pick(rng, FIRST_NAMES), pick(rng, LAST_NAMES))),
            Value::int(rng.random_range(1000..=9999)),
            text(format!(
                "{}-{}",
                c.continent.split_whitespace().map(|w| &w[..1]).collect::<String>(),
                c.country
            )),
            text(pick(rng, UTILITIES)),
            text(pick(rng, WATER_SOURCES)),
            text(pick(rng, HEATING)),
            text(pick(rng, COOLING)),
            Value::int(rng.random_range(1..=30)),
            text(pick(rng, LIGHTING)),
            Value::int(rng.random_range(opened..=2023)),
            if ownership == "leased" {
                Value::int(rng.random_range(2024..=2040))
            } else {
                Value::Null
            },
            Value::Number(Decimal::new(area * rng.random_range(150..=900) * 100, 2)),
            Value::Bool(rng.random_bool(0.3)),
            Value::Bool(rng.random_bool(0.5)),
            Value::Bool(rng.random_bool(0.15)),
            Value::Bool(rng.random_bool(0.1)),
            Value::Number(Decimal::new(rng.random_range(1500..=9500), 4)),
            Value::int(rng.random_range(2015..=2023)),
            text(pick(rng, STATUS)),
            Value::int(rng.random_range(40..=168)),
            text(pick(rng, SECURITY)),
            Value::Null,
        ]);
    }
    PhysicalTable::new(REGISTRY_TABLE, registry_columns(), rows).expect("generated rows match the template")
}

fn location_keywords() -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for c in CITIES {
        map.insert(c.name.to_lowercase(), "city".to_string());
        map.insert(c.country.to_lowercase(), "country".to_string());
        map.insert(c.continent.to_lowercase(), "continent".to_string());
    }
    map.insert("united states".into(), "country".into());
    map.insert("united kingdom".into(), "country".into());
    for (w, col) in [
        ("city", "city"),
        ("cities", "city"),
        ("country", "country"),
        ("countries", "country"),
        ("continent", "continent"),
        ("continents", "continent"),
    ] {
        map.insert(w.into(), col.into());
    }
    map
}

fn build_catalog(tables: &[PhysicalTable]) -> Catalog {
    let mut configs = Vec::new();
    let keywords = location_keywords();
    for t in tables {
        let schema = t.schema();
        let relevant: Vec<ColumnDef> = if t.name() == REGISTRY_TABLE {
            [
                "office_id",
                "office_name",
                "city",
                "country",
                "continent",
                "floor_area_m2",
                "headcount",
                "building_type",
                "ownership",
                "certification",
                "has_onsite_solar",
                "status",
            ]
            .iter()
            .filter_map(|n| t.column_index(n).map(|i| schema[i].clone()))
            .collect()
        } else {
            schema.to_vec()
        };
        let mut samples = BTreeMap::new();
        for col in ["city", "country", "continent", "unit"] {
            let Some(i) = t.column_index(col) else { continue };
            let mut vals: Vec<String> = Vec::new();
            for row in t.rows() {
                let v = row[i].to_string();
                if !vals.contains(&v) {
                    vals.push(v);
                }
                if vals.len() == 3 {
                    break;
                }
            }
            samples.insert(col.to_string(), vals);
        }
        let description = match metric(t.name()) {
            Some(m) => format!(
                "One row per office. {} in {}: yearly totals total_2021..total_2023, monthly columns mYYYY_MM, 2023 quarters and breakdown.",
                capitalize(m.label),
                m.unit
            ),
            None => "One row per office with location and building attributes.".to_string(),
        };
        configs.push(TableConfiguration {
            table_name: t.name().to_string(),
            description,
            relevant_fields: relevant,
            sample_field_values: samples,
            filter_keyword_map: keywords.clone(),
        });
    }
    Catalog::new(configs).expect("generated catalog is valid")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

impl SyntheticCorpus {
    pub fn schemas(&self) -> BTreeMap<String, Vec<ColumnDef>> {
        self.tables
            .iter()
            .map(|t| (t.name().to_string(), t.schema().to_vec()))
            .collect()
    }

    /// Writes `<table>.csv`, `schemas.json`, `catalog.json` and
    /// `manifest.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), StoreError> {
        let io = |path: &Path, source: std::io::Error| StoreError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        for t in &self.tables {
            let path = dir.join(format!("{}.csv", t.name()));
            let file = std::fs::File::create(&path).map_err(|e| io(&path, e))?;
            write_csv(
                t.schema().iter().map(|c| c.name.as_str()),
                t.rows(),
                std::io::BufWriter::new(file),
            )?;
        }
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| io(&path, e))
        };
        write(
            "schemas.json",
            serde_json::to_string_pretty(&self.schemas()).expect("serializes"),
        )?;
        write("catalog.json", self.catalog.to_json())?;
        write(
            "manifest.json",
            serde_json::to_string_pretty(&self.manifest).expect("serializes"),
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticCorpus {
        generate(SyntheticCorpusSpec {
            seed: 1,
            rows_per_table: 100,
        })
    }

    #[test]
    fn generation_is_deterministic() {
        let a = small();
        let b = small();
        assert_eq!(a.manifest, b.manifest);
        for (x, y) in a.tables.iter().zip(&b.tables) {
            assert!(x.rows().eq(y.rows()));
        }
    }

    #[test]
    fn seven_tables_of_exact_size_and_width() {
        let c = small();
        assert_eq!(c.tables.len(), 7);
        for t in &c.tables {
            assert_eq!(t.row_count(), 100);
            assert!(
                (48..=56).contains(&t.schema().len()),
                "{} has {}",
                t.name(),
                t.schema().len()
            );
        }
    }

    #[test]
    fn every_value_is_non_negative() {
        let c = small();
        for t in c.tables.iter().filter(|t| t.name() != REGISTRY_TABLE) {
            for row in t.rows() {
                for v in row {
                    if let Value::Number(d) = v {
                        if !t.schema().is_empty() && d.is_sign_negative() {
                            // Only the year-over-year change may be negative.
                            let yoy = t.column_index("yoy_change_2023").unwrap();
                            assert_eq!(&row[yoy], v);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn renewable_never_exceeds_electricity() {
        let c = small();
        let ren = c.tables.iter().find(|t| t.name() == "renewable_energy").unwrap();
        let el = c.tables.iter().find(|t| t.name() == "electricity_consumption").unwrap();
        let col = ren.column_index("m2023_12").unwrap();
        for (r, e) in ren.rows().zip(el.rows()) {
            assert!(r[col].as_number().unwrap() <= e[col].as_number().unwrap());
        }
        assert!(c.manifest.full_renewable_offices > 0);
    }
}
