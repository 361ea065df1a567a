//! Curated concept vocabulary for the synthetic benchmark.

use crate::quantity::*;

#[derive(Debug, Clone, Copy)]
pub struct Concept {
    pub name: &'static str,
    pub synonyms: [&'static str; 3],
    /// One or two units of a single dimension; the range is in `units[0]`.
    pub units: &'static [UnitId],
    pub range: (f64, f64),
}

const fn c(name: &'static str, synonyms: [&'static str; 3], units: &'static [UnitId], lo: f64, hi: f64) -> Concept {
    Concept {
        name,
        synonyms,
        units,
        range: (lo, hi),
    }
}

const STORAGE: &[Concept] = &[
    c("ssd_capacity", ["ssd capacity", "solid state drive size", "flash storage capacity"], &[GB, TB], 120.0, 8000.0),
    c("ram_size", ["ram size", "memory capacity", "installed memory"], &[GB], 2.0, 256.0),
    c("backup_quota", ["backup quota", "cloud storage allowance", "archive space"], &[GB, TB], 50.0, 20000.0),
    c("attachment_limit", ["attachment limit", "upload size cap", "maximum file upload"], &[MB], 5.0, 500.0),
    c("firmware_size", ["firmware image", "firmware package size", "update bundle size"], &[MB, KB], 1.0, 900.0),
    c("photo_size", ["photo file size", "image file weight", "picture size"], &[MB, KB], 0.2, 60.0),
    c("database_size", ["database size", "data warehouse volume", "stored records footprint"], &[GB, TB], 10.0, 90000.0),
    c("video_size", ["video file size", "movie download size", "clip footprint"], &[GB, MB], 0.1, 80.0),
];

const CURRENCY: &[Concept] = &[
    c("annual_revenue", ["annual revenue", "yearly sales", "total turnover"], &[USD], 2e6, 9e10),
    c("net_profit", ["net profit", "bottom line earnings", "net income"], &[USD], 1e5, 5e9),
    c("operating_expenses", ["operating expenses", "running costs", "operational spending"], &[USD], 5e5, 8e9),
    c("retail_price", ["retail price", "sticker price", "shelf price"], &[USD], 5.0, 4000.0),
    c("monthly_rent", ["monthly rent", "apartment lease payment", "rental charge"], &[USD], 400.0, 9000.0),
    c("research_budget", ["research budget", "development funding", "laboratory grant"], &[USD], 5e4, 9e8),
    c("market_cap", ["market capitalization", "company valuation", "equity value"], &[USD], 1e8, 2e12),
    c("dividend_payout", ["dividend payout", "shareholder distribution", "cash dividend"], &[USD], 1e5, 9e9),
    c("median_salary", ["median salary", "typical annual pay", "average wage"], &[USD], 18000.0, 300000.0),
    c("ticket_price", ["ticket price", "admission fee", "entry cost"], &[USD], 3.0, 600.0),
];

const MASS: &[Concept] = &[
    c("daily_dose", ["daily dose", "prescribed dosage", "medication amount"], &[MG, G], 2.0, 3000.0),
    c("protein_intake", ["protein intake", "dietary protein", "protein consumption"], &[G], 10.0, 400.0),
    c("body_weight", ["body weight", "patient mass", "recorded weight"], &[KG], 3.0, 180.0),
    c("cargo_load", ["cargo load", "freight weight", "shipment mass"], &[TONNE, KG], 0.5, 900.0),
    c("package_weight", ["package weight", "parcel mass", "shipping weight"], &[KG, G], 0.05, 70.0),
    c("fiber_content", ["fiber content", "dietary fibre", "roughage amount"], &[G], 0.5, 60.0),
    c("vitamin_dose", ["vitamin dose", "supplement amount", "nutrient serving"], &[MG], 0.5, 2000.0),
    c("harvest_yield", ["harvest yield", "crop output", "grain production"], &[TONNE], 1.0, 90000.0),
];

const PRESSURE: &[Concept] = &[
    c("systolic_pressure", ["systolic blood pressure", "systolic reading", "peak arterial pressure"], &[MMHG], 80.0, 220.0),
    c("diastolic_pressure", ["diastolic blood pressure", "diastolic reading", "resting arterial pressure"], &[MMHG], 40.0, 130.0),
    c("tire_pressure", ["tire pressure", "tyre inflation", "wheel inflation level"], &[KPA], 120.0, 900.0),
    c("cabin_pressure", ["cabin pressure", "interior air pressure", "fuselage pressurization"], &[KPA, PA], 60.0, 110.0),
    c("boiler_pressure", ["boiler pressure", "steam pressure", "vessel operating pressure"], &[KPA], 100.0, 20000.0),
];

const DATA_RATE: &[Concept] = &[
    c("download_speed", ["download speed", "downstream bandwidth", "incoming data rate"], &[MBPS, GBPS], 2.0, 9000.0),
    c("upload_speed", ["upload speed", "upstream bandwidth", "outgoing data rate"], &[MBPS], 1.0, 2000.0),
    c("network_throughput", ["network throughput", "backbone capacity", "link bandwidth"], &[GBPS, MBPS], 0.5, 800.0),
    c("stream_bitrate", ["streaming bitrate", "video bitrate", "encoding rate"], &[KBPS, MBPS], 300.0, 60000.0),
];

const PERCENT_CONCEPTS: &[Concept] = &[
    c("interest_rate", ["interest rate", "lending rate", "borrowing cost"], &[PERCENT], 0.25, 25.0),
    c("unemployment_rate", ["unemployment rate", "joblessness level", "labor slack"], &[PERCENT], 1.5, 30.0),
    c("tax_rate", ["tax rate", "levy percentage", "fiscal charge"], &[PERCENT], 2.0, 60.0),
    c("profit_margin", ["profit margin", "operating margin", "earnings margin"], &[PERCENT], 0.5, 70.0),
    c("vaccine_efficacy", ["vaccine efficacy", "immunization effectiveness", "protection rate"], &[PERCENT], 20.0, 99.0),
    c("inflation_rate", ["inflation rate", "consumer price growth", "living cost growth"], &[PERCENT], 0.1, 40.0),
    c("humidity_level", ["humidity level", "relative humidity", "air moisture"], &[PERCENT], 5.0, 99.0),
];

const LENGTH: &[Concept] = &[
    c("cable_length", ["cable length", "wire run", "cord length"], &[M, CM], 0.3, 900.0),
    c("rainfall", ["rainfall", "precipitation total", "rain accumulation"], &[MM, CM], 1.0, 3000.0),
    c("running_distance", ["running distance", "jogging route", "race course length"], &[KM, M], 0.4, 160.0),
    c("screen_diagonal", ["screen diagonal", "display size", "monitor width"], &[CM], 8.0, 250.0),
    c("tumor_size", ["tumor size", "lesion diameter", "mass dimension"], &[MM, CM], 1.0, 150.0),
];

const VOLUME: &[Concept] = &[
    c("fuel_tank", ["fuel tank capacity", "gas tank volume", "tank size"], &[L], 5.0, 900.0),
    c("water_intake", ["water intake", "daily hydration", "fluid consumption"], &[L, ML], 0.2, 9.0),
    c("injection_volume", ["injection volume", "syringe dose", "infusion amount"], &[ML], 0.1, 900.0),
];

/// All concepts, interleaved across dimensions so any prefix mixes them.
pub fn concepts() -> Vec<Concept> {
    let groups = [STORAGE, CURRENCY, MASS, PRESSURE, DATA_RATE, PERCENT_CONCEPTS, LENGTH, VOLUME];
    let longest = groups.iter().map(|g| g.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    for i in 0..longest {
        for g in groups {
            if let Some(c) = g.get(i) {
                out.push(*c);
            }
        }
    }
    out
}

pub fn concept(name: &str) -> Option<Concept> {
    concepts().into_iter().find(|c| c.name == name)
}

/// Sentence templates; `{c}` is the concept surface and `{v}` the quantity.
pub const DOC_TEMPLATES: &[&str] = &[
    "the {c} reached {v} last quarter",
    "a {c} near {v} was reported",
    "records show the {c} at {v}",
    "our team measured the {c} as {v}",
    "the latest filing lists {c} at {v}",
    "{c} stood at {v} according to the survey",
    "the product sheet gives {c} as {v}",
    "in this study the {c} was {v}",
];

pub const QUERY_TEMPLATES: &[&str] = &["{c} {op} {v}", "find {c} {op} {v}", "which records have {c} {op} {v}", "documents where {c} is {op} {v}"];

pub fn operator_phrases(cmp: Cmp) -> &'static [&'static str] {
    match cmp {
        Cmp::Gt => &["over", "above", "more than", "greater than"],
        Cmp::Lt => &["under", "below", "less than"],
        Cmp::Eq => &["exactly", "equal to"],
    }
}
