//! Closed unit vocabulary with per-dimension conversion factors.

use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const TABLE_HEADER: &str = "# numcolbert unit table v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UnitId(pub u16);

impl UnitId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitDef {
    pub name: String,
    pub dimension: String,
    /// Multiplier to the dimension's base unit.
    pub factor: f64,
    pub surfaces: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitTable {
    units: Vec<UnitDef>,
}

// Ids of the builtin table, in declaration order.
pub const B: UnitId = UnitId(0);
pub const KB: UnitId = UnitId(1);
pub const MB: UnitId = UnitId(2);
pub const GB: UnitId = UnitId(3);
pub const TB: UnitId = UnitId(4);
pub const USD: UnitId = UnitId(5);
pub const MG: UnitId = UnitId(6);
pub const G: UnitId = UnitId(7);
pub const KG: UnitId = UnitId(8);
pub const TONNE: UnitId = UnitId(9);
pub const PA: UnitId = UnitId(10);
pub const KPA: UnitId = UnitId(11);
pub const MMHG: UnitId = UnitId(12);
pub const KBPS: UnitId = UnitId(13);
pub const MBPS: UnitId = UnitId(14);
pub const GBPS: UnitId = UnitId(15);
pub const PERCENT: UnitId = UnitId(16);
pub const MM: UnitId = UnitId(17);
pub const CM: UnitId = UnitId(18);
pub const M: UnitId = UnitId(19);
pub const KM: UnitId = UnitId(20);
pub const ML: UnitId = UnitId(21);
pub const L: UnitId = UnitId(22);

const BUILTIN: &[(&str, &str, f64, &[&str])] = &[
    ("B", "storage", 1.0, &["b", "byte", "bytes"]),
    ("KB", "storage", 1e3, &["kb", "kilobyte", "kilobytes"]),
    ("MB", "storage", 1e6, &["mb", "megabyte", "megabytes"]),
    ("GB", "storage", 1e9, &["gb", "gigabyte", "gigabytes"]),
    ("TB", "storage", 1e12, &["tb", "terabyte", "terabytes"]),
    ("USD", "currency", 1.0, &["usd", "$", "dollar", "dollars"]),
    ("MG", "mass", 1e-3, &["mg", "milligram", "milligrams"]),
    ("G", "mass", 1.0, &["g", "gram", "grams"]),
    ("KG", "mass", 1e3, &["kg", "kilogram", "kilograms"]),
    ("TONNE", "mass", 1e6, &["tonne", "tonnes", "ton", "tons"]),
    ("PA", "pressure", 1.0, &["pa", "pascal", "pascals"]),
    ("KPA", "pressure", 1e3, &["kpa", "kilopascal", "kilopascals"]),
    ("MMHG", "pressure", 133.322387415, &["mmhg"]),
    ("KBPS", "data_rate", 1e3, &["kbps"]),
    ("MBPS", "data_rate", 1e6, &["mbps"]),
    ("GBPS", "data_rate", 1e9, &["gbps"]),
    ("PERCENT", "dimensionless", 1.0, &["%", "percent", "pct"]),
    ("MM", "length", 1e-3, &["mm", "millimeter", "millimeters", "millimetre", "millimetres"]),
    ("CM", "length", 1e-2, &["cm", "centimeter", "centimeters", "centimetre", "centimetres"]),
    ("M", "length", 1.0, &["m", "meter", "meters", "metre", "metres"]),
    ("KM", "length", 1e3, &["km", "kilometer", "kilometers", "kilometre", "kilometres"]),
    ("ML", "volume", 1e-3, &["ml", "milliliter", "milliliters", "millilitre", "millilitres"]),
    ("L", "volume", 1.0, &["l", "liter", "liters", "litre", "litres"]),
];

impl UnitTable {
    pub fn builtin() -> &'static UnitTable {
        static TABLE: OnceLock<UnitTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            let units = BUILTIN
                .iter()
                .map(|(name, dim, factor, surfaces)| UnitDef {
                    name: name.to_string(),
                    dimension: dim.to_string(),
                    factor: *factor,
                    surfaces: surfaces.iter().map(|s| s.to_string()).collect(),
                })
                .collect();
            UnitTable::new(units).expect("builtin unit table is valid")
        })
    }

    pub fn new(units: Vec<UnitDef>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (i, u) in units.iter().enumerate() {
            if !(u.factor.is_finite() && u.factor > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "unit {} has non-positive factor {}",
                    u.name, u.factor
                )));
            }
            if u.dimension.is_empty() || u.name.is_empty() {
                return Err(Error::InvalidConfig(format!("unit #{i} lacks a name or dimension")));
            }
            for s in &u.surfaces {
                if !seen.insert(s.to_lowercase()) {
                    return Err(Error::InvalidConfig(format!("surface form {s:?} used twice")));
                }
            }
        }
        if units.len() > u16::MAX as usize {
            return Err(Error::InvalidConfig("too many units".into()));
        }
        Ok(Self { units })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = UnitId> + '_ {
        (0..self.units.len()).map(|i| UnitId(i as u16))
    }

    pub fn get(&self, id: UnitId) -> &UnitDef {
        &self.units[id.index()]
    }

    pub fn contains(&self, id: UnitId) -> bool {
        id.index() < self.units.len()
    }

    pub fn by_name(&self, name: &str) -> Option<UnitId> {
        self.units
            .iter()
            .position(|u| u.name.eq_ignore_ascii_case(name))
            .map(|i| UnitId(i as u16))
    }

    pub fn by_surface(&self, surface: &str) -> Option<UnitId> {
        let surface = surface.to_lowercase();
        self.units
            .iter()
            .position(|u| u.surfaces.iter().any(|s| *s == surface))
            .map(|i| UnitId(i as u16))
    }

    pub fn same_dimension(&self, a: UnitId, b: UnitId) -> bool {
        self.get(a).dimension == self.get(b).dimension
    }

    /// Units sharing `id`'s dimension, including `id` itself.
    pub fn siblings(&self, id: UnitId) -> Vec<UnitId> {
        self.ids().filter(|&u| self.same_dimension(u, id)).collect()
    }

    pub fn dimensions(&self) -> Vec<&str> {
        let mut dims: Vec<&str> = Vec::new();
        for u in &self.units {
            if !dims.contains(&u.dimension.as_str()) {
                dims.push(&u.dimension);
            }
        }
        dims
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(TABLE_HEADER);
        out.push('\n');
        for u in &self.units {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                u.name,
                u.dimension,
                u.factor,
                u.surfaces.join(",")
            ));
        }
        out
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == TABLE_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    file: source.into(),
                    line: 1,
                    detail: format!("expected header {TABLE_HEADER:?}"),
                })
            }
        }
        let mut units = Vec::new();
        for (no, line) in lines {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |detail: String| Error::Parse {
                file: source.into(),
                line: no + 1,
                detail,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(err(format!("expected 4 tab-separated columns, got {}", cols.len())));
            }
            let factor: f64 = cols[2]
                .parse()
                .map_err(|e| err(format!("bad factor {:?}: {e}", cols[2])))?;
            units.push(UnitDef {
                name: cols[0].to_string(),
                dimension: cols[1].to_string(),
                factor,
                surfaces: cols[3]
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.to_lowercase())
                    .collect(),
            });
        }
        UnitTable::new(units)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let table = UnitTable::builtin();
        if table.contains(*self) {
            f.write_str(&table.get(*self).name)
        } else {
            write!(f, "unit#{}", self.0)
        }
    }
}
