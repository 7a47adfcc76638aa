//! Bilateral trade panels: loading, validation, balancing and CSV export.
//!
//! A [`TradePanel`] is immutable once built. Every constructor validates the
//! observation invariants (non-negative finite trade, distinct partners,
//! binary indicators, no duplicate exporter/importer/year triple).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Names of the ten gravity covariates, in feature order.
pub const COVARIATES: [&str; 10] = [
    "ln_gdp_o", "ln_gdp_d", "ln_dist", "eu", "cu", "rta", "contig", "comlang", "colony", "sanction",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub exporter: Arc<str>,
    pub importer: Arc<str>,
    pub year: i32,
    pub trade: f64,
    pub ln_gdp_o: f64,
    pub ln_gdp_d: f64,
    pub ln_dist: f64,
    pub eu: u8,
    pub cu: u8,
    pub rta: u8,
    pub contig: u8,
    pub comlang: u8,
    pub colony: u8,
    pub sanction: u8,
}

impl Observation {
    pub fn pair(&self) -> PairKey {
        PairKey {
            exporter: self.exporter.clone(),
            importer: self.importer.clone(),
        }
    }

    /// Covariate value by position in [`COVARIATES`].
    pub fn covariate(&self, idx: usize) -> f64 {
        match idx {
            0 => self.ln_gdp_o,
            1 => self.ln_gdp_d,
            2 => self.ln_dist,
            3 => self.eu as f64,
            4 => self.cu as f64,
            5 => self.rta as f64,
            6 => self.contig as f64,
            7 => self.comlang as f64,
            8 => self.colony as f64,
            9 => self.sanction as f64,
            _ => panic!("covariate index {idx} out of range"),
        }
    }

    pub fn covariate_by_name(&self, name: &str) -> Option<f64> {
        COVARIATES.iter().position(|c| *c == name).map(|i| self.covariate(i))
    }

    fn dummies(&self) -> [(&'static str, u8); 7] {
        [
            ("eu", self.eu),
            ("cu", self.cu),
            ("rta", self.rta),
            ("contig", self.contig),
            ("comlang", self.comlang),
            ("colony", self.colony),
            ("sanction", self.sanction),
        ]
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !self.trade.is_finite() || self.trade < 0.0 {
            return Err(format!("trade must be finite and non-negative, got {}", self.trade));
        }
        if self.exporter == self.importer {
            return Err(format!("exporter equals importer ({})", self.exporter));
        }
        for (name, v) in [
            ("ln_gdp_o", self.ln_gdp_o),
            ("ln_gdp_d", self.ln_gdp_d),
            ("ln_dist", self.ln_dist),
        ] {
            if !v.is_finite() {
                return Err(format!("{name} is not finite"));
            }
        }
        for (name, v) in self.dummies() {
            if v > 1 {
                return Err(format!("{name} must be 0 or 1, got {v}"));
            }
        }
        Ok(())
    }
}

/// Ordered exporter/importer pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairKey {
    pub exporter: Arc<str>,
    pub importer: Arc<str>,
}

impl PairKey {
    pub fn new(exporter: &str, importer: &str) -> Self {
        Self {
            exporter: exporter.into(),
            importer: importer.into(),
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.exporter, self.importer)
    }
}

#[derive(Debug, Clone)]
pub struct TradePanel {
    observations: Vec<Observation>,
    pair_index: BTreeMap<PairKey, Vec<usize>>,
    year_range: (i32, i32),
}

impl TradePanel {
    /// Builds a panel, rejecting any observation that breaks an invariant.
    /// Row numbers in errors are 1-based positions in `observations`.
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::EmptyPanel("no observations".into()));
        }
        let mut seen = HashSet::with_capacity(observations.len());
        let mut pair_index: BTreeMap<PairKey, Vec<usize>> = BTreeMap::new();
        let mut lo = i32::MAX;
        let mut hi = i32::MIN;
        for (i, obs) in observations.iter().enumerate() {
            obs.validate().map_err(|reason| Error::InvalidRow {
                row: i as u64 + 1,
                reason,
            })?;
            if !seen.insert((obs.exporter.clone(), obs.importer.clone(), obs.year)) {
                return Err(Error::DuplicateTriple {
                    row: i as u64 + 1,
                    exporter: obs.exporter.to_string(),
                    importer: obs.importer.to_string(),
                    year: obs.year,
                });
            }
            pair_index.entry(obs.pair()).or_default().push(i);
            lo = lo.min(obs.year);
            hi = hi.max(obs.year);
        }
        for rows in pair_index.values_mut() {
            rows.sort_by_key(|&r| observations[r].year);
        }
        Ok(Self {
            observations,
            pair_index,
            year_range: (lo, hi),
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Observation positions for each pair, sorted by year.
    pub fn pair_index(&self) -> &BTreeMap<PairKey, Vec<usize>> {
        &self.pair_index
    }

    pub fn year_range(&self) -> (i32, i32) {
        self.year_range
    }

    pub fn n_pairs(&self) -> usize {
        self.pair_index.len()
    }

    pub fn trade(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.trade).collect()
    }

    /// New panel holding the given rows in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        Self::new(rows.iter().map(|&r| self.observations[r].clone()).collect())
    }

    /// Copy with every outcome replaced by zero. Used to hand prediction
    /// targets to estimators without exposing their outcomes.
    pub fn without_outcomes(&self) -> Self {
        let mut out = self.clone();
        for o in &mut out.observations {
            o.trade = 0.0;
        }
        out
    }

    pub fn summary(&self) -> PanelSummary {
        PanelSummary {
            pairs: self.n_pairs(),
            observations: self.len(),
            year_range: self.year_range,
            zero_flows: self.observations.iter().filter(|o| o.trade == 0.0).count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSummary {
    pub pairs: usize,
    pub observations: usize,
    pub year_range: (i32, i32),
    pub zero_flows: usize,
}

impl fmt::Display for PanelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pairs:        {}", self.pairs)?;
        writeln!(f, "observations: {}", self.observations)?;
        writeln!(f, "years:        {}-{}", self.year_range.0, self.year_range.1)?;
        write!(f, "zero flows:   {}", self.zero_flows)
    }
}

/// Column names for each observation field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSchema {
    pub exporter: String,
    pub importer: String,
    pub year: String,
    pub trade: String,
    pub gdp_o: String,
    pub gdp_d: String,
    pub dist: String,
    pub eu: String,
    pub cu: String,
    pub rta: String,
    pub contig: String,
    pub comlang: String,
    pub colony: String,
    pub sanction: String,
    /// GDP and distance columns hold levels; logs are taken at load.
    pub levels: bool,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            exporter: "exporter".into(),
            importer: "importer".into(),
            year: "year".into(),
            trade: "trade".into(),
            gdp_o: "ln_gdp_o".into(),
            gdp_d: "ln_gdp_d".into(),
            dist: "ln_dist".into(),
            eu: "eu".into(),
            cu: "cu".into(),
            rta: "rta".into(),
            contig: "contig".into(),
            comlang: "comlang".into(),
            colony: "colony".into(),
            sanction: "sanction".into(),
            levels: false,
        }
    }
}

impl PanelSchema {
    fn fields(&self) -> [(&'static str, &str); 14] {
        [
            ("exporter", &self.exporter),
            ("importer", &self.importer),
            ("year", &self.year),
            ("trade", &self.trade),
            ("gdp_o", &self.gdp_o),
            ("gdp_d", &self.gdp_d),
            ("dist", &self.dist),
            ("eu", &self.eu),
            ("cu", &self.cu),
            ("rta", &self.rta),
            ("contig", &self.contig),
            ("comlang", &self.comlang),
            ("colony", &self.colony),
            ("sanction", &self.sanction),
        ]
    }
}

/// Counts from a load: rows read and rows skipped for missing covariates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rejected_missing: usize,
}

pub fn load_panel(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<(TradePanel, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_panel(file, schema)
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim(), "" | "NA" | "na" | "NaN" | "nan" | ".")
}

/// Reads a comma-separated panel with a header row.
///
/// Rows with a missing covariate are skipped and counted. Any other invariant
/// violation is an error naming the file line.
pub fn read_panel<R: Read>(reader: R, schema: &PanelSchema) -> Result<(TradePanel, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut cols = [0usize; 14];
    for (slot, (field, name)) in cols.iter_mut().zip(schema.fields()) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn {
                field,
                column: name.to_string(),
            })?;
    }

    let mut report = LoadReport::default();
    let mut observations = Vec::new();
    let mut lines = Vec::new();
    let mut interned: std::collections::HashMap<String, Arc<str>> = Default::default();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        report.rows_read += 1;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| record.get(cols[i]).unwrap_or("").trim();
        let bad = |reason: String| Error::InvalidRow { row: line, reason };

        let exporter = get(0);
        let importer = get(1);
        if exporter.is_empty() || importer.is_empty() {
            return Err(bad("empty country code".into()));
        }
        let year: i32 = get(2)
            .parse()
            .map_err(|_| bad(format!("year `{}` is not an integer", get(2))))?;
        let trade: f64 = get(3)
            .parse()
            .map_err(|_| bad(format!("trade `{}` is not numeric", get(3))))?;

        if (4..14).any(|i| is_missing(get(i))) {
            report.rejected_missing += 1;
            continue;
        }
        let real = |i: usize, name: &str| -> Result<f64> {
            let v: f64 = get(i)
                .parse()
                .map_err(|_| bad(format!("{name} `{}` is not numeric", get(i))))?;
            if schema.levels {
                if v <= 0.0 {
                    return Err(bad(format!("{name} level {v} must be positive to take logs")));
                }
                Ok(v.ln())
            } else {
                Ok(v)
            }
        };
        let binary = |i: usize, name: &str| -> Result<u8> {
            let raw = get(i);
            match raw.parse::<f64>() {
                Ok(v) if v == 0.0 => Ok(0),
                Ok(v) if v == 1.0 => Ok(1),
                _ => Err(bad(format!("{name} must be 0 or 1, got `{raw}`"))),
            }
        };
        let mut intern = |s: &str| -> Arc<str> {
            interned
                .entry(s.to_string())
                .or_insert_with(|| Arc::from(s))
                .clone()
        };
        let obs = Observation {
            exporter: intern(exporter),
            importer: intern(importer),
            year,
            trade,
            ln_gdp_o: real(4, "gdp_o")?,
            ln_gdp_d: real(5, "gdp_d")?,
            ln_dist: real(6, "dist")?,
            eu: binary(7, "eu")?,
            cu: binary(8, "cu")?,
            rta: binary(9, "rta")?,
            contig: binary(10, "contig")?,
            comlang: binary(11, "comlang")?,
            colony: binary(12, "colony")?,
            sanction: binary(13, "sanction")?,
        };
        obs.validate().map_err(bad)?;
        observations.push(obs);
        lines.push(line);
    }

    // Re-map positional row numbers from TradePanel::new onto file lines.
    let panel = TradePanel::new(observations).map_err(|e| match e {
        Error::InvalidRow { row, reason } => Error::InvalidRow {
            row: lines[row as usize - 1],
            reason,
        },
        Error::DuplicateTriple {
            row,
            exporter,
            importer,
            year,
        } => Error::DuplicateTriple {
            row: lines[row as usize - 1],
            exporter,
            importer,
            year,
        },
        other => other,
    })?;
    if report.rejected_missing > 0 {
        log::warn!("skipped {} rows with missing covariates", report.rejected_missing);
    }
    Ok((panel, report))
}

/// Writes the panel in the given schema. Reals use the shortest
/// representation that round-trips exactly.
pub fn write_panel<W: Write>(panel: &TradePanel, writer: W, schema: &PanelSchema) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(schema.fields().iter().map(|(_, name)| *name))?;
    let level = |v: f64| if schema.levels { v.exp() } else { v };
    for o in panel.observations() {
        wtr.write_record([
            o.exporter.to_string(),
            o.importer.to_string(),
            o.year.to_string(),
            o.trade.to_string(),
            level(o.ln_gdp_o).to_string(),
            level(o.ln_gdp_d).to_string(),
            level(o.ln_dist).to_string(),
            o.eu.to_string(),
            o.cu.to_string(),
            o.rta.to_string(),
            o.contig.to_string(),
            o.comlang.to_string(),
            o.colony.to_string(),
            o.sanction.to_string(),
        ])?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Keeps the pairs with exactly `required_count` observations inside the
/// inclusive year `window`, restricted to that window.
pub fn balance_panel(panel: &TradePanel, window: (i32, i32), required_count: usize) -> Result<TradePanel> {
    if required_count == 0 {
        return Err(Error::InvalidInput("required_count must be at least 1".into()));
    }
    if window.0 > window.1 {
        return Err(Error::InvalidInput(format!("invalid window {}-{}", window.0, window.1)));
    }
    let obs = panel.observations();
    let mut keep = Vec::new();
    for rows in panel.pair_index().values() {
        let inside: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&r| (window.0..=window.1).contains(&obs[r].year))
            .collect();
        if inside.len() == required_count {
            keep.extend(inside);
        }
    }
    if keep.is_empty() {
        return Err(Error::EmptyPanel(format!(
            "no pair has {required_count} observations in {}-{}",
            window.0, window.1
        )));
    }
    keep.sort_unstable();
    panel.subset(&keep)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn obs(e: &str, i: &str, year: i32, trade: f64) -> Observation {
        Observation {
            exporter: e.into(),
            importer: i.into(),
            year,
            trade,
            ln_gdp_o: 1.0,
            ln_gdp_d: 2.0,
            ln_dist: 3.0,
            eu: 0,
            cu: 0,
            rta: 0,
            contig: 0,
            comlang: 0,
            colony: 0,
            sanction: 0,
        }
    }

    const HEADER: &str = "exporter,importer,year,trade,ln_gdp_o,ln_gdp_d,ln_dist,eu,cu,rta,contig,comlang,colony,sanction\n";

    #[test]
    fn loads_valid_rows() {
        let csv = format!(
            "{HEADER}A,B,2000,1.5,1,2,3,0,0,1,0,0,0,0\nB,A,2000,0,1,2,3,0,0,1,0,0,0,0\nA,B,2001,2,1,2,3,0,0,1,0,0,0,0\n"
        );
        let (panel, report) = read_panel(csv.as_bytes(), &PanelSchema::default()).unwrap();
        assert_eq!(panel.len(), 3);
        assert_eq!(report.rows_read, 3);
        assert_eq!(panel.n_pairs(), 2);
        assert_eq!(panel.summary().zero_flows, 1);
        assert_eq!(panel.year_range(), (2000, 2001));
    }

    #[test]
    fn negative_trade_names_row() {
        let csv = format!("{HEADER}A,B,2000,1,1,2,3,0,0,0,0,0,0,0\nA,B,2001,-5,1,2,3,0,0,0,0,0,0,0\n");
        match read_panel(csv.as_bytes(), &PanelSchema::default()) {
            Err(Error::InvalidRow { row, reason }) => {
                assert_eq!(row, 3);
                assert!(reason.contains("non-negative"), "{reason}");
            }
            other => panic!("expected invalid row, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_trade_and_duplicates() {
        let csv = format!("{HEADER}A,B,2000,abc,1,2,3,0,0,0,0,0,0,0\n");
        assert!(matches!(
            read_panel(csv.as_bytes(), &PanelSchema::default()),
            Err(Error::InvalidRow { row: 2, .. })
        ));
        let csv = format!("{HEADER}A,B,2000,1,1,2,3,0,0,0,0,0,0,0\nA,B,2000,2,1,2,3,0,0,0,0,0,0,0\n");
        assert!(matches!(
            read_panel(csv.as_bytes(), &PanelSchema::default()),
            Err(Error::DuplicateTriple { row: 3, .. })
        ));
    }

    #[test]
    fn missing_column_and_missing_values() {
        let csv = "exporter,importer,year,trade\nA,B,2000,1\n";
        assert!(matches!(
            read_panel(csv.as_bytes(), &PanelSchema::default()),
            Err(Error::MissingColumn { field: "gdp_o", .. })
        ));
        let csv = format!("{HEADER}A,B,2000,1,,2,3,0,0,0,0,0,0,0\nA,B,2001,1,1,2,3,0,0,0,0,0,0,0\n");
        let (panel, report) = read_panel(csv.as_bytes(), &PanelSchema::default()).unwrap();
        assert_eq!(panel.len(), 1);
        assert_eq!(report.rejected_missing, 1);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_panel("/nonexistent/panel.csv", &PanelSchema::default()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn level_schema_takes_logs() {
        let schema = PanelSchema {
            gdp_o: "gdp_o".into(),
            gdp_d: "gdp_d".into(),
            dist: "dist".into(),
            levels: true,
            ..Default::default()
        };
        let csv = "exporter,importer,year,trade,gdp_o,gdp_d,dist,eu,cu,rta,contig,comlang,colony,sanction\nA,B,2000,7,100,10,1000,0,0,0,1,1,0,0\n";
        let (panel, _) = read_panel(csv.as_bytes(), &schema).unwrap();
        let o = &panel.observations()[0];
        assert_eq!(o.trade, 7.0);
        assert!((o.ln_gdp_o - 100f64.ln()).abs() < 1e-15);
        assert!((o.ln_dist - 1000f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rejects_self_trade_and_non_binary() {
        assert!(TradePanel::new(vec![obs("A", "A", 2000, 1.0)]).is_err());
        let mut o = obs("A", "B", 2000, 1.0);
        o.rta = 2;
        assert!(TradePanel::new(vec![o]).is_err());
    }

    fn toy_three_pairs() -> TradePanel {
        let mut rows = Vec::new();
        for y in 2000..2005 {
            rows.push(obs("A", "B", y, 1.0));
            rows.push(obs("B", "C", y, 2.0));
            if y != 2002 {
                rows.push(obs("C", "A", y, 3.0));
            }
        }
        TradePanel::new(rows).unwrap()
    }

    #[test]
    fn balance_drops_pair_missing_a_year() {
        let panel = toy_three_pairs();
        // A|B: 5, B|C: 5, C|A: 4 observations in 2000-2004.
        let b = balance_panel(&panel, (2000, 2004), 5).unwrap();
        assert_eq!(b.n_pairs(), 2);
        assert_eq!(b.len(), 10);
        assert!(!b.pair_index().contains_key(&PairKey::new("C", "A")));
    }

    #[test]
    fn balance_restricts_to_window() {
        let panel = toy_three_pairs();
        let b = balance_panel(&panel, (2003, 2004), 2).unwrap();
        assert_eq!(b.n_pairs(), 3);
        assert_eq!(b.year_range(), (2003, 2004));
        assert!(matches!(balance_panel(&panel, (2000, 2004), 6), Err(Error::EmptyPanel(_))));
    }

    #[test]
    fn balance_identity_on_balanced_input() {
        let panel = balance_panel(&toy_three_pairs(), (2000, 2004), 5).unwrap();
        let again = balance_panel(&panel, (2000, 2004), 5).unwrap();
        assert_eq!(panel.observations(), again.observations());
    }

    #[test]
    fn write_then_read_round_trips() {
        let mut o = obs("A", "B", 2000, 0.1 + 0.2);
        o.ln_dist = std::f64::consts::PI;
        o.rta = 1;
        let panel = TradePanel::new(vec![o, obs("B", "A", 2001, 1e12 / 3.0)]).unwrap();
        let mut buf = Vec::new();
        write_panel(&panel, &mut buf, &PanelSchema::default()).unwrap();
        let (back, _) = read_panel(buf.as_slice(), &PanelSchema::default()).unwrap();
        assert_eq!(back.observations(), panel.observations());
    }
}
