//! Per-period mixing metrics and cross-variant comparison.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Variant;
use crate::tracer::{mixing_index, BinSpec, ParticleEnsemble};
use crate::transport::{fret_factor, SpeciesFields};

/// Mixing index / FRET factor a variant must reach to count as mixed.
pub const CROSSING_LEVEL: f64 = 0.8;

/// Everything two reports must share to be comparable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConditions {
    pub flow_rate_per_inlet_ul_per_min: f64,
    pub reynolds: f64,
    pub h_um: f64,
    pub diffusivity: f64,
    pub rate_constant: f64,
    pub fret_threshold: f64,
    pub n_particles: usize,
}

impl ReportConditions {
    /// Keys whose values differ, formatted one per line.
    fn diff(&self, other: &Self) -> Vec<String> {
        let a = serde_json::to_value(self).expect("plain struct");
        let b = serde_json::to_value(other).expect("plain struct");
        let (a, b) = (a.as_object().unwrap(), b.as_object().unwrap());
        a.iter()
            .filter(|(k, v)| b.get(*k) != Some(*v))
            .map(|(k, v)| format!("  {k}: {v} vs {}", b[k]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub period: usize,
    pub y_um: f64,
    pub mixing_index: f64,
    pub fret_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    pub variant: Variant,
    pub conditions: ReportConditions,
    pub records: Vec<PeriodRecord>,
    /// Provenance: grid, tolerances and defaults used for the run.
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl MixingReport {
    /// Assembles records from precomputed per-plane metrics.
    pub fn from_metrics(
        variant: Variant,
        conditions: ReportConditions,
        planes: &[f64],
        mixing: &[f64],
        fret: &[f64],
    ) -> Result<Self> {
        if mixing.len() != planes.len() || fret.len() != planes.len() {
            return Err(Error::Report(format!(
                "period count mismatch: {} planes, {} mixing values, {} FRET values",
                planes.len(),
                mixing.len(),
                fret.len()
            )));
        }
        let records = planes
            .iter()
            .zip(mixing.iter().zip(fret))
            .enumerate()
            .map(|(n, (&y_um, (&m, &f)))| PeriodRecord {
                period: n + 1,
                y_um,
                mixing_index: m.clamp(0.0, 1.0),
                fret_factor: f,
            })
            .collect();
        Ok(Self {
            variant,
            conditions,
            records,
            metadata: BTreeMap::new(),
        })
    }

    pub fn record(&self, period: usize) -> Option<&PeriodRecord> {
        self.records.iter().find(|r| r.period == period)
    }

    /// First period whose FRET factor reaches `level`.
    pub fn fret_crossing(&self, level: f64) -> Option<usize> {
        self.records.iter().find(|r| r.fret_factor >= level).map(|r| r.period)
    }

    pub fn mixing_crossing(&self, level: f64) -> Option<usize> {
        self.records.iter().find(|r| r.mixing_index >= level).map(|r| r.period)
    }
}

/// One record per period plane: particle mixing index from the ensemble's
/// snapshot at that plane, FRET factor from the species fields.
pub fn build_report(
    variant: Variant,
    conditions: ReportConditions,
    planes: &[f64],
    ensemble: &ParticleEnsemble,
    bins: &BinSpec,
    species: &SpeciesFields,
) -> Result<MixingReport> {
    if ensemble.snapshots.len() != planes.len() {
        return Err(Error::Report(format!(
            "period count mismatch: {} planes, {} particle snapshots",
            planes.len(),
            ensemble.snapshots.len()
        )));
    }
    let mut mixing = Vec::with_capacity(planes.len());
    let mut fret = Vec::with_capacity(planes.len());
    for (snap, &y) in ensemble.snapshots.iter().zip(planes) {
        if snap.y != y {
            return Err(Error::Report(format!("snapshot at y = {} um, expected {y} um", snap.y)));
        }
        mixing.push(mixing_index(snap.points(), bins)?);
        fret.push(fret_factor(species, y, conditions.fret_threshold)?);
    }
    MixingReport::from_metrics(variant, conditions, planes, &mixing, &fret)
}

/// Per-period comparison of two variants; ratios are `numerator / denominator`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub numerator: Variant,
    pub denominator: Variant,
    pub period: usize,
    pub fret_ratio: f64,
    pub fret_difference: f64,
    pub mixing_ratio: f64,
    pub mixing_difference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub reports: Vec<MixingReport>,
    pub pairs: Vec<PairRecord>,
    /// First period reaching `CROSSING_LEVEL` in FRET factor, per report.
    pub crossings: Vec<(Variant, Option<usize>)>,
}

impl ComparisonReport {
    pub fn pair(&self, numerator: Variant, denominator: Variant, period: usize) -> Option<PairRecord> {
        self.pairs
            .iter()
            .find(|p| p.numerator == numerator && p.denominator == denominator && p.period == period)
            .copied()
    }

    pub fn report(&self, variant: Variant) -> Option<&MixingReport> {
        self.reports.iter().find(|r| r.variant == variant)
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else {
        a / b
    }
}

/// Pairwise comparison in both directions for every pair of reports.
pub fn compare(reports: &[MixingReport]) -> Result<ComparisonReport> {
    if reports.len() < 2 {
        return Err(Error::Report(format!("need at least 2 reports, got {}", reports.len())));
    }
    let base = &reports[0];
    for r in &reports[1..] {
        let mut diff = base.conditions.diff(&r.conditions);
        let ys = |m: &MixingReport| m.records.iter().map(|p| p.y_um).collect::<Vec<_>>();
        if ys(base) != ys(r) {
            diff.push(format!("  period planes: {:?} vs {:?}", ys(base), ys(r)));
        }
        if !diff.is_empty() {
            return Err(Error::ConditionMismatch(format!(
                "{} vs {}:\n{}",
                base.variant,
                r.variant,
                diff.join("\n")
            )));
        }
    }
    let mut pairs = Vec::new();
    for a in reports {
        for b in reports {
            if std::ptr::eq(a, b) {
                continue;
            }
            for (ra, rb) in a.records.iter().zip(&b.records) {
                pairs.push(PairRecord {
                    numerator: a.variant,
                    denominator: b.variant,
                    period: ra.period,
                    fret_ratio: ratio(ra.fret_factor, rb.fret_factor),
                    fret_difference: ra.fret_factor - rb.fret_factor,
                    mixing_ratio: ratio(ra.mixing_index, rb.mixing_index),
                    mixing_difference: ra.mixing_index - rb.mixing_index,
                });
            }
        }
    }
    Ok(ComparisonReport {
        reports: reports.to_vec(),
        pairs,
        crossings: reports
            .iter()
            .map(|r| (r.variant, r.fret_crossing(CROSSING_LEVEL)))
            .collect(),
    })
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    variant: Variant,
    period: usize,
    y_um: f64,
    mixing_index: f64,
    fret_factor: f64,
}

fn csv_writer<W: Write>(w: W, auto_header: bool) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .has_headers(auto_header)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Parse(format!("csv: {other:?}")),
    }
}

/// `variant,period,y_um,mixing_index,fret_factor`, one row per record of
/// each report in order. Floats use the shortest exact representation.
pub fn write_report_csv<W: Write>(reports: &[MixingReport], w: W) -> Result<()> {
    let mut out = csv_writer(w, false);
    out.write_record(["variant", "period", "y_um", "mixing_index", "fret_factor"])
        .map_err(csv_err)?;
    for r in reports {
        for p in &r.records {
            out.serialize(CsvRow {
                variant: r.variant,
                period: p.period,
                y_um: p.y_um,
                mixing_index: p.mixing_index,
                fret_factor: p.fret_factor,
            })
            .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Records per variant, in file order.
pub fn read_report_csv<R: Read>(r: R) -> Result<Vec<(Variant, Vec<PeriodRecord>)>> {
    let mut out: Vec<(Variant, Vec<PeriodRecord>)> = Vec::new();
    for row in csv::Reader::from_reader(r).deserialize::<CsvRow>() {
        let row = row.map_err(csv_err)?;
        let rec = PeriodRecord {
            period: row.period,
            y_um: row.y_um,
            mixing_index: row.mixing_index,
            fret_factor: row.fret_factor,
        };
        match out.last_mut() {
            Some((v, recs)) if *v == row.variant => recs.push(rec),
            _ => out.push((row.variant, vec![rec])),
        }
    }
    Ok(out)
}

pub fn write_comparison_csv<W: Write>(cmp: &ComparisonReport, w: W) -> Result<()> {
    let mut out = csv_writer(w, true);
    for p in &cmp.pairs {
        out.serialize(p).map_err(csv_err)?;
    }
    if cmp.pairs.is_empty() {
        out.write_record([
            "numerator",
            "denominator",
            "period",
            "fret_ratio",
            "fret_difference",
            "mixing_ratio",
            "mixing_difference",
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
