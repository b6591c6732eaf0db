//! CSV artifacts: per-row sweep statistics, the scored trade-off table, the
//! per-span energy breakdown, and plot-ready figure data.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! parse-back reproduces the original f64 bit patterns and re-scoring a
//! written stats file matches the in-memory records exactly.

use rcti_core::rcti::{
    compute_record, CarbonBasis, DeltaR, ElasticityClass, MetricError, ModelMeasurement,
    RctiRecord, RctiThresholds, RctiValue,
};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("stats file {0} has no data rows")]
    Empty(String),
    #[error("attack {attack}: no baseline row for epsilon {epsilon}")]
    MissingBaseline { attack: String, epsilon: f64 },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    Baseline,
    Robust,
}

impl ModelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::Baseline => "baseline",
            ModelFamily::Robust => "robust",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "baseline" => Some(Self::Baseline),
            "robust" => Some(Self::Robust),
            _ => None,
        }
    }
}

/// One sweep measurement row, mirroring the stats table layout:
/// attack, model family, epsilon, accuracy, energies, duration, emissions,
/// and the span set the energies were summed over.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub attack: String,
    pub model: ModelFamily,
    pub epsilon: f64,
    pub accuracy_pct: f64,
    pub cpu_energy_kwh: f64,
    pub ram_energy_kwh: f64,
    pub total_energy_kwh: f64,
    pub duration_s: f64,
    pub emissions_g: f64,
    pub spans: String,
}

pub const STATS_HEADER: &str =
    "attack,model,epsilon,accuracy_pct,cpu_energy_kwh,ram_energy_kwh,total_energy_kwh,duration_s,emissions_g,spans";

pub fn write_stats_csv(path: &Path, rows: &[StatsRow]) -> Result<(), StatsError> {
    let mut out = String::new();
    out.push_str(STATS_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.attack,
            r.model.name(),
            r.epsilon,
            r.accuracy_pct,
            r.cpu_energy_kwh,
            r.ram_energy_kwh,
            r.total_energy_kwh,
            r.duration_s,
            r.emissions_g,
            r.spans
        )
        .expect("string writes cannot fail");
    }
    std::fs::write(path, out).map_err(|source| StatsError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_stats_csv(path: &Path) -> Result<Vec<StatsRow>, StatsError> {
    let text = std::fs::read_to_string(path).map_err(|source| StatsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let err = |line: usize, msg: String| StatsError::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if idx == 0 {
            if raw.trim() != STATS_HEADER {
                return Err(err(line, format!("unexpected header {raw:?}")));
            }
            continue;
        }
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 10 {
            return Err(err(line, format!("expected 10 fields, got {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64, StatsError> {
            fields[i]
                .trim()
                .parse()
                .map_err(|_| err(line, format!("bad number {:?} in column {}", fields[i], i + 1)))
        };
        rows.push(StatsRow {
            attack: fields[0].trim().to_string(),
            model: ModelFamily::parse(fields[1].trim())
                .ok_or_else(|| err(line, format!("unknown model family {:?}", fields[1])))?,
            epsilon: num(2)?,
            accuracy_pct: num(3)?,
            cpu_energy_kwh: num(4)?,
            ram_energy_kwh: num(5)?,
            total_energy_kwh: num(6)?,
            duration_s: num(7)?,
            emissions_g: num(8)?,
            spans: fields[9].trim().to_string(),
        });
    }
    if rows.is_empty() {
        return Err(StatsError::Empty(path.display().to_string()));
    }
    Ok(rows)
}

/// One scored row of the trade-off table.
#[derive(Debug, Clone, PartialEq)]
pub struct RctiRow {
    pub attack: String,
    pub record: RctiRecord,
}

pub const RCTI_HEADER: &str = "attack,epsilon,delta_r,delta_c,rcti,elasticity";

fn delta_r_str(d: &DeltaR) -> String {
    match d {
        DeltaR::Finite(v) => format!("{v}"),
        DeltaR::Infinite => "inf".to_string(),
        DeltaR::NoChange => "no-change".to_string(),
    }
}

fn rcti_str(v: &RctiValue) -> String {
    match v {
        RctiValue::Finite(v) => format!("{v}"),
        RctiValue::Infinite => "inf".to_string(),
        RctiValue::NoChange => "no-change".to_string(),
    }
}

fn elasticity_str(e: &Option<ElasticityClass>) -> &'static str {
    match e {
        Some(class) => class.label(),
        None => "No-Change",
    }
}

pub fn write_rcti_csv(path: &Path, rows: &[RctiRow]) -> Result<(), StatsError> {
    let mut out = String::new();
    out.push_str(RCTI_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.attack,
            r.record.epsilon,
            delta_r_str(&r.record.delta_r),
            r.record.delta_c,
            rcti_str(&r.record.rcti),
            elasticity_str(&r.record.elasticity)
        )
        .expect("string writes cannot fail");
    }
    std::fs::write(path, out).map_err(|source| StatsError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_rcti_csv(path: &Path) -> Result<Vec<RctiRow>, StatsError> {
    let text = std::fs::read_to_string(path).map_err(|source| StatsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let err = |line: usize, msg: String| StatsError::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if idx == 0 {
            if raw.trim() != RCTI_HEADER {
                return Err(err(line, format!("unexpected header {raw:?}")));
            }
            continue;
        }
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 6 {
            return Err(err(line, format!("expected 6 fields, got {}", fields.len())));
        }
        let parse_f = |i: usize| -> Result<f64, StatsError> {
            fields[i]
                .trim()
                .parse()
                .map_err(|_| err(line, format!("bad number {:?}", fields[i])))
        };
        let delta_r = match fields[2].trim() {
            "inf" => DeltaR::Infinite,
            "no-change" => DeltaR::NoChange,
            _ => DeltaR::Finite(parse_f(2)?),
        };
        let rcti = match fields[4].trim() {
            "inf" => RctiValue::Infinite,
            "no-change" => RctiValue::NoChange,
            _ => RctiValue::Finite(parse_f(4)?),
        };
        let elasticity = match fields[5].trim() {
            "No-Change" => None,
            label => Some(
                ElasticityClass::parse(label)
                    .ok_or_else(|| err(line, format!("unknown elasticity {label:?}")))?,
            ),
        };
        rows.push(RctiRow {
            attack: fields[0].trim().to_string(),
            record: RctiRecord {
                epsilon: parse_f(1)?,
                delta_r,
                delta_c: parse_f(3)?,
                rcti,
                elasticity,
            },
        });
    }
    if rows.is_empty() {
        return Err(StatsError::Empty(path.display().to_string()));
    }
    Ok(rows)
}

/// Re-scores a stats table without retraining: per attack, each robust row
/// is paired with the baseline row at the same epsilon and pushed through
/// the metric pipeline in input order.
pub fn rcti_rows_from_stats(
    rows: &[StatsRow],
    basis: CarbonBasis,
    thresholds: &RctiThresholds,
) -> Result<Vec<RctiRow>, StatsError> {
    let measurement = |row: &StatsRow| ModelMeasurement {
        epsilon: row.epsilon,
        performance: row.accuracy_pct,
        carbon: match basis {
            CarbonBasis::TotalEnergyKwh => row.total_energy_kwh,
            CarbonBasis::EmissionsG => row.emissions_g,
        },
        basis,
        span_set: row.spans.clone(),
    };
    let mut out = Vec::new();
    for row in rows.iter().filter(|r| r.model == ModelFamily::Robust) {
        let baseline = rows
            .iter()
            .find(|r| {
                r.model == ModelFamily::Baseline
                    && r.attack == row.attack
                    && r.epsilon == row.epsilon
            })
            .ok_or_else(|| StatsError::MissingBaseline {
                attack: row.attack.clone(),
                epsilon: row.epsilon,
            })?;
        let record = compute_record(&measurement(baseline), &measurement(row), thresholds)?;
        out.push(RctiRow {
            attack: row.attack.clone(),
            record,
        });
    }
    Ok(out)
}

/// Plot-ready row: infinite values are zeroed and flagged, matching the
/// figure convention for collapse points.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureRow {
    pub attack: String,
    pub epsilon: f64,
    pub value: f64,
    pub was_infinite: bool,
}

pub const FIGURE_HEADER: &str = "attack,epsilon,value,was_infinite";

/// Extracts the three figure series (delta_r, delta_c, rcti) from scored rows.
pub fn figure_rows(rows: &[RctiRow]) -> (Vec<FigureRow>, Vec<FigureRow>, Vec<FigureRow>) {
    let mut delta_r = Vec::with_capacity(rows.len());
    let mut delta_c = Vec::with_capacity(rows.len());
    let mut rcti = Vec::with_capacity(rows.len());
    for row in rows {
        let base = |value: f64, was_infinite: bool| FigureRow {
            attack: row.attack.clone(),
            epsilon: row.record.epsilon,
            value,
            was_infinite,
        };
        delta_r.push(match row.record.delta_r {
            DeltaR::Finite(v) => base(v, false),
            DeltaR::Infinite => base(0.0, true),
            DeltaR::NoChange => base(0.0, false),
        });
        delta_c.push(base(row.record.delta_c, false));
        rcti.push(match row.record.rcti {
            RctiValue::Finite(v) => base(v, false),
            RctiValue::Infinite => base(0.0, true),
            RctiValue::NoChange => base(0.0, false),
        });
    }
    (delta_r, delta_c, rcti)
}

pub fn write_figure_csv(path: &Path, rows: &[FigureRow]) -> Result<(), StatsError> {
    let mut out = String::new();
    out.push_str(FIGURE_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{},{}", r.attack, r.epsilon, r.value, r.was_infinite)
            .expect("string writes cannot fail");
    }
    std::fs::write(path, out).map_err(|source| StatsError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Per-span energy breakdown rows.
pub const SPANS_HEADER: &str = "span_label,duration_s,cpu_kwh,ram_kwh,total_kwh,emissions_g";

pub fn write_spans_csv(
    path: &Path,
    reports: &[rcti_core::energy::EnergyReport],
) -> Result<(), StatsError> {
    let mut out = String::new();
    out.push_str(SPANS_HEADER);
    out.push('\n');
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.label, r.duration_s, r.cpu_energy_kwh, r.ram_energy_kwh, r.total_energy_kwh, r.emissions_g
        )
        .expect("string writes cannot fail");
    }
    std::fs::write(path, out).map_err(|source| StatsError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(attack: &str, model: ModelFamily, eps: f64, acc: f64, total: f64) -> StatsRow {
        StatsRow {
            attack: attack.into(),
            model,
            epsilon: eps,
            accuracy_pct: acc,
            cpu_energy_kwh: total * 0.9,
            ram_energy_kwh: total * 0.1,
            total_energy_kwh: total,
            duration_s: 1.0,
            emissions_g: total * 475.0,
            spans: "attack_gen+eval".into(),
        }
    }

    #[test]
    fn stats_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.csv");
        let rows = vec![
            row("fg", ModelFamily::Baseline, 0.1, 83.7, 3.36e-4),
            row("fg", ModelFamily::Robust, 0.1, 95.06, 4.814e-4),
        ];
        write_stats_csv(&path, &rows).unwrap();
        let back = read_stats_csv(&path).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn rcti_pairing_scores_per_epsilon() {
        let rows = vec![
            row("fg", ModelFamily::Baseline, 0.0, 98.42, 3.63e-5),
            row("fg", ModelFamily::Baseline, 0.1, 83.70, 3.36e-4),
            row("fg", ModelFamily::Robust, 0.0, 97.36, 3.068e-5),
            row("fg", ModelFamily::Robust, 0.1, 95.06, 4.814e-4),
        ];
        let scored =
            rcti_rows_from_stats(&rows, CarbonBasis::TotalEnergyKwh, &RctiThresholds::default())
                .unwrap();
        assert_eq!(scored.len(), 2);
        let d0 = scored[0].record.delta_r.as_finite().unwrap();
        assert!((d0 - (97.36 - 98.42) / 98.42).abs() < 1e-15);
        let d1 = scored[1].record.delta_r.as_finite().unwrap();
        assert!((d1 - (95.06 - 83.70) / 83.70).abs() < 1e-15);
    }

    #[test]
    fn missing_baseline_is_reported() {
        let rows = vec![
            row("fg", ModelFamily::Baseline, 0.0, 98.42, 3.63e-5),
            row("fg", ModelFamily::Robust, 0.1, 95.06, 4.814e-4),
        ];
        assert!(matches!(
            rcti_rows_from_stats(&rows, CarbonBasis::TotalEnergyKwh, &RctiThresholds::default()),
            Err(StatsError::MissingBaseline { .. })
        ));
    }

    #[test]
    fn identical_pair_yields_no_change_row() {
        let rows = vec![
            row("fg", ModelFamily::Baseline, 0.0, 90.0, 1e-4),
            row("fg", ModelFamily::Robust, 0.0, 90.0, 1e-4),
        ];
        let scored =
            rcti_rows_from_stats(&rows, CarbonBasis::TotalEnergyKwh, &RctiThresholds::default())
                .unwrap();
        assert_eq!(scored[0].record.rcti, RctiValue::NoChange);
        assert_eq!(scored[0].record.elasticity, None);
    }

    #[test]
    fn empty_stats_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, format!("{STATS_HEADER}\n")).unwrap();
        assert!(matches!(read_stats_csv(&path), Err(StatsError::Empty(_))));
    }

    #[test]
    fn rcti_csv_round_trips_sentinels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rcti.csv");
        let rows = vec![
            RctiRow {
                attack: "pgd".into(),
                record: RctiRecord {
                    epsilon: 0.4,
                    delta_r: DeltaR::Infinite,
                    delta_c: 0.33,
                    rcti: RctiValue::Infinite,
                    elasticity: Some(ElasticityClass::EcoCritical),
                },
            },
            RctiRow {
                attack: "pgd".into(),
                record: RctiRecord {
                    epsilon: 0.1,
                    delta_r: DeltaR::Finite(0.25641),
                    delta_c: 0.128,
                    rcti: RctiValue::Finite(0.49921),
                    elasticity: Some(ElasticityClass::EcoEfficient),
                },
            },
            RctiRow {
                attack: "pgd".into(),
                record: RctiRecord {
                    epsilon: 0.0,
                    delta_r: DeltaR::Finite(0.0),
                    delta_c: 0.0,
                    rcti: RctiValue::NoChange,
                    elasticity: None,
                },
            },
        ];
        write_rcti_csv(&path, &rows).unwrap();
        let back = read_rcti_csv(&path).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn figure_rows_zero_and_flag_infinities() {
        let rows = vec![
            RctiRow {
                attack: "pgd".into(),
                record: RctiRecord {
                    epsilon: 0.4,
                    delta_r: DeltaR::Infinite,
                    delta_c: 0.00043,
                    rcti: RctiValue::Infinite,
                    elasticity: Some(ElasticityClass::EcoCritical),
                },
            },
            RctiRow {
                attack: "pgd".into(),
                record: RctiRecord {
                    epsilon: 0.2,
                    delta_r: DeltaR::Finite(12.14285),
                    delta_c: 0.28723,
                    rcti: RctiValue::Finite(0.02365),
                    elasticity: Some(ElasticityClass::EcoEfficient),
                },
            },
        ];
        let (dr, dc, rc) = figure_rows(&rows);
        assert_eq!(dr.len(), 2);
        assert_eq!(dc.len(), 2);
        assert_eq!(rc.len(), 2);
        assert!(dr[0].was_infinite && dr[0].value == 0.0);
        assert!(rc[0].was_infinite && rc[0].value == 0.0);
        assert!(!dc[0].was_infinite);
        assert_eq!(dr[1].value, 12.14285);
        assert!(!dr[1].was_infinite);
    }
}
