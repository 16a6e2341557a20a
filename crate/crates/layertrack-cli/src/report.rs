//! Benchmark bookkeeping: per-instance evaluation rows, per-weight summary
//! statistics, and plain-CSV emission suitable for box plots and cost-vs-
//! weight curves. No plotting dependency — data only.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use layertrack::error::{Error, Result};

/// One evaluated planning task at one tracking weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRow {
    pub rho: f64,
    pub instance: usize,
    /// Realized closed-loop tracking cost of the optimized plan.
    pub plan_cost: f64,
    /// Realized cost of the baseline reference on the same task.
    pub baseline_cost: f64,
    /// plan_cost / baseline_cost; below 1 means the planner helped.
    pub relative_cost: f64,
    pub plan_seconds: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Distribution summary of the relative costs at one tracking weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSummary {
    pub rho: f64,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub lower_quartile: f64,
    pub upper_quartile: f64,
    pub min: f64,
    pub max: f64,
    pub mean_plan_cost: f64,
    pub mean_baseline_cost: f64,
    pub mean_plan_seconds: f64,
}

/// Linear-interpolation quantile of an ascending-sorted slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&q));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<InstanceRow>,
    pub summaries: Vec<RhoSummary>,
}

impl BenchReport {
    /// Build the report, recomputing every summary from the rows. Weights
    /// are summarized in order of first appearance.
    pub fn from_rows(rows: Vec<InstanceRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidConfig {
                message: "benchmark report needs at least one row".into(),
            });
        }
        for row in &rows {
            if !(row.relative_cost.is_finite() && row.relative_cost > 0.0) {
                return Err(Error::NonFinite {
                    context: "relative tracking cost",
                });
            }
        }
        let mut order: Vec<f64> = Vec::new();
        for row in &rows {
            if !order.iter().any(|r| r == &row.rho) {
                order.push(row.rho);
            }
        }
        let summaries = order
            .into_iter()
            .map(|rho| {
                let group: Vec<&InstanceRow> = rows.iter().filter(|r| r.rho == rho).collect();
                let mut rel: Vec<f64> = group.iter().map(|r| r.relative_cost).collect();
                rel.sort_by(|a, b| a.total_cmp(b));
                RhoSummary {
                    rho,
                    count: rel.len(),
                    mean: mean(rel.iter().copied()),
                    median: quantile(&rel, 0.5),
                    lower_quartile: quantile(&rel, 0.25),
                    upper_quartile: quantile(&rel, 0.75),
                    min: rel[0],
                    max: rel[rel.len() - 1],
                    mean_plan_cost: mean(group.iter().map(|r| r.plan_cost)),
                    mean_baseline_cost: mean(group.iter().map(|r| r.baseline_cost)),
                    mean_plan_seconds: mean(group.iter().map(|r| r.plan_seconds)),
                }
            })
            .collect();
        Ok(Self { rows, summaries })
    }

    pub fn summary_for(&self, rho: f64) -> Option<&RhoSummary> {
        self.summaries.iter().find(|s| s.rho == rho)
    }

    /// Write `report-instances.csv` and `report-summary.csv` into a
    /// directory.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(dir.join("report-instances.csv"))?;
        writeln!(
            f,
            "rho,instance,plan_cost,baseline_cost,relative_cost,plan_seconds,iterations,converged"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                r.rho,
                r.instance,
                r.plan_cost,
                r.baseline_cost,
                r.relative_cost,
                r.plan_seconds,
                r.iterations,
                r.converged
            )?;
        }
        let mut f = std::fs::File::create(dir.join("report-summary.csv"))?;
        writeln!(
            f,
            "rho,count,mean,median,lower_quartile,upper_quartile,min,max,\
             mean_plan_cost,mean_baseline_cost,mean_plan_seconds"
        )?;
        for s in &self.summaries {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{},{}",
                s.rho,
                s.count,
                s.mean,
                s.median,
                s.lower_quartile,
                s.upper_quartile,
                s.min,
                s.max,
                s.mean_plan_cost,
                s.mean_baseline_cost,
                s.mean_plan_seconds
            )?;
        }
        Ok(())
    }
}

/// One timed solve in the runtime benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub instance: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: String,
    pub count: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    pub methods: Vec<MethodTiming>,
}

impl TimingReport {
    pub fn from_rows(rows: Vec<TimingRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidConfig {
                message: "timing report needs at least one row".into(),
            });
        }
        let mut order: Vec<String> = Vec::new();
        for row in &rows {
            if !order.contains(&row.method) {
                order.push(row.method.clone());
            }
        }
        let methods = order
            .into_iter()
            .map(|method| {
                let samples: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.method == method)
                    .map(|r| r.seconds)
                    .collect();
                let m = mean(samples.iter().copied());
                let var = samples.iter().map(|s| (s - m) * (s - m)).sum::<f64>()
                    / samples.len() as f64;
                MethodTiming {
                    method,
                    count: samples.len(),
                    mean_seconds: m,
                    std_seconds: var.sqrt(),
                }
            })
            .collect();
        Ok(Self { rows, methods })
    }

    pub fn mean_for(&self, method: &str) -> Option<f64> {
        self.methods
            .iter()
            .find(|m| m.method == method)
            .map(|m| m.mean_seconds)
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(dir.join("runtime.csv"))?;
        writeln!(f, "method,instance,seconds")?;
        for r in &self.rows {
            writeln!(f, "{},{},{}", r.method, r.instance, r.seconds)?;
        }
        let mut f = std::fs::File::create(dir.join("runtime-summary.csv"))?;
        writeln!(f, "method,count,mean_seconds,std_seconds")?;
        for m in &self.methods {
            writeln!(f, "{},{},{},{}", m.method, m.count, m.mean_seconds, m.std_seconds)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(rho: f64, instance: usize, plan: f64, base: f64) -> InstanceRow {
        InstanceRow {
            rho,
            instance,
            plan_cost: plan,
            baseline_cost: base,
            relative_cost: plan / base,
            plan_seconds: 0.01,
            iterations: 5,
            converged: true,
        }
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let data = [1.0, 2.0, 3.0, 4.0];
        assert!((quantile(&data, 0.0) - 1.0).abs() < 1e-15);
        assert!((quantile(&data, 1.0) - 4.0).abs() < 1e-15);
        assert!((quantile(&data, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile(&data, 0.25) - 1.75).abs() < 1e-15);
        assert!((quantile(&[7.0], 0.5) - 7.0).abs() < 1e-15);
    }

    #[test]
    fn summaries_are_recomputable_from_rows() {
        let rows = vec![
            row(0.1, 0, 2.0, 4.0),
            row(0.1, 1, 3.0, 3.0),
            row(0.1, 2, 6.0, 4.0),
            row(1.0, 0, 5.0, 4.0),
            row(1.0, 1, 2.0, 8.0),
        ];
        let report = BenchReport::from_rows(rows.clone()).unwrap();
        assert_eq!(report.summaries.len(), 2);
        let s = report.summary_for(0.1).unwrap();
        // Relative costs are {0.5, 1.0, 1.5}.
        assert!((s.mean - 1.0).abs() < 1e-15);
        assert!((s.median - 1.0).abs() < 1e-15);
        assert!((s.min - 0.5).abs() < 1e-15);
        assert!((s.max - 1.5).abs() < 1e-15);
        // Independent recomputation from the stored rows must agree.
        let again = BenchReport::from_rows(report.rows.clone()).unwrap();
        assert_eq!(again.summaries, report.summaries);
    }

    #[test]
    fn self_comparison_has_unit_ratio() {
        let rows: Vec<InstanceRow> = (0..10).map(|i| row(0.1, i, 3.5, 3.5)).collect();
        let report = BenchReport::from_rows(rows).unwrap();
        let s = report.summary_for(0.1).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.median, 1.0);
        assert_eq!(s.min, 1.0);
        assert_eq!(s.max, 1.0);
    }

    #[test]
    fn nonpositive_ratios_are_rejected() {
        assert!(BenchReport::from_rows(vec![row(0.1, 0, 0.0, 1.0)]).is_err());
        assert!(BenchReport::from_rows(vec![row(0.1, 0, f64::NAN, 1.0)]).is_err());
    }

    #[test]
    fn csv_files_round_trip_through_parsing() {
        let rows = vec![row(0.1, 0, 2.0, 4.0), row(0.1, 1, 3.0, 3.0)];
        let report = BenchReport::from_rows(rows).unwrap();
        let dir = tempfile::tempdir().unwrap();
        report.write_csv(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("report-instances.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("rho,instance,plan_cost"));
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 8);
        assert_eq!(fields[4].parse::<f64>().unwrap(), 0.5);
        let summary = std::fs::read_to_string(dir.path().join("report-summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 2);
    }

    #[test]
    fn timing_report_has_fixed_schema_and_row_counts() {
        let mut rows = Vec::new();
        for i in 0..20 {
            rows.push(TimingRow {
                method: "planner".into(),
                instance: i,
                seconds: 0.01 + i as f64 * 1e-4,
            });
            rows.push(TimingRow {
                method: "ilqr".into(),
                instance: i,
                seconds: 0.02,
            });
        }
        let report = TimingReport::from_rows(rows).unwrap();
        assert_eq!(report.methods.len(), 2);
        assert!(report.methods.iter().all(|m| m.count == 20));
        let dir = tempfile::tempdir().unwrap();
        report.write_csv(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("runtime.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "method,instance,seconds");
        assert_eq!(text.lines().count(), 41);
        let ilqr = report.mean_for("ilqr").unwrap();
        assert!((ilqr - 0.02).abs() < 1e-12);
    }
}
