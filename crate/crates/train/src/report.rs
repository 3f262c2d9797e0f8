//! Cross-run comparison tables and convergence-curve data.
//!
//! Runs are grouped by fusion strategy, backbone and augmentation. Each group pools the
//! test records of its runs into one row of `comparison.tsv`. Per-epoch validation DSC is
//! averaged over the runs of a group into `curves.tsv` (one column per group) and
//! `curves/<group>.tsv` (`epoch, mean_val_dsc, std_val_dsc, runs`). `runs.tsv` lists every
//! run that was included.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fusionseg_core::metrics::{aggregate, format_results_table, records_from_tsv, AggregateResult, MetricRecord, Stat};
use fusionseg_nn::{BackboneKind, Modality, Strategy};

use crate::error::{io, Error, Result};
use crate::run::{read_run_info, RunInfo, HISTORY_FILE, RUN_FILE, TEST_METRICS_FILE};
use crate::trainer::{load_history, TrainHistory};

pub const COMPARISON_FILE: &str = "comparison.tsv";
pub const CURVES_FILE: &str = "curves.tsv";
pub const RUNS_FILE: &str = "runs.tsv";
pub const CURVES_DIR: &str = "curves";

/// One run directory read back for reporting.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub info: RunInfo,
    pub history: TrainHistory,
    pub test: Vec<MetricRecord>,
}

#[derive(Debug, Clone)]
pub struct Group {
    pub label: String,
    pub runs: Vec<RunRecord>,
    pub summary: AggregateResult,
    /// Per epoch: statistics of `val_dsc` over the runs that reached it.
    pub curve: Vec<Stat>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub groups: Vec<Group>,
}

type GroupKey = (u8, u8, bool);

fn group_key(info: &RunInfo) -> GroupKey {
    let s = match (info.fusion.strategy, info.fusion.modality) {
        (Strategy::Single, Some(Modality::Bmode)) => 0,
        (Strategy::Single, _) => 1,
        (Strategy::Early, _) => 2,
        (Strategy::Intermediate, _) => 3,
        (Strategy::Late, _) => 4,
    };
    let b = match info.backbone {
        BackboneKind::Unet => 0,
        BackboneKind::Unetpp => 1,
    };
    (s, b, info.augment)
}

/// Run directories under `root`: `root` itself if it holds a run record, otherwise every
/// descendant that does.
pub fn discover_runs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(RUN_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    if !root.is_dir() {
        return Err(Error::Io {
            path: root.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such run directory"),
        });
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    let mut out = Vec::new();
    for e in entries {
        out.extend(discover_runs(&e).unwrap_or_default());
    }
    Ok(out)
}

pub fn read_run(dir: &Path) -> Result<RunRecord> {
    let info = read_run_info(&dir.join(RUN_FILE))?;
    let history = load_history(&dir.join(HISTORY_FILE))?;
    let p = dir.join(TEST_METRICS_FILE);
    let text = fs::read_to_string(&p).map_err(io(&p))?;
    let test = records_from_tsv(&text).map_err(|e| Error::Format {
        what: "metric records",
        path: p.clone(),
        reason: e.to_string(),
    })?;
    Ok(RunRecord {
        dir: dir.to_path_buf(),
        info,
        history,
        test,
    })
}

/// Groups runs and pools their test metrics and validation curves.
pub fn build_report(runs: Vec<RunRecord>) -> Result<Report> {
    let mut groups: BTreeMap<GroupKey, Vec<RunRecord>> = BTreeMap::new();
    for r in runs {
        groups.entry(group_key(&r.info)).or_default().push(r);
    }
    let groups = groups
        .into_values()
        .map(|runs| {
            let pooled: Vec<MetricRecord> = runs.iter().flat_map(|r| r.test.clone()).collect();
            let summary = aggregate(&pooled)?;
            let len = runs.iter().map(|r| r.history.epochs.len()).max().unwrap_or(0);
            let curve = (0..len)
                .map(|e| {
                    let v: Vec<f64> = runs
                        .iter()
                        .filter_map(|r| r.history.epochs.get(e).map(|x| x.val_dsc))
                        .collect();
                    Stat::of(&v).expect("some run reached this epoch")
                })
                .collect();
            Ok(Group {
                label: runs[0].info.label(),
                runs,
                summary,
                curve,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Report { groups })
}

impl Report {
    pub fn comparison_table(&self) -> String {
        let rows: Vec<(String, AggregateResult)> = self
            .groups
            .iter()
            .map(|g| (g.label.clone(), g.summary.clone()))
            .collect();
        format_results_table(&rows)
    }

    /// `epoch` followed by one mean validation DSC column per group; `NA` past a group's end.
    pub fn curves_table(&self) -> String {
        let mut s = String::from("epoch");
        for g in &self.groups {
            let _ = write!(s, "\t{}", g.label);
        }
        s.push('\n');
        let len = self.groups.iter().map(|g| g.curve.len()).max().unwrap_or(0);
        for e in 0..len {
            let _ = write!(s, "{e}");
            for g in &self.groups {
                match g.curve.get(e) {
                    Some(st) => {
                        let _ = write!(s, "\t{:.6}", st.mean);
                    }
                    None => s.push_str("\tNA"),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn runs_table(&self) -> String {
        let mut s = String::from("run\tmethod\tfold\tseed\tbest_epoch\tbest_val_dsc\ttest_dsc\n");
        for g in &self.groups {
            for r in &g.runs {
                let dsc = r.test.iter().map(|m| m.dsc).sum::<f64>() / r.test.len().max(1) as f64;
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
                    r.dir.display(),
                    g.label,
                    r.info.fold,
                    r.info.seed,
                    r.info.best_epoch,
                    r.info.best_val_dsc,
                    dsc
                );
            }
        }
        s
    }

    /// Writes every report file into `out`.
    pub fn write(&self, out: &Path) -> Result<()> {
        let curves = out.join(CURVES_DIR);
        fs::create_dir_all(&curves).map_err(io(&curves))?;
        let put = |p: PathBuf, text: String| fs::write(&p, text).map_err(io(&p));
        put(out.join(COMPARISON_FILE), self.comparison_table())?;
        put(out.join(CURVES_FILE), self.curves_table())?;
        put(out.join(RUNS_FILE), self.runs_table())?;
        for g in &self.groups {
            let mut s = String::from("epoch\tmean_val_dsc\tstd_val_dsc\truns\n");
            for (e, st) in g.curve.iter().enumerate() {
                let _ = writeln!(s, "{e}\t{:.6}\t{:.6}\t{}", st.mean, st.std, st.n);
            }
            put(curves.join(format!("{}.tsv", slug(&g.label))), s)?;
        }
        Ok(())
    }
}

/// Lowercase alphanumeric file stem of a label.
pub fn slug(label: &str) -> String {
    let mut s = String::new();
    for c in label.chars() {
        if c.is_ascii_alphanumeric() {
            s.push(c.to_ascii_lowercase());
        } else if c == '+' {
            s.push('p');
        } else if !s.ends_with('_') {
            s.push('_');
        }
    }
    s.trim_matches('_').to_string()
}

/// Reads every run under `roots`, builds the report and writes it into `out`.
pub fn report(roots: &[PathBuf], out: &Path) -> Result<Report> {
    let mut runs = Vec::new();
    for root in roots {
        let found = discover_runs(root)?;
        if found.is_empty() {
            return Err(Error::Config(format!("no run directories under {}", root.display())));
        }
        for dir in found {
            runs.push(read_run(&dir)?);
        }
    }
    if runs.is_empty() {
        return Err(Error::Config("no runs to report".into()));
    }
    let rep = build_report(runs)?;
    rep.write(out)?;
    Ok(rep)
}
