use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::volume::{binarize, BinaryMask, Volume};

use super::overlap::{dice, jaccard};
use super::surface::SurfaceDistances;

/// Per-study metrics. Distances are `None` when exactly one of the masks is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub study_id: String,
    pub dsc: f64,
    pub jaccard: f64,
    pub hd95_mm: Option<f64>,
    pub msd_mm: Option<f64>,
}

/// Binarizes `pred` at `threshold` and scores it against `gt` using the mask spacing.
pub fn evaluate_study(
    study_id: &str,
    pred: &Volume,
    gt: &BinaryMask,
    threshold: f64,
) -> Result<MetricRecord> {
    if pred.shape() != gt.shape() {
        return Err(Error::Mismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let mut p = binarize(pred, threshold)?;
    if p.spacing() != gt.spacing() {
        p = BinaryMask::new(p.data().clone(), gt.spacing())?;
    }
    let (hd95_mm, msd_mm) = match (p.is_blank(), gt.is_blank()) {
        (true, true) => (Some(0.0), Some(0.0)),
        (false, false) => {
            let d = SurfaceDistances::new(&p, gt)?;
            (Some(d.hd95()), Some(d.msd()))
        }
        _ => {
            log::warn!("study {study_id}: one mask is empty, surface distances undefined");
            (None, None)
        }
    };
    Ok(MetricRecord {
        study_id: study_id.to_string(),
        dsc: dice(&p, gt)?,
        jaccard: jaccard(&p, gt)?,
        hd95_mm,
        msd_mm,
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub n: usize,
    pub dsc: Stat,
    pub jaccard: Stat,
    pub hd95_mm: Option<Stat>,
    pub msd_mm: Option<Stat>,
    /// Records excluded from the distance statistics.
    pub undefined_distances: usize,
}

pub fn aggregate(records: &[MetricRecord]) -> Result<AggregateResult> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("aggregate over zero records".into()));
    }
    let col = |f: fn(&MetricRecord) -> Option<f64>| -> Vec<f64> {
        records.iter().filter_map(f).collect()
    };
    let hd: Vec<f64> = col(|r| r.hd95_mm);
    let undefined = records.len() - hd.len();
    if undefined > 0 {
        log::warn!("{undefined} of {} records lack surface distances", records.len());
    }
    Ok(AggregateResult {
        n: records.len(),
        dsc: Stat::of(&col(|r| Some(r.dsc))).expect("non-empty"),
        jaccard: Stat::of(&col(|r| Some(r.jaccard))).expect("non-empty"),
        hd95_mm: Stat::of(&hd),
        msd_mm: Stat::of(&col(|r| r.msd_mm)),
        undefined_distances: undefined,
    })
}

fn cell(s: Option<Stat>) -> String {
    match s {
        Some(s) => format!("{:.3} ± {:.3}", s.mean, s.std),
        None => "n/a".into(),
    }
}

/// Method rows with `mean ± std` for DSC, Jaccard, HD95 (mm) and MSD (mm).
pub fn format_results_table(rows: &[(String, AggregateResult)]) -> String {
    let mut s = String::from("Method\tDSC\tJaccard\tHD95 (mm)\tMSD (mm)\tn\n");
    for (name, a) in rows {
        let _ = writeln!(
            s,
            "{name}\t{}\t{}\t{}\t{}\t{}",
            cell(Some(a.dsc)),
            cell(Some(a.jaccard)),
            cell(a.hd95_mm),
            cell(a.msd_mm),
            a.n
        );
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

pub fn records_to_tsv(records: &[MetricRecord]) -> String {
    let mut s = String::from("study_id\tdsc\tjaccard\thd95_mm\tmsd_mm\n");
    for r in records {
        let _ = writeln!(
            s,
            "{}\t{:.6}\t{:.6}\t{}\t{}",
            r.study_id,
            r.dsc,
            r.jaccard,
            opt(r.hd95_mm),
            opt(r.msd_mm)
        );
    }
    s
}

pub fn records_from_tsv(text: &str) -> Result<Vec<MetricRecord>> {
    let bad = |l: &str| Error::InvalidArgument(format!("bad metric row `{l}`"));
    let num = |t: &str, l: &str| t.parse::<f64>().map_err(|_| bad(l));
    let optnum = |t: &str, l: &str| {
        if t == "NA" {
            Ok(None)
        } else {
            num(t, l).map(Some)
        }
    };
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 5 {
                return Err(bad(l));
            }
            Ok(MetricRecord {
                study_id: f[0].to_string(),
                dsc: num(f[1], l)?,
                jaccard: num(f[2], l)?,
                hd95_mm: optnum(f[3], l)?,
                msd_mm: optnum(f[4], l)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, dsc: f64, hd: Option<f64>) -> MetricRecord {
        MetricRecord {
            study_id: id.into(),
            dsc,
            jaccard: dsc / (2.0 - dsc),
            hd95_mm: hd,
            msd_mm: hd.map(|h| h / 2.0),
        }
    }

    #[test]
    fn evaluate_handles_empty_cases() {
        let gt = BinaryMask::from_fn([4, 4, 4], [1.0; 3], |(x, _, _)| x == 1).unwrap();
        let zeros = Volume::filled([4, 4, 4], [1.0; 3], 0.1).unwrap();
        let r = evaluate_study("s", &zeros, &gt, 0.5).unwrap();
        assert_eq!((r.dsc, r.jaccard, r.hd95_mm, r.msd_mm), (0.0, 0.0, None, None));

        let blank = BinaryMask::zeros([4, 4, 4], [1.0; 3]).unwrap();
        let r = evaluate_study("s", &zeros, &blank, 0.5).unwrap();
        assert_eq!((r.dsc, r.jaccard, r.hd95_mm, r.msd_mm), (1.0, 1.0, Some(0.0), Some(0.0)));

        let perfect = gt.to_volume();
        let r = evaluate_study("s", &perfect, &gt, 0.5).unwrap();
        assert_eq!((r.dsc, r.hd95_mm), (1.0, Some(0.0)));
        assert!(evaluate_study("s", &Volume::filled([4, 4, 5], [1.0; 3], 0.0).unwrap(), &gt, 0.5).is_err());
    }

    #[test]
    fn aggregate_population_std_and_exclusions() {
        let rs = vec![rec("a", 0.8, Some(2.0)), rec("b", 0.6, Some(4.0)), rec("c", 0.0, None)];
        let a = aggregate(&rs).unwrap();
        assert_eq!(a.n, 3);
        assert!((a.dsc.mean - 1.4 / 3.0).abs() < 1e-12);
        let m: f64 = 1.4 / 3.0;
        let var = ((0.8 - m).powi(2) + (0.6 - m).powi(2) + m * m) / 3.0;
        assert!((a.dsc.std - var.sqrt()).abs() < 1e-12);
        let hd = a.hd95_mm.unwrap();
        assert_eq!((hd.mean, hd.std, hd.n), (3.0, 1.0, 2));
        assert_eq!(a.undefined_distances, 1);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn tables_and_tsv() {
        let rs = vec![rec("a", 0.8, Some(2.0)), rec("c", 0.5, None)];
        let back = records_from_tsv(&records_to_tsv(&rs)).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].hd95_mm, None);
        assert!((back[0].jaccard - rs[0].jaccard).abs() < 1e-6);
        let t = format_results_table(&[("Early fusion".into(), aggregate(&rs).unwrap())]);
        assert!(t.contains("Early fusion\t0.650 ± 0.150"));
    }
}
