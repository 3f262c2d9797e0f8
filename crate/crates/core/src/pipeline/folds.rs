//! Patient-grouped train/validation/test plans.
//!
//! Every fold is an independent seeded 60/20/20 split over studies in which all studies of a
//! patient land in the same subset.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::DatasetManifest;

pub const NUM_FOLDS: usize = 5;
const MIN_PATIENTS: usize = 5;
const MAX_ATTEMPTS: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Val, Subset::Test];
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        })
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "val" | "validation" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            other => Err(Error::InvalidArgument(format!("unknown subset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Fold {
    pub fn subset(&self, s: Subset) -> &[String] {
        match s {
            Subset::Train => &self.train,
            Subset::Val => &self.val,
            Subset::Test => &self.test,
        }
    }

    fn subset_mut(&mut self, s: Subset) -> &mut Vec<String> {
        match s {
            Subset::Train => &mut self.train,
            Subset::Val => &mut self.val,
            Subset::Test => &mut self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Study counts `(train, val, test)` targeted for `n` studies.
pub fn target_sizes(n: usize) -> [usize; 3] {
    let val = (n as f64 * 0.2).round() as usize;
    let test = val;
    [n - val - test, val, test]
}

pub fn make_folds(manifest: &DatasetManifest, seed: u64) -> Result<FoldPlan> {
    make_folds_from(&manifest.identities(), seed)
}

/// Builds the plan from `(study_id, patient_id)` pairs.
pub fn make_folds_from(ids: &[(String, String)], seed: u64) -> Result<FoldPlan> {
    let mut seen = HashSet::new();
    for (s, _) in ids {
        if !seen.insert(s.as_str()) {
            return Err(Error::FoldPlan(format!("duplicate study_id {s}")));
        }
    }
    // BTreeMap keeps group order independent of hashing.
    let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (s, p) in ids {
        groups.entry(p.as_str()).or_default().push(s.clone());
    }
    if groups.len() < MIN_PATIENTS {
        return Err(Error::FoldPlan(format!(
            "need at least {MIN_PATIENTS} patients for a 60/20/20 split, found {}",
            groups.len()
        )));
    }
    let groups: Vec<Vec<String>> = groups.into_values().collect();
    let targets = target_sizes(ids.len());

    let folds = (0..NUM_FOLDS)
        .map(|k| {
            (0..MAX_ATTEMPTS)
                .find_map(|attempt| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(k as u64 * MAX_ATTEMPTS + attempt);
                    assign_fold(&groups, targets, &mut rng)
                })
                .ok_or_else(|| {
                    Error::FoldPlan(format!(
                        "could not reach {targets:?} study counts within one study without \
                         splitting patients; add single-study patients"
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldPlan { seed, folds })
}

fn assign_fold(groups: &[Vec<String>], targets: [usize; 3], rng: &mut ChaCha8Rng) -> Option<Fold> {
    let mut order: Vec<&Vec<String>> = groups.iter().collect();
    order.shuffle(rng);
    // Place large patients first so singletons can even out the counts.
    order.sort_by_key(|g| std::cmp::Reverse(g.len()));

    let mut fold = Fold::default();
    let mut counts = [0usize; 3];
    for g in order {
        let deficit: Vec<usize> = (0..3).map(|i| targets[i].saturating_sub(counts[i])).collect();
        let fits: Vec<usize> = (0..3).filter(|&i| deficit[i] >= g.len()).collect();
        let pick = if fits.is_empty() {
            (0..3).max_by_key(|&i| (deficit[i], std::cmp::Reverse(i))).unwrap()
        } else {
            let total: usize = fits.iter().map(|&i| deficit[i]).sum();
            let mut r = rng.random_range(0..total);
            *fits
                .iter()
                .find(|&&i| {
                    if r < deficit[i] {
                        true
                    } else {
                        r -= deficit[i];
                        false
                    }
                })
                .unwrap()
        };
        counts[pick] += g.len();
        fold.subset_mut(Subset::ALL[pick]).extend(g.iter().cloned());
    }
    let ok = (0..3).all(|i| counts[i].abs_diff(targets[i]) <= 1 && counts[i] > 0);
    ok.then_some(fold)
}

/// Percentage of each fold's subset absent from the same subset of another fold:
/// entry `[i][j][s] = 100 * (1 - |S_i ∩ S_j| / |S_i|)`.
pub fn fold_dissimilarity(plan: &FoldPlan) -> Vec<Vec<[f64; 3]>> {
    let n = plan.folds.len();
    let sets: Vec<[HashSet<&str>; 3]> = plan
        .folds
        .iter()
        .map(|f| Subset::ALL.map(|s| f.subset(s).iter().map(String::as_str).collect()))
        .collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let mut row = [0.0; 3];
                    for s in 0..3 {
                        let a = &sets[i][s];
                        if i == j || a.is_empty() {
                            continue;
                        }
                        let common = a.intersection(&sets[j][s]).count();
                        row[s] = 100.0 * (1.0 - common as f64 / a.len() as f64);
                    }
                    row
                })
                .collect()
        })
        .collect()
}

/// Renders the dissimilarity matrix as a plain-text table, one `(train, val, test)` cell per
/// fold pair.
pub fn format_dissimilarity(m: &[Vec<[f64; 3]>]) -> String {
    let mut s = String::from("Fold");
    for j in 0..m.len() {
        let _ = write!(s, "\t{}", j + 1);
    }
    s.push('\n');
    for (i, row) in m.iter().enumerate() {
        let _ = write!(s, "{}", i + 1);
        for c in row {
            let _ = write!(s, "\t({:.1}, {:.1}, {:.1})", c[0], c[1], c[2]);
        }
        s.push('\n');
    }
    s
}

impl FoldPlan {
    pub fn fold(&self, k: usize) -> Result<&Fold> {
        self.folds
            .get(k)
            .ok_or_else(|| Error::FoldPlan(format!("fold {k} out of range 0..{}", self.folds.len())))
    }

    /// Checks partitioning and patient isolation against the study identities.
    pub fn validate(&self, ids: &[(String, String)]) -> Result<()> {
        let patient: BTreeMap<&str, &str> =
            ids.iter().map(|(s, p)| (s.as_str(), p.as_str())).collect();
        for (k, f) in self.folds.iter().enumerate() {
            let mut seen: BTreeMap<&str, Subset> = BTreeMap::new();
            let mut owner: BTreeMap<&str, Subset> = BTreeMap::new();
            for s in Subset::ALL {
                for id in f.subset(s) {
                    let p = patient.get(id.as_str()).ok_or_else(|| {
                        Error::FoldPlan(format!("fold {k}: unknown study {id}"))
                    })?;
                    if seen.insert(id, s).is_some() {
                        return Err(Error::FoldPlan(format!("fold {k}: study {id} repeated")));
                    }
                    if let Some(prev) = owner.insert(p, s) {
                        if prev != s {
                            return Err(Error::FoldPlan(format!(
                                "fold {k}: patient {p} split across {prev} and {s}"
                            )));
                        }
                    }
                }
            }
            if seen.len() != patient.len() {
                return Err(Error::FoldPlan(format!(
                    "fold {k} covers {} of {} studies",
                    seen.len(),
                    patient.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("seed\t{}\nfold\tsubset\tstudy_id\n", self.seed);
        for (k, f) in self.folds.iter().enumerate() {
            for sub in Subset::ALL {
                for id in f.subset(sub) {
                    let _ = writeln!(s, "{k}\t{sub}\t{id}");
                }
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let bad = |m: &str| Error::FoldPlan(m.to_string());
        let seed = lines
            .next()
            .and_then(|l| l.strip_prefix("seed"))
            .and_then(|v| v.trim().parse::<u64>().ok())
            .ok_or_else(|| bad("first line must be `seed <n>`"))?;
        let header: Vec<&str> = lines.next().map(|l| l.split_whitespace().collect()).unwrap_or_default();
        if header != ["fold", "subset", "study_id"] {
            return Err(bad("missing `fold subset study_id` header"));
        }
        let mut folds = vec![Fold::default(); NUM_FOLDS];
        for l in lines {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad(&format!("bad row `{l}`")));
            }
            let k: usize = f[0].parse().map_err(|_| bad(&format!("bad fold index `{}`", f[0])))?;
            if k >= NUM_FOLDS {
                return Err(bad(&format!("fold index {k} out of range")));
            }
            folds[k].subset_mut(f[1].parse()?).push(f[2].to_string());
        }
        Ok(Self { seed, folds })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn distinct(n: usize) -> Vec<(String, String)> {
        (0..n).map(|i| (format!("s{i:03}"), format!("p{i:03}"))).collect()
    }

    #[test]
    fn four_hundred_distinct_patients() {
        let ids = distinct(400);
        let plan = make_folds_from(&ids, 7).unwrap();
        assert_eq!(plan.folds.len(), 5);
        for f in &plan.folds {
            assert_eq!((f.train.len(), f.val.len(), f.test.len()), (240, 80, 80));
        }
        plan.validate(&ids).unwrap();
    }

    #[test]
    fn shared_patient_stays_together() {
        let mut ids = distinct(30);
        ids[3].1 = "shared".into();
        ids[17].1 = "shared".into();
        for seed in 0..20 {
            let plan = make_folds_from(&ids, seed).unwrap();
            plan.validate(&ids).unwrap();
            for f in &plan.folds {
                let where_ = |id: &str| {
                    Subset::ALL
                        .into_iter()
                        .find(|s| f.subset(*s).iter().any(|x| x == id))
                        .unwrap()
                };
                assert_eq!(where_("s003"), where_("s017"));
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let ids = distinct(50);
        assert_eq!(make_folds_from(&ids, 3).unwrap(), make_folds_from(&ids, 3).unwrap());
        assert_ne!(make_folds_from(&ids, 3).unwrap(), make_folds_from(&ids, 4).unwrap());
    }

    #[test]
    fn too_few_patients() {
        let mut ids = distinct(10);
        for (i, e) in ids.iter_mut().enumerate() {
            e.1 = format!("p{}", i % 4);
        }
        let err = make_folds_from(&ids, 0).unwrap_err();
        assert!(err.to_string().contains("at least 5 patients"));
    }

    #[test]
    fn dissimilarity_definition() {
        let ids = distinct(20);
        let plan = make_folds_from(&ids, 1).unwrap();
        let m = fold_dissimilarity(&plan);
        for i in 0..5 {
            assert_eq!(m[i][i], [0.0, 0.0, 0.0]);
            for j in 0..5 {
                for s in 0..3 {
                    let f = &plan.folds;
                    let a = f[i].subset(Subset::ALL[s]);
                    let b = f[j].subset(Subset::ALL[s]);
                    let common = a.iter().filter(|x| b.contains(x)).count();
                    let expect = if i == j { 0.0 } else { 100.0 * (1.0 - common as f64 / a.len() as f64) };
                    assert!((m[i][j][s] - expect).abs() < 1e-12);
                    assert!((0.0..=100.0).contains(&m[i][j][s]));
                }
            }
        }
    }

    #[test]
    fn disjoint_subsets_are_fully_dissimilar() {
        let mk = |t: &[&str]| t.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let plan = FoldPlan {
            seed: 0,
            folds: vec![
                Fold { train: mk(&["a", "b"]), val: mk(&["c"]), test: mk(&["d"]) },
                Fold { train: mk(&["a", "c"]), val: mk(&["b"]), test: mk(&["e"]) },
            ],
        };
        let m = fold_dissimilarity(&plan);
        assert_eq!(m[0][1], [50.0, 100.0, 100.0]);
        assert_eq!(m[1][0], [50.0, 100.0, 100.0]);
    }

    #[test]
    fn text_round_trip() {
        let plan = make_folds_from(&distinct(12), 9).unwrap();
        assert_eq!(FoldPlan::parse(&plan.to_text()).unwrap(), plan);
        assert!(FoldPlan::parse("fold subset study_id\n").is_err());
        assert!(FoldPlan::parse("seed 1\nfold subset study_id\n9 train x\n").is_err());
        let table = format_dissimilarity(&fold_dissimilarity(&plan));
        assert!(table.starts_with("Fold\t1\t2\t3\t4\t5\n1\t(0.0, 0.0, 0.0)"));
    }
}
