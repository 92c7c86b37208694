//! Directory-level evaluation and the CSV report.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{score, GrayMap, Scores, SegmentationPair};
use crate::data::pnm;
use crate::error::{Error, Result};
use crate::par::map_indexed;

pub const CSV_HEADER: &str = "file,mae,s_alpha,e_phi_mean,e_phi_max,f_w";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<(String, Scores)>,
    /// Unweighted mean over rows.
    pub mean: Scores,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<(String, Scores)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&Scores) -> f64| rows.iter().map(|(_, s)| f(s)).sum::<f64>() / n;
        let mean = Scores {
            mae: avg(|s| s.mae),
            s_alpha: avg(|s| s.s_alpha),
            e_phi_mean: avg(|s| s.e_phi_mean),
            e_phi_max: avg(|s| s.e_phi_max),
            f_w: avg(|s| s.f_w),
            f_w_empty: rows.iter().any(|(_, s)| s.f_w_empty),
        };
        Ok(MetricReport { rows, mean })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for (name, s) in self.rows.iter().map(|(n, s)| (n.as_str(), s)).chain([("MEAN", &self.mean)]) {
            let _ = writeln!(out, "{name},{}", csv_fields(s));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// The five score columns, 6 decimals each.
pub fn csv_fields(s: &Scores) -> String {
    format!("{:.6},{:.6},{:.6},{:.6},{:.6}", s.mae, s.s_alpha, s.e_phi_mean, s.e_phi_max, s.f_w)
}

fn pgm_names(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "pgm") {
            names.insert(path.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    Ok(names)
}

/// Grayscale map with values `byte / 255`.
pub fn read_map(path: &Path) -> Result<GrayMap> {
    let img = pnm::read_pgm(path)?;
    GrayMap::new(img.height, img.width, img.data.iter().map(|&b| b as f64 / 255.0).collect())
}

/// Ground truth is binarized at 0.5.
pub fn read_mask(path: &Path) -> Result<GrayMap> {
    let mut m = read_map(path)?;
    m.data.iter_mut().for_each(|v| *v = if *v >= 0.5 { 1.0 } else { 0.0 });
    Ok(m)
}

/// Scores every `<name>.pgm` in `gt_dir` against the same name in `pred_dir`.
pub fn evaluate_set(pred_dir: &Path, gt_dir: &Path) -> Result<MetricReport> {
    let gts = pgm_names(gt_dir)?;
    let preds = pgm_names(pred_dir)?;
    let mut missing: Vec<String> = gts.difference(&preds).map(|n| format!("prediction {n}")).collect();
    missing.extend(preds.difference(&gts).map(|n| format!("ground truth {n}")));
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    let names: Vec<String> = gts.into_iter().collect();
    let rows = map_indexed(names.len(), |i| -> Result<(String, Scores)> {
        let name = &names[i];
        let pred = read_map(&pred_dir.join(name))?;
        let gt = read_mask(&gt_dir.join(name))?;
        let pair = SegmentationPair::new(&pred, &gt).map_err(|e| Error::Validation(format!("{name}: {e}")))?;
        Ok((name.clone(), score(&pair)))
    });
    MetricReport::from_rows(rows.into_iter().collect::<Result<_>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(v: f64) -> Scores {
        Scores { mae: v, s_alpha: v, e_phi_mean: v, e_phi_max: v, f_w: v, f_w_empty: false }
    }

    #[test]
    fn csv_layout() {
        let r = MetricReport::from_rows(vec![("a.pgm".into(), scores(0.25)), ("b.pgm".into(), scores(0.75))]).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "a.pgm,0.250000,0.250000,0.250000,0.250000,0.250000");
        assert_eq!(lines[3], "MEAN,0.500000,0.500000,0.500000,0.500000,0.500000");
    }

    #[test]
    fn empty_report_rejected() {
        assert!(matches!(MetricReport::from_rows(vec![]), Err(Error::EmptyDataset)));
    }
}
