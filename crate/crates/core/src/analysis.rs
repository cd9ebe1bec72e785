//! Token-set Jaccard similarity between corpora and its correlation with BLEU.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

fn token_set(text: &str) -> HashSet<&str> {
    text.split_whitespace().collect()
}

/// `|A ∩ B| / |A ∪ B|` over the distinct whitespace tokens of each text.
pub fn jaccard_similarity(a: &str, b: &str) -> Result<f64> {
    let a = token_set(a);
    let b = token_set(b);
    if a.is_empty() || b.is_empty() {
        return Err(Error::arg("jaccard_similarity: corpus has no tokens"));
    }
    let common = a.intersection(&b).count();
    let union = a.len() + b.len() - common;
    Ok(common as f64 / union as f64)
}

pub fn jaccard_files(a: &Path, b: &Path) -> Result<f64> {
    let ta = fs::read_to_string(a).map_err(|e| Error::io(a, e))?;
    let tb = fs::read_to_string(b).map_err(|e| Error::io(b, e))?;
    jaccard_similarity(&ta, &tb).map_err(|_| {
        Error::arg(format!("jaccard: {} or {} has no tokens", a.display(), b.display()))
    })
}

/// Sample Pearson correlation of `(x, y)` points.
pub fn pearson_correlation(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("{} point(s)", points.len())));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman_correlation(points: &[(f64, f64)]) -> Result<f64> {
    let rx = ranks(&points.iter().map(|p| p.0).collect::<Vec<_>>());
    let ry = ranks(&points.iter().map(|p| p.1).collect::<Vec<_>>());
    pearson_correlation(&rx.into_iter().zip(ry).collect::<Vec<_>>())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Correlation {
    #[default]
    Pearson,
    Spearman,
}

impl Correlation {
    pub fn compute(self, points: &[(f64, f64)]) -> Result<f64> {
        match self {
            Correlation::Pearson => pearson_correlation(points),
            Correlation::Spearman => spearman_correlation(points),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Correlation::Pearson => "pearson_r",
            Correlation::Spearman => "spearman_rho",
        }
    }
}

/// One row of the results input: `pair,direction,family,bleu`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    /// Corpus pair, e.g. `es-ca`; names the files `{pair}.es` and `{pair}.ca`.
    pub pair: String,
    /// Translation direction, e.g. `ca-es`.
    pub direction: String,
    pub family: String,
    pub bleu: f64,
}

pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("pair,")) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(Error::Data(format!(
                "results line {}: expected pair,direction,family,bleu",
                n + 1
            )));
        }
        let bleu: f64 = f[3]
            .parse()
            .map_err(|_| Error::Data(format!("results line {}: bad BLEU {:?}", n + 1, f[3])))?;
        if !(0.0..=100.0).contains(&bleu) {
            return Err(Error::Data(format!("results line {}: BLEU {bleu} outside [0, 100]", n + 1)));
        }
        rows.push(ResultRow {
            pair: f[0].to_string(),
            direction: f[1].to_string(),
            family: f[2].to_string(),
            bleu,
        });
    }
    Ok(rows)
}

/// Per-direction row of the report.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityRow {
    /// Direction name, e.g. `ca-es`.
    pub pair: String,
    pub jaccard: f64,
    pub jaccard_x100: f64,
    /// BLEU by model family, e.g. `bilingual`, `multilingual`.
    pub bleu: BTreeMap<String, f64>,
}

impl SimilarityRow {
    pub fn bilingual_bleu(&self) -> Option<f64> {
        self.bleu.get("bilingual").copied()
    }

    pub fn multilingual_bleu(&self) -> Option<f64> {
        self.bleu.get("multilingual").copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityReport {
    /// Sorted by pair name.
    pub rows: Vec<SimilarityRow>,
    /// Correlation of (Jaccard×100, BLEU) per family, sorted by family.
    pub correlations: Vec<(String, f64)>,
    pub method: Correlation,
}

impl SimilarityReport {
    /// Plot data: `pair,jaccard_x100,bleu,family`, one line per (pair, family).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair,jaccard_x100,bleu,family\n");
        for row in &self.rows {
            for (family, bleu) in &row.bleu {
                writeln!(out, "{},{:.4},{bleu},{family}", row.pair, row.jaccard_x100).unwrap();
            }
        }
        out
    }

    /// `family,pearson_r` header then one line per family.
    pub fn summary(&self) -> String {
        let mut out = format!("family,{}\n", self.method.name());
        for (family, r) in &self.correlations {
            writeln!(out, "{family},{r:.6}").unwrap();
        }
        out
    }
}

/// Builds the report from parsed results and a Jaccard lookup per corpus pair.
pub fn report_from(
    results: &[ResultRow],
    mut jaccard: impl FnMut(&str) -> Result<f64>,
    method: Correlation,
) -> Result<SimilarityReport> {
    let mut by_pair: BTreeMap<String, f64> = BTreeMap::new();
    let mut rows: BTreeMap<String, SimilarityRow> = BTreeMap::new();
    for r in results {
        let j = match by_pair.get(&r.pair) {
            Some(&j) => j,
            None => {
                let j = jaccard(&r.pair)?;
                by_pair.insert(r.pair.clone(), j);
                j
            }
        };
        let row = rows.entry(r.direction.clone()).or_insert_with(|| SimilarityRow {
            pair: r.direction.clone(),
            jaccard: j,
            jaccard_x100: 100.0 * j,
            bleu: BTreeMap::new(),
        });
        if row.jaccard != j {
            return Err(Error::Data(format!(
                "direction {} listed under different corpus pairs",
                r.direction
            )));
        }
        if row.bleu.insert(r.family.clone(), r.bleu).is_some() {
            return Err(Error::Data(format!(
                "duplicate result for {} ({})",
                r.direction, r.family
            )));
        }
    }
    let mut families: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for row in rows.values() {
        for (family, &bleu) in &row.bleu {
            families.entry(family.clone()).or_default().push((row.jaccard_x100, bleu));
        }
    }
    let correlations = families
        .into_iter()
        .map(|(family, pts)| match method.compute(&pts) {
            Ok(r) => Ok((family, r)),
            Err(Error::UndefinedCorrelation(why)) => {
                Err(Error::UndefinedCorrelation(format!("family {family}: {why}")))
            }
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityReport {
        rows: rows.into_values().collect(),
        correlations,
        method,
    })
}

/// Reads `results` and computes Jaccard from `{corpora_dir}/{pair}.{lang}` files,
/// where the two language codes come from splitting the pair name on `-`.
pub fn build_report(results: &Path, corpora_dir: &Path, method: Correlation) -> Result<SimilarityReport> {
    let text = fs::read_to_string(results).map_err(|e| Error::io(results, e))?;
    let rows = parse_results(&text)?;
    report_from(
        &rows,
        |pair| {
            let (a, b) = pair
                .split_once('-')
                .ok_or_else(|| Error::Data(format!("pair {pair:?} is not of the form xx-yy")))?;
            let fa = corpora_dir.join(format!("{pair}.{a}"));
            let fb = corpora_dir.join(format!("{pair}.{b}"));
            if !fa.is_file() || !fb.is_file() {
                return Err(Error::Data(format!(
                    "missing corpora for pair {pair} (expected {} and {})",
                    fa.display(),
                    fb.display()
                )));
            }
            jaccard_files(&fa, &fb)
        },
        method,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard_similarity("a b c", "c b a a").unwrap(), 1.0);
        assert_eq!(jaccard_similarity("a b", "c d").unwrap(), 0.0);
        assert_eq!(jaccard_similarity("el gato come", "el gat menja").unwrap(), 0.2);
        assert!(jaccard_similarity("", "a").is_err());
        assert!(jaccard_similarity("a", " \n").is_err());
    }

    #[test]
    fn pearson_examples() {
        assert_eq!(pearson_correlation(&[(1.0, 2.0), (2.0, 4.0), (3.0, 6.0)]).unwrap(), 1.0);
        assert_eq!(pearson_correlation(&[(1.0, 1.0), (2.0, 2.0), (3.0, 1.0)]).unwrap(), 0.0);
        assert_eq!(pearson_correlation(&[(1.0, -2.0), (2.0, -4.0), (3.0, -6.0)]).unwrap(), -1.0);
        assert!(matches!(
            pearson_correlation(&[(1.0, 5.0), (1.0, 5.0)]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(pearson_correlation(&[(1.0, 5.0)]).is_err());
    }

    #[test]
    fn spearman_uses_ranks() {
        let pts = [(1.0, 1.0), (2.0, 8.0), (3.0, 27.0), (4.0, 64.0)];
        assert_eq!(spearman_correlation(&pts).unwrap(), 1.0);
        assert_eq!(ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn results_parsing() {
        let rows = parse_results("pair,direction,family,bleu\nes-ca,ca-es,bilingual,74.24\n\n").unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].direction, "ca-es");
        assert!(parse_results("es-ca,ca-es,bilingual").is_err());
        assert!(parse_results("es-ca,ca-es,bilingual,x").is_err());
        assert!(parse_results("es-ca,ca-es,bilingual,101").is_err());
    }
}
