//! File formats shared by the command-line tool.
//!
//! Numbers are written in shortest round-trip form, so reading a file back
//! reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assignopt::GenerationStats;
use crate::channel::{BacParams, GaussianChannelParams, IntensityTable};
use crate::codebook::{AssignmentMap, Codebook, Codeword, PriorDist};
use crate::decoder::{Decision, SweepRow};
use crate::error::{Error, Result};
use crate::gmmfit::ComponentQq;

/// Tolerance on the probability sum of a prior file before renormalizing.
pub const PRIOR_SUM_TOLERANCE: f64 = 1e-6;

/// Decimal for ordinary magnitudes, exponent form for extreme ones.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Numbered non-blank lines, 1-based.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Named codewords as stored in a `name<TAB>code` file.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedCodes {
    pub length: usize,
    pub rows: Vec<(String, Codeword)>,
}

impl NamedCodes {
    pub fn codebook(&self) -> Result<Codebook> {
        Codebook::from_words(self.length, self.rows.iter().map(|r| r.1).collect())
    }

    pub fn names(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.0.clone()).collect()
    }

    /// Default names `code001`, `code002`, ... for a codebook.
    pub fn numbered(codebook: &Codebook) -> Self {
        let width = codebook.len().to_string().len().max(3);
        NamedCodes {
            length: codebook.length(),
            rows: codebook
                .words()
                .iter()
                .enumerate()
                .map(|(i, &w)| (format!("code{:0width$}", i + 1), w))
                .collect(),
        }
    }

    /// Molecule names paired with their assigned codewords.
    pub fn from_assignment(
        codebook: &Codebook,
        assignment: &AssignmentMap,
        molecules: &[String],
    ) -> Self {
        NamedCodes {
            length: codebook.length(),
            rows: molecules
                .iter()
                .enumerate()
                .map(|(g, name)| (name.clone(), assignment.codeword(codebook, g)))
                .collect(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("name\tcode\n");
        for (name, w) in &self.rows {
            let _ = writeln!(out, "{name}\t{}", w.to_bit_string(self.length));
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut rows = Vec::new();
        let mut length = None;
        for (n, line) in content_lines(text) {
            let mut fields = line.split('\t');
            let (name, code) = match (fields.next(), fields.next(), fields.next()) {
                (Some(a), Some(b), None) => (a.trim(), b.trim()),
                _ => return Err(parse_err(path, n, "expected two tab-separated fields")),
            };
            if rows.is_empty() && length.is_none() && name.eq_ignore_ascii_case("name") {
                continue;
            }
            let (w, len) =
                Codeword::parse_bit_string(code).map_err(|e| parse_err(path, n, e.to_string()))?;
            match length {
                None => length = Some(len),
                Some(l) if l != len => {
                    return Err(parse_err(
                        path,
                        n,
                        format!("code has {len} bits, expected {l}"),
                    ))
                }
                _ => {}
            }
            if name.is_empty() {
                return Err(parse_err(path, n, "empty name"));
            }
            rows.push((name.to_string(), w));
        }
        let length = length.ok_or_else(|| parse_err(path, 1, "no codewords"))?;
        Ok(NamedCodes { length, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    /// Assignment of `molecules` (in order) to codebook entries, looked up by
    /// codeword. Every molecule must be listed exactly once.
    pub fn assignment_for(
        &self,
        codebook: &Codebook,
        molecules: &[String],
        path: &Path,
    ) -> Result<AssignmentMap> {
        if self.length != codebook.length() {
            return Err(parse_err(
                path,
                1,
                format!(
                    "codes have {} bits, codebook has {}",
                    self.length,
                    codebook.length()
                ),
            ));
        }
        let mut codes = Vec::with_capacity(molecules.len());
        for m in molecules {
            let mut hits = self.rows.iter().filter(|(name, _)| name == m);
            let (_, w) = hits
                .next()
                .ok_or_else(|| parse_err(path, 1, format!("molecule {m:?} is not assigned")))?;
            if hits.next().is_some() {
                return Err(parse_err(
                    path,
                    1,
                    format!("molecule {m:?} is assigned twice"),
                ));
            }
            let k = codebook
                .words()
                .iter()
                .position(|c| c == w)
                .ok_or_else(|| {
                    parse_err(path, 1, format!("code of {m:?} is not in the codebook"))
                })?;
            codes.push(k);
        }
        AssignmentMap::new(codes, codebook.len())
    }
}

/// Prior file rows `molecule,probability`.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedPrior {
    pub names: Vec<String>,
    pub prior: PriorDist,
}

impl NamedPrior {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut names = Vec::new();
        let mut probs = Vec::new();
        for (n, line) in content_lines(text) {
            let (name, p) = line
                .split_once(',')
                .ok_or_else(|| parse_err(path, n, "expected molecule,probability"))?;
            let (name, p) = (name.trim(), p.trim());
            let value: f64 = match p.parse() {
                Ok(v) => v,
                Err(_) if names.is_empty() && name.eq_ignore_ascii_case("molecule") => continue,
                Err(_) => return Err(parse_err(path, n, format!("invalid probability {p:?}"))),
            };
            if names.iter().any(|m| m == name) {
                return Err(parse_err(path, n, format!("duplicate molecule {name:?}")));
            }
            names.push(name.to_string());
            probs.push(value);
        }
        if names.is_empty() {
            return Err(parse_err(path, 1, "no molecules"));
        }
        let prior = PriorDist::from_probs_with_tolerance(probs, PRIOR_SUM_TOLERANCE)
            .map_err(|e| parse_err(path, 1, e.to_string()))?;
        Ok(NamedPrior { names, prior })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("molecule,probability\n");
        for (name, &p) in self.names.iter().zip(self.prior.probs()) {
            let _ = writeln!(out, "{name},{}", fmt_num(p));
        }
        out
    }
}

/// Channel parameter file: Gaussian parameters, crossover rates, or both.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma1: Option<Vec<f64>>,
    /// Fitted "on" mixture weight per round.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p01: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p10: Option<Vec<f64>>,
}

impl ChannelFile {
    pub fn from_gaussian(params: &GaussianChannelParams) -> Self {
        ChannelFile {
            mu0: Some(params.mu0.clone()),
            sigma0: Some(params.sigma0.clone()),
            mu1: Some(params.mu1.clone()),
            sigma1: Some(params.sigma1.clone()),
            ..ChannelFile::default()
        }
    }

    pub fn gaussian(&self) -> Result<Option<GaussianChannelParams>> {
        match (&self.mu0, &self.sigma0, &self.mu1, &self.sigma1) {
            (Some(a), Some(b), Some(c), Some(d)) => {
                GaussianChannelParams::new(a.clone(), b.clone(), c.clone(), d.clone()).map(Some)
            }
            (None, None, None, None) => Ok(None),
            _ => Err(Error::Domain(
                "mu0, sigma0, mu1 and sigma1 must be given together".into(),
            )),
        }
    }

    /// Crossover rates given explicitly in the file.
    pub fn bac(&self) -> Result<Option<BacParams>> {
        match (&self.p01, &self.p10) {
            (Some(a), Some(b)) => {
                let bac = BacParams {
                    theta: self.theta.clone(),
                    p01: a.clone(),
                    p10: b.clone(),
                };
                bac.check()?;
                Ok(Some(bac))
            }
            (None, None) => Ok(None),
            _ => Err(Error::Domain("p01 and p10 must be given together".into())),
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| parse_err(path, e.line(), e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serializes");
        s.push('\n');
        s
    }
}

/// Reads an intensity CSV.
///
/// A header row is recognized by a non-numeric first field; when its last
/// column is named `truth`, that column holds 0-based molecule indices.
pub fn parse_intensities(text: &str, path: &Path) -> Result<IntensityTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut width = None;
    let mut has_truth = false;
    let mut values = Vec::new();
    let mut truth = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        if width.is_none() && values.is_empty() && record[0].parse::<f64>().is_err() {
            has_truth = record
                .iter()
                .last()
                .is_some_and(|h| h.eq_ignore_ascii_case("truth"));
            width = Some(record.len());
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(parse_err(
                path,
                line,
                format!("expected {w} fields, found {}", record.len()),
            ));
        }
        let rounds = if has_truth { w - 1 } else { w };
        for (col, field) in record.iter().take(rounds).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                parse_err(
                    path,
                    line,
                    format!("column {}: invalid number {field:?}", col + 1),
                )
            })?;
            if !(v.is_finite() && v > 0.0) {
                return Err(parse_err(
                    path,
                    line,
                    format!("column {}: intensity {v} is not positive", col + 1),
                ));
            }
            values.push(v);
        }
        if has_truth {
            let t = &record[w - 1];
            truth.push(
                t.parse::<usize>()
                    .map_err(|_| parse_err(path, line, format!("invalid truth index {t:?}")))?,
            );
        }
    }
    let rounds = match width {
        Some(w) if !values.is_empty() => {
            if has_truth {
                w - 1
            } else {
                w
            }
        }
        _ => return Err(parse_err(path, 1, "no intensity rows")),
    };
    if rounds == 0 {
        return Err(parse_err(path, 1, "no intensity columns"));
    }
    IntensityTable::new(rounds, values, has_truth.then_some(truth))
}

pub fn read_intensities(path: &Path) -> Result<IntensityTable> {
    parse_intensities(&read_text(path)?, path)
}

pub fn intensities_to_csv(table: &IntensityTable) -> String {
    let mut out = String::with_capacity(table.values().len() * 20);
    let header: Vec<String> = (1..=table.rounds()).map(|l| format!("r{l}")).collect();
    out.push_str(&header.join(","));
    if table.truth.is_some() {
        out.push_str(",truth");
    }
    out.push('\n');
    for i in 0..table.rows() {
        for (l, &v) in table.row(i).iter().enumerate() {
            if l > 0 {
                out.push(',');
            }
            out.push_str(&fmt_num(v));
        }
        if let Some(t) = &table.truth {
            let _ = write!(out, ",{}", t[i]);
        }
        out.push('\n');
    }
    out
}

/// One binary sequence per line, round 1 leftmost. Returns the sequences and
/// their common length.
pub fn parse_bits(text: &str, path: &Path) -> Result<(Vec<u32>, usize)> {
    let mut out = Vec::new();
    let mut length = None;
    for (n, line) in content_lines(text) {
        let (w, len) =
            Codeword::parse_bit_string(line).map_err(|e| parse_err(path, n, e.to_string()))?;
        if *length.get_or_insert(len) != len {
            return Err(parse_err(
                path,
                n,
                format!("sequence has {len} bits, expected {}", length.unwrap()),
            ));
        }
        out.push(w.bits());
    }
    let length = length.ok_or_else(|| parse_err(path, 1, "no sequences"))?;
    Ok((out, length))
}

pub fn read_bits(path: &Path) -> Result<(Vec<u32>, usize)> {
    parse_bits(&read_text(path)?, path)
}

pub fn decoded_to_csv(decisions: &[Decision], molecules: &[String]) -> String {
    let mut out = String::from("row,decoded_molecule,posterior,rejected\n");
    for (i, d) in decisions.iter().enumerate() {
        let name = d.molecule.map_or("", |g| molecules[g].as_str());
        let _ = writeln!(
            out,
            "{i},{name},{},{}",
            fmt_num(d.posterior),
            d.molecule.is_none()
        );
    }
    out
}

pub const EVOLUTION_HEADER: &str = "generation,best_fdr,mean_fdr,mean_chi";

pub fn evolution_row(s: &GenerationStats) -> String {
    format!(
        "{},{},{},{}",
        s.generation,
        fmt_num(s.best_fdr),
        fmt_num(s.mean_fdr),
        fmt_num(s.mean_chi)
    )
}

pub const DIAGNOSTICS_HEADER: &str = "column,component,p,theoretical_q,empirical_q";

/// Diagnostics rows of one column (1-based).
pub fn diagnostics_rows(column: usize, qq: &[ComponentQq]) -> String {
    let mut out = String::new();
    for comp in qq {
        for pt in &comp.points {
            let _ = writeln!(
                out,
                "{column},{},{},{},{}",
                comp.component,
                fmt_num(pt.p),
                fmt_num(pt.theoretical),
                fmt_num(pt.empirical)
            );
        }
    }
    out
}

pub const SWEEP_HEADER: &str = "alpha,decoder,fdr_p05,fdr_median,fdr_p95,mean_fdr_median,\
mismatch_p05,mismatch_median,mismatch_p95,weighted_mismatch_median,rejection_rate_median,\
never_decoded_fraction";

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let nums = [
            r.fdr_p05,
            r.fdr_median,
            r.fdr_p95,
            r.mean_fdr_median,
            r.mismatch_p05,
            r.mismatch_median,
            r.mismatch_p95,
            r.weighted_mismatch_median,
            r.rejection_rate_median,
            r.never_decoded_fraction,
        ];
        let nums: Vec<String> = nums.iter().map(|&v| fmt_num(v)).collect();
        let _ = writeln!(out, "{},{},{}", fmt_num(r.alpha), r.decoder, nums.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::generate_mhd4;
    use std::path::PathBuf;

    fn p() -> PathBuf {
        PathBuf::from("test.txt")
    }

    #[test]
    fn numbers_round_trip() {
        for v in [
            0.0,
            1.0,
            -2.5,
            0.1,
            1e-300,
            6.02e23,
            123456.789,
            f64::MIN_POSITIVE,
            1.0 / 3.0,
        ] {
            assert_eq!(fmt_num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_num(0.25), "0.25");
        assert_eq!(fmt_num(1e-300), "1e-300");
    }

    #[test]
    fn codebook_round_trip() {
        let cb = generate_mhd4();
        let named = NamedCodes::numbered(&cb);
        let text = named.to_tsv();
        assert_eq!(text.lines().count(), 141);
        assert!(text.starts_with("name\tcode\ncode001\t"));
        let back = NamedCodes::parse(&text, &p()).unwrap();
        assert_eq!(back, named);
        assert_eq!(back.codebook().unwrap(), cb);
        assert!(NamedCodes::parse("a\t0101\nb\t011\n", &p()).is_err());
        assert!(NamedCodes::parse("a 0101\n", &p()).is_err());
        assert!(NamedCodes::parse("", &p()).is_err());
    }

    #[test]
    fn assignment_by_name() {
        let cb = generate_mhd4();
        let names: Vec<String> = ["b", "a", "c"].iter().map(|s| s.to_string()).collect();
        let a = AssignmentMap::new(vec![5, 17, 99], 140).unwrap();
        let file = NamedCodes::from_assignment(&cb, &a, &names);
        let reordered: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let back = file.assignment_for(&cb, &reordered, &p()).unwrap();
        assert_eq!(back.code_indices(), &[17, 5, 99]);
        let missing: Vec<String> = vec!["z".into()];
        assert!(file.assignment_for(&cb, &missing, &p()).is_err());
    }

    #[test]
    fn prior_parsing() {
        let np = NamedPrior::parse("molecule,probability\nx,0.25\ny,0.75\n", &p()).unwrap();
        assert_eq!(np.names, vec!["x", "y"]);
        assert_eq!(np.prior.probs(), &[0.25, 0.75]);
        let near = NamedPrior::parse("x,0.2500001\ny,0.75\n", &p()).unwrap();
        assert!((near.prior.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(NamedPrior::parse("x,0.3\ny,0.5\n", &p()).is_err());
        assert!(NamedPrior::parse("x,0.5\nx,0.5\n", &p()).is_err());
        assert!(NamedPrior::parse("x,abc\n", &p()).is_err());
        let back = NamedPrior::parse(&np.to_csv(), &p()).unwrap();
        assert_eq!(back, np);
    }

    #[test]
    fn channel_file_variants() {
        let f = ChannelFile::parse(r#"{"p01": [0.1, 0.2], "p10": [0.3, 0.1]}"#, &p()).unwrap();
        assert!(f.gaussian().unwrap().is_none());
        assert_eq!(f.bac().unwrap().unwrap().p10, vec![0.3, 0.1]);
        let g = ChannelFile::parse(
            r#"{"mu0": [1], "sigma0": [0.5], "mu1": [3], "sigma1": [0.5]}"#,
            &p(),
        )
        .unwrap();
        assert_eq!(g.gaussian().unwrap().unwrap().mu1, vec![3.0]);
        assert!(ChannelFile::parse(r#"{"mu0": [1]}"#, &p())
            .unwrap()
            .gaussian()
            .is_err());
        assert!(ChannelFile::parse(r#"{"bogus": 1}"#, &p()).is_err());
        let back = ChannelFile::parse(&g.to_json(), &p()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn intensity_csv_forms() {
        let t = parse_intensities("r1,r2,truth\n1.5,2,0\n3,4.25,1\n", &p()).unwrap();
        assert_eq!(t.rounds(), 2);
        assert_eq!(t.values(), &[1.5, 2.0, 3.0, 4.25]);
        assert_eq!(t.truth, Some(vec![0, 1]));
        let bare = parse_intensities("1,2,3\n4,5,6\n", &p()).unwrap();
        assert_eq!((bare.rounds(), bare.rows()), (3, 2));
        assert!(bare.truth.is_none());
        let back = parse_intensities(&intensities_to_csv(&t), &p()).unwrap();
        assert_eq!(back, t);

        let err = parse_intensities("1,2\n3,x\n", &p())
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2") && err.contains("column 2"), "{err}");
        let err = parse_intensities("1,2\n3\n", &p()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(parse_intensities("1,-2\n", &p()).is_err());
        let err = parse_intensities("", &p()).unwrap_err().to_string();
        assert!(err.contains("test.txt"), "{err}");
    }

    #[test]
    fn bits_files() {
        let (xs, len) = parse_bits("100\n011\n\n", &p()).unwrap();
        assert_eq!((xs, len), (vec![0b001, 0b110], 3));
        assert!(parse_bits("100\n01\n", &p()).is_err());
        assert!(parse_bits("1a0\n", &p()).is_err());
    }

    #[test]
    fn decoded_rows() {
        let names = vec!["m0".to_string(), "m1".to_string()];
        let ds = [
            Decision {
                molecule: Some(1),
                posterior: 0.75,
            },
            Decision {
                molecule: None,
                posterior: 0.5,
            },
        ];
        assert_eq!(
            decoded_to_csv(&ds, &names),
            "row,decoded_molecule,posterior,rejected\n0,m1,0.75,false\n1,,0.5,true\n"
        );
    }
}
