//! Cohort CSV, ground-truth sidecar, `key = value` config files and binary
//! model checkpoints.
//!
//! Cohort CSV layout, one row per visit, sorted by `(subject_id, visit)`:
//!
//! ```text
//! subject_id,visit,y,f_<factor>...,x_0,...,x_{F-1}
//! ```
//!
//! `visit` is 0-based and contiguous per subject; `y` and the factor columns
//! repeat on every visit row of a subject.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::FactorTable;
use crate::linalg::DenseMatrix;
use crate::model::{Classifier, CohortDataset, LogisticClassifier, RecurrentClassifier, Subject};
use crate::synth::NoiseGroup;

fn data_err(msg: impl Into<String>) -> Error {
    Error::InvalidData(msg.into())
}

fn parse_f64(s: &str, what: &str, line: u64) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| data_err(format!("line {line}: {what} '{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(data_err(format!("line {line}: {what} is not finite")));
    }
    Ok(v)
}

pub fn write_cohort<W: Write>(out: W, data: &CohortDataset, factors: &FactorTable) -> Result<()> {
    if factors.n_samples() != data.len() {
        return Err(data_err(format!(
            "{} factor rows for {} subjects",
            factors.n_samples(),
            data.len()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["subject_id".to_string(), "visit".into(), "y".into()];
    header.extend(factors.names.iter().map(|n| format!("f_{n}")));
    header.extend((0..data.feature_width()).map(|j| format!("x_{j}")));
    w.write_record(&header)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.subject(a).id.cmp(&data.subject(b).id));
    for i in order {
        let s = data.subject(i);
        for (t, visit) in s.visits.iter().enumerate() {
            let mut rec = vec![s.id.clone(), t.to_string(), s.label.to_string()];
            rec.extend(factors.values.row(i).iter().map(f64::to_string));
            rec.extend(visit.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a cohort CSV. Subjects come back in file order.
pub fn read_cohort<R: Read>(input: R) -> Result<(CohortDataset, FactorTable)> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() < 4 || header[0] != "subject_id" || header[1] != "visit" || header[2] != "y" {
        return Err(data_err("header must start with subject_id,visit,y"));
    }
    let mut factor_names = Vec::new();
    let mut n_features = 0;
    for (j, col) in header.iter().enumerate().skip(3) {
        if let Some(name) = col.strip_prefix("f_") {
            if n_features > 0 {
                return Err(data_err(format!(
                    "factor column '{col}' after feature columns"
                )));
            }
            factor_names.push(name.to_string());
        } else if let Some(idx) = col.strip_prefix("x_") {
            if idx.parse::<usize>().ok() != Some(n_features) {
                return Err(data_err(format!(
                    "column {j} is '{col}', expected x_{n_features}"
                )));
            }
            n_features += 1;
        } else {
            return Err(data_err(format!("unrecognized column '{col}'")));
        }
    }
    if n_features == 0 {
        return Err(data_err("no x_ feature columns"));
    }
    let n_factors = factor_names.len();

    let mut subjects: Vec<Subject> = Vec::new();
    let mut factor_rows: Vec<f64> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].to_string();
        let visit: usize = rec[1]
            .parse()
            .map_err(|_| data_err(format!("line {line}: bad visit index '{}'", &rec[1])))?;
        let y: u8 = match &rec[2] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(data_err(format!(
                    "line {line}: label '{other}' is not 0 or 1"
                )))
            }
        };
        let fac = (0..n_factors)
            .map(|j| parse_f64(&rec[3 + j], &header[3 + j], line))
            .collect::<Result<Vec<_>>>()?;
        let x = (0..n_features)
            .map(|j| parse_f64(&rec[3 + n_factors + j], &header[3 + n_factors + j], line))
            .collect::<Result<Vec<_>>>()?;

        match subjects.last_mut() {
            Some(s) if s.id == id => {
                if visit != s.visits.len() {
                    return Err(data_err(format!(
                        "line {line}: subject {id} visit {visit} out of order (expected {})",
                        s.visits.len()
                    )));
                }
                if y != s.label {
                    return Err(data_err(format!(
                        "line {line}: label changes within subject {id}"
                    )));
                }
                let start = factor_rows.len() - n_factors;
                if factor_rows[start..] != fac[..] {
                    return Err(data_err(format!(
                        "line {line}: factors change within subject {id}"
                    )));
                }
                s.visits.push(x);
            }
            prev => {
                if let Some(p) = prev {
                    if p.id >= id {
                        return Err(data_err(format!(
                            "line {line}: subject {id} is out of order or repeated"
                        )));
                    }
                }
                if visit != 0 {
                    return Err(data_err(format!(
                        "line {line}: subject {id} starts at visit {visit}"
                    )));
                }
                subjects.push(Subject {
                    id,
                    visits: vec![x],
                    label: y,
                });
                factor_rows.extend(fac);
            }
        }
    }
    let n = subjects.len();
    let data = CohortDataset::new(subjects)?;
    let factors = FactorTable::new(factor_names, DenseMatrix::new(n, n_factors, factor_rows)?)?;
    Ok((data, factors))
}

pub fn write_cohort_file(path: &Path, data: &CohortDataset, factors: &FactorTable) -> Result<()> {
    write_cohort(BufWriter::new(File::create(path)?), data, factors)
}

pub fn read_cohort_file(path: &Path) -> Result<(CohortDataset, FactorTable)> {
    read_cohort(BufReader::new(File::open(path)?))
}

/// `subject_id,noise_group` sidecar written next to synthetic cohorts.
pub fn write_ground_truth<W: Write>(
    out: W,
    data: &CohortDataset,
    groups: &[NoiseGroup],
) -> Result<()> {
    if groups.len() != data.len() {
        return Err(data_err("one noise group per subject is required"));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject_id", "noise_group"])?;
    for (s, g) in data.subjects().iter().zip(groups) {
        w.write_record([s.id.as_str(), g.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ground_truth<R: Read>(input: R) -> Result<BTreeMap<String, NoiseGroup>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(data_err("ground truth rows need subject_id,noise_group"));
        }
        let g = match &rec[1] {
            "low" => NoiseGroup::Low,
            "high" => NoiseGroup::High,
            other => return Err(data_err(format!("unknown noise group '{other}'"))),
        };
        out.insert(rec[0].to_string(), g);
    }
    Ok(out)
}

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("config line {}: expected key = value", n + 1))
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

const MAGIC: &[u8; 4] = b"SCW1";
const KIND_RECURRENT: u64 = 1;
const KIND_LOGISTIC: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Recurrent(RecurrentClassifier),
    Logistic(LogisticClassifier),
}

/// Magic `SCW1`, then little-endian u64 `kind, F, H, H2, n_params`, then the
/// parameters as little-endian f64.
pub fn write_checkpoint<W: Write>(mut out: W, ckpt: &Checkpoint) -> Result<()> {
    let (kind, f, h, h2, params) = match ckpt {
        Checkpoint::Recurrent(m) => (
            KIND_RECURRENT,
            m.feature_width(),
            m.hidden(),
            m.hidden2(),
            m.params(),
        ),
        Checkpoint::Logistic(m) => (KIND_LOGISTIC, m.feature_width(), 0, 0, m.params()),
    };
    out.write_all(MAGIC)?;
    for v in [kind, f as u64, h as u64, h2 as u64, params.len() as u64] {
        out.write_all(&v.to_le_bytes())?;
    }
    for p in params {
        out.write_all(&p.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(data_err("not a model checkpoint"));
    }
    let mut header = [0u64; 5];
    let mut buf = [0u8; 8];
    for h in &mut header {
        input.read_exact(&mut buf)?;
        *h = u64::from_le_bytes(buf);
    }
    let [kind, f, h, h2, n] = header;
    let mut params = Vec::with_capacity(n.min(1 << 24) as usize);
    for _ in 0..n {
        input.read_exact(&mut buf)?;
        params.push(f64::from_le_bytes(buf));
    }
    match kind {
        KIND_RECURRENT => Ok(Checkpoint::Recurrent(RecurrentClassifier::from_params(
            f as usize,
            h as usize,
            h2 as usize,
            params,
        )?)),
        KIND_LOGISTIC => {
            if n != f + 1 {
                return Err(data_err("logistic checkpoint size mismatch"));
            }
            Ok(Checkpoint::Logistic(LogisticClassifier::from_params(
                params,
            )?))
        }
        other => Err(data_err(format!("unknown checkpoint kind {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};
    use rand::SeedableRng;

    fn small() -> (CohortDataset, FactorTable) {
        let c = generate(&SynthSpec {
            n_subjects: 15,
            feature_width: 3,
            ..SynthSpec::default()
        })
        .unwrap();
        (c.dataset, c.factors)
    }

    #[test]
    fn cohort_round_trip_is_exact() {
        let (d, f) = small();
        let mut buf = Vec::new();
        write_cohort(&mut buf, &d, &f).unwrap();
        let (d2, f2) = read_cohort(buf.as_slice()).unwrap();
        assert_eq!(d, d2);
        assert_eq!(f, f2);
    }

    #[test]
    fn rejects_malformed_cohorts() {
        let cases = [
            "id,visit,y,x_0\na,0,1,0.5\n",
            "subject_id,visit,y,x_0\na,1,1,0.5\n",
            "subject_id,visit,y,x_0\na,0,2,0.5\n",
            "subject_id,visit,y,x_0\na,0,1,0.5\na,0,1,0.5\n",
            "subject_id,visit,y,x_0\nb,0,1,0.5\na,0,1,0.5\n",
            "subject_id,visit,y,x_0\na,0,1,0.5\na,1,0,0.5\n",
            "subject_id,visit,y,f_s,x_0\na,0,1,1,0.5\na,1,1,0,0.5\n",
            "subject_id,visit,y,x_0\na,0,1,nan\n",
            "subject_id,visit,y,x_0,f_s\na,0,1,0.5,1\n",
            "subject_id,visit,y,x_1\na,0,1,0.5\n",
        ];
        for c in cases {
            let e = read_cohort(c.as_bytes()).unwrap_err();
            assert!(
                matches!(e, Error::InvalidData(_) | Error::Csv(_)),
                "{c}: {e}"
            );
        }
    }

    #[test]
    fn ground_truth_round_trip() {
        let c = generate(&SynthSpec {
            n_subjects: 10,
            ..SynthSpec::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_ground_truth(&mut buf, &c.dataset, &c.noise_groups).unwrap();
        let m = read_ground_truth(buf.as_slice()).unwrap();
        for (s, g) in c.dataset.subjects().iter().zip(&c.noise_groups) {
            assert_eq!(m[&s.id], *g);
        }
    }

    #[test]
    fn pairs_parse() {
        let kv = parse_pairs("# c\nk = 30\n\nscheme=jtt # trailing\n").unwrap();
        assert_eq!(kv["k"], "30");
        assert_eq!(kv["scheme"], "jtt");
        assert!(parse_pairs("novalue\n").is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for ck in [
            Checkpoint::Recurrent(RecurrentClassifier::init(4, 6, 3, &mut rng)),
            Checkpoint::Logistic(LogisticClassifier::init(4, &mut rng)),
        ] {
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &ck).unwrap();
            assert_eq!(&buf[..4], b"SCW1");
            assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), ck);
        }
        assert!(read_checkpoint(&b"XXXX"[..]).is_err());
    }
}
