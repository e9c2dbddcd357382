//! Return panels: CSV ingestion, simple returns, calendar alignment and
//! descriptive statistics.
//!
//! Descriptive statistics report the *sample standard deviation* (divisor
//! `T - 1`) in the dispersion column; skewness and excess kurtosis are the plain
//! moment estimators `m3 / m2^1.5` and `m4 / m2^2 - 3` with divisor `T`.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanmodel::box_ljung;

/// Row label of a panel: a calendar date or a plain integer index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TimeStamp {
    Date(NaiveDate),
    Index(i64),
}

impl TimeStamp {
    pub fn parse(s: &str) -> Option<TimeStamp> {
        let s = s.trim();
        if let Ok(i) = s.parse::<i64>() {
            return Some(TimeStamp::Index(i));
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().map(TimeStamp::Date)
    }
}

impl fmt::Display for TimeStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeStamp::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
            TimeStamp::Index(i) => write!(f, "{i}"),
        }
    }
}

/// A `T x k` matrix of percentage returns with asset labels and time stamps.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    assets: Vec<String>,
    times: Vec<TimeStamp>,
    values: DMatrix<f64>,
}

impl ReturnPanel {
    pub fn new(assets: Vec<String>, times: Vec<TimeStamp>, values: DMatrix<f64>) -> Result<Self> {
        if assets.is_empty() || times.is_empty() {
            return Err(Error::InvalidPanel(
                "a panel needs at least one asset and one row".into(),
            ));
        }
        if values.nrows() != times.len() || values.ncols() != assets.len() {
            return Err(Error::DimensionMismatch(format!(
                "values are {}x{} but there are {} time stamps and {} assets",
                values.nrows(),
                values.ncols(),
                times.len(),
                assets.len()
            )));
        }
        if let Some(w) = times.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPanel(format!(
                "time stamps must be strictly increasing ({} then {})",
                times[w],
                times[w + 1]
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel("panel contains non-finite values".into()));
        }
        Ok(ReturnPanel { assets, times, values })
    }

    /// Panel indexed `0..T` with assets named `A1..Ak`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let assets = (1..=values.ncols()).map(|i| format!("A{i}")).collect();
        let times = (0..values.nrows() as i64).map(TimeStamp::Index).collect();
        Self::new(assets, times, values)
    }

    /// Converts a price table to simple percentage returns; the first time
    /// stamp is dropped.
    pub fn from_prices(assets: Vec<String>, times: Vec<TimeStamp>, prices: &DMatrix<f64>) -> Result<Self> {
        let returns = simple_returns(prices)?;
        if times.len() != prices.nrows() {
            return Err(Error::DimensionMismatch("one time stamp per price row required".into()));
        }
        Self::new(assets, times[1..].to_vec(), returns)
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn times(&self) -> &[TimeStamp] {
        &self.times
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn k(&self) -> usize {
        self.assets.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Keeps the last `n` rows.
    pub fn tail(&self, n: usize) -> ReturnPanel {
        let n = n.min(self.len());
        let start = self.len() - n;
        ReturnPanel {
            assets: self.assets.clone(),
            times: self.times[start..].to_vec(),
            values: self.values.rows(start, n).into_owned(),
        }
    }

    /// Same labels, new values of identical shape.
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<ReturnPanel> {
        ReturnPanel::new(self.assets.clone(), self.times.clone(), values)
    }
}

/// `r_t = 100 (P_t / P_{t-1} - 1)` column by column.
pub fn simple_returns(prices: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let t = prices.nrows();
    if t < 2 {
        return Err(Error::TooShort { needed: 2, got: t });
    }
    for row in 0..t {
        for col in 0..prices.ncols() {
            let p = prices[(row, col)];
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::NonPositivePrice { row, col, value: p });
            }
        }
    }
    Ok(DMatrix::from_fn(t - 1, prices.ncols(), |i, j| {
        100.0 * (prices[(i + 1, j)] / prices[(i, j)] - 1.0)
    }))
}

/// Inner join on time stamps; columns are concatenated in input order.
pub fn align_panels(panels: &[ReturnPanel]) -> Result<ReturnPanel> {
    let first = panels
        .first()
        .ok_or_else(|| Error::InvalidPanel("no panels to align".into()))?;
    let mut common: BTreeSet<TimeStamp> = first.times.iter().copied().collect();
    for p in &panels[1..] {
        let other: BTreeSet<TimeStamp> = p.times.iter().copied().collect();
        common = common.intersection(&other).copied().collect();
    }
    if common.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let times: Vec<TimeStamp> = common.into_iter().collect();
    let k: usize = panels.iter().map(|p| p.k()).sum();
    let mut values = DMatrix::zeros(times.len(), k);
    let mut assets = Vec::with_capacity(k);
    let mut offset = 0;
    for p in panels {
        // both time lists are sorted, so a single merge pass finds the rows
        let mut src = 0;
        for (dst, ts) in times.iter().enumerate() {
            while p.times[src] < *ts {
                src += 1;
            }
            for j in 0..p.k() {
                values[(dst, offset + j)] = p.values[(src, j)];
            }
        }
        assets.extend(p.assets.iter().cloned());
        offset += p.k();
    }
    ReturnPanel::new(assets, times, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetStats {
    pub asset: String,
    pub mean: f64,
    /// Sample standard deviation (divisor `T - 1`).
    pub std_dev: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub minimum: f64,
    pub maximum: f64,
    /// Box-Ljung `Q(12)`.
    pub q12: f64,
    pub q12_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub observations: usize,
    pub assets: Vec<AssetStats>,
}

pub fn describe(panel: &ReturnPanel) -> Result<DescriptiveStats> {
    let t = panel.len();
    if t < 13 {
        return Err(Error::TooShort { needed: 13, got: t });
    }
    let mut assets = Vec::with_capacity(panel.k());
    for (j, name) in panel.assets.iter().enumerate() {
        let col: Vec<f64> = panel.values.column(j).iter().copied().collect();
        let n = t as f64;
        let mean = col.iter().sum::<f64>() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for x in &col {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        let ss = m2;
        m2 /= n;
        m3 /= n;
        m4 /= n;
        if !(m2 > 0.0) {
            return Err(Error::DegenerateColumn(j));
        }
        let lb = box_ljung(&col, 12)?;
        assets.push(AssetStats {
            asset: name.clone(),
            mean,
            std_dev: (ss / (n - 1.0)).sqrt(),
            skewness: m3 / m2.powf(1.5),
            excess_kurtosis: m4 / (m2 * m2) - 3.0,
            minimum: col.iter().copied().fold(f64::INFINITY, f64::min),
            maximum: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            q12: lb.statistic,
            q12_p_value: lb.p_value,
        });
    }
    Ok(DescriptiveStats {
        observations: t,
        assets,
    })
}

impl fmt::Display for DescriptiveStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Descriptive statistics ({} observations)", self.observations)?;
        writeln!(
            f,
            "{:<10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8}",
            "Asset", "Mean", "St.Dev", "Skewness", "Ex.Kurt.", "Minimum", "Maximum", "Q(12)", "p"
        )?;
        for a in &self.assets {
            writeln!(
                f,
                "{:<10} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.2} {:>8.4}",
                a.asset, a.mean, a.std_dev, a.skewness, a.excess_kurtosis, a.minimum, a.maximum, a.q12, a.q12_p_value
            )?;
        }
        Ok(())
    }
}

impl DescriptiveStats {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let header = [
            "asset",
            "mean",
            "std_dev",
            "skewness",
            "excess_kurtosis",
            "minimum",
            "maximum",
            "q12",
            "q12_p_value",
        ];
        out.write_record(header).map_err(csv_err)?;
        for a in &self.assets {
            out.write_record([
                a.asset.clone(),
                a.mean.to_string(),
                a.std_dev.to_string(),
                a.skewness.to_string(),
                a.excess_kurtosis.to_string(),
                a.minimum.to_string(),
                a.maximum.to_string(),
                a.q12.to_string(),
                a.q12_p_value.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// What the numeric columns of an input file hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Prices,
    Returns,
}

/// Handling of empty cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingPolicy {
    Reject,
    DropRow,
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::parse(line, format!("{other:?}")),
    }
}

/// Reads a panel from CSV. The first column holds ISO-8601 dates or integer
/// indices; the header row names the assets.
pub fn read_panel<R: Read>(reader: R, kind: InputKind, missing: MissingPolicy) -> Result<ReturnPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.len() < 2 {
        return Err(Error::parse(
            1,
            "header row must contain a time column and at least one asset",
        ));
    }
    let assets: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let mut times = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let ts = TimeStamp::parse(&rec[0])
            .ok_or_else(|| Error::parse(line, format!("cannot parse time stamp '{}'", &rec[0])))?;
        let mut row = Vec::with_capacity(assets.len());
        let mut has_missing = false;
        for cell in rec.iter().skip(1) {
            let cell = cell.trim();
            if cell.is_empty() {
                has_missing = true;
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::parse(line, format!("cannot parse number '{cell}'")))?;
            if !v.is_finite() {
                return Err(Error::parse(line, format!("non-finite value '{cell}'")));
            }
            row.push(v);
        }
        if has_missing {
            match missing {
                MissingPolicy::Reject => return Err(Error::parse(line, "missing cell")),
                MissingPolicy::DropRow => continue,
            }
        }
        if let (Some(prev), true) = (times.last(), true) {
            if *prev >= ts {
                return Err(Error::parse(line, format!("time stamp {ts} is not after {prev}")));
            }
        }
        times.push(ts);
        data.extend(row);
    }
    if times.is_empty() {
        return Err(Error::parse(1, "input has no data rows"));
    }
    let values = DMatrix::from_row_slice(times.len(), assets.len(), &data);
    match kind {
        InputKind::Returns => ReturnPanel::new(assets, times, values),
        InputKind::Prices => ReturnPanel::from_prices(assets, times, &values),
    }
}

pub fn read_panel_file(path: &Path, kind: InputKind, missing: MissingPolicy) -> Result<ReturnPanel> {
    let f = std::fs::File::open(path)?;
    let meta = f.metadata()?;
    if meta.len() == 0 {
        return Err(Error::parse(
            0,
            format!("{} is empty; a header row is required", path.display()),
        ));
    }
    read_panel(std::io::BufReader::new(f), kind, missing)
}

/// Writes a panel in the format [`read_panel`] accepts. Values are written
/// with round-trip precision.
pub fn write_panel<W: Write>(w: W, panel: &ReturnPanel) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["time".to_string()];
    header.extend(panel.assets.iter().cloned());
    out.write_record(&header).map_err(csv_err)?;
    for (i, ts) in panel.times.iter().enumerate() {
        let mut rec = vec![ts.to_string()];
        rec.extend(panel.values.row(i).iter().map(|v| v.to_string()));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_panel_file(path: &Path, panel: &ReturnPanel) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_panel(std::io::BufWriter::new(f), panel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn idx(v: &[i64]) -> Vec<TimeStamp> {
        v.iter().map(|&i| TimeStamp::Index(i)).collect()
    }

    #[test]
    fn simple_return_examples() {
        let r = simple_returns(&DMatrix::from_column_slice(2, 1, &[100.0, 101.0])).unwrap();
        assert!((r[(0, 0)] - 1.0).abs() < 1e-12);
        let r = simple_returns(&DMatrix::from_element(5, 2, 42.0)).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
        let r = simple_returns(&DMatrix::from_column_slice(3, 1, &[100.0, 90.0, 99.0])).unwrap();
        assert!((r[(0, 0)] + 10.0).abs() < 1e-12);
        assert!((r[(1, 0)] - 10.0).abs() < 1e-12);
        let bad = DMatrix::from_column_slice(2, 1, &[100.0, 0.0]);
        assert!(matches!(
            simple_returns(&bad),
            Err(Error::NonPositivePrice { row: 1, col: 0, .. })
        ));
    }

    #[test]
    fn returns_reconstruct_prices() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let prices: Vec<f64> = (0..200)
            .scan(100.0, |p, _| {
                *p *= 1.0 + 0.01 * rng.sample::<f64, _>(StandardNormal);
                Some(*p)
            })
            .collect();
        let r = simple_returns(&DMatrix::from_column_slice(200, 1, &prices)).unwrap();
        let mut p = prices[0];
        for i in 0..199 {
            p *= 1.0 + r[(i, 0)] / 100.0;
            assert!((p - prices[i + 1]).abs() / prices[i + 1] < 1e-10);
        }
    }

    #[test]
    fn alignment_examples() {
        let a = ReturnPanel::new(
            vec!["a".into()],
            idx(&[1, 2, 3]),
            DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]),
        )
        .unwrap();
        let b = ReturnPanel::new(
            vec!["b".into()],
            idx(&[2, 3, 4]),
            DMatrix::from_column_slice(3, 1, &[20.0, 30.0, 40.0]),
        )
        .unwrap();
        let j = align_panels(&[a.clone(), b]).unwrap();
        assert_eq!(j.times(), &idx(&[2, 3])[..]);
        assert_eq!(j.assets(), &["a".to_string(), "b".to_string()]);
        assert_eq!(j.values(), &DMatrix::from_row_slice(2, 2, &[2.0, 20.0, 3.0, 30.0]));

        let same = align_panels(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(same.len(), 3);
        assert_eq!(same.k(), 2);

        let c = ReturnPanel::new(
            vec!["c".into()],
            idx(&[3, 9]),
            DMatrix::from_column_slice(2, 1, &[0.0, 0.0]),
        )
        .unwrap();
        let d = ReturnPanel::new(
            vec!["d".into()],
            idx(&[0, 3]),
            DMatrix::from_column_slice(2, 1, &[0.0, 0.0]),
        )
        .unwrap();
        assert_eq!(align_panels(&[a.clone(), c.clone(), d]).unwrap().len(), 1);

        let e = ReturnPanel::new(vec!["e".into()], idx(&[7]), DMatrix::from_column_slice(1, 1, &[0.0])).unwrap();
        assert!(matches!(align_panels(&[a, e]), Err(Error::EmptyIntersection)));
    }

    #[test]
    fn describe_gaussian_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let x = DMatrix::from_fn(10_000, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s = describe(&ReturnPanel::from_matrix(x).unwrap()).unwrap();
        let a = &s.assets[0];
        assert!(a.skewness.abs() < 0.08, "{}", a.skewness);
        assert!(a.excess_kurtosis.abs() < 0.15, "{}", a.excess_kurtosis);
        assert!(a.q12 >= 0.0);
    }

    #[test]
    fn describe_is_scale_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(500, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s1 = describe(&ReturnPanel::from_matrix(x.clone()).unwrap()).unwrap();
        let s2 = describe(&ReturnPanel::from_matrix(x * 10.0).unwrap()).unwrap();
        let (a, b) = (&s1.assets[0], &s2.assets[0]);
        assert!((a.skewness - b.skewness).abs() < 1e-12);
        assert!((a.excess_kurtosis - b.excess_kurtosis).abs() < 1e-12);
        assert!((a.q12 - b.q12).abs() < 1e-9);
        assert!((10.0 * a.mean - b.mean).abs() < 1e-12);
        assert!((10.0 * a.std_dev - b.std_dev).abs() < 1e-12);
    }

    #[test]
    fn describe_errors() {
        let constant = ReturnPanel::from_matrix(DMatrix::from_element(20, 1, 1.5)).unwrap();
        assert!(matches!(describe(&constant), Err(Error::DegenerateColumn(0))));
        let short = ReturnPanel::from_matrix(DMatrix::from_element(12, 1, 1.5)).unwrap();
        assert!(matches!(describe(&short), Err(Error::TooShort { .. })));
    }

    #[test]
    fn csv_parsing() {
        let text = "date,EU,JP\n1999-01-04,100,50\n1999-01-05,101,\n1999-01-06,99,51\n";
        let p = read_panel(text.as_bytes(), InputKind::Prices, MissingPolicy::DropRow).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.times()[0].to_string(), "1999-01-06");
        assert!((p.values()[(0, 0)] + 1.0).abs() < 1e-12);
        assert!((p.values()[(0, 1)] - 2.0).abs() < 1e-12);

        let err = read_panel(text.as_bytes(), InputKind::Returns, MissingPolicy::Reject).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");

        let bad = "t,a\n1,0.5\n2,abc\n";
        let err = read_panel(bad.as_bytes(), InputKind::Returns, MissingPolicy::Reject).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");

        let empty = "";
        assert!(matches!(
            read_panel(empty.as_bytes(), InputKind::Returns, MissingPolicy::Reject),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(30, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let p = ReturnPanel::from_matrix(x).unwrap();
        let mut buf = Vec::new();
        write_panel(&mut buf, &p).unwrap();
        let back = read_panel(buf.as_slice(), InputKind::Returns, MissingPolicy::Reject).unwrap();
        assert_eq!(back.values(), p.values());
        assert_eq!(back.times(), p.times());
        assert_eq!(back.assets(), &["A1", "A2", "A3"]);
    }
}
