//! Station records: daily CSV parsing, monthly block maxima, dataset
//! assembly, and the long-format dataset CSV shared with simulation exports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::Point;

pub const EARTH_RADIUS_KM: f64 = 6371.0088;
pub const DEFAULT_MIN_DAYS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    Prcp,
    Tavg,
    Other(String),
}

impl Element {
    pub fn parse(s: &str) -> Self {
        match s.trim().to_ascii_uppercase().as_str() {
            "PRCP" => Element::Prcp,
            "TAVG" => Element::Tavg,
            other => Element::Other(other.to_string()),
        }
    }

    /// Archive values are tenths of mm (PRCP) or tenths of °C (TAVG).
    pub fn to_physical(&self, raw: i64) -> f64 {
        match self {
            Element::Prcp | Element::Tavg => raw as f64 / 10.0,
            Element::Other(_) => raw as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub station: String,
    pub lat: f64,
    pub lon: f64,
    pub date: NaiveDate,
    pub element: Element,
    pub value: i64,
    pub qflag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MalformedRow {
    /// 1-based line number, header included.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParseReport {
    pub records: Vec<DailyRecord>,
    pub flagged_dropped: usize,
    pub malformed: Vec<MalformedRow>,
}

const DAILY_HEADER: [&str; 6] = ["station", "lat", "lon", "date", "element", "value"];

fn parse_row(row: &csv::StringRecord) -> std::result::Result<DailyRecord, String> {
    if row.len() < 6 || row.len() > 7 {
        return Err(format!("expected 6 or 7 fields, found {}", row.len()));
    }
    let num = |i: usize, name: &str| row[i].trim().parse::<f64>().map_err(|_| format!("bad {name} {:?}", &row[i]));
    let lat = num(1, "lat")?;
    let lon = num(2, "lon")?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(format!("lat {lat} outside [-90, 90]"));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(format!("lon {lon} outside [-180, 180]"));
    }
    let date = NaiveDate::parse_from_str(row[3].trim(), "%Y-%m-%d").map_err(|_| format!("bad date {:?}", &row[3]))?;
    let value = row[5].trim().parse::<i64>().map_err(|_| format!("bad value {:?}", &row[5]))?;
    let station = row[0].trim().to_string();
    if station.is_empty() {
        return Err("empty station id".into());
    }
    let qflag = row.get(6).map(str::trim).filter(|q| !q.is_empty()).map(str::to_string);
    Ok(DailyRecord { station, lat, lon, date, element: Element::parse(&row[4]), value, qflag })
}

/// Parses a daily CSV with header `station,lat,lon,date,element,value[,qflag]`.
/// Quality-flagged rows are dropped; malformed rows are reported unless they
/// exceed half of all data rows.
pub fn parse_daily_csv(path: &Path) -> Result<ParseReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_daily_reader(file, path)
}

pub fn parse_daily_reader<R: std::io::Read>(reader: R, path: &Path) -> Result<ParseReport> {
    let parse_err = |message: String| Error::Parse { path: path.into(), message };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    let names: Vec<String> = header.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    let ok = names.len() >= 6 && names[..6] == DAILY_HEADER && (names.len() == 6 || (names.len() == 7 && names[6] == "qflag"));
    if !ok {
        return Err(parse_err(format!("header must be station,lat,lon,date,element,value[,qflag], found {}", names.join(","))));
    }
    let mut report = ParseReport::default();
    let mut rows = 0usize;
    for (k, row) in rdr.records().enumerate() {
        rows += 1;
        let line = k + 2;
        match row.map_err(|e| e.to_string()).and_then(|r| parse_row(&r)) {
            Ok(rec) if rec.qflag.is_some() => report.flagged_dropped += 1,
            Ok(rec) => report.records.push(rec),
            Err(message) => report.malformed.push(MalformedRow { line, message }),
        }
    }
    if 2 * report.malformed.len() > rows {
        return Err(parse_err(format!("{} of {} rows malformed", report.malformed.len(), rows)));
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Self {
        Self { year, month }
    }

    pub fn of(date: NaiveDate) -> Self {
        Self { year: date.year(), month: date.month() }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMaximaSeries {
    pub station: String,
    pub lat: f64,
    pub lon: f64,
    pub months: Vec<YearMonth>,
    /// Monthly maxima in physical units.
    pub maxima: Vec<f64>,
    pub days: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockMaximaOutput {
    pub series: Vec<BlockMaximaSeries>,
    /// Station-day rows that repeated an earlier row; the larger value is kept.
    pub duplicates: usize,
}

/// Monthly maxima per station for one element, keeping months with at least
/// `min_days` distinct observed days. Output is sorted by station.
pub fn block_maxima(records: &[DailyRecord], element: &Element, min_days: usize) -> BlockMaximaOutput {
    let mut daily: BTreeMap<&str, BTreeMap<NaiveDate, i64>> = BTreeMap::new();
    let mut coords: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    let mut duplicates = 0;
    for r in records.iter().filter(|r| &r.element == element) {
        let days = daily.entry(&r.station).or_default();
        match days.get_mut(&r.date) {
            Some(v) => {
                duplicates += 1;
                *v = (*v).max(r.value);
            }
            None => {
                days.insert(r.date, r.value);
            }
        }
        let c = coords.entry(&r.station).or_insert((r.lat, r.lon));
        if (r.lat, r.lon) < *c {
            *c = (r.lat, r.lon);
        }
    }
    let series = daily
        .into_iter()
        .filter_map(|(station, days)| {
            let mut months: BTreeMap<YearMonth, (i64, usize)> = BTreeMap::new();
            for (date, v) in days {
                let e = months.entry(YearMonth::of(date)).or_insert((v, 0));
                e.0 = e.0.max(v);
                e.1 += 1;
            }
            let kept: Vec<_> = months.into_iter().filter(|(_, (_, n))| *n >= min_days).collect();
            if kept.is_empty() {
                return None;
            }
            let (lat, lon) = coords[station];
            Some(BlockMaximaSeries {
                station: station.to_string(),
                lat,
                lon,
                months: kept.iter().map(|(m, _)| *m).collect(),
                maxima: kept.iter().map(|(_, (v, _))| element.to_physical(*v)).collect(),
                days: kept.iter().map(|(_, (_, n))| *n).collect(),
            })
        })
        .collect();
    BlockMaximaOutput { series, duplicates }
}

/// Equirectangular projection about a fixed origin, in kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalProjection {
    pub lat0: f64,
    pub lon0: f64,
}

impl LocalProjection {
    pub fn centroid(coords: &[(f64, f64)]) -> Self {
        let n = coords.len().max(1) as f64;
        Self {
            lat0: coords.iter().map(|c| c.0).sum::<f64>() / n,
            lon0: coords.iter().map(|c| c.1).sum::<f64>() / n,
        }
    }

    pub fn forward(&self, lat: f64, lon: f64) -> Point {
        let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        [k * (lon - self.lon0) * self.lat0.to_radians().cos(), k * (lat - self.lat0)]
    }

    pub fn inverse(&self, p: Point) -> (f64, f64) {
        let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        (self.lat0 + p[1] / k, self.lon0 + p[0] / (k * self.lat0.to_radians().cos()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledDataset {
    pub dataset: Dataset,
    pub months: Vec<YearMonth>,
    pub stations1: Vec<String>,
    pub stations2: Vec<String>,
    pub projection: LocalProjection,
}

/// Aligns two station networks on a common month axis. Months outside the
/// inclusive `month_range` are discarded; stations left without data are
/// dropped.
pub fn assemble_dataset(
    series1: &[BlockMaximaSeries],
    series2: &[BlockMaximaSeries],
    month_range: Option<(YearMonth, YearMonth)>,
) -> Result<AssembledDataset> {
    let inside = |m: &YearMonth| month_range.is_none_or(|(lo, hi)| lo <= *m && *m <= hi);
    let keep = |all: &[BlockMaximaSeries]| -> Vec<BlockMaximaSeries> {
        all.iter()
            .filter_map(|s| {
                let idx: Vec<usize> = (0..s.months.len()).filter(|&i| inside(&s.months[i])).collect();
                (!idx.is_empty()).then(|| BlockMaximaSeries {
                    months: idx.iter().map(|&i| s.months[i]).collect(),
                    maxima: idx.iter().map(|&i| s.maxima[i]).collect(),
                    days: idx.iter().map(|&i| s.days[i]).collect(),
                    ..s.clone()
                })
            })
            .collect()
    };
    let (s1, s2) = (keep(series1), keep(series2));
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::EmptyAfterFilter("a process has no station with data in the month range".into()));
    }
    let months_of = |s: &[BlockMaximaSeries]| s.iter().flat_map(|x| x.months.iter().copied()).collect::<BTreeSet<_>>();
    let (m1, m2) = (months_of(&s1), months_of(&s2));
    if m1.intersection(&m2).next().is_none() {
        return Err(Error::EmptyAfterFilter("the two processes share no observed month".into()));
    }
    let months: Vec<YearMonth> = m1.union(&m2).copied().collect();
    let coords: Vec<(f64, f64)> = s1.iter().chain(&s2).map(|s| (s.lat, s.lon)).collect();
    let projection = LocalProjection::centroid(&coords);
    let rows = |s: &[BlockMaximaSeries]| -> Vec<Vec<Option<f64>>> {
        s.iter()
            .map(|x| {
                let by: BTreeMap<_, _> = x.months.iter().zip(&x.maxima).collect();
                months.iter().map(|m| by.get(m).map(|v| **v)).collect()
            })
            .collect()
    };
    let dataset = Dataset::new(
        s1.iter().map(|s| projection.forward(s.lat, s.lon)).collect(),
        s2.iter().map(|s| projection.forward(s.lat, s.lon)).collect(),
        rows(&s1),
        rows(&s2),
    )?;
    Ok(AssembledDataset {
        dataset,
        months,
        stations1: s1.into_iter().map(|s| s.station).collect(),
        stations2: s2.into_iter().map(|s| s.station).collect(),
        projection,
    })
}

pub const DATASET_HEADER: &str = "process,site,x,y,replicate,value";

/// Long format: one row per (process, site, replicate); missing values are
/// empty. Floats are written in shortest round-trip form.
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{DATASET_HEADER}").map_err(io)?;
    for (p, (locs, obs)) in [(&data.locations1, &data.obs1), (&data.locations2, &data.obs2)].into_iter().enumerate() {
        for (site, (loc, row)) in locs.iter().zip(obs.iter()).enumerate() {
            for (rep, v) in row.iter().enumerate() {
                let value = v.map(|v| format!("{v:?}")).unwrap_or_default();
                writeln!(w, "{},{},{:?},{:?},{},{}", p + 1, site, loc[0], loc[1], rep, value).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let perr = |message: String| Error::Parse { path: path.into(), message };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| perr(e.to_string()))?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.join(",") != DATASET_HEADER {
        return Err(perr(format!("expected header {DATASET_HEADER}, found {}", header.join(","))));
    }
    // (process, site) -> (location, replicate -> value)
    type SiteRows = BTreeMap<usize, (Point, BTreeMap<usize, Option<f64>>)>;
    let mut procs: [SiteRows; 2] = Default::default();
    for (k, row) in rdr.records().enumerate() {
        let row = row?;
        let line = k + 2;
        let bad = |what: &str| perr(format!("line {line}: bad {what}"));
        if row.len() != 6 {
            return Err(bad("field count"));
        }
        let process: usize = row[0].trim().parse().map_err(|_| bad("process"))?;
        if !(1..=2).contains(&process) {
            return Err(bad("process"));
        }
        let site: usize = row[1].trim().parse().map_err(|_| bad("site"))?;
        let x: f64 = row[2].trim().parse().map_err(|_| bad("x"))?;
        let y: f64 = row[3].trim().parse().map_err(|_| bad("y"))?;
        let rep: usize = row[4].trim().parse().map_err(|_| bad("replicate"))?;
        let value = match row[5].trim() {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|_| bad("value"))?),
        };
        let entry = procs[process - 1].entry(site).or_insert(([x, y], BTreeMap::new()));
        if entry.0 != [x, y] {
            return Err(perr(format!("line {line}: site {site} of process {process} changes location")));
        }
        if entry.1.insert(rep, value).is_some() {
            return Err(perr(format!("line {line}: duplicate replicate {rep}")));
        }
    }
    let mut out: [(Vec<Point>, Vec<Vec<Option<f64>>>); 2] = Default::default();
    for (p, sites) in procs.into_iter().enumerate() {
        if sites.keys().enumerate().any(|(i, s)| i != *s) {
            return Err(perr(format!("process {} site indices are not contiguous from 0", p + 1)));
        }
        let t = sites.values().flat_map(|(_, r)| r.keys().map(|k| k + 1)).max().unwrap_or(0);
        for (loc, reps) in sites.into_values() {
            out[p].0.push(loc);
            out[p].1.push((0..t).map(|j| reps.get(&j).copied().flatten()).collect());
        }
    }
    let [(l1, o1), (l2, o2)] = out;
    Dataset::new(l1, l2, o1, o2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(station: &str, date: &str, value: i64) -> DailyRecord {
        DailyRecord {
            station: station.into(),
            lat: 33.0,
            lon: -84.0,
            date: NaiveDate::parse_from_str(date, "%Y-%m-%d").unwrap(),
            element: Element::Prcp,
            value,
            qflag: None,
        }
    }

    fn parse_str(text: &str) -> Result<ParseReport> {
        parse_daily_reader(text.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn empty_file_with_header() {
        let r = parse_str("station,lat,lon,date,element,value,qflag\n").unwrap();
        assert!(r.records.is_empty() && r.malformed.is_empty());
        assert_eq!(r.flagged_dropped, 0);
    }

    #[test]
    fn six_row_fixture() {
        let text = "station,lat,lon,date,element,value,qflag\n\
                    USW1,33.6,-84.4,2020-01-01,PRCP,125,\n\
                    USW1,33.6,-84.4,2020-01-02,PRCP,0,X\n\
                    USW1,33.6,-84.4,2020-01-03,TAVG,-15,\n\
                    USW2,95.0,-84.4,2020-01-01,PRCP,3,\n\
                    USW2,34.1,-83.9,2020-13-01,PRCP,3,\n\
                    USW2,34.1,-83.9,2020-01-04,SNOW,7,\n";
        let r = parse_str(text).unwrap();
        assert_eq!(r.flagged_dropped, 1);
        assert_eq!(r.malformed.iter().map(|m| m.line).collect::<Vec<_>>(), vec![5, 6]);
        let want = vec![
            DailyRecord { station: "USW1".into(), lat: 33.6, lon: -84.4, date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), element: Element::Prcp, value: 125, qflag: None },
            DailyRecord { station: "USW1".into(), lat: 33.6, lon: -84.4, date: NaiveDate::from_ymd_opt(2020, 1, 3).unwrap(), element: Element::Tavg, value: -15, qflag: None },
            DailyRecord { station: "USW2".into(), lat: 34.1, lon: -83.9, date: NaiveDate::from_ymd_opt(2020, 1, 4).unwrap(), element: Element::Other("SNOW".into()), value: 7, qflag: None },
        ];
        assert_eq!(r.records, want);
    }

    #[test]
    fn mostly_malformed_is_fatal() {
        let text = "station,lat,lon,date,element,value\nA,1,1,bad,PRCP,1\nA,1,1,bad,PRCP,1\nA,1,1,2020-01-01,PRCP,1\n";
        assert!(matches!(parse_str(text), Err(Error::Parse { .. })));
        assert!(parse_str("id,lat\n").is_err());
    }

    #[test]
    fn january_maximum() {
        let recs: Vec<_> = (1..=31).map(|d| rec("S", &format!("2021-01-{d:02}"), d)).collect();
        let out = block_maxima(&recs, &Element::Prcp, 20);
        assert_eq!(out.series.len(), 1);
        assert_eq!(out.series[0].maxima, vec![3.1]);
        assert_eq!(out.series[0].days, vec![31]);
    }

    #[test]
    fn sparse_month_omitted() {
        let mut recs: Vec<_> = (1..=3).map(|d| rec("S", &format!("2021-02-{d:02}"), 50)).collect();
        assert!(block_maxima(&recs, &Element::Prcp, 20).series.is_empty());
        recs.extend((1..=25).map(|d| rec("S", &format!("2021-03-{d:02}"), d)));
        let out = block_maxima(&recs, &Element::Prcp, 20);
        assert_eq!(out.series[0].months, vec![YearMonth::new(2021, 3)]);
    }

    #[test]
    fn duplicates_keep_maximum() {
        let mut recs: Vec<_> = (1..=20).map(|d| rec("S", &format!("2021-05-{d:02}"), 1)).collect();
        recs.push(rec("S", "2021-05-03", 99));
        recs.push(rec("S", "2021-05-03", 7));
        let out = block_maxima(&recs, &Element::Prcp, 20);
        assert_eq!(out.duplicates, 2);
        assert_eq!(out.series[0].maxima, vec![9.9]);
        assert_eq!(out.series[0].days, vec![20]);
    }

    fn year_fixture() -> Vec<DailyRecord> {
        let mut v = Vec::new();
        for (s, off) in [("A", 0i64), ("B", 1000)] {
            let mut d = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
            let mut k = 0i64;
            while d.year() == 2019 {
                // every 7th day missing at station B
                if !(s == "B" && k % 7 == 0) {
                    v.push(DailyRecord { date: d, ..rec(s, "2019-01-01", (k * 37 + off) % 503) });
                }
                d = d.succ_opt().unwrap();
                k += 1;
            }
        }
        v
    }

    #[test]
    fn year_fixture_matches_group_by() {
        let recs = year_fixture();
        let out = block_maxima(&recs, &Element::Prcp, 20);
        for s in &out.series {
            for (i, m) in s.months.iter().enumerate() {
                let vals: Vec<i64> = recs.iter().filter(|r| r.station == s.station && YearMonth::of(r.date) == *m).map(|r| r.value).collect();
                assert_eq!(s.days[i], vals.len());
                assert_eq!(s.maxima[i], *vals.iter().max().unwrap() as f64 / 10.0);
            }
        }
        assert_eq!(out.series.iter().map(|s| s.months.len()).sum::<usize>(), 24);
    }

    fn series(station: &str, lat: f64, lon: f64, months: &[(i32, u32)]) -> BlockMaximaSeries {
        BlockMaximaSeries {
            station: station.into(),
            lat,
            lon,
            months: months.iter().map(|&(y, m)| YearMonth::new(y, m)).collect(),
            maxima: months.iter().map(|&(_, m)| m as f64).collect(),
            days: vec![30; months.len()],
        }
    }

    #[test]
    fn single_station_each() {
        let months: Vec<(i32, u32)> = (1..=12).map(|m| (2020, m)).collect();
        let a = assemble_dataset(&[series("P", 33.0, -84.0, &months)], &[series("T", 34.0, -83.0, &months)], None).unwrap();
        assert_eq!((a.dataset.n(), a.dataset.m()), (1, 1));
        assert_eq!(a.dataset.obs1[0].len(), 12);
        assert_eq!(a.months.len(), 12);
    }

    #[test]
    fn disjoint_months_rejected() {
        let a = series("P", 33.0, -84.0, &[(2020, 1), (2020, 2)]);
        let b = series("T", 34.0, -83.0, &[(2021, 1)]);
        assert!(matches!(assemble_dataset(&[a.clone()], &[b.clone()], None), Err(Error::EmptyAfterFilter(_))));
        let range = Some((YearMonth::new(2022, 1), YearMonth::new(2022, 12)));
        assert!(matches!(assemble_dataset(&[a], &[b], range), Err(Error::EmptyAfterFilter(_))));
    }

    #[test]
    fn southeast_fixture_projection() {
        let stations = [
            (33.64, -84.43), (35.22, -80.94), (30.49, -86.52), (32.13, -81.20),
            (36.12, -86.68), (30.39, -84.35), (34.90, -82.22), (31.53, -84.19),
        ];
        let months = [(2020, 6), (2020, 7)];
        let s: Vec<_> = stations.iter().enumerate().map(|(i, &(la, lo))| series(&format!("S{i}"), la, lo, &months)).collect();
        let a = assemble_dataset(&s[..5], &s[5..], None).unwrap();
        let lat0 = stations.iter().map(|s| s.0).sum::<f64>() / 8.0;
        let lon0 = stations.iter().map(|s| s.1).sum::<f64>() / 8.0;
        for (p, &(la, lo)) in a.dataset.locations1.iter().chain(&a.dataset.locations2).zip(&stations) {
            assert!(p[0].abs() <= 1000.0 && p[1].abs() <= 1000.0);
            // one degree of latitude is 111.195 km on the mean sphere
            assert!((p[1] - (la - lat0) * 111.19508).abs() < 1e-3);
            assert!((p[0] - (lo - lon0) * 111.19508 * lat0.to_radians().cos()).abs() < 1e-3);
        }
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let data = Dataset::new(
            vec![[0.1, 0.2], [1.0 / 3.0, 4.5]],
            vec![[2.0, 2.0]],
            vec![vec![Some(1.0 / 7.0), None], vec![Some(-2.5e-17), Some(1e300)]],
            vec![vec![None, Some(std::f64::consts::PI)]],
        )
        .unwrap();
        write_dataset_csv(&data, &path).unwrap();
        assert_eq!(read_dataset_csv(&path).unwrap(), data);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(DATASET_HEADER));
    }

    proptest! {
        #[test]
        fn block_maxima_order_invariant(seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut recs = year_fixture();
            recs.push(rec("A", "2019-03-05", 4000));
            let base = block_maxima(&recs, &Element::Prcp, 20);
            recs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(block_maxima(&recs, &Element::Prcp, 20), base);
        }

        #[test]
        fn no_synthesis(values in proptest::collection::vec(-500i64..5000, 25..90), min_days in 1usize..25) {
            let recs: Vec<_> = values.iter().enumerate().map(|(i, &v)| {
                let d = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap() + chrono::Days::new(i as u64);
                DailyRecord { date: d, ..rec("S", "2018-01-01", v) }
            }).collect();
            for s in block_maxima(&recs, &Element::Prcp, min_days).series {
                for (m, x) in s.months.iter().zip(&s.maxima) {
                    prop_assert!(recs.iter().any(|r| YearMonth::of(r.date) == *m && r.value as f64 / 10.0 == *x));
                }
            }
        }

        #[test]
        fn projection_roundtrip(lat0 in -60.0f64..60.0, lon0 in -170.0f64..170.0, dlat in -8.0f64..8.0, dlon in -8.0f64..8.0) {
            let proj = LocalProjection { lat0, lon0 };
            let (la, lo) = proj.inverse(proj.forward(lat0 + dlat, lon0 + dlon));
            prop_assert!((la - lat0 - dlat).abs() < 1e-9);
            prop_assert!((lo - lon0 - dlon).abs() < 1e-9);
        }
    }
}
