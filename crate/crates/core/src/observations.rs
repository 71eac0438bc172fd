//! Point observations: domain labels and grade vectors tagged by period.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::GridSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub location: [f64; 3],
    /// Containing block, when the set is bound to a grid.
    pub block: Option<usize>,
    pub period: u32,
    /// Index into the owning set's domain list.
    pub domain: Option<usize>,
    /// One entry per variable; `None` for an empty cell.
    pub grades: Vec<Option<f64>>,
    pub error_sd: Vec<Option<f64>>,
}

impl Observation {
    /// All grades, if every variable is present.
    pub fn full_grades(&self) -> Option<Vec<f64>> {
        self.grades.iter().copied().collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservationSet {
    pub domains: Vec<String>,
    pub variables: Vec<String>,
    pub records: Vec<Observation>,
}

const FIXED_COLUMNS: [&str; 5] = ["x", "y", "z", "period", "domain"];

impl ObservationSet {
    pub fn new(domains: Vec<String>, variables: Vec<String>) -> Self {
        ObservationSet {
            domains,
            variables,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of periods, i.e. one past the largest period index.
    pub fn n_periods(&self) -> u32 {
        self.records.iter().map(|r| r.period + 1).max().unwrap_or(0)
    }

    fn filtered(&self, keep: impl Fn(&Observation) -> bool) -> ObservationSet {
        ObservationSet {
            domains: self.domains.clone(),
            variables: self.variables.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn period(&self, t: u32) -> ObservationSet {
        self.filtered(|r| r.period == t)
    }

    pub fn up_to(&self, t: u32) -> ObservationSet {
        self.filtered(|r| r.period <= t)
    }

    pub fn locations(&self) -> Vec<[f64; 3]> {
        self.records.iter().map(|r| r.location).collect()
    }

    /// Blocks of all records; fails if the set is not grid-bound.
    pub fn blocks(&self) -> Result<Vec<usize>> {
        self.records
            .iter()
            .map(|r| {
                r.block
                    .ok_or_else(|| Error::InvalidInput("observations are not bound to a grid".into()))
            })
            .collect()
    }

    /// Domain label index of every record; fails on an unlabelled record.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.domain
                    .ok_or_else(|| Error::InvalidInput(format!("observation {i} has no domain label")))
            })
            .collect()
    }

    pub fn domain_index(&self, label: &str) -> Option<usize> {
        self.domains.iter().position(|d| d == label)
    }

    /// Assigns blocks, rejecting records outside the grid, then merges records
    /// that share a (block, period).
    pub fn bind_to_grid(&mut self, grid: &GridSpec) -> Result<()> {
        for (i, r) in self.records.iter_mut().enumerate() {
            r.block = Some(grid.locate(r.location).ok_or_else(|| {
                Error::Data(format!(
                    "observation {i} at ({}, {}, {}) lies outside the grid",
                    r.location[0], r.location[1], r.location[2]
                ))
            })?);
        }
        self.upscale();
        Ok(())
    }

    /// Merges co-located records: grades and error SDs are averaged over the
    /// present values, the domain is a majority vote with ties going to the
    /// more abundant domain overall, then to the earlier domain in order.
    fn upscale(&mut self) {
        let mut abundance = vec![0usize; self.domains.len()];
        for r in &self.records {
            if let Some(d) = r.domain {
                abundance[d] += 1;
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut by_key: HashMap<(usize, u32), usize> = HashMap::new();
        for (i, r) in self.records.iter().enumerate() {
            let key = (r.block.expect("bound"), r.period);
            let g = *by_key.entry(key).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(i);
        }
        if groups.len() == self.records.len() {
            return;
        }
        let nv = self.variables.len();
        let merged = groups
            .iter()
            .map(|members| {
                let first = &self.records[members[0]];
                if members.len() == 1 {
                    return first.clone();
                }
                let k = members.len() as f64;
                let mut location = [0.0; 3];
                let mut votes = vec![0usize; self.domains.len()];
                for &m in members {
                    let r = &self.records[m];
                    for a in 0..3 {
                        location[a] += r.location[a] / k;
                    }
                    if let Some(d) = r.domain {
                        votes[d] += 1;
                    }
                }
                let domain = (0..self.domains.len())
                    .filter(|&d| votes[d] > 0)
                    .max_by(|&a, &b| {
                        (votes[a], abundance[a], std::cmp::Reverse(a))
                            .cmp(&(votes[b], abundance[b], std::cmp::Reverse(b)))
                    });
                let average = |pick: &dyn Fn(&Observation) -> Option<f64>| {
                    let vals: Vec<f64> = members.iter().filter_map(|&m| pick(&self.records[m])).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                };
                Observation {
                    location,
                    block: first.block,
                    period: first.period,
                    domain,
                    grades: (0..nv).map(|v| average(&|r| r.grades[v])).collect(),
                    error_sd: (0..nv).map(|v| average(&|r| r.error_sd[v])).collect(),
                }
            })
            .collect();
        self.records = merged;
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend(self.variables.iter().cloned());
        let with_err = self.records.iter().any(|r| r.error_sd.iter().any(Option::is_some));
        if with_err {
            header.extend(self.variables.iter().map(|v| format!("err_{v}")));
        }
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let mut row = vec![
                r.location[0].to_string(),
                r.location[1].to_string(),
                r.location[2].to_string(),
                r.period.to_string(),
                r.domain.map(|d| self.domains[d].clone()).unwrap_or_default(),
            ];
            row.extend(r.grades.iter().map(|&g| cell(g)));
            if with_err {
                row.extend(r.error_sd.iter().map(|&g| cell(g)));
            }
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Parses an observation CSV.
///
/// `domains` is the configured label list; unknown labels are rejected. When
/// `variables` is given the grade columns must match it exactly. When `grid`
/// is given, records are located and co-located duplicates merged.
pub fn load_observations(
    path: &Path,
    domains: &[String],
    variables: Option<&[String]>,
    grid: Option<&GridSpec>,
) -> Result<ObservationSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let row_err = |line: u64, message: String| Error::Row {
        path: path.to_path_buf(),
        line,
        message,
    };
    if header.len() < FIXED_COLUMNS.len() || header[..5] != FIXED_COLUMNS {
        return Err(row_err(
            1,
            format!("header must start with {}", FIXED_COLUMNS.join(",")),
        ));
    }
    let rest = &header[5..];
    let split = rest.iter().position(|h| h.starts_with("err_")).unwrap_or(rest.len());
    let vars: Vec<String> = rest[..split].to_vec();
    if let Some(expected) = variables {
        if vars != expected {
            return Err(row_err(
                1,
                format!("grade columns {vars:?} do not match configured variables {expected:?}"),
            ));
        }
    }
    // err_<var> columns map onto variable slots
    let mut err_slots = Vec::new();
    for h in &rest[split..] {
        let name = h.strip_prefix("err_").ok_or_else(|| {
            row_err(1, format!("column {h:?} after error columns must also be an err_ column"))
        })?;
        let slot = vars
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| row_err(1, format!("error column {h:?} names an unknown variable")))?;
        err_slots.push(slot);
    }

    let mut set = ObservationSet::new(domains.to_vec(), vars.clone());
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| row_err(line, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(row_err(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let num = |j: usize| -> Result<Option<f64>> {
            let s = &rec[j];
            if s.is_empty() {
                return Ok(None);
            }
            let v: f64 = s
                .parse()
                .map_err(|_| row_err(line, format!("column {:?}: {s:?} is not a number", header[j])))?;
            if !v.is_finite() {
                return Err(row_err(line, format!("column {:?}: non-finite value", header[j])));
            }
            Ok(Some(v))
        };
        let coord = |j: usize| -> Result<f64> {
            num(j)?.ok_or_else(|| row_err(line, format!("missing coordinate {:?}", header[j])))
        };
        let location = [coord(0)?, coord(1)?, coord(2)?];
        let period: u32 = rec[3]
            .parse()
            .map_err(|_| row_err(line, format!("period {:?} is not a non-negative integer", &rec[3])))?;
        let domain = match &rec[4] {
            "" => None,
            label => Some(
                domains
                    .iter()
                    .position(|d| d == label)
                    .ok_or_else(|| row_err(line, format!("unknown domain label {label:?}")))?,
            ),
        };
        let grades = (0..vars.len()).map(|v| num(5 + v)).collect::<Result<Vec<_>>>()?;
        let mut error_sd = vec![None; vars.len()];
        for (k, &slot) in err_slots.iter().enumerate() {
            let e = num(5 + vars.len() + k)?;
            if let Some(s) = e {
                if s < 0.0 {
                    return Err(row_err(line, "negative error standard deviation".into()));
                }
            }
            error_sd[slot] = e;
        }
        set.records.push(Observation {
            location,
            block: None,
            period,
            domain,
            grades,
            error_sd,
        });
    }
    if let Some(g) = grid {
        set.bind_to_grid(g)?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn domains() -> Vec<String> {
        ["VOLC", "HEM", "DOLM"].iter().map(|s| s.to_string()).collect()
    }

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_single_row() {
        let f = write("x,y,z,period,domain,Au,Cu,U\n10,10,350,0,HEM,0.5,0.9,80\n");
        let s = load_observations(f.path(), &domains(), None, None).unwrap();
        assert_eq!(s.len(), 1);
        let r = &s.records[0];
        assert_eq!(r.period, 0);
        assert_eq!(s.domains[r.domain.unwrap()], "HEM");
        assert_eq!(r.grades, vec![Some(0.5), Some(0.9), Some(80.0)]);
        assert_eq!(s.variables, vec!["Au", "Cu", "U"]);
    }

    #[test]
    fn averages_colocated_records() {
        let f = write("x,y,z,period,domain,Au\n1,1,1,0,HEM,1.0\n2,2,2,0,HEM,3.0\n");
        let g = GridSpec::new([2, 2, 2], [5.0; 3], [0.0; 3]).unwrap();
        let s = load_observations(f.path(), &domains(), None, Some(&g)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.records[0].grades, vec![Some(2.0)]);
        assert_eq!(s.records[0].block, Some(0));
    }

    #[test]
    fn majority_tie_goes_to_abundant_domain() {
        let f = write(
            "x,y,z,period,domain\n1,1,1,0,VOLC\n2,2,2,0,DOLM\n7,7,1,0,DOLM\n7,1,1,1,DOLM\n",
        );
        let g = GridSpec::new([2, 2, 1], [5.0; 3], [0.0; 3]).unwrap();
        let s = load_observations(f.path(), &domains(), None, Some(&g)).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.domains[s.records[0].domain.unwrap()], "DOLM");
    }

    #[test]
    fn unknown_label_reports_line() {
        let f = write("x,y,z,period,domain\n1,1,1,0,HEM\n1,1,1,0,XYZ\n");
        let err = load_observations(f.path(), &domains(), None, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("XYZ"), "{msg}");
    }

    #[test]
    fn malformed_row_and_outside_grid() {
        let f = write("x,y,z,period,domain\n1,abc,1,0,HEM\n");
        let msg = load_observations(f.path(), &domains(), None, None).unwrap_err().to_string();
        assert!(msg.contains("line 2"), "{msg}");
        let f = write("x,y,z,period,domain\n100,1,1,0,HEM\n");
        let g = GridSpec::new([2, 2, 1], [5.0; 3], [0.0; 3]).unwrap();
        assert!(load_observations(f.path(), &domains(), None, Some(&g)).is_err());
    }

    #[test]
    fn error_columns_and_empty_cells() {
        let f = write("x,y,z,period,domain,Au,Cu,err_Au\n1,1,1,2,,0.5,,0.01\n");
        let s = load_observations(f.path(), &domains(), None, None).unwrap();
        let r = &s.records[0];
        assert_eq!(r.domain, None);
        assert_eq!(r.grades, vec![Some(0.5), None]);
        assert_eq!(r.error_sd, vec![Some(0.01), None]);
        assert_eq!(s.n_periods(), 3);
    }

    #[test]
    fn csv_roundtrip() {
        let f = write("x,y,z,period,domain,Au,err_Au\n1,1,1,0,HEM,0.5,0.1\n3,4,5,1,VOLC,,\n");
        let s = load_observations(f.path(), &domains(), None, None).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        s.write_csv(out.path()).unwrap();
        let back = load_observations(out.path(), &domains(), None, None).unwrap();
        assert_eq!(back, s);
    }
}
