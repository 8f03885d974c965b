//! File formats: CSV datasets, JSON ordered-group documents, JSON reports,
//! and flat curve tables for plotting tools.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ContributorId, DataSource, Dataset, Instance, OrderedGroups, SourceId};
use crate::report::ValuationReport;
use crate::scenarios::CurveSeries;

/// Instances plus the source each row was filed under, before ownership is
/// known. Contributors default to the source ids until a groups document
/// supplies an ownership map.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub instances: Vec<Instance>,
    /// Source of each instance, aligned with `instances`.
    pub source_of: Vec<SourceId>,
}

impl RawDataset {
    /// Assemble a validated dataset, taking contributors from `ownership`
    /// where provided and falling back to one contributor per source.
    pub fn into_dataset(
        self,
        ownership: Option<&BTreeMap<SourceId, ContributorId>>,
    ) -> Result<Dataset> {
        let mut idxs_by_source: BTreeMap<SourceId, Vec<usize>> = BTreeMap::new();
        for (idx, source) in self.source_of.iter().enumerate() {
            idxs_by_source.entry(source.clone()).or_default().push(idx);
        }
        let sources = idxs_by_source
            .into_iter()
            .map(|(id, instance_idxs)| {
                let contributor = match ownership {
                    Some(map) => map
                        .get(&id)
                        .cloned()
                        .ok_or_else(|| Error::UnownedSource { id: id.0.clone() })?,
                    None => ContributorId(id.0.clone()),
                };
                Ok(DataSource {
                    id,
                    contributor,
                    instance_idxs,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.instances, sources)
    }
}

fn parse_err(reason: impl Into<String>) -> Error {
    Error::Parse {
        reason: reason.into(),
    }
}

fn from_csv(err: csv::Error) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => parse_err(format!("{other:?}")),
    }
}

/// Read a `instance_id,source_id,label,f1..fd` CSV file.
pub fn read_dataset_csv(path: &Path) -> Result<RawDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(from_csv)?;
    let headers = reader.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    if headers.len() < 4
        || headers.get(0) != Some("instance_id")
        || headers.get(1) != Some("source_id")
        || headers.get(2) != Some("label")
    {
        return Err(parse_err(format!(
            "expected header `instance_id,source_id,label,f1..fd`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    for (pos, name) in headers.iter().skip(3).enumerate() {
        let expected = format!("f{}", pos + 1);
        if name != expected {
            return Err(parse_err(format!(
                "feature column {} named `{name}`, expected `{expected}`",
                pos + 4
            )));
        }
    }
    let dim = headers.len() - 3;

    let mut instances = Vec::new();
    let mut source_of = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(parse_err(format!(
                "row {}: {} fields, expected {}",
                row + 2,
                record.len(),
                headers.len()
            )));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(parse_err(format!("row {}: empty instance id", row + 2)));
        }
        if !seen_ids.insert(id.clone()) {
            return Err(Error::InvalidDataset {
                reason: format!("duplicate instance id `{id}`"),
            });
        }
        let source = record[1].to_string();
        if source.is_empty() {
            return Err(Error::InvalidDataset {
                reason: format!("row {}: empty source id", row + 2),
            });
        }
        let features = record
            .iter()
            .skip(3)
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    parse_err(format!("row {}: feature `{field}` is not numeric", row + 2))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        debug_assert_eq!(features.len(), dim);
        instances.push(Instance {
            id,
            features,
            label: record[2].to_string(),
        });
        source_of.push(SourceId(source));
    }
    if instances.is_empty() {
        return Err(Error::InvalidDataset {
            reason: "dataset has no rows".into(),
        });
    }
    Ok(RawDataset {
        instances,
        source_of,
    })
}

/// Write a dataset back out in the same CSV layout.
pub fn write_dataset_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(from_csv)?;
    let dim = dataset.feature_dim();
    let mut header = vec!["instance_id".to_string(), "source_id".into(), "label".into()];
    header.extend((1..=dim).map(|i| format!("f{i}")));
    writer
        .write_record(&header)
        .map_err(|e| parse_err(e.to_string()))?;
    for source in dataset.sources() {
        for &idx in &source.instance_idxs {
            let inst = dataset.instance(idx);
            let mut row = vec![inst.id.clone(), source.id.0.clone(), inst.label.clone()];
            row.extend(inst.features.iter().map(|f| format!("{f:?}")));
            writer
                .write_record(&row)
                .map_err(|e| parse_err(e.to_string()))?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// JSON document describing the ordered groups and source ownership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupsFile {
    pub groups: Vec<GroupEntry>,
    pub ownership: Vec<OwnershipEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    /// 1-based precedence position of the group.
    pub index: usize,
    pub source_ids: Vec<SourceId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwnershipEntry {
    pub source_id: SourceId,
    pub contributor_id: ContributorId,
}

impl GroupsFile {
    pub fn ownership_map(&self) -> BTreeMap<SourceId, ContributorId> {
        self.ownership
            .iter()
            .map(|e| (e.source_id.clone(), e.contributor_id.clone()))
            .collect()
    }

    /// Groups in precedence order, after checking the indexes form 1..=T.
    pub fn ordered_source_ids(&self) -> Result<Vec<Vec<SourceId>>> {
        let mut entries = self.groups.clone();
        entries.sort_by_key(|e| e.index);
        for (pos, entry) in entries.iter().enumerate() {
            if entry.index != pos + 1 {
                return Err(Error::IndexOutOfRange {
                    index: entry.index,
                    max: self.groups.len(),
                });
            }
        }
        Ok(entries.into_iter().map(|e| e.source_ids).collect())
    }

    pub fn to_ordered_groups(&self, dataset: &Dataset) -> Result<OrderedGroups> {
        OrderedGroups::validate(self.ordered_source_ids()?, dataset)
    }

    /// Describe an existing grouping, with ownership read off the dataset.
    pub fn describe(groups: &OrderedGroups, dataset: &Dataset) -> Self {
        GroupsFile {
            groups: groups
                .groups()
                .iter()
                .enumerate()
                .map(|(t, members)| GroupEntry {
                    index: t + 1,
                    source_ids: members.iter().cloned().collect(),
                })
                .collect(),
            ownership: dataset
                .ownership()
                .into_iter()
                .map(|(source_id, contributor_id)| OwnershipEntry {
                    source_id,
                    contributor_id,
                })
                .collect(),
        }
    }
}

pub fn read_groups_json(path: &Path) -> Result<GroupsFile> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))
}

pub fn write_groups_json(path: &Path, groups: &GroupsFile) -> Result<()> {
    write_json(path, groups)
}

pub fn read_report_json(path: &Path) -> Result<ValuationReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))
}

pub fn write_report_json(path: &Path, report: &ValuationReport) -> Result<()> {
    write_json(path, report)
}

pub fn write_curves_json(path: &Path, curves: &[CurveSeries]) -> Result<()> {
    write_json(path, &curves)
}

/// Flat `method,x,y,ci` table, one row per curve point, for plotting tools
/// that do not read the JSON form.
pub fn write_curve_table(path: &Path, curves: &[CurveSeries]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "method,x,y,ci")?;
    for curve in curves {
        for i in 0..curve.x.len() {
            writeln!(
                file,
                "{},{:?},{:?},{:?}",
                curve.method, curve.x[i], curve.y[i], curve.ci[i]
            )?;
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    // serde_json prints f64 via the shortest round-tripping decimal, so
    // parse(serialize(x)) == x bit for bit
    let text = serde_json::to_string_pretty(value).map_err(|e| parse_err(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("ads-io-{}-{name}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn sample_csv() -> &'static str {
        "instance_id,source_id,label,f1,f2\n\
         a,src1,pos,0.25,1.5\n\
         b,src1,neg,0.5,-2.0\n\
         c,src2,pos,0.1,0.3333333333333333\n"
    }

    #[test]
    fn csv_round_trip() {
        let path = temp_path("round.csv");
        std::fs::write(&path, sample_csv()).unwrap();
        let raw = read_dataset_csv(&path).unwrap();
        assert_eq!(raw.instances.len(), 3);
        assert_eq!(raw.source_of[1], SourceId::from("src1"));
        let dataset = raw.into_dataset(None).unwrap();
        assert_eq!(dataset.num_sources(), 2);

        let out = temp_path("round-out.csv");
        write_dataset_csv(&out, &dataset).unwrap();
        let again = read_dataset_csv(&out).unwrap().into_dataset(None).unwrap();
        assert_eq!(dataset.instance(2).features, again.instance(2).features);
    }

    #[test]
    fn csv_rejects_bad_shapes() {
        let path = temp_path("bad.csv");
        std::fs::write(&path, "id,source_id,label,f1\na,s,pos,1\n").unwrap();
        assert!(matches!(
            read_dataset_csv(&path),
            Err(Error::Parse { .. })
        ));

        std::fs::write(
            &path,
            "instance_id,source_id,label,f1\na,s,pos,1\na,s,neg,2\n",
        )
        .unwrap();
        assert!(matches!(
            read_dataset_csv(&path),
            Err(Error::InvalidDataset { .. })
        ));

        std::fs::write(&path, "instance_id,source_id,label,f1\na,s,pos,zap\n").unwrap();
        assert!(matches!(
            read_dataset_csv(&path),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn groups_json_round_trip_and_validation() {
        let path = temp_path("groups.json");
        let csv_path = temp_path("groups-data.csv");
        std::fs::write(&csv_path, sample_csv()).unwrap();
        let file = GroupsFile {
            groups: vec![
                GroupEntry {
                    index: 2,
                    source_ids: vec![SourceId::from("src2")],
                },
                GroupEntry {
                    index: 1,
                    source_ids: vec![SourceId::from("src1")],
                },
            ],
            ownership: vec![
                OwnershipEntry {
                    source_id: SourceId::from("src1"),
                    contributor_id: ContributorId::from("alice"),
                },
                OwnershipEntry {
                    source_id: SourceId::from("src2"),
                    contributor_id: ContributorId::from("bob"),
                },
            ],
        };
        write_groups_json(&path, &file).unwrap();
        let parsed = read_groups_json(&path).unwrap();
        assert_eq!(parsed, file);

        let dataset = read_dataset_csv(&csv_path)
            .unwrap()
            .into_dataset(Some(&parsed.ownership_map()))
            .unwrap();
        let groups = parsed.to_ordered_groups(&dataset).unwrap();
        assert_eq!(groups.num_groups(), 2);
        assert_eq!(groups.group_index(&SourceId::from("src1")), Some(0));

        let described = GroupsFile::describe(&groups, &dataset);
        assert_eq!(described.ordered_source_ids().unwrap().len(), 2);
        assert_eq!(
            described.ownership_map()[&SourceId::from("src2")],
            ContributorId::from("bob")
        );
    }

    #[test]
    fn groups_json_rejects_gapped_indexes() {
        let file = GroupsFile {
            groups: vec![GroupEntry {
                index: 2,
                source_ids: vec![SourceId::from("src1")],
            }],
            ownership: vec![],
        };
        assert!(matches!(
            file.ordered_source_ids(),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn report_json_round_trips_awkward_floats() {
        use crate::report::ReportMetadata;
        let mut per_source = BTreeMap::new();
        per_source.insert(SourceId::from("a"), 1.0 / 3.0);
        per_source.insert(SourceId::from("b"), 0.1 + 0.2);
        per_source.insert(SourceId::from("c"), f64::MIN_POSITIVE);
        let report = ValuationReport {
            method: "exact-subset".into(),
            per_source,
            per_contributor: BTreeMap::new(),
            group_residuals: vec![1e-17, -3.141592653589793e-5],
            metadata: ReportMetadata::default(),
        };
        let path = temp_path("report.json");
        write_report_json(&path, &report).unwrap();
        let parsed = read_report_json(&path).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn curve_table_layout() {
        let curves = vec![CurveSeries {
            method: "remove-lowest".into(),
            x: vec![0.0, 0.05],
            y: vec![1.0, 0.9666666666666667],
            ci: vec![0.0, 0.01],
        }];
        let path = temp_path("curves.csv");
        write_curve_table(&path, &curves).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "method,x,y,ci");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("remove-lowest,0.05,0.9666666666666667,"));

        let json_path = temp_path("curves.json");
        write_curves_json(&json_path, &curves).unwrap();
        let parsed: Vec<CurveSeries> =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(parsed, curves);
    }
}
