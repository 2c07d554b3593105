//! Plot-data bundle: tidy CSV series assembled from sweep CSVs, metrics CSVs
//! and spectrum JSONs. No rendering happens here.

use std::collections::BTreeSet;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::spectra::SpectrumReport;
use crate::trainer::{MetricsRecord, SweepCell, METRICS_COLUMNS, SWEEP_COLUMNS};

pub const NMSE_VS_PARAMS: &str = "nmse_vs_params.csv";
pub const DEAD_VS_PARAMS: &str = "dead_vs_params.csv";
pub const NMSE_VS_ALIVE_PARAMS: &str = "nmse_vs_alive_params.csv";
pub const SPECTRUM_CURVES: &str = "spectrum_curves.csv";
pub const INTRINSIC_DIM_VS_LAYER: &str = "intrinsic_dim_vs_layer.csv";
pub const TRAINING_CURVES: &str = "training_curves.csv";

/// Named inputs; names label rows in the output.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub sweeps: Vec<(String, Vec<SweepCell>)>,
    pub metrics: Vec<(String, Vec<MetricsRecord>)>,
    pub spectra: Vec<(String, SpectrumReport)>,
}

/// Output file name and CSV contents.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotFile {
    pub name: &'static str,
    pub contents: String,
    pub rows: usize,
}

fn source_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Compares a CSV header against the expected column set.
pub fn check_columns(source: &str, header: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let have: BTreeSet<&str> = header.iter().collect();
    let want: BTreeSet<&str> = expected.iter().copied().collect();
    if have == want {
        return Ok(());
    }
    Err(Error::Schema {
        source_name: source.to_string(),
        missing: want.difference(&have).map(|s| s.to_string()).collect(),
        extra: have.difference(&want).map(|s| s.to_string()).collect(),
    })
}

fn read_checked<T: serde::de::DeserializeOwned, R: Read>(
    source: &str,
    reader: R,
    expected: &[&str],
) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_columns(source, rdr.headers()?, expected)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn load_sweep_csv(path: &Path) -> Result<(String, Vec<SweepCell>)> {
    let name = source_name(path);
    let cells = read_checked(&name, fs::File::open(path)?, &SWEEP_COLUMNS)?;
    Ok((name, cells))
}

pub fn load_metrics_csv(path: &Path) -> Result<(String, Vec<MetricsRecord>)> {
    let name = source_name(path);
    let records = read_checked(&name, fs::File::open(path)?, &METRICS_COLUMNS)?;
    Ok((name, records))
}

pub fn load_spectrum_json(path: &Path) -> Result<(String, SpectrumReport)> {
    let report = SpectrumReport::from_json(&fs::read_to_string(path)?)?;
    Ok((source_name(path), report))
}

struct Table {
    name: &'static str,
    out: csv::Writer<Vec<u8>>,
    rows: usize,
}

impl Table {
    fn new(name: &'static str, header: &[&str]) -> Result<Self> {
        let mut out = csv::Writer::from_writer(Vec::new());
        out.write_record(header)?;
        Ok(Self { name, out, rows: 0 })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        self.out.write_record(fields)?;
        self.rows += 1;
        Ok(())
    }

    fn finish(self) -> Result<PlotFile> {
        let bytes = self
            .out
            .into_inner()
            .map_err(|e| Error::Io(e.into_error()))?;
        Ok(PlotFile {
            name: self.name,
            contents: String::from_utf8(bytes).expect("csv output is UTF-8"),
            rows: self.rows,
        })
    }
}

/// Builds every series the inputs support. With several sweeps the variant
/// column is prefixed by the sweep name so rows stay distinguishable.
pub fn build_report(inputs: &ReportInputs) -> Result<Vec<PlotFile>> {
    let mut files = Vec::new();
    if !inputs.sweeps.is_empty() {
        let mut nmse = Table::new(NMSE_VS_PARAMS, &["variant", "h", "seed", "params", "nmse", "status"])?;
        let mut dead = Table::new(
            DEAD_VS_PARAMS,
            &["variant", "h", "seed", "params", "dead_count", "dead_frac", "status"],
        )?;
        let mut alive = Table::new(
            NMSE_VS_ALIVE_PARAMS,
            &["variant", "h", "seed", "alive_params", "nmse", "status"],
        )?;
        let prefix = inputs.sweeps.len() > 1;
        for (name, cells) in &inputs.sweeps {
            for c in cells {
                let variant = if prefix {
                    format!("{name}:{}", c.variant)
                } else {
                    c.variant.clone()
                };
                let (h, seed) = (c.h.to_string(), c.seed.to_string());
                nmse.row(&[
                    variant.clone(),
                    h.clone(),
                    seed.clone(),
                    c.params.to_string(),
                    c.final_nmse.to_string(),
                    c.status.clone(),
                ])?;
                dead.row(&[
                    variant.clone(),
                    h.clone(),
                    seed.clone(),
                    c.params.to_string(),
                    c.dead_count.to_string(),
                    c.dead_frac.to_string(),
                    c.status.clone(),
                ])?;
                alive.row(&[
                    variant,
                    h,
                    seed,
                    c.alive_params.to_string(),
                    c.final_nmse.to_string(),
                    c.status.clone(),
                ])?;
            }
        }
        files.extend([nmse.finish()?, dead.finish()?, alive.finish()?]);
    }

    if !inputs.metrics.is_empty() {
        let mut header = vec!["run"];
        header.extend(METRICS_COLUMNS);
        let mut curves = Table::new(TRAINING_CURVES, &header)?;
        for (name, records) in &inputs.metrics {
            for m in records {
                curves.row(&[
                    name.clone(),
                    m.step.to_string(),
                    m.tokens.to_string(),
                    m.nmse.to_string(),
                    m.dead_count.to_string(),
                    m.dead_frac.to_string(),
                    m.l0.to_string(),
                    m.loss_recon.to_string(),
                    m.loss_aux.to_string(),
                ])?;
            }
        }
        files.push(curves.finish()?);
    }

    if !inputs.spectra.is_empty() {
        let mut curves = Table::new(
            SPECTRUM_CURVES,
            &["source", "hook_point", "index", "singular_value", "cumulative_variance"],
        )?;
        let mut dims = Table::new(
            INTRINSIC_DIM_VS_LAYER,
            &["source", "hook_point", "layer", "tau", "intrinsic_dim", "d", "ratio"],
        )?;
        for (name, s) in &inputs.spectra {
            if let Some(i) = s.singular_values.windows(2).position(|w| w[1] > w[0]) {
                return Err(Error::BadData(format!(
                    "{name}: singular values increase at index {}",
                    i + 1
                )));
            }
            let total: f64 = s.singular_values.iter().map(|v| v * v).sum();
            let mut cum = 0.0;
            for (i, v) in s.singular_values.iter().enumerate() {
                cum += v * v;
                let frac = if total > 0.0 { cum / total } else { 0.0 };
                curves.row(&[
                    name.clone(),
                    s.hook_point.clone(),
                    i.to_string(),
                    v.to_string(),
                    frac.to_string(),
                ])?;
            }
            let layer = s.metadata.get("layer").cloned().unwrap_or_default();
            for (tau, k) in &s.intrinsic_dims {
                dims.row(&[
                    name.clone(),
                    s.hook_point.clone(),
                    layer.clone(),
                    tau.to_string(),
                    k.to_string(),
                    s.d.to_string(),
                    (*k as f64 / s.d as f64).to_string(),
                ])?;
            }
        }
        files.extend([curves.finish()?, dims.finish()?]);
    }
    if files.is_empty() {
        return Err(Error::invalid("report needs at least one input"));
    }
    Ok(files)
}

/// Writes the bundle into `dir`, returning the paths written.
pub fn write_report(files: &[PlotFile], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    files
        .iter()
        .map(|f| {
            let path = dir.join(f.name);
            fs::write(&path, &f.contents)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn cell(variant: &str, h: usize) -> SweepCell {
        SweepCell {
            variant: variant.into(),
            h,
            seed: 0,
            params: 2 * h * 8 + h + 8,
            final_nmse: 0.5,
            dead_count: 1,
            alive_count: h - 1,
            dead_frac: 1.0 / h as f64,
            alive_params: (h - 1) * 17 + 8,
            status: "completed".into(),
        }
    }

    fn spectrum(values: Vec<f64>) -> SpectrumReport {
        SpectrumReport {
            hook_point: "attn_out".into(),
            n: 10,
            d: values.len(),
            total_variance: values.iter().map(|v| v * v).sum(),
            singular_values: values,
            intrinsic_dims: vec![(0.99, 2)],
            above_fraction: vec![(0.05, 2)],
            metadata: BTreeMap::from([("layer".to_string(), "3".to_string())]),
        }
    }

    #[test]
    fn single_sweep_cardinality() {
        let cells = vec![cell("asi", 64), cell("asi", 256), cell("tied", 64)];
        let inputs = ReportInputs {
            sweeps: vec![("s".into(), cells)],
            ..Default::default()
        };
        let files = build_report(&inputs).unwrap();
        assert_eq!(files.len(), 3);
        for f in &files {
            assert_eq!(f.rows, 3);
            assert_eq!(f.contents.lines().count(), 4);
        }
    }

    #[test]
    fn merged_sweeps_keep_rows_and_label_variants() {
        let inputs = ReportInputs {
            sweeps: vec![
                ("a".into(), vec![cell("asi", 64), cell("asi", 256)]),
                ("b".into(), vec![cell("asi", 64)]),
            ],
            ..Default::default()
        };
        let files = build_report(&inputs).unwrap();
        let nmse = &files[0];
        assert_eq!(nmse.rows, 3);
        let variants: BTreeSet<&str> = nmse
            .contents
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap())
            .collect();
        assert_eq!(variants, BTreeSet::from(["a:asi", "b:asi"]));
    }

    #[test]
    fn spectrum_series_and_sorted_check() {
        let inputs = ReportInputs {
            spectra: vec![("l3".into(), spectrum(vec![3.0, 2.0, 1.0]))],
            ..Default::default()
        };
        let files = build_report(&inputs).unwrap();
        assert_eq!(files[0].rows, 3);
        assert!(files[1].contents.contains("l3,attn_out,3,0.99,2,3,"));
        let bad = ReportInputs {
            spectra: vec![("x".into(), spectrum(vec![1.0, 2.0]))],
            ..Default::default()
        };
        assert!(matches!(build_report(&bad), Err(Error::BadData(_))));
    }

    #[test]
    fn schema_mismatch_lists_columns() {
        let text = "variant,h,seed,params,final_nmse,dead_count,alive_count,dead_frac,status,extra\n";
        let err = read_checked::<SweepCell, _>("s", text.as_bytes(), &SWEEP_COLUMNS).unwrap_err();
        match err {
            Error::Schema { missing, extra, .. } => {
                assert_eq!(missing, vec!["alive_params".to_string()]);
                assert_eq!(extra, vec!["extra".to_string()]);
            }
            other => panic!("{other:?}"),
        }
    }
}
