use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sparsedict::spectra::{principal_directions, variance_decomposition};
use sparsedict::store::read_activations;
use sparsedict::{ActivationBatch, ActivationFileHeader, Error, HookPoint};

use super::{ensure_parent, output_path};
use crate::manifest::{sidecar, RunManifest};
use crate::settings::{resolve, ConfigMap};
use crate::usage;

/// Selects the principal directions of `O = Z·W_O`.
const SVD_OF_O: &str = "svd-of-O";

#[derive(Args, Serialize)]
pub struct Flags {
    /// Concatenated head outputs Z (activation file).
    #[arg(long)]
    z: Option<PathBuf>,
    /// W_O as a d-row activation file with `O = Z·W_O`.
    #[arg(long)]
    wo: Option<PathBuf>,
    /// `svd-of-O`, or an activation file whose rows are unit directions.
    #[arg(long)]
    directions: Option<String>,
    /// Keep only the leading directions.
    #[arg(long)]
    max_directions: Option<usize>,
    /// Output JSON [default: $SPARSEDICT_DATA_DIR/decomposition.json].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub z: Option<PathBuf>,
    pub wo: Option<PathBuf>,
    pub directions: String,
    pub max_directions: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            z: None,
            wo: None,
            directions: SVD_OF_O.into(),
            max_directions: None,
            out: None,
        }
    }
}

fn load(path: &Path) -> anyhow::Result<(ActivationFileHeader, ActivationBatch)> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_activations(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn run(file: &ConfigMap, flags: &Flags) -> anyhow::Result<()> {
    let mut s: Settings = resolve(file, flags)?;
    let z_path = s.z.clone().ok_or_else(|| usage("--z is required"))?;
    let wo_path = s.wo.clone().ok_or_else(|| usage("--wo is required"))?;
    let out = output_path(&s.out, "decomposition.json");
    s.out = Some(out.clone());
    let mut manifest = RunManifest::new("decompose-variance", &s, None)?;
    let mut inputs = vec![z_path.clone(), wo_path.clone()];
    if s.directions != SVD_OF_O {
        inputs.push(PathBuf::from(&s.directions));
    }
    manifest.hash_inputs(&inputs)?;

    let (z_header, z) = load(&z_path)?;
    let (wo_header, wo) = load(&wo_path)?;
    let d = z.d();
    if wo.d() != d || wo.n() != d {
        return Err(Error::DimensionMismatch {
            what: "W_O must be d × d with d the width of Z",
            expected: d,
            found: if wo.d() != d { wo.d() } else { wo.n() },
        }
        .into());
    }
    if wo_header.hook_point != HookPoint::Custom("w_o".into()) {
        log::warn!("{} has hook point {}, expected custom:w_o", wo_path.display(), wo_header.hook_point);
    }
    let w_o: Vec<f64> = wo.as_slice().iter().map(|&v| v as f64).collect();
    let mut directions = if s.directions == SVD_OF_O {
        principal_directions(&z, &w_o)?
    } else {
        let (_, dirs) = load(Path::new(&s.directions))?;
        if dirs.d() != d {
            return Err(Error::DimensionMismatch {
                what: "direction length",
                expected: d,
                found: dirs.d(),
            }
            .into());
        }
        dirs.rows().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
    };
    if let Some(m) = s.max_directions {
        directions.truncate(m);
    }
    let dec = variance_decomposition(&z, &w_o, &directions)?;

    let mut worst = 0.0f64;
    let rows: Vec<_> = (0..directions.len())
        .map(|i| {
            let product = dec.var_z_hat[i] * dec.wo_gain[i];
            let err = if dec.var_o[i] > 0.0 {
                (dec.var_o[i] - product).abs() / dec.var_o[i]
            } else {
                (dec.var_o[i] - product).abs()
            };
            worst = worst.max(err);
            json!({
                "index": i,
                "var_o": dec.var_o[i],
                "var_z_hat": dec.var_z_hat[i],
                "wo_gain": dec.wo_gain[i],
                "null_direction": dec.null_direction[i],
                "identity_error": err,
            })
        })
        .collect();
    let doc = json!({
        "hook_point": z_header.hook_point.label(),
        "n": z.n(),
        "d": d,
        "directions": s.directions,
        "max_identity_error": worst,
        "rows": rows,
    });
    log::info!("{} directions, worst relative identity error {worst:.3e}", directions.len());
    ensure_parent(&out)?;
    fs::write(&out, serde_json::to_string_pretty(&doc)? + "\n")
        .with_context(|| format!("writing {}", out.display()))?;
    manifest.outputs.push(out.clone());
    manifest.result = Some(json!({ "max_identity_error": worst }));
    manifest.write(&sidecar(&out))
}
