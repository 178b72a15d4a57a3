//! Output formats: plan files, ensemble CSVs and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{from_row_major, row_major};
use crate::sim::EnsembleStats;
use crate::synth::{
    f_value, g_value, GainCertificate, Plant, Sensing, SparsificationPlan, SynthSettings,
};

pub const PLAN_FORMAT: &str = "sparsectl-plan";
pub const PLAN_SCHEMA_VERSION: u32 = 1;
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanFile {
    pub format: String,
    pub schema_version: u32,
    pub plant_hash: String,
    pub plant_name: String,
    pub n: usize,
    pub m: usize,
    #[serde(flatten)]
    pub sensing: Sensing,
    /// m×n gain, row-major.
    #[serde(rename = "K")]
    pub gain: Vec<f64>,
    pub gamma: f64,
    pub t: Option<f64>,
    pub d_norm_sq: f64,
    pub s: Vec<f64>,
    pub s_max: f64,
    pub weights: Vec<f64>,
    pub expected_sparsity: f64,
    pub contraction: f64,
    pub settings: SynthSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl PlanFile {
    pub fn new(plan: &SparsificationPlan, plant: &Plant, manifest: Option<&Path>) -> Self {
        let cert = &plan.cert;
        PlanFile {
            format: PLAN_FORMAT.to_string(),
            schema_version: PLAN_SCHEMA_VERSION,
            plant_hash: plant.fingerprint(),
            plant_name: plant.name().to_string(),
            n: plant.n(),
            m: plant.m(),
            sensing: plan.sensing.clone(),
            gain: row_major(&cert.gain),
            gamma: cert.gamma,
            t: cert.t.is_finite().then_some(cert.t),
            d_norm_sq: cert.d_norm_sq,
            s: cert.s.clone(),
            s_max: cert.s_max,
            weights: plan.weights.clone(),
            expected_sparsity: plan.expected_sparsity,
            contraction: plan.contraction,
            settings: plan.settings,
            manifest: manifest.map(|p| p.display().to_string()),
        }
    }

    /// Rebuilds the plan against `plant`, recomputing the certificate from
    /// the stored gain. Rejects plans made for a different plant.
    pub fn into_plan(self, plant: &Plant) -> Result<SparsificationPlan> {
        if self.format != PLAN_FORMAT {
            return Err(Error::PlanMismatch(format!("not a plan file (format `{}`)", self.format)));
        }
        if (self.n, self.m) != (plant.n(), plant.m()) {
            return Err(Error::PlanMismatch(format!(
                "plan is for a {}-state, {}-input plant; model `{}` has {} states and {} inputs",
                self.n,
                self.m,
                plant.name(),
                plant.n(),
                plant.m()
            )));
        }
        let hash = plant.fingerprint();
        if self.plant_hash != hash {
            return Err(Error::PlanMismatch(format!(
                "plan was synthesized for plant {} but the model hashes to {hash}",
                self.plant_hash
            )));
        }
        if self.gain.len() != self.m * self.n {
            return Err(Error::PlanMismatch(format!(
                "field `K` has {} entries, expected {}",
                self.gain.len(),
                self.m * self.n
            )));
        }
        let gain = from_row_major(self.m, self.n, &self.gain);
        let cert = GainCertificate::from_gain(plant, gain, self.gamma, self.t.unwrap_or(f64::NAN))?;
        let contraction = match &self.sensing {
            Sensing::Uniform { p_star, .. } => f_value(&cert, *p_star)?,
            Sensing::Adaptive { p_vec, .. } => g_value(&cert, p_vec)?,
        };
        Ok(SparsificationPlan {
            cert,
            sensing: self.sensing,
            weights: self.weights,
            expected_sparsity: self.expected_sparsity,
            contraction,
            settings: self.settings,
        })
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn save_plan(plan: &SparsificationPlan, plant: &Plant, path: &Path, manifest: Option<&Path>) -> Result<()> {
    write_json(&PlanFile::new(plan, plant, manifest), path)
}

pub fn load_plan(path: &Path, plant: &Plant) -> Result<SparsificationPlan> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: PlanFile = serde_json::from_str(&text).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    file.into_plan(plant)
}

/// `k,mean_sq_norm,std_sq_norm,active_sensors_mean[,x_mean_<i>...]`
pub fn csv_header(record_components: &[usize]) -> String {
    let mut h = String::from("k,mean_sq_norm,std_sq_norm,active_sensors_mean");
    for i in record_components {
        h.push_str(&format!(",x_mean_{i}"));
    }
    h
}

/// 17 significant digits, enough to reproduce the f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_stats_csv<W: Write>(stats: &EnsembleStats, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", csv_header(&stats.record_components))?;
    for k in 0..=stats.steps {
        write!(
            out,
            "{},{},{},{}",
            k,
            fmt_f64(stats.mean_sq_norm[k]),
            fmt_f64(stats.std_sq_norm[k]),
            fmt_f64(stats.active_sensors_mean[k])
        )?;
        for &i in &stats.record_components {
            write!(out, ",{}", fmt_f64(stats.component_mean(k, i)))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_stats_csv(stats: &EnsembleStats, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_stats_csv(stats, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Everything needed to reproduce a command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub model: serde_json::Value,
    pub seeds: serde_json::Value,
    pub generator: String,
    pub csv_schema_version: u32,
    pub plan_schema_version: u32,
    pub duration_secs: f64,
    pub outputs: Vec<PathBuf>,
}

/// `out.csv` → `out.<suffix>`
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}
