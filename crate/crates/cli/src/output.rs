//! Output files. Everything a command writes goes through [`Outputs`], which
//! deletes what it wrote unless the command completes.

use esa_ipa::ipa::{LearningCurveRow, PolicyParams};
use esa_ipa::radar::{TargetObservation, TargetState};
use esa_ipa::scenario::{EvaluationReport, RadarEpisode};
use esa_ipa::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
    committed: bool,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            committed: false,
        })
    }

    pub fn write(&mut self, name: &str, contents: String) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.written
    }

    pub fn commit(&mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for name in &self.written {
                let _ = std::fs::remove_file(self.dir.join(name));
            }
        }
    }
}

pub fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Policy parameters on disk: `{"alpha": [...], "iterate_index": k}`. A bare
/// JSON array is accepted on input.
#[derive(Debug, Serialize, Deserialize)]
pub struct AlphaFile {
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub iterate_index: usize,
}

impl From<&PolicyParams> for AlphaFile {
    fn from(p: &PolicyParams) -> Self {
        Self {
            alpha: p.alpha.clone(),
            iterate_index: p.iterate_index,
        }
    }
}

impl AlphaFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read alpha file {}: {e}", path.display())))?;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Either {
            File(AlphaFile),
            Bare(Vec<f64>),
        }
        match serde_json::from_str::<Either>(&text) {
            Ok(Either::File(f)) => Ok(f),
            Ok(Either::Bare(alpha)) => Ok(Self { alpha, iterate_index: 0 }),
            Err(e) => Err(Error::Config(format!("{}: {e}", path.display()))),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct EvalFile {
    pub alpha: Vec<f64>,
    pub seed: u64,
    #[serde(flatten)]
    pub report: EvaluationReport,
}

impl EvalFile {
    pub fn new(alpha: &[f64], seed: u64, report: EvaluationReport) -> Self {
        Self {
            alpha: alpha.to_vec(),
            seed,
            report,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Scenario as run, after overrides, in TOML.
    pub config: String,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
}

fn csv_text(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(&header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

/// `k,eta,mean_return,return_stderr,grad_norm,alpha_0..alpha_{d-1},clipped`;
/// `alpha_*` are the parameters the batch of iteration k was run with.
pub fn learning_curve_csv(curve: &[LearningCurveRow]) -> Result<String> {
    let d = curve.first().map_or(0, |r| r.alpha.len());
    let mut header: Vec<String> = ["k", "eta", "mean_return", "return_stderr", "grad_norm"].map(String::from).to_vec();
    header.extend((0..d).map(|j| format!("alpha_{j}")));
    header.push("clipped".into());
    let rows = curve
        .iter()
        .map(|r| {
            let mut row = vec![
                r.k.to_string(),
                r.eta.to_string(),
                r.mean_return.to_string(),
                r.return_stderr.to_string(),
                r.grad_norm.to_string(),
            ];
            row.extend(r.alpha.iter().map(f64::to_string));
            row.push(r.clipped.to_string());
            row
        })
        .collect();
    csv_text(header, rows)
}

/// One row per fine instant: `t`, then per target p the true state
/// `p{p}_rx,p{p}_ry,p{p}_vx,p{p}_vy` and the filter estimate
/// `p{p}_est_rx,p{p}_est_ry`, then `reward`.
pub fn trajectory_csv(rec: &RadarEpisode) -> Result<String> {
    let targets = rec.states.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    for p in 0..targets {
        for f in ["rx", "ry", "vx", "vy", "est_rx", "est_ry"] {
            header.push(format!("p{p}_{f}"));
        }
    }
    header.push("reward".into());
    let rows = (0..rec.fine_times.len())
        .map(|k| {
            let mut row = vec![rec.fine_times[k].to_string()];
            for p in 0..targets {
                let TargetState { rx, ry, vx, vy } = rec.states[k][p];
                row.extend([rx, ry, vx, vy].iter().map(f64::to_string));
                row.extend(rec.filter_estimates[k][p].iter().map(f64::to_string));
            }
            row.push(rec.rewards[k].to_string());
            row
        })
        .collect();
    csv_text(header, rows)
}

/// One row per look: `t,theta,delta,pointed`, then per target
/// `p{p}_detected,p{p}_r,p{p}_beta,p{p}_rdot` (measurement fields empty on a
/// miss). `pointed` is the index of the target the beam was steered at,
/// empty for the first look.
pub fn actions_csv(rec: &RadarEpisode, pointed: &[Option<usize>]) -> Result<String> {
    let targets = rec.states.first().map_or(0, Vec::len);
    let mut header: Vec<String> = ["t", "theta", "delta", "pointed"].map(String::from).to_vec();
    for p in 0..targets {
        for f in ["detected", "r", "beta", "rdot"] {
            header.push(format!("p{p}_{f}"));
        }
    }
    let rows = (0..rec.actions.len())
        .map(|n| {
            let a = &rec.actions[n];
            let mut row = vec![
                rec.obs_times[n].to_string(),
                a.theta.to_string(),
                a.delta.to_string(),
                pointed[n].map_or(String::new(), |p| p.to_string()),
            ];
            for y in &rec.observations[n] {
                match *y {
                    TargetObservation::Detection { r, beta, rdot } => {
                        row.extend(["1".to_string(), r.to_string(), beta.to_string(), rdot.to_string()])
                    }
                    TargetObservation::Miss => row.extend(["0".to_string(), String::new(), String::new(), String::new()]),
                }
            }
            row
        })
        .collect();
    csv_text(header, rows)
}
