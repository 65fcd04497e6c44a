//! The five subcommands.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use jointrecon::baseline::{three_step, ThreeStepConfig};
use jointrecon::fidelity::{Fidelity, FidelityKind};
use jointrecon::grid::ImageGrid;
use jointrecon::metrics::{max_displacement_px, relative_difference, ssim};
use jointrecon::scalespace::{run_scalespace, ScaleSpaceInput, ScaleSpaceResult, StageReport};
use jointrecon::simulate::{simulate_dataset, Dataset, DeformationSpec, NoiseSpec};
use jointrecon::warp::{AffineParams, Parametrization};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{Method, Mode, ReconstructionConfig, RunConfig};
use crate::dataset::{self, read_json, write_json, PhiGt};
use crate::error::{CliError, CliResult};
use crate::{grd, png};

/// Contents of `phi.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiFile {
    pub parametrization: Parametrization,
    pub params: Vec<f64>,
    /// The same deformation as six deviation-from-identity affine parameters.
    pub affine: [f64; 6],
}

impl PhiFile {
    pub fn new(param: Parametrization, params: Vec<f64>) -> CliResult<Self> {
        let affine = param.to_affine(&params)?.0;
        Ok(Self { parametrization: param, params, affine })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub resolution: usize,
    pub alpha: f64,
    pub eps: f64,
    pub iterations: usize,
    pub objective: f64,
}

/// Contents of `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub method: Method,
    pub dataset: PathBuf,
    pub seed: Option<u64>,
    pub wall_time_s: f64,
    pub stages: Vec<StageSummary>,
    pub reconstruction: ReconstructionConfig,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub u: ImageGrid<f64>,
    pub phi: PhiFile,
    pub meta: RunMeta,
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> CliResult<Dataset> {
    cfg.validate(Mode::Simulate)?;
    let mut sim = cfg.simulation.clone().expect("validated");
    if let Some(seed) = cfg.seed {
        sim.seed = seed;
    }
    let ds = simulate_dataset(&sim)?;
    dataset::save(out, &ds)?;
    png::save(&out.join("u_gt.png"), &png::windowed(&ds.u_gt))?;
    png::save(&out.join("v.png"), &png::windowed(&ds.v))?;
    info!("dataset written to {}", out.display());
    Ok(ds)
}

/// Fidelity from the config, or implied by the noise model of the dataset.
pub fn fidelity_for(ds: &Dataset, r: &ReconstructionConfig) -> CliResult<Fidelity<f64>> {
    let data = ds.f.values().to_vec();
    let fid = match &r.fidelity {
        Some(f) => Fidelity::new(f.kind, data, f.background.unwrap_or(ds.background))?,
        None => match ds.config.noise {
            NoiseSpec::Poisson { .. } => Fidelity::new(FidelityKind::Kl, data, ds.background)?,
            _ => Fidelity::l2(data)?,
        },
    };
    Ok(fid)
}

#[derive(Deserialize)]
struct ParamsOnly {
    params: Option<Vec<f64>>,
}

fn frozen_phi(r: &ReconstructionConfig) -> CliResult<Vec<f64>> {
    if let Some(p) = &r.phi {
        return Ok(p.clone());
    }
    let path = r.phi_file.as_ref().expect("validated");
    let file: ParamsOnly = read_json(path)?;
    let params = file.params.ok_or_else(|| CliError::Format {
        path: path.clone(),
        reason: "no parameters (non-affine ground truth?)".into(),
    })?;
    if params.len() != r.parametrization.n_params() {
        return Err(CliError::Format {
            path: path.clone(),
            reason: format!(
                "{} parameters, {:?} needs {}",
                params.len(),
                r.parametrization,
                r.parametrization.n_params()
            ),
        });
    }
    Ok(params)
}

/// Writes `records` as CSV; rows may differ in length.
pub fn write_csv(path: &Path, records: &[Vec<String>]) -> CliResult<()> {
    let fail = |reason: String| CliError::Format { path: path.to_path_buf(), reason };
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    for rec in records {
        w.write_record(rec).map_err(|e| fail(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| fail(e.to_string()))?;
    grd::write_atomic(path, &bytes)
}

fn log_rows(rows: &mut Vec<Vec<String>>, phase: &str, stages: &[StageReport<f64>]) {
    for (i, s) in stages.iter().enumerate() {
        for l in &s.history {
            let mut rec = vec![
                phase.to_string(),
                i.to_string(),
                s.resolution.to_string(),
                format!("{:e}", s.alpha),
                l.iteration.to_string(),
                format!("{:e}", l.objective),
                format!("{:e}", l.sigma),
                format!("{:e}", l.tau),
            ];
            rec.extend(l.phi.iter().map(|p| format!("{p:e}")));
            rows.push(rec);
        }
    }
}

/// `log.csv`: one row per outer iteration of every stage.
pub fn write_log(path: &Path, n_params: usize, phases: &[(&str, &[StageReport<f64>])]) -> CliResult<()> {
    let mut header: Vec<String> =
        ["phase", "stage", "resolution", "alpha", "iteration", "objective", "sigma", "tau"].map(String::from).to_vec();
    header.extend((1..=n_params).map(|k| format!("phi{k}")));
    let mut rows = vec![header];
    for (phase, stages) in phases {
        log_rows(&mut rows, phase, stages);
    }
    write_csv(path, &rows)
}

fn summarize(stages: &[StageReport<f64>]) -> Vec<StageSummary> {
    stages
        .iter()
        .map(|s| StageSummary {
            resolution: s.resolution,
            alpha: s.alpha,
            eps: s.eps,
            iterations: s.history.len().saturating_sub(1),
            objective: s.history.last().map_or(f64::NAN, |l| l.objective),
        })
        .collect()
}

fn save_stages(dir: &Path, phase: &str, stages: &[StageReport<f64>]) -> CliResult<()> {
    for (i, s) in stages.iter().enumerate() {
        let stem = format!("{phase}_stage{i}_{}", s.resolution);
        grd::write(&dir.join(format!("{stem}.grd")), &s.u)?;
        png::save(&dir.join(format!("{stem}.png")), &png::windowed(&s.u))?;
    }
    Ok(())
}

fn write_result(out: &Path, u: &ImageGrid<f64>, phi: &PhiFile) -> CliResult<()> {
    grd::write(&out.join("u.grd"), u)?;
    write_json(&out.join("phi.json"), phi)?;
    png::save(&out.join("u.png"), &png::windowed(u))
}

/// Runs `method` on the dataset named in `cfg` and writes all run artifacts.
pub fn reconstruct(cfg: &RunConfig, out: &Path) -> CliResult<RunOutput> {
    cfg.validate(Mode::Reconstruct)?;
    run_method(cfg, out)
}

/// The three-step comparison method, whatever `reconstruction.method` says.
pub fn baseline(cfg: &RunConfig, out: &Path) -> CliResult<RunOutput> {
    let mut cfg = cfg.clone();
    if let Some(r) = cfg.reconstruction.as_mut() {
        r.method = Method::ThreeStep;
    }
    cfg.validate(Mode::Baseline)?;
    run_method(&cfg, out)
}

fn run_method(cfg: &RunConfig, out: &Path) -> CliResult<RunOutput> {
    let dir = cfg.dataset.as_ref().expect("validated");
    let ds = dataset::load(dir)?;
    let r = cfg.reconstruction.as_ref().expect("validated");
    let fid = fidelity_for(&ds, r)?;
    let input = ScaleSpaceInput {
        operator: &ds.config.operator,
        scale: ds.scale,
        fidelity: &fid,
        side: &ds.v,
        target: ds.target_geometry(),
    };
    let schedule = r.schedule.as_ref().expect("validated");
    let mut sc = r.scalespace_config();
    let n_params = r.parametrization.n_params();
    let start = Instant::now();
    info!("{} reconstruction of {}", r.method.name(), dir.display());

    let (result, initial): (ScaleSpaceResult<f64>, Option<ScaleSpaceResult<f64>>) = match r.method {
        Method::Joint => (run_scalespace(&input, schedule, &sc, None)?, None),
        Method::TvOnly => {
            sc.gamma = 0.0;
            sc.palm.update_phi = false;
            (run_scalespace(&input, schedule, &sc, None)?, None)
        }
        Method::DtvFrozen => {
            sc.palm.update_phi = false;
            (run_scalespace(&input, schedule, &sc, Some(frozen_phi(r)?))?, None)
        }
        Method::ThreeStep => {
            let ts = ThreeStepConfig {
                tv_schedule: r.tv_schedule.clone().expect("validated"),
                schedule: schedule.clone(),
                recon: sc.clone(),
                mi: r.mi.clone(),
            };
            let report = three_step(&input, &ts)?;
            if report.registration.failed {
                warn!("mutual-information registration did not improve on the identity");
            }
            write_json(&out.join("registration.json"), &report.registration)?;
            (report.result, Some(report.initial))
        }
    };
    let wall_time_s = start.elapsed().as_secs_f64();

    let phi = PhiFile::new(r.parametrization, result.phi.clone())?;
    write_result(out, &result.u, &phi)?;
    let mut phases: Vec<(&str, &[StageReport<f64>])> = Vec::new();
    if let Some(init) = &initial {
        grd::write(&out.join("u_initial.grd"), &init.u)?;
        png::save(&out.join("u_initial.png"), &png::windowed(&init.u))?;
        phases.push(("initial", &init.stages));
    }
    phases.push(("main", &result.stages));
    write_log(&out.join("log.csv"), n_params, &phases)?;
    if cfg.save_stages {
        for (phase, stages) in &phases {
            save_stages(&out.join("stages"), phase, stages)?;
        }
    }
    let meta = RunMeta {
        method: r.method,
        dataset: dir.clone(),
        seed: cfg.seed,
        wall_time_s,
        stages: summarize(&result.stages),
        reconstruction: r.clone(),
    };
    write_json(&out.join("run.json"), &meta)?;
    info!("done in {wall_time_s:.1} s, outputs in {}", out.display());
    Ok(RunOutput { u: result.u, phi, meta })
}

/// One row of the metrics table.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub dataset: String,
    pub method: String,
    pub ssim: f64,
    pub rd_percent: Option<f64>,
    pub max_displacement_px: Option<f64>,
    pub wall_time_s: Option<f64>,
}

/// Compares each run directory against the dataset's ground truth, or
/// against `reference` for the image similarity when given.
pub fn evaluate(dataset_dir: &Path, runs: &[PathBuf], reference: Option<&Path>) -> CliResult<Vec<EvalRow>> {
    let u_ref = match reference {
        Some(p) => grd::read(p)?,
        None => grd::read(&dataset_dir.join("u_gt.grd"))?,
    }
    .to_real();
    let phi_gt: PhiGt = read_json(&dataset_dir.join("phi_gt.json"))?;
    let name =
        dataset_dir.file_name().map_or_else(|| dataset_dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        let u = grd::read(&run.join("u.grd"))?.to_real();
        let phi: PhiFile = read_json(&run.join("phi.json"))?;
        let meta: Option<RunMeta> = match read_json(&run.join("run.json")) {
            Ok(m) => Some(m),
            Err(CliError::MissingArtifact(_)) => None,
            Err(e) => return Err(e),
        };
        let s = ssim(&u, &u_ref)?;
        let (rd, disp) = match &phi_gt.params {
            Some(gt) => {
                let gt = AffineParams::from_slice(gt)?;
                let rd = relative_difference(&phi.affine, gt.as_slice()).ok();
                let disp = max_displacement_px(&AffineParams(phi.affine), &gt, u.geometry());
                (rd, Some(disp))
            }
            None => (None, None),
        };
        rows.push(EvalRow {
            dataset: name.clone(),
            method: meta.as_ref().map_or_else(|| "unknown".into(), |m| m.method.name().to_string()),
            ssim: s,
            rd_percent: rd,
            max_displacement_px: disp,
            wall_time_s: meta.map(|m| m.wall_time_s),
        });
    }
    Ok(rows)
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.6}"))
}

pub fn write_metrics(path: &Path, rows: &[EvalRow]) -> CliResult<()> {
    let mut records = vec![["dataset", "method", "ssim", "rd_percent", "max_displacement_px", "wall_time_s"]
        .map(String::from)
        .to_vec()];
    records.extend(rows.iter().map(|r| {
        vec![
            r.dataset.clone(),
            r.method.clone(),
            format!("{:.6}", r.ssim),
            opt(r.rd_percent),
            opt(r.max_displacement_px),
            opt(r.wall_time_s),
        ]
    }));
    write_csv(path, &records)
}

/// Outcome of one sweep cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub theta: f64,
    pub stages: usize,
    pub ssim: Option<f64>,
    pub rd_percent: Option<f64>,
    pub success: bool,
    pub error: Option<String>,
}

fn sweep_cell(ds: &Dataset, cfg: &RunConfig, stages: usize, out: &Path) -> CliResult<(f64, f64, ImageGrid<f64>)> {
    let r = cfg.reconstruction.as_ref().expect("validated");
    let sw = cfg.sweep.as_ref().expect("validated");
    let schedule = sw.schedule(ds.config.size, stages)?;
    let fid = fidelity_for(ds, r)?;
    let input = ScaleSpaceInput {
        operator: &ds.config.operator,
        scale: ds.scale,
        fidelity: &fid,
        side: &ds.v,
        target: ds.target_geometry(),
    };
    let mut sc = r.scalespace_config();
    sc.palm.iterations = schedule.iterations;
    let res = run_scalespace(&input, &schedule, &sc, None)?;
    let phi = PhiFile::new(r.parametrization, res.phi.clone())?;
    write_result(out, &res.u, &phi)?;
    write_log(&out.join("log.csv"), r.parametrization.n_params(), &[("main", &res.stages)])?;
    let gt = ds.phi_gt().expect("rigid ground truth");
    let rd = relative_difference(&phi.affine, gt.as_slice())?;
    let u = res.u.to_real();
    Ok((ssim(&u, &ds.u_gt)?, rd, u))
}

/// Joint reconstructions over every (angle, stage count) pair. Cells run on
/// `threads` workers (0 runs them in order on the calling thread); each
/// writes to its own directory, and failures are recorded per cell.
pub fn sweep(cfg: &RunConfig, out: &Path, threads: usize) -> CliResult<Vec<SweepCell>> {
    cfg.validate(Mode::Sweep)?;
    let sw = cfg.sweep.as_ref().expect("validated");
    let mut template = cfg.simulation.clone().expect("validated");
    if let Some(seed) = cfg.seed {
        template.seed = seed;
    }
    let b = match template.deformation {
        DeformationSpec::Rigid { b, .. } => b,
        _ => [0.02, 0.08],
    };
    let mut datasets = Vec::with_capacity(sw.thetas.len());
    for &theta in &sw.thetas {
        let mut sim = template.clone();
        sim.deformation = DeformationSpec::Rigid { theta, b };
        datasets.push(simulate_dataset(&sim)?);
    }
    let jobs: Vec<(usize, usize)> = sw.sizes.iter().flat_map(|&m| (0..sw.thetas.len()).map(move |t| (t, m))).collect();
    let results: Mutex<Vec<Option<(SweepCell, Option<ImageGrid<f64>>)>>> = Mutex::new(vec![None; jobs.len()]);
    let run_job = |k: usize| {
        let (t, m) = jobs[k];
        let theta = sw.thetas[t];
        let dir = out.join("cells").join(format!("theta{theta:.3}_m{m}"));
        info!("sweep cell theta {theta}, {m} stage(s)");
        let cell = match sweep_cell(&datasets[t], cfg, m, &dir) {
            Ok((s, rd, u)) => (
                SweepCell {
                    theta,
                    stages: m,
                    ssim: Some(s),
                    rd_percent: Some(rd),
                    success: rd <= sw.success_rd,
                    error: None,
                },
                Some(u),
            ),
            Err(e) => {
                warn!("sweep cell theta {theta}, {m} stage(s) failed: {e}");
                (
                    SweepCell {
                        theta,
                        stages: m,
                        ssim: None,
                        rd_percent: None,
                        success: false,
                        error: Some(e.to_string()),
                    },
                    None,
                )
            }
        };
        results.lock().expect("no poisoned workers")[k] = Some(cell);
    };
    if threads == 0 {
        (0..jobs.len()).for_each(run_job);
    } else {
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..threads.min(jobs.len()) {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    if k >= jobs.len() {
                        break;
                    }
                    run_job(k);
                });
            }
        });
    }
    let done: Vec<(SweepCell, Option<ImageGrid<f64>>)> =
        results.into_inner().expect("no poisoned workers").into_iter().map(|c| c.expect("every job ran")).collect();
    let cells: Vec<SweepCell> = done.iter().map(|(c, _)| c.clone()).collect();
    write_sweep(out, sw.thetas.as_slice(), &sw.sizes, &cells)?;
    let tiles: Vec<Vec<Option<image::GrayImage>>> = done
        .chunks(sw.thetas.len().max(1))
        .map(|row| row.iter().map(|(_, u)| u.as_ref().map(png::windowed)).collect())
        .collect();
    if !cells.is_empty() {
        png::save(&out.join("montage.png"), &png::montage(&tiles, 2))?;
    }
    Ok(cells)
}

fn write_sweep(out: &Path, thetas: &[f64], sizes: &[usize], cells: &[SweepCell]) -> CliResult<()> {
    let mut long =
        vec![["theta", "theta_deg", "stages", "ssim", "rd_percent", "success", "error"].map(String::from).to_vec()];
    long.extend(cells.iter().map(|c| {
        vec![
            format!("{}", c.theta),
            format!("{:.2}", c.theta.to_degrees()),
            c.stages.to_string(),
            opt(c.ssim),
            opt(c.rd_percent),
            c.success.to_string(),
            c.error.clone().unwrap_or_default(),
        ]
    }));
    write_csv(&out.join("sweep.csv"), &long)?;

    let mut header = vec!["stages".to_string()];
    for t in thetas {
        header.extend([format!("ssim@{t}"), format!("rd@{t}"), format!("success@{t}")]);
    }
    let mut matrix = vec![header];
    for (i, &m) in sizes.iter().enumerate() {
        let mut rec = vec![m.to_string()];
        for c in &cells[i * thetas.len()..(i + 1) * thetas.len()] {
            let flag = if c.error.is_some() { "error".to_string() } else { c.success.to_string() };
            rec.extend([opt(c.ssim), opt(c.rd_percent), flag]);
        }
        matrix.push(rec);
    }
    write_csv(&out.join("matrix.csv"), &matrix)
}
