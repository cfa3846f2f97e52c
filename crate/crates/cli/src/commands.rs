use std::io::Write;
use std::path::{Path, PathBuf};

use gasfm::camera::Mode;
use gasfm::geometry::{bundle_adjust, metrics, triangulate, BaConfig, Metrics};
use gasfm::gnn::forward;
use gasfm::recon::{recon_from_json, recon_to_json, save_ply, Reconstruction};
use gasfm::scene::{generate_synthetic, normalize_for_mode, scene_from_json, scene_to_json, NormalizationRecord, Scene, SynthConfig};
use gasfm::train::{Checkpoint, TrainConfig, TrainError, Trainer};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::failure::{Failure, EXIT_NOT_CONVERGED};
use crate::manifest::RunManifest;

pub const RECON_FILE: &str = "recon.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const BA_REPORT_FILE: &str = "ba_report.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const PLY_FILE: &str = "points.ply";

/// Flags shared by every command.
pub struct Common {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub out: PathBuf,
}

fn load_config<T: DeserializeOwned + Default>(run: &mut RunManifest, path: Option<&Path>) -> Result<T, Failure> {
    match path {
        Some(p) => Ok(serde_json::from_str(&run.read_input_text(p)?)?),
        None => Ok(T::default()),
    }
}

fn record_config(run: &mut RunManifest, cfg: &impl Serialize) {
    run.config = serde_json::to_value(cfg).expect("serializable config");
}

fn read_scene(run: &mut RunManifest, path: &Path) -> Result<Scene, Failure> {
    let text = run.read_input_text(path)?;
    scene_from_json(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

fn read_recon(run: &mut RunManifest, path: &Path) -> Result<Reconstruction, Failure> {
    let text = run.read_input_text(path)?;
    recon_from_json(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

fn read_checkpoint(run: &mut RunManifest, path: &Path) -> Result<Checkpoint, Failure> {
    let bytes = run.read_input(path)?;
    Checkpoint::from_bytes(&bytes).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

fn write_output(run: &mut RunManifest, path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes)?;
    run.output(path);
    Ok(())
}

fn check_mode(flag: Option<Mode>, actual: Mode, what: &str) -> Result<(), Failure> {
    match flag {
        Some(m) if m != actual => Err(Failure::validation(format!("--mode {m} but {what} is {actual}"))),
        _ => Ok(()),
    }
}

/// Refuses to write over one of the command's inputs.
fn check_distinct(input: &Path, output: &Path) -> Result<(), Failure> {
    let same = match (input.canonicalize(), output.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(Failure::validation(format!("output {} would overwrite an input", output.display())));
    }
    Ok(())
}

fn normalized(run: &mut RunManifest, scene: &Scene) -> Result<(Scene, NormalizationRecord), Failure> {
    Ok(run.timed("normalize", || normalize_for_mode(scene))?)
}

pub fn synth(run: &mut RunManifest, common: &Common, count: usize) -> Result<(), Failure> {
    let mut cfg: SynthConfig = load_config(run, common.config.as_deref())?;
    if let Some(m) = common.mode {
        cfg.mode = m;
    }
    let seed = common.seed.unwrap_or(0);
    run.seed = Some(seed);
    record_config(run, &cfg);
    if count == 0 {
        return Err(Failure::validation("--count must be positive"));
    }
    let scenes = run.timed("generate", || {
        (0..count as u64)
            .map(|i| generate_synthetic(&cfg, seed.wrapping_add(i)))
            .collect::<Result<Vec<_>, _>>()
    })?;
    for (i, s) in scenes.iter().enumerate() {
        let path = common.out.join(format!("scene_{i:03}.json"));
        write_output(run, &path, scene_to_json(s).as_bytes())?;
    }
    run.note("scenes", count);
    Ok(())
}

pub struct TrainArgs<'a> {
    pub scenes: &'a [PathBuf],
    pub val: &'a [PathBuf],
    pub resume: Option<&'a Path>,
    pub init: Option<&'a Path>,
    pub max_iters: Option<u64>,
}

pub fn train(run: &mut RunManifest, common: &Common, args: TrainArgs) -> Result<(), Failure> {
    let mut trainer = match args.resume {
        Some(path) => {
            if common.config.is_some() || common.seed.is_some() || common.mode.is_some() {
                return Err(Failure::validation("--resume continues the stored run; --config, --seed and --mode do not apply"));
            }
            Trainer::from_checkpoint(read_checkpoint(run, path)?)?
        }
        None => {
            let mut cfg: TrainConfig = load_config(run, common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(m) = common.mode {
                cfg.model.mode = m;
            }
            match args.init {
                Some(path) => {
                    let params = read_checkpoint(run, path)?.deploy_params().clone();
                    Trainer::with_params(cfg, params)?
                }
                None => Trainer::new(cfg)?,
            }
        }
    };
    let cfg = trainer.checkpoint().config.clone();
    record_config(run, &cfg);
    run.seed = Some(cfg.seed);

    let mut load = |paths: &[PathBuf]| -> Result<Vec<Scene>, Failure> {
        paths
            .iter()
            .map(|p| Ok(normalize_for_mode(&read_scene(run, p)?)?.0))
            .collect()
    };
    let train_scenes = load(args.scenes)?;
    let val_scenes = load(args.val)?;

    let log_path = common.out.join(TRAIN_LOG_FILE);
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    let mut log_err = None;
    let start_iter = trainer.checkpoint().iteration;
    let result = run.timed("train", || {
        trainer.run(&train_scenes, &val_scenes, args.max_iters, |l| {
            if log_err.is_none() {
                let line = serde_json::to_string(l).expect("serializable log");
                log_err = writeln!(log, "{line}").err();
            }
        })
    });
    log.flush()?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    run.output(&log_path);

    let ckpt_path = common.out.join(CHECKPOINT_FILE);
    let state = match result {
        Ok(()) => trainer.into_checkpoint(),
        Err(TrainError::Diverged {
            iteration,
            reason,
            checkpoint,
        }) => {
            // Keep the last good state so the run can be inspected or resumed.
            write_output(run, &ckpt_path, &checkpoint.to_bytes())?;
            return Err(Failure::numeric(format!("training diverged at iteration {iteration}: {reason}")));
        }
        Err(e) => return Err(e.into()),
    };
    write_output(run, &ckpt_path, &state.to_bytes())?;
    run.note("iterations", state.iteration - start_iter);
    run.note("epochs_completed", state.epoch);
    run.note("best_validation_loss", state.best.as_ref().map(|b| b.loss));
    run.note("skipped_outliers", state.skipped_outliers);
    Ok(())
}

pub fn infer(
    run: &mut RunManifest,
    common: &Common,
    checkpoint: &Path,
    scene_path: &Path,
    with_triangulation: bool,
) -> Result<(), Failure> {
    if common.config.is_some() {
        return Err(Failure::validation("infer takes its configuration from the checkpoint"));
    }
    run.seed = common.seed;
    let ckpt = read_checkpoint(run, checkpoint)?;
    let params = ckpt.deploy_params();
    let mode = params.hyper().mode;
    check_mode(common.mode, mode, "the checkpoint")?;
    record_config(run, &serde_json::json!({ "model": params.hyper(), "triangulate": with_triangulation }));
    let raw = read_scene(run, scene_path)?;
    check_mode(Some(mode), raw.mode(), "the scene")?;
    let (scene, _) = normalized(run, &raw)?;
    let mut recon = run.timed("infer", || forward(&scene, params))?;
    if with_triangulation {
        let tri = run.timed("triangulate", || triangulate(&scene, &recon.cameras))?;
        for (j, (x, degenerate)) in tri.points.iter().zip(&tri.degenerate).enumerate() {
            if !degenerate {
                recon.points[j] = *x;
            }
        }
        run.note("degenerate_points", tri.num_degenerate());
    }
    if !recon.is_finite() {
        return Err(Failure::numeric("network produced a non-finite reconstruction"));
    }
    let out = common.out.join(RECON_FILE);
    check_distinct(checkpoint, &out)?;
    write_output(run, &out, recon_to_json(&recon).as_bytes())?;
    Ok(())
}

pub fn ba(run: &mut RunManifest, common: &Common, scene_path: &Path, recon_path: &Path) -> Result<(), Failure> {
    let cfg: BaConfig = load_config(run, common.config.as_deref())?;
    record_config(run, &cfg);
    run.seed = common.seed;
    let raw = read_scene(run, scene_path)?;
    let init = read_recon(run, recon_path)?;
    check_mode(common.mode, init.mode, "the reconstruction")?;
    let (scene, _) = normalized(run, &raw)?;
    let (refined, report) = run.timed("ba", || bundle_adjust(&scene, &init, &cfg))?;
    let out = common.out.join(RECON_FILE);
    check_distinct(recon_path, &out)?;
    write_output(run, &out, recon_to_json(&refined).as_bytes())?;
    let report_path = common.out.join(BA_REPORT_FILE);
    let text = serde_json::to_string_pretty(&report).expect("serializable report");
    write_output(run, &report_path, text.as_bytes())?;
    let final_reprojection = report.final_mean_reprojection();
    run.note("final_objective", report.final_objective());
    run.note("final_mean_reprojection", final_reprojection);
    run.note("converged", report.converged());
    if !final_reprojection.is_finite() {
        return Err(Failure::numeric("bundle adjustment produced a non-finite result"));
    }
    if !report.converged() {
        return Err(Failure {
            code: EXIT_NOT_CONVERGED,
            message: "bundle adjustment did not converge".into(),
        });
    }
    Ok(())
}

fn cell(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.decimals$}"))
}

/// Fixed-width metrics table.
pub fn metrics_table(m: &Metrics) -> String {
    let rows = [
        ("reprojection", "px", cell(Some(m.reprojection_px), 2)),
        ("rotation", "deg", cell(m.rotation_deg, 3)),
        ("translation", "m", cell(m.translation, 2)),
    ];
    let mut out = format!("{:<14}{:>6}{:>14}\n", "metric", "unit", "value");
    for (name, unit, value) in rows {
        out += &format!("{name:<14}{unit:>6}{value:>14}\n");
    }
    out
}

pub fn eval(run: &mut RunManifest, common: &Common, scene_path: &Path, recon_path: &Path) -> Result<(), Failure> {
    if common.config.is_some() {
        return Err(Failure::validation("eval takes no configuration"));
    }
    run.seed = common.seed;
    let raw = read_scene(run, scene_path)?;
    let recon = read_recon(run, recon_path)?;
    check_mode(common.mode, recon.mode, "the reconstruction")?;
    let (scene, record) = normalized(run, &raw)?;
    let m = run.timed("eval", || metrics(&scene, &recon, &record, scene.gt_poses()))?;
    print!("{}", metrics_table(&m));
    let path = common.out.join(METRICS_FILE);
    let text = serde_json::to_string_pretty(&m).expect("serializable metrics");
    write_output(run, &path, text.as_bytes())?;
    run.note("reprojection_px", m.reprojection_px);
    run.note("rotation_deg", m.rotation_deg);
    run.note("translation", m.translation);
    Ok(())
}

pub fn export(run: &mut RunManifest, common: &Common, recon_path: &Path) -> Result<(), Failure> {
    if common.config.is_some() {
        return Err(Failure::validation("export takes no configuration"));
    }
    run.seed = common.seed;
    let recon = read_recon(run, recon_path)?;
    check_mode(common.mode, recon.mode, "the reconstruction")?;
    let path = common.out.join(PLY_FILE);
    run.timed("export", || save_ply(&recon.points, &path))?;
    run.output(&path);
    run.note("points", recon.num_points());
    Ok(())
}
