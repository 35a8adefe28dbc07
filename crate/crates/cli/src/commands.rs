//! Subcommand implementations.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use wavecomm::distillation::{write_loss_csv, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use wavecomm::fusion::AffinePose;
use wavecomm::perception::{BevEncoder, DetectHead};
use wavecomm::simharness::{
    evaluate, metric_rows, read_scenario, run_ablation, summarize, train_e2e, write_ablation_rows, write_metric_csv,
    write_scenario, write_summary_csv, Checkpoints,
};
use wavecomm::tensorcore::gradcheck::{grad_check, weighted_sum_loss};
use wavecomm::tensorcore::{checkpoint, seeded_rng, Mode, Network, Tensor};
use wavecomm::wavelet::dwt2;
use wavecomm::wirecodec::{comm_volume, pack_message, read_header, unpack_message, MessageMeta};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::report::{collect_points, scatter_svg, summarize_points};

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    cfg.validate()?;
    create_dir(out)?;
    let e = &cfg.experiment;
    for i in 0..e.train.train_frames {
        let path = out.join(format!("train_{i:04}.wscn"));
        write_scenario(BufWriter::new(fs::File::create(path)?), &e.train_scenario(i)?)?;
    }
    for i in 0..e.train.eval_frames {
        let path = out.join(format!("eval_{i:04}.wscn"));
        write_scenario(BufWriter::new(fs::File::create(path)?), &e.eval_scenario(i)?)?;
    }
    println!(
        "wrote {} training and {} evaluation scenarios ({}x{} world, {} agents) to {}",
        e.train.train_frames,
        e.train.eval_frames,
        e.scenario.world_h,
        e.scenario.world_w,
        e.scenario.n_agents,
        out.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    cfg.validate()?;
    create_dir(out)?;
    let result = train_e2e(&cfg.experiment)?;
    write_file(&out.join("model.wcpt"), &result.model.save()?)?;
    let mut csv = Vec::new();
    write_loss_csv(&mut csv, &result.losses)?;
    write_file(&out.join("losses.csv"), &csv)?;
    write_file(&out.join("run.conf"), cfg.render().as_bytes())?;
    let (first, last) = (result.losses.first(), result.losses.last());
    match (first, last) {
        (Some(f), Some(l)) => println!(
            "trained {} steps ({}): task loss {:.4} -> {:.4}, L_ReconTotal {:.4} -> {:.4}",
            result.losses.len(),
            cfg.experiment.model.mode,
            f.task_loss,
            l.task_loss,
            f.l_recon_total,
            l.l_recon_total
        ),
        _ => println!("no training steps configured"),
    }
    println!("checkpoint and losses written to {}", out.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig, checkpoint_path: Option<&Path>, out: &Path) -> CliResult<()> {
    cfg.validate()?;
    create_dir(out)?;
    let e = &cfg.experiment;
    let mut model = e.fresh_model()?;
    if let Some(path) = checkpoint_path {
        model.load(&read_file(path)?)?;
    }
    let results = evaluate(&mut model, e)?;
    let rows = metric_rows(&results, e.model.mode.name(), e.seed());
    let mut csv = Vec::new();
    write_metric_csv(&mut csv, &rows)?;
    write_file(&out.join("metrics.csv"), &csv)?;
    let s = summarize(&results);
    println!(
        "{} frames with truth: AP30 {:.4}, AP50 {:.4} (ego only {:.4} / {:.4}), comm {:.1} log2 bytes per link",
        s.frames, s.ap30, s.ap50, s.ego_ap30, s.ego_ap50, s.comm_log2
    );
    Ok(())
}

pub fn ablate(cfg: &RunConfig, out: &Path, load: Option<&Path>, save: bool) -> CliResult<()> {
    cfg.validate()?;
    create_dir(out)?;
    let ckpt = match (load, save) {
        (Some(dir), _) => Checkpoints::Load(dir),
        (None, true) => Checkpoints::TrainAndSave(out),
        (None, false) => Checkpoints::Train,
    };
    let result = run_ablation(cfg.suite, &cfg.experiment, &cfg.seeds, ckpt)?;
    let mut rows = Vec::new();
    write_ablation_rows(&mut rows, &result)?;
    write_file(&out.join(format!("{}_rows.csv", cfg.suite)), &rows)?;
    let mut summary = Vec::new();
    write_summary_csv(&mut summary, &result.summary)?;
    write_file(&out.join(format!("{}_summary.csv", cfg.suite)), &summary)?;
    println!("{} suite over seeds {:?}", cfg.suite, cfg.seeds);
    for s in &result.summary {
        println!(
            "  {:<12} AP30 {:.3} +- {:.3}  AP50 {:.3} +- {:.3}  comm {:.1}",
            s.arm, s.ap30_mean, s.ap30_sd, s.ap50_mean, s.ap50_sd, s.comm_log2
        );
    }
    Ok(())
}

pub fn compress(cfg: &RunConfig, input: &Path, out: Option<&Path>) -> CliResult<PathBuf> {
    cfg.validate()?;
    let scen = read_scenario(&read_file(input)?[..])?;
    let m = &cfg.experiment.model;
    scen.config.validate(m.levels).map_err(|e| CliError::Config(e.to_string()))?;
    let mut model = cfg.experiment.fresh_model()?;
    let agent = *scen.ego();
    let feat = model.encoder.forward(&scen.render_local_view(&agent), Mode::Eval)?.0;
    let pyr = dwt2(&feat, m.levels)?;
    let meta = MessageMeta {
        agent_id: agent.id,
        frame_id: 0,
        levels: m.levels as u8,
        dtype: m.dtype,
        pose: AffinePose::identity().to_f32(),
    };
    let bytes = pack_message(&pyr.ll, &meta)?;
    let path = out.map_or_else(|| input.with_extension("wvcm"), Path::to_path_buf);
    write_file(&path, &bytes)?;
    let (c, h, w) = pyr.ll.dims3()?;
    let volume = comm_volume((h * w) as u64, c as u64, m.dtype.bits())?;
    println!("{}: LL {c}x{h}x{w} at {}, {} bytes on the wire", path.display(), m.dtype, bytes.len());
    println!("log2 volume = {volume}");
    Ok(path)
}

fn stats(t: &Tensor) -> (f64, f64, f64) {
    let d = t.data();
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max, t.sum() / d.len().max(1) as f64)
}

pub fn inspect(input: &Path) -> CliResult<()> {
    let bytes = read_file(input)?;
    match bytes.get(..4) {
        Some(b"WVCM") => {
            let h = read_header(&bytes)?;
            println!("message: agent {} frame {} levels {} dtype {}", h.meta.agent_id, h.meta.frame_id, h.meta.levels, h.meta.dtype);
            println!("LL shape {}x{}x{}, payload {} bytes, total {} bytes", h.channels, h.height, h.width, h.payload_len(), bytes.len());
            println!("pose {:?}", h.meta.pose);
            let (ll, _) = unpack_message(&bytes)?;
            let (min, max, mean) = stats(&ll);
            println!("crc ok; coefficients min {min:.6} max {max:.6} mean {mean:.6}");
            println!("log2 volume = {}", comm_volume((h.height as u64) * (h.width as u64), h.channels as u64, h.meta.dtype.bits())?);
        }
        Some(b"WSCN") => {
            let s = read_scenario(&bytes[..])?;
            let c = &s.config;
            println!("scenario: {}x{} world, seed {}, radius {}, occlusion {}", c.world_h, c.world_w, c.seed, c.radius, c.occlusion);
            for o in &s.objects {
                println!("  object at ({}, {}) size {}x{}", o.x0, o.y0, o.w, o.h);
            }
            for a in &s.agents {
                let seen = s.objects.iter().filter(|o| {
                    (o.y0..o.y1()).any(|y| (o.x0..o.x1()).any(|x| s.visible(a, x, y)))
                });
                println!("  agent {} at ({}, {}) sees {} objects", a.id, a.x, a.y, seen.count());
            }
        }
        Some(b"WCPT") => {
            let params = checkpoint::decode(&bytes)?;
            let total: usize = params.iter().map(|(_, t)| t.len()).sum();
            println!("checkpoint: {} tensors, {total} values", params.len());
            for (name, t) in &params {
                println!("  {name} {:?}", t.shape());
            }
        }
        _ => return Err(CliError::Config(format!("{}: unrecognized file type", input.display()))),
    }
    Ok(())
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub fn gradcheck(cfg: &RunConfig) -> CliResult<()> {
    cfg.validate()?;
    let m = &cfg.experiment.model;
    let mut rng = seeded_rng(cfg.experiment.seed());
    let c = m.channels;
    let mut report = Vec::new();
    let mut check = |name: &str, net: &mut dyn Network, x: Tensor, rng: &mut _| -> CliResult<()> {
        let shape = net.forward(&x, Mode::Train)?.0.shape().to_vec();
        let loss = weighted_sum_loss(&shape, rng);
        let r = grad_check(net, &x, &loss, 20, rng)?;
        println!("{name:<14} max rel. error {:.3e} (input {:.3e}, params {:.3e})", r.max_rel_error, r.input_rel_error, r.param_rel_error);
        report.push(r.max_rel_error);
        Ok(())
    };
    let mut gen = Generator::new(GeneratorConfig { channels: c, width: m.gen_width, levels: m.levels }, &mut rng)?;
    let side = 4;
    let x = Tensor::uniform(&[c, side, side], 0.1, 1.0, &mut rng);
    check("generator", &mut gen, x, &mut rng)?;
    let mut disc = Discriminator::new(DiscriminatorConfig { channels: c, base_width: m.disc_width }, &mut rng)?;
    let x = Tensor::uniform(&[c, 16, 16], 0.0, 1.0, &mut rng);
    check("discriminator", &mut disc, x, &mut rng)?;
    let mut enc = BevEncoder::new(c, &mut rng)?;
    let x = Tensor::uniform(&[1, 16, 16], 0.0, 1.0, &mut rng);
    check("encoder", &mut enc, x, &mut rng)?;
    let mut head = DetectHead::new(c, m.head_hidden, &mut rng)?;
    let x = Tensor::randn(&[c, 8, 8], &mut rng);
    check("detect head", &mut head, x, &mut rng)?;
    let worst = report.iter().cloned().fold(0.0, f64::max);
    if worst > GRADCHECK_TOLERANCE {
        return Err(CliError::Runtime(format!("gradient check failed: {worst:.3e} > {GRADCHECK_TOLERANCE:e}")));
    }
    println!("all networks within {GRADCHECK_TOLERANCE:e}");
    Ok(())
}

pub fn report(input: &Path, out: &Path) -> CliResult<()> {
    let points = collect_points(input)?;
    let summary = summarize_points(&points);
    create_dir(out)?;
    let mut csv = Vec::new();
    write_summary_csv(&mut csv, &summary)?;
    write_file(&out.join("report_summary.csv"), &csv)?;
    write_file(&out.join("report.svg"), scatter_svg(&summary).as_bytes())?;
    println!("{} arms from {} seed rows", summary.len(), points.len());
    for s in &summary {
        println!("  {:<12} AP50 {:.3} +- {:.3} (n = {}), comm {:.1}", s.arm, s.ap50_mean, s.ap50_sd, s.n, s.comm_log2);
    }
    Ok(())
}
