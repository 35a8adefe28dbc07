//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Criteria 9 to 11 train 25 models at the compact profile and take
//! several minutes.

use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;

use wavecomm::distillation::{
    loss_adv, loss_percep, loss_recon, loss_ssim, msd_total, write_loss_csv, AdvRealSource, DiscriminatorConfig,
    DistillConfig, Distiller, FuseKind, GeneratorConfig, LossReport, LossWeights, MsdTerms, PercepScope, SsimConfig,
    Discriminator, Generator,
};
use wavecomm::simharness::{
    evaluate, metric_rows, run_arms, train_e2e, write_metric_csv, AblationResult, CollabMode, ExperimentConfig,
    Checkpoints, Suite,
};
use wavecomm::tensorcore::gradcheck::{grad_check, weighted_sum_loss, GradCheckReport};
use wavecomm::tensorcore::{seeded_rng, LayerKind, LayerSpec, Mode, Network, Sequential, Tensor};
use wavecomm::wavelet::{dwt2, idwt2, idwt2_lowpass};
use wavecomm::wirecodec::{comm_volume, f16_decode, f16_encode, pack_message, unpack_message, MessageMeta, WireDtype};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn c1_comm_golden() -> Outcome {
    let pairs = [(65536u64, 24.0, 21.0), (32768, 23.0, 20.0), (16384, 22.0, 19.0)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (cells, full, wave) in pairs {
        let a = comm_volume(cells, 64, 32).unwrap();
        let b = comm_volume(cells / 4, 64, 16).unwrap();
        ok &= close(a, full, 1e-12) && close(b, wave, 1e-12);
        parts.push(format!("{a:.1}->{b:.1}"));
    }
    outcome(ok, parts.join(", "))
}

fn c2_ratio_claim() -> Outcome {
    let r1 = comm_volume(4096, 64, 16).unwrap() / comm_volume(16384, 64, 32).unwrap();
    let r2 = comm_volume(8192, 64, 16).unwrap() / comm_volume(32768, 64, 32).unwrap();
    // agreement to three decimals: within one unit of the third decimal
    let ok = close(r1, 0.863, 1e-3) && close(r2, 0.870, 1e-3);
    outcome(ok, format!("19/22 = {r1:.5} (claim 0.863), 20/23 = {r2:.5} (claim 0.870)"))
}

fn c3_multilevel_comm() -> Outcome {
    let vols: Vec<f64> = (1..=3u32).map(|l| comm_volume(32768 / 4u64.pow(l), 64, 16).unwrap()).collect();
    let ok = close(vols[0], 20.0, 1e-12) && close(vols[1], 18.0, 1e-12) && close(vols[2], 16.0, 1e-12);
    outcome(
        ok,
        format!(
            "levels 1/2/3 -> {:.1}/{:.1}/{:.1}; the published 3-level entry (18.0) disagrees with the volume formula",
            vols[0], vols[1], vols[2]
        ),
    )
}

fn block_mean_oracle(x: &Tensor, levels: usize) -> Tensor {
    let (c, h, w) = x.dims3().unwrap();
    let s = 1 << levels;
    let mut out = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for by in (0..h).step_by(s) {
            for bx in (0..w).step_by(s) {
                let mut sum = 0.0;
                for y in by..by + s {
                    for xx in bx..bx + s {
                        sum += x.get3(ch, y, xx);
                    }
                }
                let mean = sum / (s * s) as f64;
                for y in by..by + s {
                    for xx in bx..bx + s {
                        out.set3(ch, y, xx, mean);
                    }
                }
            }
        }
    }
    out
}

fn c4_wavelet() -> Outcome {
    let mut rng = seeded_rng(404);
    let (mut recon, mut energy, mut linear, mut lowpass) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for levels in 1..=3usize {
        let s = 1 << levels;
        for _ in 0..100 {
            let shape = [rng.gen_range(1..4), s * rng.gen_range(1..5), s * rng.gen_range(1..5)];
            let x = Tensor::randn(&shape, &mut rng);
            let y = Tensor::randn(&shape, &mut rng);
            let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let px = dwt2(&x, levels).unwrap();
            recon = recon.max(idwt2(&px).unwrap().max_abs_diff(&x));
            let e_in = x.sum_sq();
            let e_out: f64 = px.coefficients().map(|v| v * v).sum();
            energy = energy.max((e_out - e_in).abs() / e_in);
            let py = dwt2(&y, levels).unwrap();
            let mix = x.scale(a).add(&y.scale(b)).unwrap();
            let pm = dwt2(&mix, levels).unwrap();
            for ((m, u), v) in pm.coefficients().zip(px.coefficients()).zip(py.coefficients()) {
                linear = linear.max((m - (a * u + b * v)).abs());
            }
            lowpass = lowpass.max(idwt2_lowpass(&px.ll, levels).unwrap().max_abs_diff(&block_mean_oracle(&x, levels)));
        }
    }
    let ok = recon <= 1e-10 && energy <= 1e-10 && linear <= 1e-10 && lowpass <= 1e-12;
    outcome(
        ok,
        format!("300 tensors: recon {recon:.1e}, energy rel {energy:.1e}, linearity {linear:.1e}, lowpass vs block mean {lowpass:.1e}"),
    )
}

fn layer_check(spec: LayerSpec, shape: &[usize], seed: u64) -> GradCheckReport {
    let mut rng = seeded_rng(seed);
    let mut net = Sequential::default();
    net.push_spec("layer", spec, &mut rng).unwrap();
    for p in net.params_mut() {
        if p.name.ends_with("bias") || p.name.ends_with("beta") {
            p.value = Tensor::uniform(p.value.shape(), -0.3, 0.3, &mut rng);
        }
    }
    let x = Tensor::randn(shape, &mut rng).map(|v| v + 0.0137);
    let y_shape = net.forward(&x, Mode::Train).unwrap().0.shape().to_vec();
    let loss = weighted_sum_loss(&y_shape, &mut rng);
    grad_check(&mut net, &x, &loss, 30, &mut rng).unwrap()
}

fn net_check<N: Network>(net: &mut N, x: &Tensor, seed: u64) -> GradCheckReport {
    let mut rng = seeded_rng(seed);
    let y_shape = net.forward(x, Mode::Train).unwrap().0.shape().to_vec();
    let loss = weighted_sum_loss(&y_shape, &mut rng);
    grad_check(net, x, &loss, 30, &mut rng).unwrap()
}

fn c5_gradients() -> Outcome {
    let layers = [
        ("conv3x3", LayerSpec::conv3x3(3, 4), vec![3, 8, 8]),
        ("conv4x4s2", LayerSpec::conv4x4s2(3, 4), vec![3, 8, 8]),
        ("conv1x1", LayerSpec::conv1x1(3, 4), vec![3, 5, 6]),
        ("convT4x4s2", LayerSpec::convt4x4s2(3, 4), vec![3, 4, 4]),
        ("batchnorm", LayerSpec::new(LayerKind::BatchNorm, 4, 4), vec![4, 5, 5]),
        ("relu", LayerSpec::new(LayerKind::Relu, 3, 3), vec![3, 4, 4]),
        ("leaky_relu", LayerSpec::new(LayerKind::LeakyRelu, 3, 3), vec![3, 4, 4]),
        ("sigmoid", LayerSpec::new(LayerKind::Sigmoid, 3, 3), vec![3, 4, 4]),
    ];
    let mut ok = true;
    let mut worst_layer = 0.0f64;
    for (i, (name, spec, shape)) in layers.into_iter().enumerate() {
        let r = layer_check(spec, &shape, 500 + i as u64);
        if r.max_rel_error > 1e-5 {
            ok = false;
            println!("    layer {name}: {:.2e}", r.max_rel_error);
        }
        worst_layer = worst_layer.max(r.max_rel_error);
    }
    let mut rng = seeded_rng(550);
    let mut gen = Generator::new(GeneratorConfig::new(64, 1), &mut rng).unwrap();
    let g = net_check(&mut gen, &Tensor::uniform(&[64, 4, 4], 0.1, 1.0, &mut rng), 551);
    let mut disc = Discriminator::new(DiscriminatorConfig::new(64), &mut rng).unwrap();
    let d = net_check(&mut disc, &Tensor::uniform(&[64, 16, 16], 0.0, 1.0, &mut rng), 552);
    ok &= g.max_rel_error <= 1e-4 && d.max_rel_error <= 1e-4;
    outcome(
        ok,
        format!(
            "8 layers worst {worst_layer:.2e} (<= 1e-5); generator {:.2e}, discriminator {:.2e} (<= 1e-4); 30 probes each",
            g.max_rel_error, d.max_rel_error
        ),
    )
}

fn c6_loss_values() -> Outcome {
    let mut rng = seeded_rng(606);
    let f = Tensor::uniform(&[4, 16, 16], 0.0, 2.0, &mut rng);
    let recon = loss_recon(&f, &f).unwrap().0;
    let percep = loss_percep(&f.scale(2.0), &f, PercepScope::Whole).unwrap().0;
    let ssim = loss_ssim(&f, &f, &SsimConfig::default()).unwrap().0;
    let half = Tensor::full(&[1, 4, 4], 0.5);
    let adv = loss_adv(&half, &half).unwrap();
    let ln2 = std::f64::consts::LN_2;
    let weights = LossWeights { lambda_recon: 1.0, alpha: 1.0, beta: 1.0, gamma: 0.1, ..LossWeights::default() };
    let terms = MsdTerms { l_recon: 0.2, l_ssim: 0.1, l_percep: 0.05, ..MsdTerms::default() };
    let total = msd_total(&terms, &weights).l_recon_total;
    let ok = recon == 0.0
        && percep.abs() <= 1e-12
        && ssim.abs() <= 1e-12
        && close(adv.l_g, ln2, 1e-9)
        && close(adv.l_d, 2.0 * ln2, 1e-9)
        && close(total, 0.305, 1e-12);
    outcome(
        ok,
        format!(
            "recon {recon:.1e}, percep(2f,f) {percep:.1e}, ssim {ssim:.1e}, L_G {:.9}, L_D {:.9}, total {total:.15}",
            adv.l_g, adv.l_d
        ),
    )
}

/// Round-to-nearest-even by search over the ordered finite patterns.
fn nearest_f16(v: f64) -> u16 {
    let sign = if v.is_sign_negative() { 0x8000 } else { 0 };
    let a = v.abs();
    let value = |p: u16| half::f16::from_bits(p).to_f64();
    let (mut lo, mut hi) = (0u16, 0x7BFF);
    if a >= value(hi) {
        // halfway to the next binade step rounds to infinity
        return sign | if a >= 65520.0 { 0x7C00 } else { 0x7BFF };
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if value(mid) <= a {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (dl, dh) = (a - value(lo), value(hi) - a);
    sign | if dl < dh || (dl == dh && lo % 2 == 0) { lo } else { hi }
}

fn c7_wire() -> Outcome {
    let mut exhaustive = true;
    for bits in 0..=u16::MAX {
        let v = f16_decode(bits);
        let reference = half::f16::from_bits(bits).to_f64();
        if v.is_nan() {
            exhaustive &= reference.is_nan() && f16_decode(f16_encode(v)).is_nan();
        } else {
            exhaustive &= v == reference && f16_encode(v) == bits;
        }
    }
    let mut rng = seeded_rng(707);
    let mut agree = true;
    for _ in 0..100_000 {
        let v = rng.gen_range(-1.0..1.0) * 10f64.powi(rng.gen_range(-9..6));
        agree &= f16_encode(v) == nearest_f16(v);
        let single = v as f32;
        agree &= f16_encode(single as f64) == half::f16::from_f32(single).to_bits();
    }
    let (mut exact, mut detected, mut flips) = (true, true, 0usize);
    for i in 0..1000 {
        let shape = [rng.gen_range(1..5), rng.gen_range(1..9), rng.gen_range(1..9)];
        let ll = Tensor::randn(&shape, &mut rng).scale(rng.gen_range(0.1..100.0));
        let dtype = if i % 2 == 0 { WireDtype::F16 } else { WireDtype::F32 };
        let pose = std::array::from_fn(|_| rng.gen_range(-50.0f32..50.0));
        let meta = MessageMeta { agent_id: rng.gen(), frame_id: rng.gen(), levels: rng.gen_range(1..=3), dtype, pose };
        let bytes = pack_message(&ll, &meta).unwrap();
        let (back, meta2) = unpack_message(&bytes).unwrap();
        exact &= meta2 == meta && pack_message(&back, &meta2).unwrap() == bytes;
        exact &= ll.data().iter().zip(back.data()).all(|(a, b)| dtype.quantize(*a).to_bits() == b.to_bits());
        if i < 100 {
            for pos in 0..bytes.len() {
                let mut bad = bytes.clone();
                bad[pos] ^= rng.gen_range(1..=255u8);
                detected &= unpack_message(&bad).is_err();
                flips += 1;
            }
        }
    }
    outcome(
        exhaustive && agree && exact && detected,
        format!(
            "65536 f16 patterns {}, 1e5 encodes vs nearest-even oracle and f32 reference {}, 1000 messages bit-exact {}, {flips} corruptions detected {}",
            exhaustive, agree, exact, detected
        ),
    )
}

fn distill_fixture(lambda_adv: f64, seed: u64) -> (Distiller, wavecomm::wavelet::SubbandPyramid, Tensor) {
    let mut rng = seeded_rng(seed);
    let feat = Tensor::uniform(&[64, 16, 16], 0.0, 1.0, &mut rng);
    let pyr = dwt2(&feat, 1).unwrap();
    let target = idwt2_lowpass(&pyr.ll, 1).unwrap();
    let mut config = DistillConfig::default();
    config.weights.lambda_adv = lambda_adv;
    config.adv_real = AdvRealSource::Restored;
    let d = Distiller::new(GeneratorConfig::new(64, 1), DiscriminatorConfig::new(64), FuseKind::Base, config, &mut rng)
        .unwrap();
    (d, pyr, target)
}

fn distill_run(lambda_adv: f64, steps: usize) -> Result<Vec<LossReport>, String> {
    let (mut d, pyr, target) = distill_fixture(lambda_adv, 808);
    (0..steps).map(|_| d.train_step(&pyr, &target, None).map_err(|e| e.to_string())).collect()
}

fn loss_csv(reports: &[LossReport]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_loss_csv(&mut buf, reports).unwrap();
    buf
}

fn c8_distillation(no_adv: &[LossReport]) -> Outcome {
    let first = no_adv[0].l_recon_total;
    let last = no_adv[no_adv.len() - 1].l_recon_total;
    let reduced = last <= 0.5 * first;
    let adv = distill_run(DistillConfig::default().weights.lambda_adv, 1000);
    let (finite, adv_detail) = match &adv {
        Ok(r) => (
            r.len() == 1000,
            format!("1000 adversarial steps finite (last L_D {:.4}, L_G {:.4})", r[999].l_d, r[999].l_g),
        ),
        Err(e) => (false, format!("adversarial run failed: {e}")),
    };
    outcome(
        reduced && finite,
        format!("L_ReconTotal {first:.4} -> {last:.4} after 200 steps ({:.1}%); {adv_detail}", 100.0 * last / first),
    )
}

struct Ablation {
    rows: AblationResult,
}

impl Ablation {
    fn ap50(&self, arm: &str) -> Vec<f64> {
        self.rows.seeds_of(arm).iter().map(|r| r.eval.ap50).collect()
    }

    fn mean_sd(&self, arm: &str) -> (f64, f64) {
        let s = self.rows.arm(arm).unwrap();
        (s.ap50_mean, s.ap50_sd)
    }
}

fn run_benchmark() -> Ablation {
    let base = ExperimentConfig::compact();
    let mut arms = Suite::Reconstruction.arms(&base.model);
    arms.extend(Suite::Multilevel.arms(&base.model).into_iter().filter(|a| a.model.levels > 1));
    let rows = run_arms(Suite::Reconstruction, &arms, &base, &[1, 2, 3, 4, 5], Checkpoints::Train).unwrap();
    for s in &rows.summary {
        println!(
            "    {:<10} AP30 {:.3} +- {:.3}  AP50 {:.3} +- {:.3}  comm {:.1}",
            s.arm, s.ap30_mean, s.ap30_sd, s.ap50_mean, s.ap50_sd, s.comm_log2
        );
    }
    Ablation { rows }
}

fn c9_reconstruction(b: &Ablation) -> Outcome {
    let (g, g_sd) = b.mean_sd("generator");
    let (i, i_sd) = b.mean_sd("idwt_only");
    let sd = g_sd.max(i_sd);
    let verdict = if g >= i {
        "generator ahead"
    } else if i - g <= sd {
        "statistical tie"
    } else {
        "generator trails by more than 1 sd"
    };
    outcome(g >= i || i - g <= sd, format!("AP50 generator {g:.3} vs idwt_only {i:.3} (sd {sd:.3}): {verdict}"))
}

fn c10_premise(b: &Ablation) -> Outcome {
    let g = b.ap50("generator");
    let n = b.ap50("no_collab");
    let wins = g.iter().zip(&n).filter(|(a, b)| a > b).count();
    outcome(wins >= 4, format!("generator beats no_collab on AP50 in {wins}/5 seeds"))
}

fn c11_multilevel(b: &Ablation) -> Outcome {
    let arms = ["generator", "level2", "level3"];
    let means: Vec<f64> = arms.iter().map(|a| b.mean_sd(a).0).collect();
    let comm: Vec<f64> = arms.iter().map(|a| b.rows.arm(a).unwrap().comm_log2).collect();
    let trend = means.windows(2).all(|w| w[1] <= w[0]);
    let steps = close(comm[0] - comm[1], 2.0, 1e-12) && close(comm[1] - comm[2], 2.0, 1e-12);
    outcome(
        trend && steps,
        format!(
            "AP50 {:.3} -> {:.3} -> {:.3}; comm {:.1} -> {:.1} -> {:.1}",
            means[0], means[1], means[2], comm[0], comm[1], comm[2]
        ),
    )
}

fn c12_determinism(no_adv: &[LossReport]) -> Outcome {
    let again = distill_run(0.0, 200).unwrap();
    let distill_same = loss_csv(no_adv) == loss_csv(&again);
    let mut cfg = ExperimentConfig::compact().with_seed(12);
    cfg.model.mode = CollabMode::Generator;
    cfg.train.epochs = 2;
    cfg.train.train_frames = 8;
    cfg.train.eval_frames = 8;
    let artifacts = || {
        let mut out = train_e2e(&cfg).unwrap();
        let mut metrics = Vec::new();
        write_metric_csv(&mut metrics, &metric_rows(&evaluate(&mut out.model, &cfg).unwrap(), "generator", 12)).unwrap();
        (loss_csv(&out.losses), metrics, out.model.save().unwrap())
    };
    let e2e_same = artifacts() == artifacts();
    outcome(
        distill_same && e2e_same,
        format!("distillation loss CSV identical {distill_same}; e2e loss CSV, metric CSV and checkpoint identical {e2e_same}"),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("[{}] {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "comm-volume golden values", c1_comm_golden());
    report(2, "ratio claim", c2_ratio_claim());
    report(3, "multilevel comm progression", c3_multilevel_comm());
    report(4, "wavelet correctness", c4_wavelet());
    report(5, "gradient suites", c5_gradients());
    report(6, "loss unit values", c6_loss_values());
    report(7, "wire format", c7_wire());
    let no_adv = distill_run(0.0, 200).unwrap();
    report(8, "distillation convergence", c8_distillation(&no_adv));
    let bench = run_benchmark();
    report(9, "reconstruction direction", c9_reconstruction(&bench));
    report(10, "collaboration premise", c10_premise(&bench));
    report(11, "multilevel trend", c11_multilevel(&bench));
    report(12, "determinism", c12_determinism(&no_adv));
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
