use std::path::Path;

use fiberm2::beam_quality::{caustic_planes, m2_direct, m2_vcm};
use fiberm2::dataset::{
    generate_dataset, held_out_set, load_dataset, DatasetParams, Generator, SampleRecord,
};
use fiberm2::fiber_modes::solve_modes;
use fiberm2::field::{normalize_for_input, sample_modal_vector, superpose, IntensityImage};
use fiberm2::pgm::Pgm;
use fiberm2::regressor::{
    evaluate, load_checkpoint, predict_m2, save_checkpoint, train as train_network, LrSchedule,
    NetworkConfig, NoiseEvaluation, SgdConfig, SigmaRange, TrainOptions, TrainState,
};
use fiberm2::seed::{sample_rng, SYNTH_STREAM};
use fiberm2::{Grid, M2Result, ModalVector, ModeBasis, ModeCase};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::output::{
    create_dir, create_parent, print_json, read_bytes, run_config_beside, say, write_bytes,
    write_csv, write_json, RunConfig, RUN_CONFIG_FILE,
};
use crate::{
    ArchArg, EvalArgs, GenArgs, M2Args, MethodArg, ModesArgs, PredictArgs, ReportArgs, SynthArgs,
    TrainArgs,
};

/// The beam that `synth` and `m2` show for a given case and seed.
fn synth_rng(seed: u64) -> fiberm2::seed::SampleRng {
    sample_rng(seed, SYNTH_STREAM, 0)
}

fn synth_modal(case: ModeCase, seed: u64) -> ModalVector {
    sample_modal_vector(case, &mut synth_rng(seed))
}

fn mode_labels(spec: &fiberm2::FiberSpec, case: ModeCase) -> Result<Vec<String>> {
    Ok(solve_modes(spec)?
        .iter()
        .take(case.count())
        .map(|m| m.label())
        .collect())
}

#[derive(Serialize)]
struct ModeRow {
    label: String,
    l: usize,
    m: usize,
    parity: fiberm2::Parity,
    u: f64,
    w: f64,
}

pub fn modes(a: &ModesArgs) -> Result<()> {
    let spec = a.fiber.spec()?;
    let rows: Vec<ModeRow> = solve_modes(&spec)?
        .into_iter()
        .map(|m| ModeRow {
            label: m.label(),
            l: m.l,
            m: m.m,
            parity: m.parity,
            u: m.u,
            w: m.w,
        })
        .collect();
    if a.json {
        return print_json(&rows);
    }
    say!("V = {:.4}, {} guided modes", spec.v_number(), rows.len());
    say!(
        "{:<7}{:>3}{:>3}  {:<7}{:>10}{:>10}",
        "mode",
        "l",
        "m",
        "parity",
        "u",
        "w"
    );
    for r in &rows {
        let parity = if r.l == 0 {
            "-"
        } else if r.parity == fiberm2::Parity::Even {
            "even"
        } else {
            "odd"
        };
        say!(
            "{:<7}{:>3}{:>3}  {:<7}{:>10.6}{:>10.6}",
            r.label,
            r.l,
            r.m,
            parity,
            r.u,
            r.w
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SynthSidecar<'a> {
    case: ModeCase,
    seed: u64,
    resolution: usize,
    noise_sigma: f64,
    modes: Vec<String>,
    modal: &'a ModalVector,
    label: M2Result,
    run_config: RunConfig<'a, SynthArgs>,
}

pub fn synth(a: &SynthArgs, threads: Option<usize>) -> Result<()> {
    let spec = a.fiber.spec()?;
    let generator = Generator::new(&spec, a.case, a.res)?;
    let mut rng = synth_rng(a.seed);
    let mv = sample_modal_vector(a.case, &mut rng);
    let image = generator.render(&mv, a.noise, &mut rng)?;
    let label = generator.label_for(&mv)?;
    let values: Vec<f64> = image.iter().map(|&v| f64::from(v)).collect();
    let pgm = Pgm::from_unit(a.res, a.res, &values)?;
    let comment = format!(
        "fiberm2 synth case={} seed={} noise={}",
        a.case, a.seed, a.noise
    );
    create_parent(&a.out)?;
    write_bytes(&a.out, &pgm.encode(Some(&comment)))?;
    let sidecar = SynthSidecar {
        case: a.case,
        seed: a.seed,
        resolution: a.res,
        noise_sigma: a.noise,
        modes: mode_labels(&spec, a.case)?,
        modal: &mv,
        label: M2Result::new(label[0], label[1], fiberm2::M2Method::Direct)?,
        run_config: RunConfig::new("synth", threads, a),
    };
    let sidecar_path = a.out.with_extension("json");
    write_json(&sidecar_path, &sidecar)?;
    say!("wrote {} and {}", a.out.display(), sidecar_path.display());
    Ok(())
}

#[derive(Serialize)]
struct M2Report {
    case: ModeCase,
    seed: u64,
    modes: Vec<String>,
    modal: ModalVector,
    direct: Option<M2Result>,
    vcm: Option<M2Result>,
    /// `|direct − vcm| / vcm` per axis and for the effective value.
    relative_difference: Option<[f64; 3]>,
}

pub fn m2(a: &M2Args, threads: Option<usize>) -> Result<()> {
    if let Some(range) = &a.sweep_noise {
        return sweep_noise(a, range, threads);
    }
    let spec = a.fiber.spec()?;
    let mv = synth_modal(a.case, a.seed);
    let basis = ModeBasis::new(&spec, Grid::physics(&spec)?, a.case.count())?;
    let field = superpose(&basis.fields, &mv)?;
    let direct = match a.method {
        MethodArg::Vcm => None,
        _ => Some(m2_direct(&field)?),
    };
    let vcm = match a.method {
        MethodArg::Direct => None,
        _ => {
            let planes = caustic_planes(&field, spec.wavelength_um, a.planes)?;
            Some(m2_vcm(&field, spec.wavelength_um, &planes)?.m2)
        }
    };
    let relative_difference = direct.zip(vcm).map(|(d, v)| {
        let rel = |p: f64, q: f64| (p - q).abs() / q;
        [
            rel(d.m2_x, v.m2_x),
            rel(d.m2_y, v.m2_y),
            rel(d.m2_eff, v.m2_eff),
        ]
    });
    let report = M2Report {
        case: a.case,
        seed: a.seed,
        modes: mode_labels(&spec, a.case)?,
        modal: mv,
        direct,
        vcm,
        relative_difference,
    };
    if a.json {
        return print_json(&report);
    }
    say!(
        "{:<8}{:>10}{:>10}{:>10}",
        "method",
        "M2_x",
        "M2_y",
        "M2_eff"
    );
    for (name, r) in [("direct", direct), ("vcm", vcm)] {
        if let Some(r) = r {
            say!(
                "{name:<8}{:>10.5}{:>10.5}{:>10.5}",
                r.m2_x,
                r.m2_y,
                r.m2_eff
            );
        }
    }
    if let Some(d) = relative_difference {
        say!(
            "relative difference: x {:.2e}, y {:.2e}, eff {:.2e}",
            d[0],
            d[1],
            d[2]
        );
    }
    Ok(())
}

/// Model and test set must describe the same fiber, case and raster.
fn check_compatible(
    state: &TrainState<f32>,
    records: &[SampleRecord],
    fiber: &fiberm2::FiberSpec,
    case: ModeCase,
) -> Result<()> {
    if case != state.case {
        return Err(CliError::Usage(format!(
            "the test set is {}-mode but the model was trained on the {}-mode case",
            case, state.case
        )));
    }
    if *fiber != state.fiber {
        return Err(CliError::Usage(
            "the test set and the model use different fibers".into(),
        ));
    }
    let res = state.network.config().input_resolution;
    if let Some(r) = records.iter().find(|r| r.resolution != res) {
        return Err(CliError::Usage(format!(
            "test images are {0}×{0} but the model expects {res}×{res}",
            r.resolution
        )));
    }
    Ok(())
}

fn load_test_records(path: &Path, state: &TrainState<f32>) -> Result<Vec<SampleRecord>> {
    let ds = load_dataset(path)?;
    check_compatible(state, &ds.records, &ds.manifest.fiber, ds.manifest.case)?;
    Ok(ds.records)
}

#[derive(Serialize)]
struct SweepRow {
    sigma: f64,
    mean_pe: f64,
}

fn sweep_noise(a: &M2Args, range: &str, threads: Option<usize>) -> Result<()> {
    let sigmas = SigmaRange::parse(range)?.values;
    let model = a
        .model
        .as_deref()
        .ok_or_else(|| CliError::Usage("--sweep-noise needs --model".into()))?;
    let state = load_checkpoint(model)?;
    let records = match &a.testset {
        Some(p) => load_test_records(p, &state)?,
        None => {
            let res = state.network.config().input_resolution;
            held_out_set(
                &Generator::new(&state.fiber, state.case, res)?,
                a.seed,
                a.count,
            )?
        }
    };
    let evals = evaluate(&state, &records, &sigmas, a.seed)?;
    let rows: Vec<SweepRow> = evals
        .iter()
        .map(|e| SweepRow {
            sigma: e.sigma,
            mean_pe: e.mean_pe,
        })
        .collect();
    write_csv(a.csv.as_deref(), &rows)?;
    if let Some(csv) = &a.csv {
        write_json(&run_config_beside(csv), &RunConfig::new("m2", threads, a))?;
    }
    Ok(())
}

pub fn gen(a: &GenArgs, threads: Option<usize>) -> Result<()> {
    let params = DatasetParams {
        case: a.case,
        count: a.count,
        master_seed: a.seed,
        stream: a.stream,
        resolution: a.res,
        noise_sigma: a.noise,
        fiber: a.fiber.spec()?,
    };
    let manifest = generate_dataset(&params, &a.out)?;
    write_json(
        &a.out.join(RUN_CONFIG_FILE),
        &RunConfig::new("gen", threads, a),
    )?;
    if a.json {
        return print_json(&manifest);
    }
    say!("wrote {} samples to {}", manifest.count, a.out.display());
    for f in [
        &manifest.files.images,
        &manifest.files.labels,
        &manifest.files.modal,
    ] {
        say!("{:<12} sha256 {}", f.name, f.sha256);
    }
    Ok(())
}

pub fn train(a: &TrainArgs, threads: Option<usize>) -> Result<()> {
    let spec = a.fiber.spec()?;
    let config = match a.arch {
        ArchArg::Reference => NetworkConfig::reference(a.res),
        ArchArg::Vgg16 => NetworkConfig::vgg16(a.res),
    };
    let options = TrainOptions {
        samples_per_epoch: a.samples_per_epoch,
        sgd: SgdConfig {
            schedule: LrSchedule {
                initial: a.lr,
                decay_epoch: a.lr_decay_epoch,
                decayed: a.lr_decayed,
            },
            momentum: a.momentum,
            batch_size: a.batch,
        },
        fiber: spec,
        ..TrainOptions::new(a.case, a.epochs, a.seed)
    };
    if !(a.lr > 0.0 && a.lr_decayed > 0.0) {
        return Err(CliError::Usage("learning rates must be positive".into()));
    }
    create_dir(&a.out)?;
    write_json(
        &a.out.join(RUN_CONFIG_FILE),
        &RunConfig::new("train", threads, a),
    )?;
    let eval_set = if a.eval_count == 0 {
        Vec::new()
    } else {
        held_out_set(&Generator::new(&spec, a.case, a.res)?, a.seed, a.eval_count)?
    };
    let state = train_network::<f32>(config, &options, &eval_set, |s| {
        let pe = s
            .mean_pe
            .map_or_else(|| "-".to_string(), |p| format!("{:.3}%", 100.0 * p));
        eprintln!(
            "epoch {:>3}  lr {:<6}  loss {:.4e}  PE {pe}  {:.1} s",
            s.epoch, s.learning_rate, s.mean_loss, s.seconds
        );
    })?;
    let header = save_checkpoint(&a.out, &state)?;
    say!(
        "saved {} epochs to {} (params sha256 {})",
        state.epoch,
        a.out.display(),
        header.params.sha256
    );
    Ok(())
}

#[derive(Serialize)]
struct PredictReport {
    m2_x: f64,
    m2_y: f64,
    m2_eff: f64,
    scaled: [f64; 2],
    below_floor: bool,
    seconds: f64,
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let state = load_checkpoint(&a.model)?;
    let pgm = Pgm::decode(&read_bytes(&a.image)?)?;
    let res = state.network.config().input_resolution;
    if pgm.width != res || pgm.height != res {
        return Err(CliError::Usage(format!(
            "image is {}×{} but the model expects {res}×{res}",
            pgm.width, pgm.height
        )));
    }
    let grid = Grid::new(res, 1.0)?;
    let img = normalize_for_input(&IntensityImage::new(grid, pgm.to_unit())?)?;
    let input: Vec<f32> = img.values.iter().map(|&v| v as f32).collect();
    let p = predict_m2(&state, &input)?;
    let report = PredictReport {
        m2_x: p.m2.m2_x,
        m2_y: p.m2.m2_y,
        m2_eff: p.m2.m2_eff,
        scaled: p.scaled,
        below_floor: p.below_floor,
        seconds: p.seconds,
    };
    if a.json {
        return print_json(&report);
    }
    say!(
        "M2_x {:.5}  M2_y {:.5}  M2_eff {:.5}",
        report.m2_x,
        report.m2_y,
        report.m2_eff
    );
    if report.below_floor {
        say!("warning: a predicted component is below the physical floor of 1");
    }
    say!("inference {:.3} ms", 1e3 * report.seconds);
    Ok(())
}

fn write_eval_csv(path: &Path, evals: &[NoiseEvaluation]) -> Result<()> {
    let mut w = crate::output::csv_writer(Some(path))?;
    let mut header = vec!["sigma".to_string(), "mean_pe".to_string()];
    if let Some(e) = evals.first() {
        header.extend(e.cdf.iter().map(|(t, _)| format!("pct_pe_le_{t:?}")));
    }
    w.write_record(&header)?;
    for e in evals {
        let mut row = vec![format!("{:?}", e.sigma), format!("{:?}", e.mean_pe)];
        row.extend(e.cdf.iter().map(|(_, p)| format!("{p:?}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalRow<'a> {
    sigma: f64,
    mean_pe: f64,
    cdf: &'a [(f64, f64)],
}

pub fn eval(a: &EvalArgs, threads: Option<usize>) -> Result<()> {
    let sigmas = SigmaRange::parse(&a.noise)?.values;
    let state = load_checkpoint(&a.model)?;
    let records = load_test_records(&a.testset, &state)?;
    let evals = evaluate(&state, &records, &sigmas, a.noise_seed)?;
    if let Some(csv) = &a.csv {
        write_eval_csv(csv, &evals)?;
        write_json(&run_config_beside(csv), &RunConfig::new("eval", threads, a))?;
    }
    if a.json {
        let rows: Vec<EvalRow> = evals
            .iter()
            .map(|e| EvalRow {
                sigma: e.sigma,
                mean_pe: e.mean_pe,
                cdf: &e.cdf,
            })
            .collect();
        return print_json(&rows);
    }
    say!(
        "{:>8}{:>12}{:>12}{:>12}",
        "sigma",
        "mean PE",
        "PE<=5%",
        "PE<=10%"
    );
    for e in &evals {
        let pct = |t: f64| {
            e.cdf
                .iter()
                .find(|(x, _)| *x == t)
                .map_or(f64::NAN, |(_, p)| *p)
        };
        say!(
            "{:>8.3}{:>11.3}%{:>11.1}%{:>11.1}%",
            e.sigma,
            100.0 * e.mean_pe,
            pct(0.05),
            pct(0.10)
        );
    }
    Ok(())
}

pub const FIG4_FILE: &str = "pe_vs_epoch.csv";
pub const FIG5_FILE: &str = "pe_cdf.csv";
pub const FIG7_FILE: &str = "label_vs_prediction.csv";

#[derive(Serialize)]
struct EpochRow {
    epoch: u64,
    learning_rate: f64,
    mean_loss: f64,
    mean_pe: Option<f64>,
}

#[derive(Serialize)]
struct CdfRow {
    pe_threshold: f64,
    percent_of_samples: f64,
}

#[derive(Serialize)]
struct ComparisonRow {
    rank: usize,
    seed_index: u64,
    label_m2_eff: f64,
    predicted_m2_eff: f64,
    pe: f64,
}

pub fn report(a: &ReportArgs, threads: Option<usize>) -> Result<()> {
    let state = load_checkpoint(&a.model)?;
    if state.history.is_empty() {
        return Err(fiberm2::Error::Format {
            what: "checkpoint",
            reason: "no training history".into(),
        }
        .into());
    }
    let records = load_test_records(&a.testset, &state)?;
    let clean = evaluate(&state, &records, &[0.0], 0)?.remove(0);
    create_dir(&a.out)?;

    let epochs: Vec<EpochRow> = state
        .history
        .iter()
        .map(|s| EpochRow {
            epoch: s.epoch,
            learning_rate: s.learning_rate,
            mean_loss: s.mean_loss,
            mean_pe: s.mean_pe,
        })
        .collect();
    write_csv(Some(&a.out.join(FIG4_FILE)), &epochs)?;

    let cdf: Vec<CdfRow> = clean
        .cdf
        .iter()
        .map(|&(t, p)| CdfRow {
            pe_threshold: t,
            percent_of_samples: p,
        })
        .collect();
    write_csv(Some(&a.out.join(FIG5_FILE)), &cdf)?;

    let n = a.samples.min(records.len());
    let mut rows: Vec<ComparisonRow> = (0..n)
        .map(|i| ComparisonRow {
            rank: 0,
            seed_index: records[i].seed_index,
            label_m2_eff: records[i].m2_eff(),
            predicted_m2_eff: clean.predicted[i],
            pe: clean.pe[i],
        })
        .collect();
    rows.sort_by(|p, q| p.label_m2_eff.total_cmp(&q.label_m2_eff));
    rows.iter_mut()
        .enumerate()
        .for_each(|(k, r)| r.rank = k + 1);
    write_csv(Some(&a.out.join(FIG7_FILE)), &rows)?;

    write_json(
        &a.out.join(RUN_CONFIG_FILE),
        &RunConfig::new("report", threads, a),
    )?;
    say!(
        "wrote {FIG4_FILE}, {FIG5_FILE} and {FIG7_FILE} to {} (mean PE {:.3}%)",
        a.out.display(),
        100.0 * clean.mean_pe
    );
    Ok(())
}
