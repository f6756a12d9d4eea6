use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use log::{info, warn};
use serde_json::{json, Map};
use textar_core::dataset::{Dataset, LabeledDocument};
use textar_core::evaluation::{cavg_covering, evaluate_run, infer_records};
use textar_core::geometry::{sequential_context_windows, GeometryConfig};
use textar_core::gradsuite::gradient_suite;
use textar_core::io::{self, AnnotationRecord, WindowRecord};
use textar_core::model::{checkpoint_config, Model, ModelConfig};
use textar_core::nncore::{Checkpoint, GradCheckConfig};
use textar_core::synthdoc::{document_seed, generate_document};
use textar_core::training::{train_e2e, train_stage1, train_stage2, Stage, TrainData};

use crate::config::RunConfig;
use crate::CliError;

fn runtime(context: &str) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

pub fn synth(cfg: &RunConfig, out_dir: &Path, docs: usize, seed: u64) -> Result<(), CliError> {
    let mut dataset = Dataset::default();
    let mut pages = Vec::with_capacity(docs);
    for i in 0..docs {
        let doc = generate_document(&cfg.synth, document_seed(seed, i as u64))?;
        pages.push(doc.render_page());
        dataset.docs.push(LabeledDocument::new(format!("images/doc{i:05}.png"), doc.layout, doc.crops)?);
    }
    io::save_dataset(out_dir, &dataset, Some(&pages))?;
    info!("wrote {docs} documents, {} words to {}", dataset.words(), out_dir.display());
    Ok(())
}

pub fn select_windows(input: &Path, s: usize, k: f64, m: f64, seed: u64, output: &Path) -> Result<(), CliError> {
    let geometry = GeometryConfig { s, k, m };
    geometry.validate()?;
    let records: Vec<AnnotationRecord> = io::read_jsonl(input)?;
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let layout = r.to_layout()?;
        for w in sequential_context_windows(&layout, s, k, m, document_seed(seed, i as u64))? {
            out.push(WindowRecord { doc: r.image.clone(), anchor: w.anchor_id, members: w.members, mask: w.padding_mask });
        }
    }
    io::write_jsonl(output, &out)?;
    info!("wrote {} windows for {} documents to {}", out.len(), records.len(), output.display());
    Ok(())
}

/// Window geometry for a model: the configured metric weights with the
/// model's window size.
fn model_geometry(cfg: &RunConfig, model: &ModelConfig, s: Option<usize>) -> Result<GeometryConfig, CliError> {
    let s = s.unwrap_or(model.s);
    if s != model.s {
        return Err(CliError::Validation(format!("--S {s} differs from the model's window size {}", model.s)));
    }
    if cfg.geometry.s != model.s {
        warn!("geometry.s = {} ignored; using the model's window size {}", cfg.geometry.s, model.s);
    }
    Ok(GeometryConfig { s, ..cfg.geometry })
}

pub struct TrainArgs<'a> {
    pub stage: &'a str,
    pub data: &'a Path,
    pub validation: Option<&'a Path>,
    pub seed: u64,
    pub out: &'a Path,
    pub init_from: Option<&'a Path>,
    pub metrics: Option<&'a Path>,
}

pub fn train(mut cfg: RunConfig, args: TrainArgs<'_>) -> Result<(), CliError> {
    let stage: Stage = args.stage.parse()?;
    cfg.train.stage = stage;
    cfg.train.seed = args.seed;
    match (stage, args.init_from) {
        (Stage::Stage2, None) => return Err(CliError::Validation("stage 2 needs --init-from <stage-1 checkpoint>".into())),
        (Stage::Stage1 | Stage::E2e, Some(_)) => {
            return Err(CliError::Validation("--init-from only applies to stage 2".into()))
        }
        _ => {}
    }
    let model_cfg = &cfg.model;
    let geometry = model_geometry(&cfg, model_cfg, None)?;
    let load = |dir: &Path| io::load_dataset(dir, model_cfg.crop_height, model_cfg.crop_width);
    let dataset = load(args.data)?;
    let windows = dataset.windows(&geometry, args.seed)?;
    let validation = args.validation.map(load).transpose()?;
    let val_windows = validation.as_ref().map(|v| v.windows(&geometry, args.seed)).transpose()?;
    let data = TrainData {
        dataset: &dataset,
        windows: &windows,
        validation: validation.as_ref().zip(val_windows.as_deref()),
    };
    info!("training stage {} on {} documents, {} windows", args.stage, dataset.len(), windows.len());

    let (model, log) = match stage {
        Stage::Stage1 => train_stage1::<f32>(model_cfg, data, &cfg.train)?,
        Stage::E2e => train_e2e::<f32>(model_cfg, data, &cfg.train)?,
        Stage::Stage2 => {
            let init = args.init_from.expect("checked above");
            let stage1 = Model::<f32>::from_checkpoint(&Checkpoint::load(init)?)?;
            train_stage2(&stage1, model_cfg, data, &cfg.train)?
        }
    };

    let mut extra = Map::new();
    extra.insert("stage".into(), json!(stage));
    extra.insert("seed".into(), json!(args.seed));
    extra.insert("geometry".into(), serde_json::to_value(geometry).map_err(|e| CliError::Runtime(e.to_string()))?);
    model.to_checkpoint(extra)?.save(args.out)?;

    let metrics = args.metrics.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = args.out.as_os_str().to_owned();
        p.push(".metrics.csv");
        p.into()
    });
    log.write_csv(BufWriter::new(File::create(&metrics).map_err(runtime("metrics file"))?))?;
    if let Some(last) = log.epochs.iter().rev().find(|e| e.split == "train") {
        info!("final train loss {:.4} after {} steps", last.loss, log.steps);
    }
    info!("wrote {} and {}", args.out.display(), metrics.display());
    Ok(())
}

fn load_model(ckpt: &Path) -> Result<Model<f32>, CliError> {
    let ckpt = Checkpoint::load(ckpt)?;
    checkpoint_config(&ckpt)?;
    Ok(Model::<f32>::from_checkpoint(&ckpt)?)
}

pub fn eval(cfg: &RunConfig, ckpt: &Path, data: &Path, s: Option<usize>, seed: u64, report: &Path) -> Result<(), CliError> {
    let model = load_model(ckpt)?;
    let geometry = model_geometry(cfg, &model.config, s)?;
    let dataset = io::load_dataset(data, model.config.crop_height, model.config.crop_width)?;
    let outcome = evaluate_run(&model, &dataset, &geometry, seed, cfg.eval.batch_windows)?;
    let text = serde_json::to_string_pretty(&outcome.report).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(report, text + "\n").map_err(runtime("report"))?;
    info!("macro F1 {:.4} over {} words; report at {}", outcome.report.macro_f1, dataset.words(), report.display());
    Ok(())
}

pub fn predict(cfg: &RunConfig, annotations: &Path, ckpt: &Path, seed: u64, out: &Path) -> Result<(), CliError> {
    let model = load_model(ckpt)?;
    let geometry = model_geometry(cfg, &model.config, None)?;
    let dataset = io::load_annotations(annotations, model.config.crop_height, model.config.crop_width, false)?;
    let windows = dataset.windows(&geometry, seed)?;
    let records = infer_records(&model, &dataset, &windows, cfg.eval.batch_windows)?;
    let labels = cavg_covering(&records, &dataset)?;
    let out_records: Vec<AnnotationRecord> = io::read_jsonl::<AnnotationRecord>(annotations)?
        .into_iter()
        .map(|mut r| {
            for w in &mut r.words {
                let l = labels[&(r.image.clone(), w.id)];
                w.t1 = Some(l.t1);
                w.t2 = Some(l.t2);
            }
            r
        })
        .collect();
    io::write_jsonl(out, &out_records)?;
    info!("labelled {} words in {} documents", labels.len(), out_records.len());
    Ok(())
}

pub fn gradcheck(config: &str, seed: u64, samples: usize) -> Result<(), CliError> {
    let model_cfg = match ModelConfig::preset(config) {
        Ok(c) => c,
        Err(_) if Path::new(config).is_file() => RunConfig::load(Some(Path::new(config)), &[])?.model,
        Err(e) => return Err(e.into()),
    };
    let check = GradCheckConfig { samples_per_param: samples, seed, ..Default::default() };
    let report = gradient_suite(&model_cfg, &check)?;
    for e in &report.entries {
        println!(
            "{:<28} {} checked {:>5}  max rel err {:.3e}",
            e.name,
            if e.passed { "ok  " } else { "FAIL" },
            e.checked,
            e.max_rel_error
        );
    }
    if report.passed() {
        println!("all gradients within {:.0e}", check.tolerance);
        Ok(())
    } else {
        Err(CliError::Runtime(format!("gradient check failed (max rel err {:.3e})", report.max_rel_error())))
    }
}
