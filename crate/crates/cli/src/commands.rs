use std::fs;
use std::path::{Path, PathBuf};

use hada::eval::{baseline_b1, evaluate, EvalOutcome, ReportFile, ScoreMode};
use hada::featstore::{
    generate_synthetic, read_store, split_dataset, write_store, FeatureRecord, ItemEntry, Modality,
    ModelSpec, PairEntry, Split, StoreManifest,
};
use hada::model::{
    checkpoint_digest, decode_checkpoint, FeatureSet, HadaParams, ModelConfig, Phase, Variant,
};
use hada::numerics::Tensor;
use hada::training::{self, TrainOutput, BEST_CHECKPOINT, LOG_FILE};
use serde::Serialize;

use crate::config::RunConfig;
use crate::table::{render, Row};
use crate::{
    CliError, Common, CompareArgs, EmbedArgs, EvalArgs, GenSynthArgs, ModeArg, TrainArgs,
    VariantArg,
};

/// Model id written by `embed`.
pub const EMBED_MODEL_ID: &str = "hada";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const REPORT_FILE: &str = "report.json";

fn load_run(common: &Common) -> Result<RunConfig, CliError> {
    let mut run = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = &common.store {
        run.store = Some(s.clone());
    }
    if let Some(m) = &common.models {
        run.models = m.clone();
    }
    run.resolve_seed(common.seed)?;
    Ok(run)
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(hada::Error::from)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Store contents resolved against the run's model selection.
struct Data {
    model: ModelConfig,
    features: FeatureSet<f64>,
}

fn load_data(run: &RunConfig) -> Result<Data, CliError> {
    let (records, manifest) = read_store(run.store_path()?)?;
    let model = run.model.clone().with_models(&manifest, &run.models)?;
    model.validate()?;
    let features = FeatureSet::new(
        &records,
        manifest,
        &model.model_ids(),
        model.normalize_globals,
    )?;
    Ok(Data { model, features })
}

fn with_variant(cfg: &ModelConfig, variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        ..cfg.clone()
    }
}

/// A checkpoint with its file digest.
struct Loaded {
    params: HadaParams<f64>,
    digest: String,
}

impl Loaded {
    /// Score mode matching how the checkpoint was trained.
    fn mode(&self) -> ScoreMode {
        match (self.params.config().variant, self.params.phase()) {
            (Variant::B2, _) => ScoreMode::B2,
            (Variant::Hada, Phase::One) => ScoreMode::Fused,
            (Variant::Hada, Phase::Two) => ScoreMode::Weighted,
        }
    }
}

/// Loads a checkpoint written for either variant of the run's model config.
fn load_ckpt(path: &Path, cfg: &ModelConfig, variant: Option<Variant>) -> Result<Loaded, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| usage(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let candidates = match variant {
        Some(v) => vec![v],
        None => vec![cfg.variant, other_variant(cfg.variant)],
    };
    let mut first_err = None;
    for v in candidates {
        match decode_checkpoint(&bytes, &with_variant(cfg, v)) {
            Ok(params) => {
                return Ok(Loaded {
                    params,
                    digest: checkpoint_digest(&bytes),
                })
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    Err(first_err.expect("at least one candidate").into())
}

fn other_variant(v: Variant) -> Variant {
    match v {
        Variant::Hada => Variant::B2,
        Variant::B2 => Variant::Hada,
    }
}

fn variant_of(arg: VariantArg) -> Variant {
    match arg {
        VariantArg::Hada => Variant::Hada,
        VariantArg::B2 => Variant::B2,
    }
}

/// `anchor` names the configured anchor unless a model is literally called that.
fn resolve_model(name: &str, cfg: &ModelConfig) -> String {
    if name == "anchor" && !cfg.model_ids().iter().any(|m| m == "anchor") {
        cfg.anchor_model.clone()
    } else {
        name.to_string()
    }
}

pub fn gen_synth(args: GenSynthArgs) -> Result<(), CliError> {
    let mut run = load_run(&args.common)?;
    if let Some(out) = args.out {
        run.store = Some(out);
    }
    let synth = &mut run.synth;
    if let Some(n) = args.items {
        synth.images = n;
    }
    if let Some(n) = args.texts_per_image {
        synth.texts_per_image = n;
    }
    if let Some(x) = args.noise {
        synth.noise = x;
    }
    if let Some(n) = args.latent_dim {
        synth.latent_dim = n;
    }
    if let Some(f) = args.split {
        run.split_fractions = f.try_into().map_err(|f: Vec<f64>| {
            CliError::Usage(format!("--split takes 3 fractions, got {}", f.len()))
        })?;
    }
    if !run.models.is_empty() {
        let mut kept = Vec::new();
        for id in &run.models {
            let m = run
                .synth
                .models
                .iter()
                .find(|m| &m.id == id)
                .ok_or_else(|| usage(format!("no synthetic model {id:?} in the config")))?;
            kept.push(m.clone());
        }
        run.synth.models = kept;
    }
    run.synth.validate()?;
    let store = run.store_path()?.to_path_buf();
    run.print_header("gen-synth");

    let (records, manifest) = generate_synthetic(&run.synth)?;
    let [tr, va, te] = run.split_fractions;
    let manifest = split_dataset(&manifest, (tr, va, te), run.synth.seed)?;
    write_store(&records, &manifest, &store)?;
    let count = |s| manifest.pairs_in(s).len();
    println!(
        "wrote {} images ({} train / {} val / {} test), {} records to {}",
        manifest.pairs.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        records.len(),
        store.display()
    );
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let mut run = load_run(&args.common)?;
    let phase = Phase::from_number(args.phase)
        .ok_or_else(|| usage(format!("--phase must be 1 or 2, got {}", args.phase)))?;
    if phase == Phase::Two && args.resume.is_none() {
        return Err(usage("--phase 2 requires --resume <checkpoint>"));
    }
    if let Some(out) = args.out {
        run.out_dir = Some(out);
    }
    if let Some(v) = args.variant {
        run.model.variant = variant_of(v);
    }
    let t = &mut run.train;
    if let Some(x) = args.epochs {
        t.epochs = x;
    }
    if let Some(x) = args.batch_size {
        t.batch_size = x;
    }
    if let Some(x) = args.lr_max {
        t.lr_max = x;
    }
    if let Some(x) = args.lr_min {
        t.lr_min = x;
    }
    if let Some(x) = args.dropout {
        t.dropout = x;
    }
    if let Some(x) = args.patience {
        t.patience = x;
    }
    run.train.validate()?;
    let out_dir = run.out_path()?.to_path_buf();
    run.print_header("train");

    let data = load_data(&run)?;
    let init = match &args.resume {
        Some(path) => load_ckpt(path, &data.model, Some(run.model.variant))?.params,
        None => HadaParams::init(&data.model, run.train.tau_init, run.train.seed)?,
    };
    log::info!(
        "phase {} on {} train pairs, {} weights",
        phase.number(),
        data.features.pairs_in(Split::Train).len(),
        init.weight_count()
    );
    write_json(&out_dir.join(RUN_CONFIG_FILE), &run)?;
    let outcome = training::train(
        &data.features,
        &run.train,
        phase,
        init,
        &TrainOutput {
            dir: Some(out_dir.clone()),
            deterministic_log: args.deterministic_log,
        },
    )?;
    let best = &outcome.early_stop;
    println!(
        "epochs {}  best val RSum {:.2}  tau {:.5}  alpha {:.5}",
        outcome.log.len(),
        best.best_val_rsum,
        outcome.best.tau(),
        outcome.best.alpha()
    );
    println!("checkpoint {}", out_dir.join(BEST_CHECKPOINT).display());
    println!("log {}", out_dir.join(LOG_FILE).display());
    Ok(())
}

/// One side of a B1 combination.
enum Source<'a> {
    Ckpt(&'a Path),
    Single(String),
}

fn source<'a>(
    ckpt: Option<&'a PathBuf>,
    model: Option<&String>,
    flag: &str,
    cfg: &ModelConfig,
) -> Result<Source<'a>, CliError> {
    match (ckpt, model) {
        (Some(p), None) => Ok(Source::Ckpt(p)),
        (None, Some(m)) => Ok(Source::Single(resolve_model(m, cfg))),
        _ => Err(usage(format!(
            "--mode b1 needs exactly one of --ckpt-{flag} or --model-{flag}"
        ))),
    }
}

struct Scored {
    outcome: EvalOutcome,
    config_hash: Option<u32>,
    digest: Option<String>,
}

fn score_source(src: &Source<'_>, data: &Data, split: Split) -> Result<Scored, CliError> {
    match src {
        Source::Ckpt(path) => {
            let ck = load_ckpt(path, &data.model, None)?;
            let outcome = evaluate(Some(&ck.params), &data.features, split, &ck.mode())?;
            Ok(Scored {
                outcome,
                config_hash: Some(ck.params.config().hash()),
                digest: Some(ck.digest),
            })
        }
        Source::Single(m) => Ok(Scored {
            outcome: evaluate(None, &data.features, split, &ScoreMode::Single(m.clone()))?,
            config_hash: None,
            digest: None,
        }),
    }
}

fn mode_from_config(s: &str) -> Result<(ModeArg, Option<String>), CliError> {
    if s == "b1" {
        return Ok((ModeArg::B1, None));
    }
    match s.parse::<ScoreMode>() {
        Ok(ScoreMode::Fused) => Ok((ModeArg::Fused, None)),
        Ok(ScoreMode::Weighted) => Ok((ModeArg::Weighted, None)),
        Ok(ScoreMode::B2) => Ok((ModeArg::B2, None)),
        Ok(ScoreMode::Single(m)) => Ok((ModeArg::Single, Some(m))),
        Err(_) => Err(usage(format!("unknown score_mode {s:?}"))),
    }
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let mut run = load_run(&args.common)?;
    let (mode, config_model) = match args.mode {
        Some(m) => (m, None),
        None => mode_from_config(&run.score_mode)?,
    };
    run.score_mode = match mode {
        ModeArg::Fused => "fused".into(),
        ModeArg::Weighted => "weighted".into(),
        ModeArg::B2 => "b2".into(),
        ModeArg::B1 => "b1".into(),
        ModeArg::Single => {
            let m = args
                .model
                .clone()
                .or(config_model)
                .ok_or_else(|| usage("--mode single needs --model <id>"))?;
            format!("single:{m}")
        }
    };
    if let Some(s) = args.split {
        run.split = s;
    }
    let report_path = args
        .out
        .clone()
        .or_else(|| run.out_dir.as_ref().map(|d| d.join(REPORT_FILE)));
    run.print_header("eval");

    let data = load_data(&run)?;
    let split = run.split;
    let (name, scored) = match mode {
        ModeArg::Single => {
            let m = run.score_mode.trim_start_matches("single:");
            let m = resolve_model(m, &data.model);
            let scored = score_source(&Source::Single(m.clone()), &data, split)?;
            (format!("single:{m}"), scored)
        }
        ModeArg::Fused | ModeArg::Weighted | ModeArg::B2 => {
            let path = args
                .ckpt
                .as_ref()
                .ok_or_else(|| usage(format!("--mode {} needs --ckpt", run.score_mode)))?;
            let variant = if mode == ModeArg::B2 {
                Variant::B2
            } else {
                Variant::Hada
            };
            let ck = load_ckpt(path, &data.model, Some(variant))?;
            let score = run.score_mode.parse::<ScoreMode>()?;
            let outcome = evaluate(Some(&ck.params), &data.features, split, &score)?;
            (
                run.score_mode.clone(),
                Scored {
                    outcome,
                    config_hash: Some(ck.params.config().hash()),
                    digest: Some(ck.digest),
                },
            )
        }
        ModeArg::B1 => {
            let a = source(
                args.ckpt_a.as_ref(),
                args.model_a.as_ref(),
                "a",
                &data.model,
            )?;
            let b = source(
                args.ckpt_b.as_ref(),
                args.model_b.as_ref(),
                "b",
                &data.model,
            )?;
            let sa = score_source(&a, &data, split)?;
            let sb = score_source(&b, &data, split)?;
            let outcome = baseline_b1(&sa.outcome.rankings, &sb.outcome.rankings)?;
            let digest = match (sa.digest, sb.digest) {
                (None, None) => None,
                (x, y) => Some(format!(
                    "{},{}",
                    x.unwrap_or_default(),
                    y.unwrap_or_default()
                )),
            };
            (
                "b1".to_string(),
                Scored {
                    outcome,
                    config_hash: sa.config_hash.or(sb.config_hash),
                    digest,
                },
            )
        }
    };

    let report = &scored.outcome.report;
    print!("{}", render(&[Row::new(&name, report)], false));
    if let Some(path) = report_path {
        write_json(
            &path,
            &ReportFile::new(report, scored.config_hash, scored.digest),
        )?;
        println!("report {}", path.display());
    }
    Ok(())
}

pub fn embed(args: EmbedArgs) -> Result<(), CliError> {
    let run = load_run(&args.common)?;
    run.print_header("embed");
    let data = load_data(&run)?;
    let ck = load_ckpt(&args.ckpt, &data.model, args.variant.map(variant_of))?;
    let d_h = ck.params.config().d_h;
    let manifest = &data.features.manifest;

    let items: Vec<&ItemEntry> = manifest
        .items
        .iter()
        .filter(|it| args.split.is_none() || it.split == args.split)
        .collect();
    let mut records = Vec::with_capacity(items.len());
    for modality in [Modality::Image, Modality::Text] {
        let of: Vec<&ItemEntry> = items
            .iter()
            .copied()
            .filter(|it| it.modality == modality)
            .collect();
        if of.is_empty() {
            continue;
        }
        let feats = of
            .iter()
            .map(|it| data.features.get(&it.id))
            .collect::<Result<Vec<_>, _>>()?;
        let h = ck.params.embed_items(&feats, modality)?;
        for (k, it) in of.iter().enumerate() {
            let row = h.row_slice(k).to_vec();
            records.push(FeatureRecord::new(
                it.id.clone(),
                modality,
                EMBED_MODEL_ID,
                Tensor::matrix(1, d_h, row.clone()).map_err(hada::Error::from)?,
                row,
            )?);
        }
    }
    let kept: std::collections::BTreeSet<&str> = items.iter().map(|it| it.id.as_str()).collect();
    let pairs = manifest
        .pairs
        .iter()
        .filter(|p| kept.contains(p.image_id.as_str()))
        .map(|p| PairEntry {
            image_id: p.image_id.clone(),
            text_ids: p
                .text_ids
                .iter()
                .filter(|t| kept.contains(t.as_str()))
                .cloned()
                .collect(),
        })
        .collect();
    let out_manifest = StoreManifest {
        models: vec![ModelSpec {
            id: EMBED_MODEL_ID.into(),
            d_tok: d_h,
            d_glob: d_h,
            variable_len: false,
        }],
        items: items.into_iter().cloned().collect(),
        pairs,
        ..Default::default()
    };
    write_store(&records, &out_manifest, &args.out)?;
    println!(
        "wrote {} embeddings (d = {d_h}) to {}",
        records.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct CompareFile {
    split: Split,
    reference: String,
    rows: Vec<Row>,
}

pub fn compare(args: CompareArgs) -> Result<(), CliError> {
    let mut run = load_run(&args.common)?;
    if let Some(s) = args.split {
        run.split = s;
    }
    run.print_header("compare");
    let data = load_data(&run)?;
    let split = run.split;

    let mut rows = Vec::new();
    let mut singles = Vec::new();
    for m in data.model.model_ids() {
        let s = score_source(&Source::Single(m.clone()), &data, split)?;
        rows.push(Row::new(format!("single:{m}"), &s.outcome.report));
        singles.push(s.outcome);
    }
    if let [a, b, ..] = singles.as_slice() {
        let b1 = baseline_b1(&a.rankings, &b.rankings)?;
        rows.push(Row::new("b1", &b1.report));
    }
    if let Some(path) = &args.b2 {
        let ck = load_ckpt(path, &data.model, Some(Variant::B2))?;
        let out = evaluate(Some(&ck.params), &data.features, split, &ScoreMode::B2)?;
        rows.push(Row::new("b2", &out.report));
    }
    let ck = load_ckpt(&args.hada, &data.model, Some(Variant::Hada))?;
    let out = evaluate(Some(&ck.params), &data.features, split, &ck.mode())?;
    rows.push(Row::new("hada", &out.report));

    let reference = match &args.reference {
        Some(r) if r.starts_with("single:") => {
            format!(
                "single:{}",
                resolve_model(&r["single:".len()..], &data.model)
            )
        }
        Some(r) => r.clone(),
        None => format!("single:{}", data.model.anchor_model),
    };
    let base = rows
        .iter()
        .find(|r| r.name == reference)
        .map(|r| r.total_rsum)
        .ok_or_else(|| {
            let names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
            usage(format!("reference {reference:?} is not one of {names:?}"))
        })?;
    for r in &mut rows {
        r.delta_r = r.total_rsum - base;
    }
    rows.sort_by(|a, b| a.total_rsum.total_cmp(&b.total_rsum));

    print!("{}", render(&rows, true));
    let out = args
        .out
        .clone()
        .or_else(|| run.out_dir.as_ref().map(|d| d.join("compare.json")));
    if let Some(path) = out {
        write_json(
            &path,
            &CompareFile {
                split,
                reference,
                rows,
            },
        )?;
        println!("table {}", path.display());
    }
    Ok(())
}
