use std::path::{Path, PathBuf};

use draftlab_core::model::{count_layout, HeadKind, ModelConfig};
use draftlab_core::numerics::{GroupSet, ParamGroup};
use draftlab_core::train::{evaluate, load_checkpoint, ObjectiveKind, Regime};

use crate::config::{ExperimentConfig, Overrides, SPLITS};
use crate::error::{CliError, Result};
use crate::recipe::{self, Data, Outcome, Plans, NORMALIZED_FILE};
use crate::report::{self, DadaRow, Table};
use crate::summary::Summary;

/// The d_ada column of the paper-scale parameter table.
pub const PAPER_DADA: [usize; 6] = [64, 128, 256, 512, 1024, 2048];

fn write(path: PathBuf, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn require_config(config: Option<&Path>) -> Result<&Path> {
    config.ok_or_else(|| CliError::Usage("--config is required".into()))
}

/// Checks the configuration and writes its normalized echo to the output
/// directory.
pub fn cmd_validate(config: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(config, overrides)?;
    mkdir(&cfg.out)?;
    write(cfg.out.join(NORMALIZED_FILE), cfg.normalized())?;
    Ok(cfg)
}

pub fn cmd_run(config: &Path, overrides: &Overrides) -> Result<Outcome> {
    let cfg = cmd_validate(config, overrides)?;
    let outcome = recipe::execute(&cfg)?;
    recipe::write_artifacts(&cfg, &outcome, &cfg.out)?;
    Ok(outcome)
}

/// SSL head implied by the configured objective, without fitting anything.
pub fn ssl_head(cfg: &ExperimentConfig, model: &ModelConfig) -> HeadKind {
    match cfg.objective.kind {
        ObjectiveKind::MaskedPredict => HeadKind::MaskedPredict { k: cfg.objective.clusters },
        ObjectiveKind::Contrastive => HeadKind::Contrastive { dim: model.d_model },
        _ => HeadKind::Apc { shifts: cfg.objective.shifts.clone() },
    }
}

/// Runs DRAFT self-transfer once per d_ada, sharing Stage 1. With
/// `count_only`, fills only the parameter columns.
pub fn cmd_sweep_dada(config: &Path, overrides: &Overrides, d_adas: &[usize], count_only: bool) -> Result<Table> {
    if d_adas.is_empty() {
        return Err(CliError::Usage("sweep-dada needs a non-empty --d-ada list".into()));
    }
    if d_adas.contains(&0) {
        return Err(CliError::Usage("d_ada values must be positive".into()));
    }
    let cfg = cmd_validate(config, overrides)?;
    if cfg.regime != Regime::DraftSelf {
        return Err(CliError::rule(None, format!("sweep-dada runs draft_self, config regime is {}", cfg.regime)));
    }
    let mc = cfg.model_config()?;
    let head = ssl_head(&cfg, &mc);
    let reference = recipe::saft_reference(&mc, &head);
    let mut rows = Vec::new();
    if count_only {
        for &d in d_adas {
            let updated = count_layout(&mc, &head, Some(d), GroupSet::of(&[ParamGroup::Adapter]));
            rows.push(DadaRow { d_ada: d, dev_wer: None, test_wer: None, nc: false, updated, relative: updated as f64 / reference as f64 });
        }
    } else {
        let data = Data::load(&cfg)?;
        let plans = Plans::new(&cfg, recipe::objective(&cfg, data.source.as_ref())?);
        let (s1, pre) = recipe::stage1(&cfg, &data, &plans)?;
        if let Some(p) = &pre {
            draftlab_core::train::save_checkpoint(cfg.out.join("pretrain.ckpt"), &p.checkpoint)?;
            write(cfg.out.join("pretrain.metrics.tsv"), p.report.metrics_tsv())?;
        }
        for &d in d_adas {
            let mut c = cfg.clone();
            c.d_ada = Some(d);
            c.out = cfg.out.join(format!("d_ada{d}"));
            let run = recipe::run_from(&c, &data, &plans, Some(&s1))?;
            let outcome = recipe::finish(&c, &data, &plans, run, None)?;
            recipe::write_artifacts(&c, &outcome, &c.out)?;
            let s = &outcome.summary;
            rows.push(DadaRow {
                d_ada: d,
                dev_wer: s.dev_wer,
                test_wer: Some(s.test_wer),
                nc: s.nc,
                updated: s.updated_params_total,
                relative: s.updated_params_relative,
            });
        }
    }
    let table = report::dada_table(&rows)?;
    write(cfg.out.join("sweep.tsv"), table.tsv())?;
    write(cfg.out.join("sweep.txt"), table.text())?;
    Ok(table)
}

pub fn cmd_report(dirs: &[PathBuf], out: Option<&Path>) -> Result<Table> {
    if dirs.is_empty() {
        return Err(CliError::Usage("report needs at least one run directory".into()));
    }
    let runs = dirs.iter().map(|d| Ok((Summary::read(d)?, d.clone()))).collect::<Result<Vec<_>>>()?;
    let table = report::comparison(&runs)?;
    if let Some(out) = out {
        mkdir(out)?;
        write(out.join("report.tsv"), table.tsv())?;
        write(out.join("report.txt"), table.text())?;
    }
    Ok(table)
}

/// Adapter parameter counts from the closed-form layout. Without a
/// config the SAFT reference uses four APC prediction heads.
pub fn cmd_count_params(preset: &str, config: Option<&Path>, overrides: &Overrides, d_adas: &[usize], out: Option<&Path>) -> Result<Table> {
    let (mc, head) = match config {
        Some(c) => {
            let cfg = ExperimentConfig::load(c, overrides)?;
            let mc = cfg.model_config()?;
            let head = ssl_head(&cfg, &mc);
            (mc, head)
        }
        None => (ModelConfig::preset(preset)?, HeadKind::Apc { shifts: vec![1, 2, 3, 4] }),
    };
    let d_adas = if d_adas.is_empty() { &PAPER_DADA[..] } else { d_adas };
    if d_adas.contains(&0) {
        return Err(CliError::Usage("d_ada values must be positive".into()));
    }
    let reference = recipe::saft_reference(&mc, &head);
    let rows: Vec<DadaRow> = d_adas
        .iter()
        .map(|&d| {
            let updated = count_layout(&mc, &head, Some(d), GroupSet::of(&[ParamGroup::Adapter]));
            DadaRow { d_ada: d, dev_wer: None, test_wer: None, nc: false, updated, relative: updated as f64 / reference as f64 }
        })
        .collect();
    let mut table = report::dada_table(&rows)?;
    table.notes.push(format!("SAFT reference: {reference} ({})", report::millions(reference)));
    if let Some(out) = out {
        mkdir(out)?;
        write(out.join("params.tsv"), table.tsv())?;
    }
    Ok(table)
}

/// Greedy decoding of a target split with a finetuned checkpoint.
pub fn cmd_decode(config: &Path, overrides: &Overrides, checkpoint: Option<&Path>, split: &str) -> Result<f64> {
    let cfg = ExperimentConfig::load(config, overrides)?;
    let k =
        SPLITS[1..].iter().position(|s| *s == split).ok_or_else(|| CliError::Usage(format!("unknown split `{split}` (dev or test)")))?;
    let ckpt = checkpoint.map_or_else(|| cfg.out.join("finetune.ckpt"), Path::to_path_buf);
    let (model, _) = load_checkpoint(&ckpt, &cfg.model_config()?)?;
    if !matches!(model.head(), HeadKind::Asr { .. }) {
        return Err(draftlab_core::Error::CheckpointContent(format!("{} has no ASR head", ckpt.display())).into());
    }
    let corpus = recipe::load_corpus(&cfg.target, &cfg)?;
    let utts = if k == 0 { &corpus.dev } else { &corpus.test };
    let result = evaluate(&model, utts)?;
    mkdir(&cfg.out)?;
    recipe::write_eval(&cfg.out, split, &result)
}

/// Scores a decode file; the report goes next to it unless `out` is set.
pub fn cmd_score(input: Option<&Path>, config: Option<&Path>, overrides: &Overrides, out: Option<&Path>) -> Result<(f64, PathBuf)> {
    let input = match (input, config) {
        (Some(i), _) => i.to_path_buf(),
        (None, Some(c)) => ExperimentConfig::load(c, overrides)?.out.join("decode_test.tsv"),
        (None, None) => return Err(CliError::Usage("score needs --input or --config".into())),
    };
    let text = std::fs::read_to_string(&input).map_err(|e| CliError::io(&input, e))?;
    let rows = recipe::parse_decode(&text, &input)?;
    let (report, rate) = recipe::score(&rows)?;
    let dir = out.map(Path::to_path_buf).or_else(|| input.parent().map(Path::to_path_buf)).unwrap_or_else(|| PathBuf::from("."));
    mkdir(&dir)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("decode");
    let name = stem.strip_prefix("decode_").map_or_else(|| format!("score_{stem}.txt"), |s| format!("score_{s}.txt"));
    let path = dir.join(name);
    write(path.clone(), report)?;
    Ok((rate, path))
}
