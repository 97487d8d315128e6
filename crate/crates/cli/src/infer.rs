use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use tumorgrade::augment::{prepare_input, AugmentPolicy};
use tumorgrade::data::{decode_rgb8, ClassLabel, DatasetManifest, Split};
use tumorgrade::engine::{Dtype, Real, Tensor};
use tumorgrade::eval::{build_confusion, export_report, macro_report};
use tumorgrade::models::{Checkpoint, Model};
use tumorgrade::train::{parse_curves, predict_set, ImageSet, LabeledImage, TrainConfig};

use crate::failure::Failure;

fn checkpoint_dtype(path: &Path) -> Result<Dtype, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::io(path, e))?;
    let (header, _) = Checkpoint::<f32>::read_header(&bytes)?;
    Ok(header.dtype)
}

fn load_model<T: Real>(path: &Path, expect: Option<&TrainConfig>) -> Result<Model<T>, Failure> {
    let ckpt = match expect {
        Some(c) => Checkpoint::<T>::load_expecting(path, &c.model_spec()?.spec_hash())?,
        None => Checkpoint::<T>::load(path)?,
    };
    Ok(ckpt.model)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split manifest; its test split is evaluated.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Training config the checkpoint must match.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Curves to pass through; defaults to curves.csv beside the checkpoint.
    #[arg(long)]
    pub curves: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

fn eval_with<T: Real>(args: &EvalArgs, expect: Option<&TrainConfig>) -> Result<(), Failure> {
    let model = load_model::<T>(&args.checkpoint, expect)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let records = manifest.split_records(Split::Test);
    let samples = LabeledImage::from_records(&manifest, records.iter().copied())?;
    let set = ImageSet::new(samples, model.spec.input_side, false);
    let preds = predict_set(&model, &set, args.batch_size)?;

    let truths: Vec<usize> = set.samples().iter().map(|s| s.label).collect();
    let labels: Vec<usize> = preds.iter().map(|p| p.label).collect();
    let cm = build_confusion(&labels, &truths, ClassLabel::ALL.len())?;
    let report = macro_report(&cm)?;

    let curves_path = args.curves.clone().or_else(|| {
        let p = args.checkpoint.parent()?.join("curves.csv");
        p.exists().then_some(p)
    });
    let curves = match curves_path {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| Failure::io(&p, e))?;
            parse_curves(&text).map_err(|e| Failure::validation("CorruptCurves", e))?
        }
        None => Vec::new(),
    };
    let files = export_report(&report, &cm, &curves, &args.out_dir)?;

    let mut csv = String::from("sample_id,relative_path,truth,pred");
    for label in ClassLabel::ALL {
        csv.push_str(&format!(",p_{}", label.name()));
    }
    csv.push('\n');
    for ((r, p), &t) in records.iter().zip(&preds).zip(&truths) {
        csv.push_str(&format!("{},{},{t},{}", r.sample_id, r.relative_path, p.label));
        for q in &p.probabilities {
            csv.push_str(&format!(",{q}"));
        }
        csv.push('\n');
    }
    let pred_path = args.out_dir.join("predictions.csv");
    fs::write(&pred_path, csv).map_err(|e| Failure::io(&pred_path, e))?;

    println!(
        "accuracy={} macro_precision={} macro_recall={} macro_f1={} macro_specificity={} (n={})",
        report.accuracy,
        report.macro_precision,
        report.macro_recall,
        report.macro_f1,
        report.macro_specificity,
        report.total
    );
    println!("wrote {} and {}", files.metrics.display(), files.confusion.display());
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), Failure> {
    let expect = args.config.as_deref().map(TrainConfig::load).transpose()?;
    match checkpoint_dtype(&args.checkpoint)? {
        Dtype::F32 => eval_with::<f32>(args, expect.as_ref()),
        Dtype::F64 => eval_with::<f64>(args, expect.as_ref()),
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Images to classify.
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

fn predict_with<T: Real>(args: &PredictArgs) -> Result<(), Failure> {
    let model = load_model::<T>(&args.checkpoint, None)?;
    let side = model.spec.input_side;
    let mut ok = 0;
    for path in &args.images {
        let input = decode_rgb8(path)
            .map_err(|reason| Failure::validation("DecodeFailure", format!("{}: {reason}", path.display())))
            .and_then(|img| Ok(prepare_input(&img, side, &AugmentPolicy::disabled(), None)?));
        let img = match input {
            Ok(img) => img,
            Err(f) => {
                eprintln!("{f}");
                continue;
            }
        };
        let mut data = Vec::with_capacity(3 * side * side);
        img.write_chw::<T>(&mut data);
        let batch = Tensor::new(vec![1, 3, side, side], data).map_err(|e| Failure::runtime(e.code(), e.to_string()))?;
        let logits = model.predict(batch)?;
        let z: Vec<f64> = logits.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let probs: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
        let best = (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        let label = ClassLabel::from_id(best).map_or("?", |l| l.name());
        let cells: Vec<String> = probs.iter().map(f64::to_string).collect();
        println!("{},{label},{}", path.display(), cells.join(","));
        ok += 1;
    }
    if ok == 0 {
        return Err(Failure::validation("DecodeFailure", "no image could be classified"));
    }
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<(), Failure> {
    match checkpoint_dtype(&args.checkpoint)? {
        Dtype::F32 => predict_with::<f32>(args),
        Dtype::F64 => predict_with::<f64>(args),
    }
}
