use std::path::PathBuf;

use clap::Args;
use tumorgrade::augment::{
    apply_augmentation, contact_sheet, prepare_input, sample_augmentation, AugmentSeed,
};
use tumorgrade::data::decode_rgb8;
use tumorgrade::engine::gradcheck::{op_checks, GradCheckOutcome};
use tumorgrade::engine::OpKind;
use tumorgrade::models::check::check_model;
use tumorgrade::models::ModelName;
use tumorgrade::train::TrainConfig;

use crate::failure::Failure;

#[derive(Debug, Args)]
pub struct PreviewArgs {
    /// One sheet row per image.
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Augmented variants per image (the first column is the unaugmented input).
    #[arg(long, default_value_t = 7)]
    pub variants: usize,
    #[arg(long, default_value_t = 128)]
    pub side: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training config whose augmentation policy is previewed.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn cmd_preview(args: &PreviewArgs) -> Result<(), Failure> {
    let policy = match &args.config {
        Some(p) => TrainConfig::load(p)?.augment,
        None => Default::default(),
    };
    policy.validate()?;
    let mut tiles = Vec::new();
    for path in &args.images {
        let decoded = decode_rgb8(path).map_err(|reason| {
            Failure::validation("DecodeFailure", format!("{}: {reason}", path.display()))
        })?;
        let base = prepare_input(&decoded, args.side, &policy, None)?;
        tiles.push(base.clone());
        for epoch in 0..args.variants as u64 {
            let seed = AugmentSeed {
                global_seed: args.seed,
                sample_id: path.display().to_string(),
                epoch,
            };
            tiles.push(if policy.enabled {
                apply_augmentation(&base, &sample_augmentation(&policy, &seed))
            } else {
                base.clone()
            });
        }
    }
    let sheet = contact_sheet(&tiles, args.variants + 1);
    sheet.save(&args.out).map_err(|e| Failure::io(&args.out, e))?;
    println!(
        "wrote {} ({} rows × {} columns)",
        args.out.display(),
        args.images.len(),
        args.variants + 1
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Models to check end to end; defaults to both.
    #[arg(long = "model")]
    pub models: Vec<ModelName>,
    /// Only the per-op suites.
    #[arg(long)]
    pub ops_only: bool,
    /// Corrupts the backward pass of one op (self-test of the harness).
    #[arg(long, hide = true)]
    pub perturb: Option<String>,
}

fn row(o: &GradCheckOutcome) -> String {
    format!(
        "{:<24} {:>7} {:>13.3e} {:>9.0e}  {}",
        o.name,
        o.checked,
        o.max_rel_error,
        o.tolerance,
        if o.passed() { "PASS" } else { "FAIL" }
    )
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(), Failure> {
    let perturb = match &args.perturb {
        Some(name) => Some(
            OpKind::from_name(name)
                .ok_or_else(|| Failure::validation("UnknownOp", format!("unknown op {name}")))?,
        ),
        None => None,
    };
    println!("{:<24} {:>7} {:>13} {:>9}  result", "check", "checked", "max_rel_err", "tolerance");
    let mut failed = 0;
    for check in op_checks() {
        let o = check
            .run(args.seed, perturb)
            .map_err(|e| Failure::runtime(e.code(), e.to_string()))?;
        failed += usize::from(!o.passed());
        println!("{}", row(&o));
    }
    if !args.ops_only {
        let models = if args.models.is_empty() {
            vec![ModelName::YoloClsLite, ModelName::CustomCnn]
        } else {
            args.models.clone()
        };
        for name in models {
            let o = check_model(name, args.seed, perturb)?;
            failed += usize::from(!o.passed());
            println!("{}", row(&o));
        }
    }
    if failed == 0 {
        println!("overall: PASS");
        Ok(())
    } else {
        println!("overall: FAIL");
        Err(Failure::validation("GradientMismatch", format!("{failed} checks exceeded tolerance")))
    }
}
