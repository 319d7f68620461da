use std::process::ExitCode;

use anyhow::{bail, Context, Result};

use crate::config_file::RunConfig;
use tfman_core::cost::{measured_mac_crosscheck, CostReport};
use tfman_core::eval::{evaluate, BicubicUpscaler, ModelUpscaler, Upscaler};
use tfman_core::image::{
    degrade as degrade_image, list_png_stems, DegradationKind, DegradationSpec, ImageRGB,
};
use tfman_core::net::{load_checkpoint, save_checkpoint, Model, TfmanConfig};
use tfman_core::train::{write_trace_csv, Trainer};

pub fn degrade(args: crate::Degrade) -> Result<ExitCode> {
    let kind = DegradationKind::parse(&args.kind)?;
    let spec = DegradationSpec::new(kind, args.scale, args.seed)?;
    let hr_dir = tfman_core::eval::hr_dir(&args.hr_dir);
    let entries = list_png_stems(&hr_dir)
        .with_context(|| format!("cannot list HR images in {}", hr_dir.display()))?;
    if entries.is_empty() {
        bail!(tfman_core::Error::usage(format!(
            "no PNG images in {}",
            hr_dir.display()
        )));
    }
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let mut failures = 0usize;
    let total = entries.len();
    for (stem, path) in entries {
        let result = ImageRGB::load_png(&path).and_then(|hr| {
            let per_image = spec.for_stem(&stem);
            let lr = degrade_image(&hr, &per_image)?;
            lr.save_png(&args.out_dir.join(format!("{stem}.png")))
        });
        if let Err(e) = result {
            eprintln!("warning: {stem}: {e}");
            failures += 1;
        }
    }
    if failures == total {
        bail!(tfman_core::Error::usage("every input file failed"));
    }
    println!(
        "degraded {} image(s) ({:?} x{}) into {}",
        total - failures,
        kind,
        args.scale,
        args.out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn train(args: crate::Train) -> Result<ExitCode> {
    let cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let hr_dir = tfman_core::eval::hr_dir(&args.data_dir);
    if !hr_dir.is_dir() {
        bail!(tfman_core::Error::usage(format!(
            "data directory {} does not exist",
            hr_dir.display()
        )));
    }
    let entries = list_png_stems(&hr_dir)?;
    let mut images = Vec::new();
    for (stem, path) in entries {
        match ImageRGB::load_png(&path) {
            Ok(img) => images.push((stem, img)),
            Err(e) => eprintln!("warning: {stem}: {e}"),
        }
    }
    if images.is_empty() {
        bail!(tfman_core::Error::usage(format!(
            "no readable HR images in {}",
            hr_dir.display()
        )));
    }

    let model = match &args.resume {
        Some(ckpt) => {
            let m = load_checkpoint(ckpt)?;
            println!(
                "resumed x{} model with {} parameters from {}",
                m.cfg.scale,
                m.parameter_count(),
                ckpt.display()
            );
            m
        }
        None => Model::<f32>::build(&cfg.model, args.seed)?,
    };
    let spec = DegradationSpec::new(cfg.degradation, model.cfg.scale, args.seed)?;
    let mut trainer = Trainer::new(model, &images, &spec, cfg.schedule.clone(), args.seed)?;
    for stem in &trainer.skipped {
        eprintln!("warning: {stem}: smaller than the patch size, skipped");
    }

    let trace_path = args
        .trace
        .clone()
        .unwrap_or_else(|| args.out.with_extension("loss.csv"));
    let mut trace = Vec::new();
    for epoch in 0..trainer.schedule.total_epochs {
        trainer.run_epoch(epoch, &mut trace)?;
        let last = trace.last().expect("epoch produced rows");
        println!(
            "epoch {:>5} | lr {:.3e} | loss {:.6}",
            epoch, last.lr, last.loss
        );
        if (epoch + 1) % cfg.checkpoint_interval == 0 {
            save_checkpoint(&trainer.model, &args.out)?;
            write_trace_csv(&trace, &trace_path)?;
        }
    }
    save_checkpoint(&trainer.model, &args.out)?;
    write_trace_csv(&trace, &trace_path)?;
    println!(
        "wrote checkpoint {} and loss trace {}",
        args.out.display(),
        trace_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn infer(args: crate::Infer) -> Result<ExitCode> {
    let model = load_checkpoint(&args.ckpt)?;
    let lr = ImageRGB::load_png(&args.input)?;
    let up = ModelUpscaler { model };
    let sr = up.upscale(&lr, up.model.cfg.scale)?;
    sr.save_png(&args.output)?;
    println!(
        "{} ({}x{}) -> {} ({}x{})",
        args.input.display(),
        lr.width(),
        lr.height(),
        args.output.display(),
        sr.width(),
        sr.height()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn eval(args: crate::Eval) -> Result<ExitCode> {
    let kind = DegradationKind::parse(&args.kind)?;
    let spec = DegradationSpec::new(kind, args.scale, args.seed)?;
    let crop = args.crop.unwrap_or(args.scale);
    let upscaler: Box<dyn Upscaler> = match (&args.ckpt, &args.baseline) {
        (Some(ckpt), None) => {
            let model = load_checkpoint(ckpt)?;
            if model.cfg.scale != args.scale {
                bail!(tfman_core::Error::usage(format!(
                    "checkpoint is x{}, requested x{}",
                    model.cfg.scale, args.scale
                )));
            }
            Box::new(ModelUpscaler { model })
        }
        (None, Some(name)) if name == "bicubic" => Box::new(BicubicUpscaler),
        (None, Some(other)) => bail!(tfman_core::Error::usage(format!(
            "unknown baseline '{other}' (only 'bicubic')"
        ))),
        (None, None) => bail!(tfman_core::Error::usage(
            "pass --ckpt FILE or --baseline bicubic"
        )),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    let report = evaluate(upscaler.as_ref(), &args.dataset, &spec, crop)?;
    print!("{}", report.to_table());
    if let Some(csv) = &args.csv {
        std::fs::write(csv, report.to_csv())
            .with_context(|| format!("cannot write {}", csv.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cost(args: crate::Cost) -> Result<ExitCode> {
    let report = CostReport::new(args.height, args.width, args.channels, args.p);
    if args.csv {
        print!("{}", report.to_csv());
    } else {
        print!("{}", report.to_table());
    }
    if args.crosscheck {
        let check = measured_mac_crosscheck(args.height, args.width, args.channels, args.p)?;
        println!(
            "instrumented embed MACs     {:>16} (formula {})",
            check.counted_embed, check.formula_embed
        );
        println!(
            "instrumented attention MACs {:>16} (formula {})",
            check.counted_attention, check.formula_attention
        );
        println!(
            "unmodeled: output conv {} MACs, residual {} adds",
            check.unmodeled_out_conv, check.unmodeled_residual_adds
        );
        if !check.modeled_terms_match() {
            bail!("instrumented counters disagree with the closed forms");
        }
        println!("modeled terms match exactly");
    }
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(args: crate::Gradcheck) -> Result<ExitCode> {
    use tfman_core::train as t;
    let (report, default_tol) = match args.module.as_str() {
        "tensor" => (t::gradcheck_tensor_ops(args.seed)?, 1e-6),
        "tfm" => (t::gradcheck_tfm(args.seed)?, 1e-5),
        "srnl" => (t::gradcheck_srnl(args.seed)?, 1e-5),
        "nonlocal" => (t::gradcheck_nonlocal(args.seed)?, 1e-5),
        "ca" => (t::gradcheck_ca(args.seed)?, 1e-5),
        "model" => (t::gradcheck_model(args.seed, 50)?, 1e-4),
        other => bail!(tfman_core::Error::usage(format!(
            "unknown module '{other}' (tensor, tfm, srnl, nonlocal, ca or model)"
        ))),
    };
    let tol = args.tol.unwrap_or(default_tol);
    for (label, err) in &report.entries {
        println!("{label:<24} max rel err {err:.3e}");
    }
    let worst = report.max_err();
    if worst < tol {
        println!("PASS: worst {worst:.3e} < tolerance {tol:.1e}");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL: worst {worst:.3e} >= tolerance {tol:.1e}");
        Ok(ExitCode::from(1))
    }
}

pub fn params(args: crate::Params) -> Result<ExitCode> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?.model,
        None if args.base => TfmanConfig::base_variant(),
        None => TfmanConfig::default(),
    };
    if args.base {
        cfg.use_tfm = false;
        cfg.use_srnl = false;
        cfg.use_ca = false;
    }
    if let Some(scale) = args.scale {
        cfg.scale = scale;
    }
    let model = Model::<f32>::build(&cfg, 0)?;
    println!(
        "x{} {} | total parameters {}",
        cfg.scale,
        if cfg.use_tfm || cfg.use_srnl || cfg.use_ca {
            "tfman"
        } else {
            "base variant"
        },
        model.parameter_count()
    );
    for (name, count) in model.parameter_breakdown() {
        println!("  {name:<16} {count:>9}");
    }
    if cfg.use_tfm {
        let alphas = model.parameter_count_with_prefix("fmf.alpha");
        let n = cfg.recurrences;
        let (nf, r, s, k) = (cfg.tfm_features, cfg.tfm_channels, cfg.scale, cfg.tfm_patch);
        println!(
            "feature sets: {n} x {nf} x {r} x {s}^2 x {k}^2 = {}",
            n * nf * r * s * s * k * k
        );
        assert_eq!(alphas, n * nf * r * s * s * k * k);
    }
    Ok(ExitCode::SUCCESS)
}
