use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use msvol::calibrate::{calibrate_heston, calibrate_msv, evaluate, CalibrationConfig, CalibrationResult};
use msvol::data::{
    apply_filters, error_report, fmt_sig, load_quotes, split_train_test, synthesize, write_comparison_table,
    write_quotes, write_report_table, ConfigFile, OptionQuote, Schema, SyntheticModel, SyntheticSpec,
};
use msvol::implied::{bs_implied_vol, vix_normal_implied_vol, write_surface_csv};
use msvol::mc::{mc_price_spx_strikes, mc_price_vix_strikes, McModelParams};
use msvol::{price_spx, price_vix, Error, ModelParams, PriceDecomposition, Result, SpxOptionSpec, VixOptionSpec};

use crate::settings::Settings;
use crate::{Cli, Command, Market, ModelKind, SurfaceKind};

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_json(path: &Path) -> Result<CalibrationResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads quotes, reports rejected rows on stderr and applies the filters.
fn quotes_from(path: &Path, settings: &Settings, filter: bool) -> Result<Vec<OptionQuote>> {
    let set = load_quotes(path, &Schema::default())?;
    for r in &set.rejects {
        eprintln!("rejected line {}: {:?} ({})", r.line, r.reason, r.detail);
    }
    if !filter {
        return Ok(set.quotes);
    }
    let (kept, stats) = apply_filters(&set.quotes, &settings.filters()?);
    eprintln!(
        "filters: {} in, {} kept ({} low volume, {} low price, {} near expiry)",
        stats.input, stats.kept, stats.low_volume, stats.low_price, stats.near_expiry
    );
    Ok(kept)
}

/// Rounds every float in a JSON tree to 10 significant digits.
fn round_numbers(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64().and_then(|x| fmt_sig(x).parse::<f64>().ok()) {
                if let Some(r) = serde_json::Number::from_f64(x) {
                    *n = r;
                }
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_numbers),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_numbers),
        _ => {}
    }
}

fn write_prices(out: &mut dyn Write, strikes: &[f64], prices: &[PriceDecomposition]) -> Result<()> {
    writeln!(out, "strike,leading,correction,total")?;
    for (k, p) in strikes.iter().zip(prices) {
        writeln!(
            out,
            "{},{},{},{}",
            fmt_sig(*k),
            fmt_sig(p.leading),
            fmt_sig(p.correction),
            fmt_sig(p.total)
        )?;
        for w in &p.warnings {
            eprintln!("warning at strike {k}: {w:?}");
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<u8> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let settings = Settings::new(file)?;
    let out_path: Option<PathBuf> = cli.out.clone();
    let out_path = out_path.as_deref();

    match cli.command {
        Command::PriceSpx {
            x,
            strikes,
            tau,
            put,
            model,
            quad,
        } => {
            let p = settings.model(&model)?;
            let state = settings.state(&model)?;
            let quad = settings.quad(&quad)?;
            let prices = strikes
                .iter()
                .map(|&k| {
                    let spec = if put {
                        SpxOptionSpec::put(x, k, tau)
                    } else {
                        SpxOptionSpec::call(x, k, tau)
                    };
                    price_spx(&spec, state, &p, &quad)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut out = open_output(out_path)?;
            write_prices(&mut out, &strikes, &prices)?;
            out.flush()?;
        }
        Command::PriceVix {
            strikes,
            tau,
            put,
            model,
            quad,
        } => {
            let p = settings.model(&model)?;
            let state = settings.state(&model)?;
            let quad = settings.quad(&quad)?;
            let prices = strikes
                .iter()
                .map(|&k| {
                    let spec = if put {
                        VixOptionSpec::put(k, tau)
                    } else {
                        VixOptionSpec::call(k, tau)
                    };
                    price_vix(&spec, state, &p, &quad)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut out = open_output(out_path)?;
            write_prices(&mut out, &strikes, &prices)?;
            out.flush()?;
        }
        Command::Calibrate {
            model,
            quotes,
            split_date,
            no_filter,
            r,
        } => {
            let mut q = quotes_from(&quotes, &settings, !no_filter)?;
            if let Some(d) = split_date {
                let split = split_train_test(&q, d);
                for w in &split.warnings {
                    eprintln!("warning: {w}");
                }
                eprintln!("split: {} train, {} test", split.train.len(), split.test.len());
                q = split.train;
            }
            if q.is_empty() {
                return Err(Error::Data("no quotes left to calibrate on".into()));
            }
            let cfg = settings.calibration(r)?;
            let result = match model {
                ModelKind::Heston => calibrate_heston(&q, &cfg)?,
                ModelKind::Msv => calibrate_msv(&q, &cfg)?,
            };
            eprintln!(
                "step 1 objective {} ({} evaluations), step 2 objective {} ({} evaluations)",
                fmt_sig(result.step1.objective),
                result.step1.evaluations,
                fmt_sig(result.step2.objective),
                result.step2.evaluations
            );
            let mut out = open_output(out_path)?;
            let mut json = serde_json::to_value(&result)?;
            round_numbers(&mut json);
            writeln!(out, "{}", serde_json::to_string_pretty(&json)?)?;
            out.flush()?;
        }
        Command::ImvolSurface {
            market,
            strikes,
            maturities,
            kind,
            base_z,
            x,
            vix_level,
            model,
            quad,
        } => {
            let p = settings.model(&model)?;
            let state = settings.state(&model)?;
            let quad = settings.quad(&quad)?;
            let base = ModelParams {
                epsilon: 0.0,
                w3_eps: 0.0,
                ..p
            };
            let base_state = msvol::HiddenState::new(base_z, base_z);
            let vol = |params: &ModelParams, s: msvol::HiddenState, k: f64, tau: f64| -> Option<f64> {
                match market {
                    Market::Spx => {
                        let c = price_spx(&SpxOptionSpec::call(x, k, tau), s, params, &quad).ok()?.total;
                        bs_implied_vol(c, x, k, tau, params.r).ok().map(|i| i.vol)
                    }
                    Market::Vix => {
                        let c = price_vix(&VixOptionSpec::call(k, tau), s, params, &quad).ok()?.total;
                        vix_normal_implied_vol(c * (params.r * tau).exp(), vix_level, k, tau)
                            .ok()
                            .map(|i| i.vol)
                    }
                }
            };
            let mut out = open_output(out_path)?;
            write_surface_csv(&mut out, &strikes, &maturities, |i, j| {
                let (k, t) = (strikes[i], maturities[j]);
                match kind {
                    SurfaceKind::Corrected => vol(&p, state, k, t),
                    SurfaceKind::Uncorrected => vol(&base, base_state, k, t),
                    SurfaceKind::Difference => Some(vol(&p, state, k, t)? - vol(&base, base_state, k, t)?),
                }
            })?;
            out.flush()?;
        }
        Command::Validate {
            market,
            strikes,
            tau,
            x,
            put,
            strict,
            model,
            quad,
            mc,
        } => {
            let p = settings.model(&model)?;
            let state = settings.state(&model)?;
            let quad = settings.quad(&quad)?;
            let (cfg, nu) = settings.mc(&mc)?;
            let mp = McModelParams::with_nu(p, nu)?;
            let (analytic, estimates) = match market {
                Market::Spx => {
                    let a = strikes
                        .iter()
                        .map(|&k| {
                            let spec = if put {
                                SpxOptionSpec::put(x, k, tau)
                            } else {
                                SpxOptionSpec::call(x, k, tau)
                            };
                            price_spx(&spec, state, &p, &quad)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (a, mc_price_spx_strikes(&mp, state, x, &strikes, tau, !put, &cfg)?)
                }
                Market::Vix => {
                    let a = strikes
                        .iter()
                        .map(|&k| {
                            let spec = if put {
                                VixOptionSpec::put(k, tau)
                            } else {
                                VixOptionSpec::call(k, tau)
                            };
                            price_vix(&spec, state, &p, &quad)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (a, mc_price_vix_strikes(&mp, state, &strikes, tau, !put, &cfg)?)
                }
            };
            let mut out = open_output(out_path)?;
            writeln!(out, "strike,analytic,mc,standard_error,standard_errors_apart")?;
            let mut worst: f64 = 0.0;
            for ((k, a), e) in strikes.iter().zip(&analytic).zip(&estimates) {
                let z = (a.total - e.mean).abs() / e.standard_error;
                worst = worst.max(z);
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    fmt_sig(*k),
                    fmt_sig(a.total),
                    fmt_sig(e.mean),
                    fmt_sig(e.standard_error),
                    fmt_sig(z)
                )?;
            }
            out.flush()?;
            eprintln!("eta {} nu {}; worst distance {} standard errors", fmt_sig(mp.eta), fmt_sig(nu), fmt_sig(worst));
            if strict && !(worst <= 3.0) {
                return Ok(3);
            }
        }
        Command::ErrorReport {
            quotes,
            fitted,
            benchmark,
            no_filter,
        } => {
            let q = quotes_from(&quotes, &settings, !no_filter)?;
            let cfg = settings.calibration(None)?;
            let report_for = |path: &Path| -> Result<msvol::data::ErrorReport> {
                let result = read_json(path)?;
                let cfg = CalibrationConfig {
                    r: result.fitted.r(),
                    ..cfg
                };
                let (used, prices) = evaluate(&result.fitted, &q, &cfg)?;
                if used.len() < q.len() {
                    eprintln!("{}: {} quotes on dates without a feasible state", path.display(), q.len() - used.len());
                }
                error_report(&prices, &used)
            };
            let ours = report_for(&fitted)?;
            let mut out = open_output(out_path)?;
            match benchmark {
                Some(b) => write_comparison_table(&mut out, &report_for(&b)?, &ours)?,
                None => write_report_table(&mut out, &ours)?,
            }
            out.flush()?;
        }
        Command::Synth {
            model,
            dates,
            noise,
            seed,
            start,
            states,
            model_args,
        } => {
            let r = settings.rate(&model_args)?;
            let generator = match model {
                ModelKind::Heston => SyntheticModel::Heston {
                    params: settings.heston(&model_args)?,
                    r,
                },
                ModelKind::Msv => SyntheticModel::Multiscale(settings.model(&model_args)?),
            };
            let mut spec = SyntheticSpec {
                dates,
                noise,
                seed,
                ..Default::default()
            };
            if let Some(s) = start {
                spec.start = s;
            }
            let data = synthesize(&generator, &spec, &settings.quad(&Default::default())?)?;
            let mut out = open_output(out_path)?;
            write_quotes(&mut out, &data.quotes)?;
            out.flush()?;
            if let Some(path) = states {
                let mut w = open_output(Some(&path))?;
                writeln!(w, "date,y,z")?;
                for (d, s) in &data.states {
                    writeln!(w, "{d},{},{}", fmt_sig(s.y), fmt_sig(s.z))?;
                }
                w.flush()?;
            }
        }
    }
    Ok(0)
}
