mod args;
mod render;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::Parser;

use mrtss::design::{parse_probability_csv, ScheduleMode};
use mrtss::protocol::{
    compute_power, compute_sample_size, ApiError, ComputeResult, DesignPayload, PowerRequest, RandomizationInput,
    SampleSizeRequest,
};
use mrtss::simulate::{run_batch, write_report_csv, Scenario};
use mrtss::trends::TrendSpec;

use args::{Cli, Command, DesignArgs, Format, RandMode, TrendKind};

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_USAGE: u8 = 64;

enum Failure {
    /// Flag combinations clap cannot express.
    Usage(String),
    Invalid(ApiError),
    Io(anyhow::Error),
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure::Invalid(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Io(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Invalid(e)) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(EXIT_INVALID)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Samplesize(a) => {
            let req = match &a.design.input {
                Some(path) => parse_request::<SampleSizeRequest>(path)?,
                None => SampleSizeRequest {
                    design: design_from_flags(&a.design)?,
                    alpha0: a.design.alpha.unwrap_or(0.05),
                    target_power: a.power.ok_or_else(|| missing("--power"))?,
                },
            };
            let design = req.design.resolve(|_| None)?;
            let result = ComputeResult::SampleSize(compute_sample_size(&req, design)?);
            emit(&render::result(&result, a.out.format), a.out.output.as_deref())
        }
        Command::Power(a) => {
            let req = match &a.design.input {
                Some(path) => parse_request::<PowerRequest>(path)?,
                None => PowerRequest {
                    design: design_from_flags(&a.design)?,
                    alpha0: a.design.alpha.unwrap_or(0.05),
                    n: a.n.ok_or_else(|| missing("--n"))?,
                },
            };
            let design = req.design.resolve(|_| None)?;
            let result = ComputeResult::Power(compute_power(&req, design)?);
            emit(&render::result(&result, a.out.format), a.out.output.as_deref())
        }
        Command::Simulate(a) => {
            let scenarios: Vec<Scenario> = parse_request(&a.scenarios)?;
            let reports = run_batch(&scenarios, a.seed).map_err(ApiError::from)?;
            let text = match a.format {
                Format::Json => serde_json::to_string_pretty(&reports).context("serializing reports")? + "\n",
                Format::Csv => {
                    let mut buf = Vec::new();
                    write_report_csv(&mut buf, &reports).context("writing CSV")?;
                    String::from_utf8(buf).context("CSV is not UTF-8")?
                }
                Format::Table => render::reports_table(&reports),
            };
            emit(&text, a.output.as_deref())
        }
        Command::Serve(a) => serve(a.bind),
    }
}

fn serve(bind: Option<String>) -> Result<(), Failure> {
    let addr = match bind {
        Some(s) => s.parse().map_err(|e| Failure::Usage(format!("invalid --bind `{s}`: {e}")))?,
        None => mrtss_service::bind_address()
            .map_err(|e| Failure::Usage(format!("invalid {}: {e}", mrtss_service::BIND_ENV)))?,
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(mrtss_service::serve(addr, mrtss_service::AppState::default()))
        .context("serving")?;
    Ok(())
}

fn missing(flag: &str) -> Failure {
    Failure::Usage(format!("{flag} is required unless --input is given"))
}

fn parse_request<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Failure::Invalid(ApiError::invalid_json(e)))
}

fn trend_from_flags(
    name: &str,
    kind: Option<TrendKind>,
    average: Option<f64>,
    initial: Option<f64>,
    peak_day: Option<u32>,
) -> Result<TrendSpec, Failure> {
    let average = average.ok_or_else(|| missing(&format!("--{name}-avg")))?;
    let need_init = || initial.ok_or_else(|| Failure::Usage(format!("--{name}-init is required for this trend")));
    Ok(match kind.unwrap_or(TrendKind::Constant) {
        TrendKind::Constant => TrendSpec::Constant { average },
        TrendKind::Linear => TrendSpec::Linear {
            average,
            initial: need_init()?,
        },
        TrendKind::Quadratic => TrendSpec::Quadratic {
            average,
            initial: need_init()?,
            changing_point: peak_day
                .ok_or_else(|| Failure::Usage(format!("--{name}-peak-day is required for quadratic trends")))?,
        },
    })
}

fn design_from_flags(a: &DesignArgs) -> Result<DesignPayload, Failure> {
    let days = a.days.ok_or_else(|| missing("--days"))?;
    let per_day = a.per_day.ok_or_else(|| missing("--per-day"))?;
    let randomization = match (&a.rand_csv, a.prob) {
        (Some(path), _) => read_schedule(path, a.rand_mode, days, per_day)?,
        (None, Some(probability)) => RandomizationInput::Constant { probability },
        (None, None) => return Err(Failure::Usage("one of --prob or --rand-csv is required".into())),
    };
    Ok(DesignPayload {
        days,
        per_day,
        randomization,
        availability: trend_from_flags("avail", a.avail, a.avail_avg, a.avail_init, a.avail_peak_day)?,
        effect: trend_from_flags("effect", a.effect, a.effect_avg, a.effect_init, a.effect_peak_day)?,
        q: a.q,
    })
}

fn read_schedule(path: &Path, mode: RandMode, days: u32, per_day: u32) -> Result<RandomizationInput, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mode = match mode {
        RandMode::Day => ScheduleMode::PerDay,
        RandMode::Time => ScheduleMode::PerTime,
    };
    let schedule = parse_probability_csv(&text, mode, days, per_day).map_err(ApiError::from)?;
    Ok(schedule.into())
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), Failure> {
    match output {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .context("writing to stdout")?;
        }
    }
    Ok(())
}
