//! dcsim: simulate a satellite delayed-choice pass, analyze the resulting
//! time tags, and verify the spacelike separation of choice and reflection.
//!
//! Exit codes: 0 success, 1 usage, 2 data or config error, 3 causality
//! violation found.

mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use delayed_choice::analysis::pipeline::{
    compare_truth, run_analysis, AnalysisReport, PipelineOutput, TruthComparison,
};
use delayed_choice::analysis::{AnalysisParams, DeltaHistogram};
use delayed_choice::event_gen::{
    read_timetags, read_truth, simulate_pass, write_timetags, write_truth,
};
use delayed_choice::orbit::{generate_pass, PassTrack, SlrSeries};
use delayed_choice::protocol::{build_schedules, verify_delayed_choice, CausalityReport};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "dcsim", version, about = "satellite delayed-choice simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a pass: orbit track, ranging series and time tags.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Override the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the per-event truth sidecar (breaks blindness).
        #[arg(long)]
        truth: bool,
    },
    /// Analyze the time tags of a simulated or recorded pass.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding timetags.csv, track.csv and slr.csv.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the report; defaults to the data directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Compare against truth.jsonl if present.
        #[arg(long)]
        truth: bool,
    },
    /// Check that every accepted photon reflects spacelike-separated from
    /// its governing choice.
    VerifyCausality {
        #[arg(long)]
        config: PathBuf,
        /// Use the track of an existing run instead of regenerating it.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Pretty-print a report.json.
    Report {
        #[arg(long)]
        data: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            truth,
        } => {
            let cfg = RunConfig::load(&config)?;
            simulate(&cfg, &out, seed, truth)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze {
            config,
            data,
            out,
            truth,
        } => {
            let cfg = RunConfig::load(&config)?;
            analyze(&cfg, &data, out.as_deref().unwrap_or(&data), truth)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifyCausality { config, data } => {
            let cfg = RunConfig::load(&config)?;
            let report = causality(&cfg, data.as_deref())?;
            if report.violations.is_empty() {
                println!(
                    "causality: OK ({} cycles, min margin {:.1} km, {}/{} groups reflected before their choice)",
                    report.cycles.len(),
                    report.min_margin_km,
                    report.groups_reflected_before_choice,
                    report.total_segments
                );
                Ok(ExitCode::SUCCESS)
            } else {
                println!(
                    "causality: {} VIOLATIONS (worst margin {:.1} km)",
                    report.violations.len(),
                    report.min_margin_km
                );
                for v in report.violations.iter().take(5) {
                    println!(
                        "  cycle {} choice {:?}: margin {:.1} km",
                        v.cycle_index, v.which, v.margin_km
                    );
                }
                Ok(ExitCode::from(3))
            }
        }
        Command::Report { data } => {
            let report: AnalysisReport = read_json(&data.join("report.json"))?;
            print_report(&report);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn build_track(cfg: &RunConfig) -> Result<PassTrack> {
    let constants = cfg.constants();
    let track = generate_pass(&cfg.profile(), &constants)?;
    if cfg.rtt_scale == 1.0 {
        return Ok(track);
    }
    let samples = track
        .samples()
        .iter()
        .map(|s| {
            let mut s = *s;
            s.rtt *= cfg.rtt_scale;
            s
        })
        .collect();
    Ok(PassTrack::from_samples(samples)?)
}

fn simulate(cfg: &RunConfig, out: &Path, seed: Option<u64>, truth: bool) -> Result<()> {
    let seed = seed.unwrap_or(cfg.seed);
    let constants = cfg.constants();
    let track = build_track(cfg)?;
    let slr = SlrSeries::from_track(&track, cfg.slr.noise_rms_s, seed)?;
    let schedules = build_schedules(&track, &cfg.protocol_params(), seed)?;
    let sim = cfg.simulation(seed);
    let (records, truth_records) = simulate_pass(&track, &schedules, &sim, &constants)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    track.write_csv(writer(&out.join("track.csv"))?)?;
    slr.write_csv(writer(&out.join("slr.csv"))?)?;
    write_timetags(&records, writer(&out.join("timetags.csv"))?)?;
    if truth {
        write_truth(&truth_records, writer(&out.join("truth.jsonl"))?)?;
    }
    println!(
        "{}: {} cycles, {} time tags (seed {seed})",
        cfg.name,
        schedules.len(),
        records.len()
    );
    Ok(())
}

fn analyze(cfg: &RunConfig, data: &Path, out: &Path, truth: bool) -> Result<()> {
    let constants = cfg.constants();
    let track = PassTrack::read_csv(reader(&data.join("track.csv"))?)?;
    let slr = SlrSeries::read_csv(reader(&data.join("slr.csv"))?)?;
    let records = read_timetags(reader(&data.join("timetags.csv"))?)?;
    let params = AnalysisParams::default();
    let output = run_analysis(
        &records,
        &track,
        &slr,
        &cfg.protocol_params(),
        &cfg.instrument(),
        &constants,
        &params,
    )?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("report.json"), &output.report)?;
    write_phase_bins(&out.join("phase_bins.csv"), &output.report)?;
    write_histograms(out, &output)?;

    if truth {
        let truth_path = data.join("truth.jsonl");
        if truth_path.exists() {
            let truth_records = read_truth(reader(&truth_path)?)?;
            let cmp: TruthComparison =
                compare_truth(&output.deltas, &truth_records, &slr, &constants)?;
            write_json(&out.join("truth_comparison.json"), &cmp)?;
            println!(
                "truth: phase rms {:.4} rad over {} events, match rate {:.4}",
                cmp.phi_rms, cmp.n_compared, cmp.match_rate
            );
        } else {
            bail!("--truth given but {} does not exist", truth_path.display());
        }
    }
    print_report(&output.report);
    Ok(())
}

fn causality(cfg: &RunConfig, data: Option<&Path>) -> Result<CausalityReport> {
    let constants = cfg.constants();
    let track = match data {
        Some(dir) => PassTrack::read_csv(reader(&dir.join("track.csv"))?)?,
        None => build_track(cfg)?,
    };
    let schedules = build_schedules(&track, &cfg.protocol_params(), cfg.seed)?;
    Ok(verify_delayed_choice(&schedules, &track, constants.c)?)
}

fn print_report(r: &AnalysisReport) {
    println!(
        "events: {} tagged, {} matched; signal {:.0} (b=0) + {:.0} (b=1)",
        r.n_records, r.n_matched, r.n_signal_b0, r.n_signal_b1
    );
    println!(
        "visibility: {:.4} +/- {:.4} (residual rms {:.4}, {:.0}% within 1.5 sigma)",
        r.v_exp,
        r.sigma_v,
        r.sigma_r,
        100.0 * r.coverage_1p5
    );
    println!(
        "which-path: P = {:.4} +/- {:.4}, lateral peaks {:.3} ns apart (width {:.3} ns), flatness chi2/dof {:.2}",
        r.p_wp,
        r.sigma_p,
        r.peak_separation * 1e9,
        r.peak_sigma * 1e9,
        r.b1_flatness_chi2_dof
    );
    println!(
        "z = {:.2} above the classical bound; mu estimate {:.2e}",
        r.z, r.mu_estimate
    );
}

fn write_phase_bins(path: &Path, report: &AnalysisReport) -> Result<()> {
    let mut out = writer(path)?;
    writeln!(out, "j,phi_center,n_plus,n_minus,f_plus,f_minus,sigma_f,usable")?;
    for b in &report.phase_bins {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            b.j, b.phi_center, b.n_plus, b.n_minus, b.f_plus, b.f_minus, b.sigma_f, b.usable as u8
        )?;
    }
    Ok(())
}

fn write_histograms(out: &Path, output: &PipelineOutput) -> Result<()> {
    let h = &output.histograms;
    write_hist_pair(&out.join("histogram_b0.csv"), &h.b0_plus, &h.b0_minus)?;
    write_hist_pair(&out.join("histogram_b1.csv"), &h.b1_plus, &h.b1_minus)?;
    Ok(())
}

fn write_hist_pair(path: &Path, plus: &DeltaHistogram, minus: &DeltaHistogram) -> Result<()> {
    let mut out = writer(path)?;
    writeln!(out, "delta_lo,plus,minus")?;
    for i in 0..plus.counts.len() {
        writeln!(
            out,
            "{},{},{}",
            plus.lo + i as f64 * plus.bin_width,
            plus.counts[i],
            minus.counts[i]
        )?;
    }
    Ok(())
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("creating {}", path.display())
    })?))
}

fn reader(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| {
        format!("opening {}", path.display())
    })?))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = writer(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}
