//! Subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use reer_core::persist::fmt_f64_17;
use reer_core::{
    load_state, run_experiment, save_state, Batch, Coefficients, DcerState, ExpectileLevel,
    IrlsConfig, PaerState, SimCase, SimConfig, StateFile, SummaryState, WeightMode,
};

use crate::args::{EvalArgs, SimulateArgs, StreamArgs, StreamMethod};
use crate::csvio::{BatchReader, Batching, StreamSpec};
use crate::CliError;

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    for (i, m) in a.methods.iter().enumerate() {
        if a.methods[..i].contains(m) {
            return Err(CliError::Usage(format!("--methods lists '{m}' twice")));
        }
    }
    let case = SimCase::from_index(a.case)?;
    let cfg = SimConfig::new(
        case,
        a.scenario,
        a.tau,
        a.batch_size as usize,
        a.num_batches as usize,
        a.reps as usize,
        a.seed,
    )?;
    let table = run_experiment(&cfg, &a.methods)?;
    if table.reps_used == 0 {
        let first = table
            .failures
            .first()
            .map(|f| format!("replication {}: {}", f.rep, f.message))
            .unwrap_or_else(|| "no replications ran".into());
        return Err(CliError::Run(format!(
            "all {} replications failed; first failure: {first}",
            cfg.reps
        )));
    }
    if !table.failures.is_empty() {
        let f = &table.failures[0];
        eprintln!(
            "warning: {} of {} replications failed and were dropped (replication {}: {})",
            table.failures.len(),
            cfg.reps,
            f.rep,
            f.message
        );
    }
    let mut out = BufWriter::new(File::create(&a.out)?);
    table.write_csv(&mut out)?;
    out.flush()?;
    println!(
        "wrote {} ({} methods x {} coefficients, {} of {} replications used)",
        a.out.display(),
        a.methods.len(),
        cfg.p(),
        table.reps_used,
        cfg.reps
    );
    Ok(())
}

/// The online estimator a stream feeds into. States are replaced, not
/// mutated, so a failed update leaves the previous state intact.
enum Engine {
    Reer { cfg: IrlsConfig, tau: ExpectileLevel, state: Option<SummaryState> },
    Paer { cfg: IrlsConfig, state: PaerState },
    Dcer { cfg: IrlsConfig, state: DcerState },
}

impl Engine {
    fn new(a: &StreamArgs, p: usize, resumed: Option<StateFile>) -> Result<Engine, CliError> {
        let cfg = IrlsConfig::default();
        match (a.method, resumed) {
            (StreamMethod::Reer, Some(StateFile::Renewable(s))) => {
                Ok(Engine::Reer { cfg, tau: a.tau, state: Some(s) })
            }
            (StreamMethod::Reer, None) => Ok(Engine::Reer { cfg, tau: a.tau, state: None }),
            (StreamMethod::Paer, Some(StateFile::Paer(s))) => {
                if let Some(arg) = a.weight_mode {
                    if arg.to_core() != s.weight_mode() {
                        return Err(CliError::Schema(format!(
                            "state was accumulated with weight mode '{}', --weight-mode asks for '{}'",
                            s.weight_mode().as_str(),
                            arg.to_core().as_str()
                        )));
                    }
                }
                Ok(Engine::Paer { cfg, state: s })
            }
            (StreamMethod::Paer, None) => {
                let mode = a.weight_mode.map_or(WeightMode::FinalFraction, |m| m.to_core());
                Ok(Engine::Paer { cfg, state: PaerState::new(p, a.tau, mode)? })
            }
            (StreamMethod::Dcer, Some(StateFile::Dcer(s))) => Ok(Engine::Dcer { cfg, state: s }),
            (StreamMethod::Dcer, None) => Ok(Engine::Dcer { cfg, state: DcerState::new(p, a.tau)? }),
            // kind mismatches are rejected before construction
            (_, Some(_)) => unreachable!("state kind checked by the caller"),
        }
    }

    fn absorb(&mut self, batch: &Batch) -> Result<(), CliError> {
        match self {
            Engine::Reer { cfg, tau, state } => {
                let next = match state.take() {
                    None => SummaryState::from_first_batch(batch, *tau, cfg)?,
                    Some(s) => s.update(batch)?,
                };
                *state = Some(next);
            }
            Engine::Paer { cfg, state } => *state = state.update(batch, cfg)?,
            Engine::Dcer { cfg, state } => *state = state.update(batch, cfg)?,
        }
        Ok(())
    }

    fn batches_seen(&self) -> u64 {
        match self {
            Engine::Reer { state, .. } => state.as_ref().map_or(0, |s| s.batches_seen()),
            Engine::Paer { state, .. } => state.batches_seen(),
            Engine::Dcer { state, .. } => state.batches_seen(),
        }
    }

    fn estimate(&self) -> Result<Coefficients, CliError> {
        match self {
            Engine::Reer { state, .. } => match state {
                Some(s) => Ok(s.estimate()),
                None => Err(CliError::Run("no batches processed yet".into())),
            },
            Engine::Paer { state, .. } => Ok(state.finalize()?),
            Engine::Dcer { state, .. } => Ok(state.finalize()?),
        }
    }

    fn into_state_file(self) -> Option<StateFile> {
        match self {
            Engine::Reer { state, .. } => state.map(StateFile::Renewable),
            Engine::Paer { state, .. } => Some(StateFile::Paer(state)),
            Engine::Dcer { state, .. } => Some(StateFile::Dcer(state)),
        }
    }
}

fn check_resumable(
    state: &StateFile,
    path: &Path,
    method: StreamMethod,
    tau: ExpectileLevel,
    p: usize,
) -> Result<(), CliError> {
    let want = match method {
        StreamMethod::Reer => "reer",
        StreamMethod::Paer => "paer",
        StreamMethod::Dcer => "dcer",
    };
    if state.kind() != want {
        return Err(CliError::Schema(format!(
            "{} holds a '{}' state, which cannot resume --method {want}",
            path.display(),
            state.kind()
        )));
    }
    if state.tau().value() != tau.value() {
        return Err(CliError::Schema(format!(
            "{} was fitted at tau {}, --tau asks for {}",
            path.display(),
            fmt_f64_17(state.tau().value()),
            fmt_f64_17(tau.value())
        )));
    }
    if state.p() != p {
        return Err(CliError::Schema(format!(
            "{} has {} coefficients, the stream provides {} design columns",
            path.display(),
            state.p(),
            p
        )));
    }
    Ok(())
}

pub fn cmd_stream(a: &StreamArgs) -> Result<(), CliError> {
    let batching = match (a.batch_size, &a.batch_column) {
        (Some(n), None) => Batching::BySize(n as usize),
        (None, Some(col)) => Batching::ByColumn(col.clone()),
        _ => unreachable!("clap enforces exactly one batching flag"),
    };
    let spec = StreamSpec {
        source: a.input.clone(),
        batching,
        response_column: a.response.clone(),
        feature_columns: a.features.clone(),
        add_intercept: !a.no_intercept,
        drop_bad_rows: a.drop_bad_rows,
    };
    let mut reader = BatchReader::open(&spec)?;
    let p = reader.p();

    let resumed = match &a.state {
        Some(path) => {
            let state = load_state(path)?;
            check_resumable(&state, path, a.method, a.tau, p)?;
            Some(state)
        }
        None => None,
    };
    let mut engine = Engine::new(a, p, resumed)?;

    let mut trace = match &a.trace {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            write!(w, "batch_index,n")?;
            for j in 0..p {
                write!(w, ",beta_{j}")?;
            }
            writeln!(w)?;
            Some(w)
        }
        None => None,
    };

    let mut batch_index = engine.batches_seen();
    let mut new_batches = 0u64;
    let mut new_rows = 0u64;
    while let Some(batch) = reader.next_batch()? {
        engine.absorb(&batch)?;
        if let Some(w) = trace.as_mut() {
            let est = engine.estimate()?;
            write!(w, "{},{}", batch_index, batch.n())?;
            for b in &est.beta {
                write!(w, ",{}", fmt_f64_17(*b))?;
            }
            writeln!(w)?;
        }
        batch_index += 1;
        new_batches += 1;
        new_rows += batch.n() as u64;
    }
    if let Some(mut w) = trace {
        w.flush()?;
    }
    if engine.batches_seen() == 0 {
        return Err(CliError::Run(format!(
            "{} contained no data batches",
            a.input.display()
        )));
    }

    if reader.rows_dropped() > 0 {
        eprintln!("dropped {} malformed rows", reader.rows_dropped());
    }
    let est = engine.estimate()?;
    let rendered: Vec<String> = est.beta.iter().map(|b| fmt_f64_17(*b)).collect();
    println!(
        "processed {} batches ({} rows); estimate: {}",
        new_batches,
        new_rows,
        rendered.join(",")
    );
    if let Some(out) = &a.state_out {
        let state = engine
            .into_state_file()
            .ok_or_else(|| CliError::Run("nothing to save".into()))?;
        save_state(&state, out)?;
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let state = load_state(&a.state)?;
    let coef = state.coefficients()?;
    let tau = state.tau();

    let spec = StreamSpec {
        source: a.input.clone(),
        batching: Batching::BySize(65_536),
        response_column: a.response.clone(),
        feature_columns: a.features.clone(),
        add_intercept: !a.no_intercept,
        drop_bad_rows: a.drop_bad_rows,
    };
    let mut reader = BatchReader::open(&spec)?;
    if reader.p() != coef.beta.len() {
        return Err(CliError::Schema(format!(
            "{} expects {} design columns, {} provides {}",
            a.state.display(),
            coef.beta.len(),
            a.input.display(),
            reader.p()
        )));
    }

    let mut total_loss = 0.0;
    let mut n_test = 0u64;
    while let Some(batch) = reader.next_batch()? {
        let n = batch.n();
        let mean = reer_core::mean_prediction_error(std::slice::from_ref(&batch), &coef)?;
        total_loss += mean * n as f64;
        n_test += n as u64;
    }
    if n_test == 0 {
        return Err(CliError::Run(format!(
            "{} contained no usable rows",
            a.input.display()
        )));
    }
    if reader.rows_dropped() > 0 {
        eprintln!("dropped {} malformed rows", reader.rows_dropped());
    }

    let mpe = total_loss / n_test as f64;
    let report = format!(
        "tau,mpe,n_test,method\n{},{},{},{}\n",
        fmt_f64_17(tau.value()),
        fmt_f64_17(mpe),
        n_test,
        state.kind()
    );
    print!("{report}");
    if let Some(out) = &a.out {
        std::fs::write(out, &report)?;
    }
    Ok(())
}
