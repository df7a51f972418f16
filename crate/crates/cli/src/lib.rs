//! Command-line front end for `margattn`.
//!
//! Every subcommand reads CSV or `key = value` inputs, runs one library
//! operation, writes CSV outputs and returns a one-line summary. Loading
//! errors exit with code 2; numeric failures during computation exit with 1.

pub mod args;
pub mod model;

use std::fmt;
use std::fs;
use std::path::Path;

use margattn::approx::{compare, entropy, ApproxMethod};
use margattn::attention::{cross_attention_mrf, expected_values, self_attention_mrf};
use margattn::io::{format_f64, format_rows, read_csv_matrix, read_csv_vector, KeyValues};
use margattn::mechanisms::{assignments, hopfield_retrieve, run_block_slots, run_slots, SlotInit};
use margattn::oracle::enumerate_joint;
use margattn::pcn::relax;
use margattn::vfe::{free_energy, CccpState, DEFAULT_MAX_ITER, DEFAULT_TOL};
use margattn::{
    edge_posterior, EdgePosterior, Error, HopfieldConfig, Mat, PairwiseMrf, SeededRng, SlotConfig,
    ValueSpec,
};

use args::{
    ApproxArgs, AttendArgs, BlockSlotArgs, Cli, Command, CsvOpts, HopfieldArgs, OracleArgs,
    PcnArgs, Projections, SelfAttendArgs, SlotsArgs,
};

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: Error,
}

impl CliError {
    /// Bad or unreadable input: exit code 2.
    fn input(error: Error) -> Self {
        CliError { code: 2, error }
    }
}

impl From<Error> for CliError {
    fn from(error: Error) -> Self {
        let code = if error.is_numeric() { 1 } else { 2 };
        CliError { code, error }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Attend(a) => attend(a),
        Command::Selfattend(a) => self_attend(a),
        Command::Hopfield(a) => hopfield(a),
        Command::Slots(a) => slots(a),
        Command::Blockslot(a) => block_slot(a),
        Command::Pcn(a) => pcn(a),
        Command::Approx(a) => approx(a),
        Command::Oracle(a) => oracle(a),
    }
}

fn read(path: &Path, csv: CsvOpts) -> CliResult<Mat> {
    read_csv_matrix(path, csv.header).map_err(CliError::input)
}

fn read_or_identity(path: Option<&Path>, d: usize, csv: CsvOpts) -> CliResult<Mat> {
    path.map_or(Ok(Mat::identity(d)), |p| read(p, csv))
}

fn write(path: &Path, text: String) -> CliResult<()> {
    fs::write(path, text)
        .map_err(|e| CliError::input(Error::Io(format!("{}: {e}", path.display()))))
}

fn write_matrix(path: &Path, m: &Mat) -> CliResult<()> {
    write(path, margattn::io::format_csv_matrix(m))
}

fn write_posterior(path: &Path, p: &EdgePosterior) -> CliResult<()> {
    write(path, format_rows(p.rows()))
}

fn trace_text(state: &CccpState) -> String {
    format_rows(state.trace_rows().iter())
}

fn mean_entropy(p: &EdgePosterior) -> f64 {
    let h = entropy(p);
    h.iter().sum::<f64>() / h.len().max(1) as f64
}

struct Projected {
    wq: Mat,
    wk: Mat,
    wv: Mat,
}

fn projections(p: &Projections, d: usize, csv: CsvOpts) -> CliResult<Projected> {
    Ok(Projected {
        wq: read_or_identity(p.wq.as_deref(), d, csv)?,
        wk: read_or_identity(p.wk.as_deref(), d, csv)?,
        wv: read_or_identity(p.wv.as_deref(), d, csv)?,
    })
}

fn finish_attention(
    mrf: &PairwiseMrf,
    wv: Mat,
    out: &Path,
    posterior: Option<&Path>,
) -> CliResult<(EdgePosterior, Mat)> {
    let values = ValueSpec::new(wv);
    let post = edge_posterior(mrf)?;
    let outputs = expected_values(mrf, &post, &values).map_err(CliError::input)?;
    write_matrix(out, &outputs)?;
    if let Some(p) = posterior {
        write_posterior(p, &post)?;
    }
    Ok((post, outputs))
}

fn attend(a: AttendArgs) -> CliResult<String> {
    let keys = read(&a.keys, a.csv)?;
    let queries = read(&a.queries, a.csv)?;
    let w = projections(&a.proj, keys.cols(), a.csv)?;
    let mrf = cross_attention_mrf(&queries, &keys, &w.wq, &w.wk, a.proj.beta).map_err(CliError::input)?;
    let (post, out) = finish_attention(&mrf, w.wv, &a.out, a.posterior.as_deref())?;
    Ok(format!(
        "attend: {} queries over {} keys, output width {}, mean posterior entropy {:.6}",
        queries.rows(),
        keys.rows(),
        out.cols(),
        mean_entropy(&post)
    ))
}

fn self_attend(a: SelfAttendArgs) -> CliResult<String> {
    let x = read(&a.inputs, a.csv)?;
    let w = projections(&a.proj, x.cols(), a.csv)?;
    let mrf = self_attention_mrf(&x, &w.wq, &w.wk, a.proj.beta).map_err(CliError::input)?;
    let (post, out) = finish_attention(&mrf, w.wv, &a.out, a.posterior.as_deref())?;
    Ok(format!(
        "selfattend: {} inputs, output width {}, mean posterior entropy {:.6}",
        x.rows(),
        out.cols(),
        mean_entropy(&post)
    ))
}

fn hopfield(a: HopfieldArgs) -> CliResult<String> {
    let patterns = read(&a.patterns, a.csv)?;
    let queries = read(&a.query, a.csv)?;
    let d = patterns.cols();
    let wq = read_or_identity(a.wq.as_deref(), d, a.csv)?;
    let wk = read_or_identity(a.wk.as_deref(), d, a.csv)?;
    if a.jobs == 0 {
        return Err(CliError::input(Error::InvalidArgument("--jobs must be at least 1".into())));
    }
    let configs = (0..queries.rows())
        .map(|i| HopfieldConfig::new(patterns.clone(), wq.clone(), wk.clone(), a.beta, queries.row(i).to_vec()))
        .collect::<margattn::Result<Vec<_>>>()
        .map_err(CliError::input)?;
    let (tol, max_iter) = (a.solver.tol, a.solver.max_iter);
    if !(tol > 0.0) || max_iter == 0 {
        return Err(CliError::input(Error::InvalidArgument("need --tol > 0 and --max-iter >= 1".into())));
    }

    // Independent queries split into contiguous chunks; results keep input order.
    let chunk = configs.len().div_ceil(a.jobs).max(1);
    let results: Vec<margattn::Result<(Vec<f64>, CccpState)>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|c| hopfield_retrieve(c, tol, max_iter)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    let results = results.into_iter().collect::<margattn::Result<Vec<_>>>()?;

    let retrieved: Vec<Vec<f64>> = results.iter().map(|(mu, _)| mu.clone()).collect();
    write_matrix(&a.out, &Mat::from_rows(&retrieved).map_err(CliError::from)?)?;
    if let Some(t) = &a.trace {
        let rows: Vec<Vec<f64>> = results
            .iter()
            .enumerate()
            .flat_map(|(q, (_, st))| st.trace_rows().into_iter().map(move |r| vec![q as f64, r[0], r[1], r[2]]))
            .collect();
        write(t, format_rows(rows.iter()))?;
    }
    let converged = results.iter().filter(|(_, st)| st.converged).count();
    let iters = results.iter().map(|(_, st)| st.iteration).max().unwrap_or(0);
    let f = results.first().map_or(f64::NAN, |(_, st)| st.final_energy());
    Ok(format!(
        "hopfield: {} queries, {converged} converged, at most {iters} iterations, final F of first query {}",
        results.len(),
        format_f64(f)
    ))
}

fn write_slot_outputs(
    cfg: &SlotConfig,
    mu: &Mat,
    state: &CccpState,
    out: &Path,
    assign: Option<&Path>,
    trace: Option<&Path>,
) -> CliResult<()> {
    write_matrix(out, mu)?;
    if let Some(p) = assign {
        let text: String = assignments(cfg, mu)?.iter().map(|a| format!("{a}\n")).collect();
        write(p, text)?;
    }
    if let Some(p) = trace {
        write(p, trace_text(state))?;
    }
    Ok(())
}

fn solver_summary(name: &str, m: usize, state: &CccpState) -> String {
    format!(
        "{name}: {m} slots, {} iterations, {}, F {}, grad norm {}",
        state.iteration,
        if state.converged { "converged" } else { "not converged" },
        format_f64(state.final_energy()),
        format_f64(state.final_grad_norm())
    )
}

fn slots(a: SlotsArgs) -> CliResult<String> {
    let inputs = read(&a.inputs, a.csv)?;
    let d = inputs.cols();
    let w = read_or_identity(a.w.as_deref(), d, a.csv)?;
    let init = match &a.init {
        Some(p) => SlotInit::Given(read(p, a.csv)?),
        None => SlotInit::Seeded(a.seed),
    };
    let cfg = SlotConfig::new(inputs, a.num_slots, w, a.beta, init).map_err(CliError::input)?;
    let (mu, state) = run_slots(&cfg, a.norm.into(), a.solver.tol, a.solver.max_iter)?;
    write_slot_outputs(&cfg, &mu, &state, &a.out, a.assign.as_deref(), a.trace.as_deref())?;
    Ok(solver_summary("slots", a.num_slots, &state))
}

fn block_slot(a: BlockSlotArgs) -> CliResult<String> {
    let kv = KeyValues::read(&a.config).map_err(CliError::input)?;
    let cfg = model::block_slot_config(&kv).map_err(CliError::input)?;
    let tol = kv.f64_or("tol", DEFAULT_TOL).map_err(CliError::input)?;
    let max_iter = kv.usize_or("max_iter", DEFAULT_MAX_ITER).map_err(CliError::input)?;
    let (mu, state) = run_block_slots(&cfg, tol, max_iter)?;
    write_slot_outputs(&cfg.slots, &mu, &state, &a.out, a.assign.as_deref(), a.trace.as_deref())?;
    Ok(solver_summary("blockslot", cfg.slots.num_slots, &state))
}

fn pcn(a: PcnArgs) -> CliResult<String> {
    let net = model::load_network(&a.network).map_err(CliError::input)?;
    let obs = read_csv_vector(&a.observations, a.csv.header).map_err(CliError::input)?;
    if obs.len() != net.layers()[0].size() {
        return Err(CliError::input(Error::Shape(format!(
            "{} observations for an input layer of {}",
            obs.len(),
            net.layers()[0].size()
        ))));
    }
    if !(a.step_size > 0.0) {
        return Err(CliError::input(Error::InvalidArgument("--step-size must be positive".into())));
    }
    let trace = relax(&net, &obs, a.steps, a.step_size)?;
    write(&a.out, format_rows(trace.mu.iter()))?;
    if let Some(p) = &a.trace {
        let rows: Vec<[f64; 2]> = trace.f_trace.iter().enumerate().map(|(t, f)| [t as f64, *f]).collect();
        write(p, format_rows(rows.iter()))?;
    }
    Ok(format!(
        "pcn: {} steps, F {} -> {}",
        a.steps,
        format_f64(trace.f_trace[0]),
        format_f64(*trace.f_trace.last().unwrap())
    ))
}

fn approx(a: ApproxArgs) -> CliResult<String> {
    let m = model::load_model(&a.instance).map_err(CliError::input)?;
    let methods = a
        .methods
        .split(',')
        .map(str::parse::<ApproxMethod>)
        .collect::<margattn::Result<Vec<_>>>()
        .map_err(CliError::input)?;
    let mut rng = SeededRng::new(a.seed);
    let reports = compare(&m.mrf, &m.values, &methods, a.samples, &mut rng).map_err(|e| {
        if e.is_numeric() {
            CliError::from(e)
        } else {
            CliError::input(e)
        }
    })?;
    let mut text = String::from("edge_var,method,kl,entropy,output_error,cost\n");
    for r in &reports {
        for (i, (kl, h)) in r.kl_per_edge_var.iter().zip(&r.entropy_p).enumerate() {
            text.push_str(&format!(
                "{i},{},{},{},{},{}\n",
                r.method,
                format_f64(*kl),
                format_f64(*h),
                format_f64(r.output_error),
                r.cost_proxy
            ));
        }
    }
    write(&a.out, text)?;
    let errors: Vec<String> = reports
        .iter()
        .map(|r| format!("{}={:.3e}", r.method, r.output_error))
        .collect();
    Ok(format!(
        "approx: {} edge variables, output error {}",
        m.mrf.num_edge_vars(),
        errors.join(" ")
    ))
}

fn oracle(a: OracleArgs) -> CliResult<String> {
    let m = model::load_model(&a.model).map_err(CliError::input)?;
    let table = enumerate_joint(&m.mrf).map_err(CliError::input)?;
    let joint = table.marginals()?;
    let fact = edge_posterior(&m.mrf)?;
    let mut text = String::new();
    for (i, (pf, pj)) in fact.rows().iter().zip(joint.rows()).enumerate() {
        for (c, (x, y)) in pf.iter().zip(pj).enumerate() {
            text.push_str(&format!("{i},{c},{},{}\n", format_f64(*x), format_f64(*y)));
        }
    }
    let f_joint = table.free_energy()?;
    let f_fact = free_energy(&m.mrf, m.mrf.nodes().latent())?;
    let summary = format!(
        "oracle: {} configurations, max marginal difference {:.3e}, F factorized {} joint {}",
        table.len(),
        fact.max_abs_diff(&joint),
        format_f64(f_fact),
        format_f64(f_joint)
    );
    match &a.out {
        Some(p) => write(p, text)?,
        None => print!("{text}"),
    }
    Ok(summary)
}
