use std::path::PathBuf;

use clap::Args;
use nsl_core::evaluation::{render_comparison, ReportTable};
use serde::Serialize;

use crate::args::named_path;
use crate::error::{CliError, Result};
use crate::pipeline::write_text;
use crate::run_manifest::{sidecar, Recorder};

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Report of one method, as METHOD=PATH; repeat per method.
    #[arg(long = "report", value_parser = named_path, required = true)]
    pub reports: Vec<(String, PathBuf)>,
    /// Genes to show (default: every gene of the first report).
    #[arg(long, value_delimiter = ',')]
    pub genes: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &ReportArgs) -> Result<()> {
    let mut recorder = Recorder::start();
    let mut tables = Vec::new();
    for (name, path) in &args.reports {
        recorder.input(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let table = ReportTable::parse(&text)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        tables.push((name.clone(), table));
    }
    let genes = if args.genes.is_empty() {
        tables[0].1.genes.iter().map(|g| g.gene.clone()).collect()
    } else {
        args.genes.clone()
    };
    let text = render_comparison(&tables, &genes);
    write_text(&args.out, &text)?;
    print!("{text}");
    recorder.output(&args.out)?;
    recorder.finish(args, &sidecar(&args.out))
}
