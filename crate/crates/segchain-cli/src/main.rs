use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use segchain_cli::{
    cmd_export_snapshot, cmd_import_snapshot, cmd_report, cmd_run, cmd_tamper, cmd_verify,
};

/// Time-segmented consortium blockchain: experiment runner and chain
/// verification tooling.
#[derive(Parser)]
#[command(name = "segchain", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a storage-retention experiment from a scenario config file.
    Run {
        /// Scenario config (flat `key = value` lines, `#` comments).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify segment files: every block hash, every linkage, and the
    /// genesis anchor when segment 1 is present.
    Verify {
        /// Segment files to verify, any order.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Expected chain id, 64 hex digits.
        #[arg(long = "chain-id")]
        chain_id: String,
        /// Optionally pin the expected head digest (64 hex digits).
        #[arg(long = "expect-head")]
        expect_head: Option<String>,
    },
    /// Export a snapshot file from a directory of segment files.
    ExportSnapshot {
        /// Directory holding segment files.
        #[arg(long)]
        from: PathBuf,
        /// Inclusive segment range, e.g. 1..5.
        #[arg(long)]
        range: String,
        /// Snapshot file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Import a snapshot file, recomputing and checking all hashes.
    ImportSnapshot {
        file: PathBuf,
        /// Trusted head digest obtained out of band (64 hex digits).
        #[arg(long = "trusted-head")]
        trusted_head: Option<String>,
    },
    /// Flip one byte of a segment file in place (tamper-detection
    /// tooling).
    Tamper {
        file: PathBuf,
        /// Byte offset to flip; must lie in the payload region.
        #[arg(long)]
        offset: u64,
        /// XOR mask to apply (0 leaves the file unchanged).
        #[arg(long)]
        xor: u8,
    },
    /// Print the plot-ready report CSV from an experiment output
    /// directory.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out } => cmd_run(config, out.as_deref()),
        Command::Verify {
            files,
            chain_id,
            expect_head,
        } => cmd_verify(files, chain_id, expect_head.as_deref()),
        Command::ExportSnapshot { from, range, out } => cmd_export_snapshot(from, range, out),
        Command::ImportSnapshot { file, trusted_head } => {
            cmd_import_snapshot(file, trusted_head.as_deref())
        }
        Command::Tamper { file, offset, xor } => cmd_tamper(file, *offset, *xor),
        Command::Report { dir } => cmd_report(dir),
    };
    match result {
        Ok(message) => {
            print!("{message}");
            if !message.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(error) => {
            eprintln!("error: {}", error.message());
            ExitCode::from(error.exit_code() as u8)
        }
    }
}
