use clap::Parser;

fn main() -> anyhow::Result<()> {
    augsearch_cli::run(augsearch_cli::Cli::parse())
}
