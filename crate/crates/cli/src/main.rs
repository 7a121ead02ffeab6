use clap::Parser;
use evonas_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    if let Err(e) = run(cli, &mut stdout.lock()) {
        eprintln!("evonas: {e}");
        std::process::exit(e.exit_code());
    }
}
