use clap::Parser;

use eagat_cli::{run, Cli};

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = run(cli, argv, &mut stdout) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
