use clap::Parser;

fn main() {
    let cli = waterline_cli::Cli::parse();
    if let Err(e) = waterline_cli::run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
