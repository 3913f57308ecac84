use clap::Parser;

fn main() {
    let cli = bayeshield_cli::args::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = bayeshield_cli::run(cli, &mut stdout) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
