use clap::Parser;

fn main() {
    let cli = escape_cli::Cli::parse();
    std::process::exit(escape_cli::run(cli));
}
