use clap::Parser;

fn main() {
    let cli = zoisim_cli::Cli::parse();
    std::process::exit(zoisim_cli::main_with(cli));
}
