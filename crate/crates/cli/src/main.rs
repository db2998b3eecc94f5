use clap::Parser;

fn main() {
    let cli = sphere_center_cli::Cli::parse();
    std::process::exit(sphere_center_cli::run(cli));
}
