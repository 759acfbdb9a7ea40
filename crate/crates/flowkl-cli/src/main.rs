use clap::Parser;

fn main() {
    let cli = flowkl_cli::Cli::parse();
    std::process::exit(flowkl_cli::execute(cli));
}
