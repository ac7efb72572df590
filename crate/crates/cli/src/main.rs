use clap::Parser;

fn main() {
    std::process::exit(treeq_cli::run(treeq_cli::Invocation::parse()));
}
