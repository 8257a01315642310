fn main() {
    std::process::exit(qubo_cli::app::main());
}
