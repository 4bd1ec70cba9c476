fn main() {
    std::process::exit(weakgraph::cli::main_with_args(std::env::args_os()));
}
