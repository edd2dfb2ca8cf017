fn main() {
    std::process::exit(mblangevin::cli::main_with_args(std::env::args_os()));
}
