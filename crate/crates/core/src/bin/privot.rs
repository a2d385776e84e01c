fn main() {
    std::process::exit(privot::cli::main_with_args(std::env::args_os()));
}
