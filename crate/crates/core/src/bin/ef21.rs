fn main() {
    std::process::exit(ef21_momentum::cli::main_with_args(std::env::args_os()));
}
