fn main() {
    std::process::exit(retseg::cli::main_with_args(std::env::args_os()));
}
