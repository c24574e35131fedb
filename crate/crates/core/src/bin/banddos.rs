fn main() {
    std::process::exit(banddos::cli::main_with_args(std::env::args_os()));
}
