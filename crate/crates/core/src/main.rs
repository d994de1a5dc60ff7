fn main() {
    std::process::exit(overseg::cli::main_with(std::env::args_os()));
}
