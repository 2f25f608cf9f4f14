fn main() {
    std::process::exit(actsched::cli::main_with(std::env::args_os()));
}
