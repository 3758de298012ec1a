fn main() {
    std::process::exit(mbqc_loops::cli::main_with(std::env::args_os()));
}
