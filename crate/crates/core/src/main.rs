fn main() {
    std::process::exit(covert_isc::cli::main_with_args(std::env::args_os()));
}
