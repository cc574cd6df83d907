fn main() {
    std::process::exit(fslhd_cli::main_with_args(std::env::args_os()));
}
