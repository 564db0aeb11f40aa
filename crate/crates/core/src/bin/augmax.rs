fn main() {
    std::process::exit(augmax::cli::main_exit_code());
}
