fn main() {
    std::process::exit(cube::io::cli::main_exit_code());
}
