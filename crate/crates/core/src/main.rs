fn main() {
    std::process::exit(klfuse::cli::main_entry());
}
