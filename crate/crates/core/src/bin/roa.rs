fn main() {
    std::process::exit(roa_core::cli::main_entry());
}
