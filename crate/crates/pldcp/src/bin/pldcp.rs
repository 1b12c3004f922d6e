//! Thin command-line front end; all behavior lives in the library.

fn main() {
    std::process::exit(pldcp::cli::run());
}
