fn main() {
    // OpenBLAS carries the LAPACK symbols (dsyevd) and the CBLAS interface.
    println!("cargo:rustc-link-lib=dylib=openblas");
}
