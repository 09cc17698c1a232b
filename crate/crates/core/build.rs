// Resolve the LAPACK FFI symbols declared by `lapack-sys` against the system
// OpenBLAS (which bundles LAPACK) instead of building a BLAS from source.
fn main() {
    println!("cargo:rustc-link-lib=dylib=openblas");
}
