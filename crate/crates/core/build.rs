// No build-time work. This file exists because the manifest declares a
// build-dependency on openblas-build purely to enable its TLS feature
// (feature unification); see the comment in Cargo.toml.
fn main() {}
