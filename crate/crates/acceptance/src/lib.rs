//! Holds the `acceptance` test target; run it with `cargo test -p drumspace-acceptance -- --nocapture`.
