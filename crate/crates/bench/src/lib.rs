//! Criterion benchmarks of the numeric kernels: convolution, the actor
//! network forward and backward passes, and influence-map aggregation.
//! Run with `cargo bench -p imarl-bench`.
