"""Training, evaluation and reporting harness built on the core library."""
