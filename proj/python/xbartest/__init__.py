from ._xbartest import (
    Error,
    FormatError,
    InvalidValue,
    Model,
    ShapeError,
    TestVector,
    detect,
    forward_pass_count,
    generate_test_vector,
    kl_divergence,
    kl_general,
    make_toy_model,
    output_stats,
    quantize_int8,
    run_coverage,
    run_gradcheck,
)

__all__ = [
    "Error",
    "FormatError",
    "InvalidValue",
    "Model",
    "ShapeError",
    "TestVector",
    "detect",
    "forward_pass_count",
    "generate_test_vector",
    "kl_divergence",
    "kl_general",
    "make_toy_model",
    "output_stats",
    "quantize_int8",
    "run_coverage",
    "run_gradcheck",
]
