"""Single-image reflection removal with an iterative gradient-encoding network."""
