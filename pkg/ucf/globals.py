"""
Values of global runtime settings. Written once by the driver before a command runs.
"""

# Overall output directory for artifacts of the current command
output_dir: str = ""

# number of worker processes for the classifier sweep
num_processes: int = 1

# significant digits for every float written to CSV / JSON artifacts
float_digits: int = 17

# exact t-SNE refuses inputs larger than this
tsne_max_exact: int = 5000

# inference chunk size for encoding many samples (attention is quadratic in chunk*steps)
encode_chunk: int = 128
