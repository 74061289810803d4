# Anchors the tests directory on sys.path so shared helpers
# (oracles.py, synth_benchmark.py) import as plain modules.
