"""MAVeC: a message-driven spatial CNN accelerator toolkit.

The package folds convolution layers onto a 2-D grid of message-processing
sites, compiles each layer into a deterministic stream of 64-bit messages,
executes that stream on a cycle-level model of the fabric, and reports
throughput, utilization, data-reuse, and I/O sensitivity numbers.

Layers of the stack:

- ``mavec.messages``   64-bit message codec and dump format
- ``mavec.mapping``    layer folding and column role assignment
- ``mavec.oracle``     bit-exact numpy reference for conv/relu/pool
- ``mavec.schedule``   message program generation per layer
- ``mavec.fabric``     cycle-level fabric model (Cython or pure Python)
- ``mavec.perf``       counters, reuse accounting, analytic estimates, I/O
- ``mavec.workloads``  layer presets and workload files
- ``mavec.cli``        command-line front end
"""

__version__ = "0.1.0"
