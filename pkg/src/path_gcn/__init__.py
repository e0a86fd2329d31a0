"""Main module for path-gcn: learnable graph spatial operators built from random
paths, with node-classification training on graph bundles.

After importing, call `main.main()` to execute the program.

Dependencies: `numpy` and `scipy` for the dense and sparse numerics, `rich` for
console output.
"""

from path_gcn._version import __version__ as __version__
from path_gcn.main import main as main
