"""Kernel-mean-embedding incentive game for federated unlearning.

Submodules:

- :mod:`fuincentive.embedding`   kernels, empirical mean embeddings, inner-product tables
- :mod:`fuincentive.scenario`    synthetic non-IID scenarios and game profiles
- :mod:`fuincentive.client_game` client utilities, best responses, Nash solver
- :mod:`fuincentive.server_opt`  server objective, budget bounds, HAIPO, uniform baseline
- :mod:`fuincentive.oracles`     brute-force and analytic cross-checks
- :mod:`fuincentive.cli`         command-line runner
"""

__version__ = "0.1.0"
