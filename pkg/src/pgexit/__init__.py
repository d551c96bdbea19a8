"""Policy-gradient methods for stochastic control with exit time.

Includes the barrier VWAP-minus share-repurchase environment and an HJB
splitting-scheme solver used to benchmark the learned policies.
"""

__version__ = "0.1.0"
