# subdiff - Reaction-subdiffusion toolkit built on internal states
"""
Exponential-sum fits of power-law waiting times, internal-state
operators, deterministic and stochastic reaction-diffusion solvers,
closed-form alpha = 1/2 references and the analysis used to compare them.
"""

__version__ = "1.0.0"
