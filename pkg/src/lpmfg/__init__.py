"""Linear-programming mean-field equilibria for reflected jump-diffusions."""

__version__ = "0.1.0"
