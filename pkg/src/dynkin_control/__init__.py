"""Two-obstacle Dynkin games and the singular control problems they generate."""
__version__ = "0.1.0"
