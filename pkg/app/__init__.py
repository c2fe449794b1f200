"""HDG 적응 유한요소"""

__version__ = "0.1.0"
