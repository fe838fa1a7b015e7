from fedfusion.nncore import ParamSet

__version__ = "0.1.0"
__all__ = ["ParamSet", "__version__"]
