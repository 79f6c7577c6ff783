from .simulate import simulate
from .fit import fit
from .posterior import posterior
from .predict import predict

__all__ = [
    "simulate",
    "fit",
    "posterior",
    "predict",
]
