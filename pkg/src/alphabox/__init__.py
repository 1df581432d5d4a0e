"""Dropout Bayesian neural networks trained with the black-box alpha energy.

Set ``ALPHABOX_THREADS`` before the first import to cap BLAS threads; when it
is unset computation is single-threaded. Explicit ``OMP_NUM_THREADS`` style
variables already in the environment are left alone.
"""
import os as _os

_threads = _os.environ.get("ALPHABOX_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
