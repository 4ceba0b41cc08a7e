"""
Shared plumbing: logging, deterministic reductions, atomic artifact writes and the exception classes.
"""
import hashlib
import logging
import math
import os
import tempfile
from os import path

import numpy as np

LOGGER = logging.getLogger("nonloclaw")


class ConfigError(ValueError):
    """Invalid run configuration, optionally anchored to a line of the config file"""
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class GridError(ValueError):
    pass


class KernelError(ValueError):
    """Kernel specification problems, `problems` is the full list found"""
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__('; '.join(self.problems))


class HorizonError(KernelError):
    pass


class NonFiniteError(ValueError):
    pass


class CFLError(ValueError):
    def __init__(self, message, admissible_dt):
        self.admissible_dt = admissible_dt
        super().__init__(f"{message} (admissible dt <= {admissible_dt!r})")


class FluxConsistencyError(ArithmeticError):
    pass


class SolverDivergenceError(RuntimeError):
    def __init__(self, message, residual_history, step=None):
        self.residual_history = list(residual_history)
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


def setup_logger(logger, *log_file_paths, level=logging.INFO):
    logger.setLevel(level)
    formatter = logging.Formatter('%(asctime)s - %(message)s')
    # one console handler per logger, no matter how often this is called
    if not any(type(i) is logging.StreamHandler for i in logger.handlers):
        ch = logging.StreamHandler()
        ch.setLevel(logging.INFO)
        ch.setFormatter(formatter)
        logger.addHandler(ch)
    known_files = {getattr(i, 'baseFilename', None) for i in logger.handlers}
    for log_file_path in log_file_paths:
        if path.abspath(log_file_path) in known_files:
            continue
        fh = logging.FileHandler(log_file_path)
        fh.setLevel(logging.INFO)
        fh.setFormatter(formatter)
        logger.addHandler(fh)


def close_file_handlers(logger):
    for handler in list(logger.handlers):
        if isinstance(handler, logging.FileHandler):
            handler.close()
            logger.removeHandler(handler)


def stable_sum(values) -> float:
    """Correctly rounded sum in fixed (C) order; bit-stable regardless of array layout or thread count"""
    return math.fsum(np.ravel(np.asarray(values, dtype=float), order='C').tolist())


def sign0(x):
    """Sign with sign0(0) = 0"""
    return np.sign(x)


def atomic_write(file_path, text: str):
    """Write to a temporary file in the target directory then rename over the destination"""
    directory = path.dirname(path.abspath(file_path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp_')
    try:
        with os.fdopen(fd, 'w', newline='') as f:
            f.write(text)
        os.replace(tmp_path, file_path)
    except BaseException:
        if path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def file_sha256(file_path) -> str:
    digest = hashlib.sha256()
    with open(file_path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()
