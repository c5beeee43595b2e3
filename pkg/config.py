"""
Configuration for the Weyl-Titchmarsh toolkit
"""
import logging
import logging.config
import math
import os
from pathlib import Path
from typing import Optional

import psutil

# Load environment variables from .env file
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    # python-dotenv not installed, use environment variables only
    pass


def _default_workers() -> int:
    cpus = psutil.cpu_count(logical=True) or 1
    return max(1, min(cpus, 8))


# Worker Settings
MAX_WORKERS = int(os.getenv('MAX_WORKERS', str(_default_workers())))

# Directory Settings
LOG_DIR = os.getenv('LOG_DIR', 'logs')
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')

# Dense kernel
COND_LIMIT = float(os.getenv('COND_LIMIT', '1e12'))
EIG_TOL = float(os.getenv('EIG_TOL', '1e-10'))
CONTOUR_NODES = int(os.getenv('CONTOUR_NODES', '64'))
CONTOUR_MAX_NODES = int(os.getenv('CONTOUR_MAX_NODES', '16384'))
CONTOUR_TOL = float(os.getenv('CONTOUR_TOL', '1e-10'))

# Matrix equations
RICCATI_TOL = float(os.getenv('RICCATI_TOL', '1e-12'))
RICCATI_MAX_ITER = int(os.getenv('RICCATI_MAX_ITER', '200'))

# Sampling geometry
RAY_ANGLE = float(os.getenv('RAY_ANGLE', str(3 * math.pi / 4)))
RAY_LO = float(os.getenv('RAY_LO', '10'))
RAY_HI = float(os.getenv('RAY_HI', '1e5'))
RAY_COUNT = int(os.getenv('RAY_COUNT', '12'))
RING_RADIUS = float(os.getenv('RING_RADIUS', '8'))
RING_COUNT = int(os.getenv('RING_COUNT', '32'))

# Lattice inverse problem
TRUNCATION_MARGIN = int(os.getenv('TRUNCATION_MARGIN', '40'))
PIVOT_TOL = float(os.getenv('PIVOT_TOL', '1e-10'))
MOMENT_CAP = int(os.getenv('MOMENT_CAP', '10'))
RAY_MOMENTS = int(os.getenv('RAY_MOMENTS', '4'))
RAY_LEVEL_TOL = float(os.getenv('RAY_LEVEL_TOL', '1e-6'))
HALFLINE_MAX_L = int(os.getenv('HALFLINE_MAX_L', '4096'))
NOISE_FACTOR = float(os.getenv('NOISE_FACTOR', '100'))

# Continuum integrator
ODE_METHOD = os.getenv('ODE_METHOD', 'DOP853')
ODE_RTOL = float(os.getenv('ODE_RTOL', '1e-10'))
ODE_ATOL = float(os.getenv('ODE_ATOL', '1e-12'))
BLOWUP_LIMIT = float(os.getenv('BLOWUP_LIMIT', '1e6'))
CLOSENESS_LO = float(os.getenv('CLOSENESS_LO', '0.2'))
CLOSENESS_HI = float(os.getenv('CLOSENESS_HI', '200'))
CLOSENESS_COUNT = int(os.getenv('CLOSENESS_COUNT', '13'))

# Logging Configuration
LOGGING_CONFIG = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'default': {
            'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        },
        'detailed': {
            'format': '%(asctime)s - %(name)s - %(levelname)s - %(module)s - %(funcName)s - %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'level': 'WARNING',
            'formatter': 'default',
            'stream': 'ext://sys.stderr',
        },
        'file': {
            'class': 'logging.handlers.RotatingFileHandler',
            'level': 'DEBUG',
            'formatter': 'detailed',
            'filename': os.path.join(LOG_DIR, 'weyl.log'),
            'maxBytes': 10485760,  # 10MB
            'backupCount': 5,
            'delay': True,
        },
        'error_file': {
            'class': 'logging.handlers.RotatingFileHandler',
            'level': 'ERROR',
            'formatter': 'detailed',
            'filename': os.path.join(LOG_DIR, 'weyl_errors.log'),
            'maxBytes': 5242880,  # 5MB
            'backupCount': 3,
            'delay': True,
        },
    },
    'loggers': {
        '': {  # root logger
            'handlers': ['console', 'file', 'error_file'],
            'level': 'INFO',
            'propagate': False,
        },
    },
}


def setup_logging(level: Optional[str] = None, verbose: bool = False) -> None:
    """Create the log directory and apply LOGGING_CONFIG"""
    Path(LOG_DIR).mkdir(parents=True, exist_ok=True)
    cfg = {**LOGGING_CONFIG, 'handlers': {k: dict(v) for k, v in LOGGING_CONFIG['handlers'].items()}}
    cfg['loggers'] = {'': dict(LOGGING_CONFIG['loggers'][''])}
    cfg['loggers']['']['level'] = getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO)
    if verbose:
        cfg['handlers']['console']['level'] = 'INFO'
    logging.config.dictConfig(cfg)


def settings_snapshot() -> dict:
    """Effective numerical settings, embedded in report provenance"""
    return {
        'cond_limit': COND_LIMIT,
        'eig_tol': EIG_TOL,
        'contour_nodes': CONTOUR_NODES,
        'contour_max_nodes': CONTOUR_MAX_NODES,
        'contour_tol': CONTOUR_TOL,
        'riccati_tol': RICCATI_TOL,
        'riccati_max_iter': RICCATI_MAX_ITER,
        'ray_angle': RAY_ANGLE,
        'truncation_margin': TRUNCATION_MARGIN,
        'pivot_tol': PIVOT_TOL,
        'moment_cap': MOMENT_CAP,
        'ray_moments': RAY_MOMENTS,
        'ray_level_tol': RAY_LEVEL_TOL,
        'halfline_max_l': HALFLINE_MAX_L,
        'ring_radius': RING_RADIUS,
        'ring_count': RING_COUNT,
        'noise_factor': NOISE_FACTOR,
        'ode_method': ODE_METHOD,
        'ode_rtol': ODE_RTOL,
        'ode_atol': ODE_ATOL,
        'blowup_limit': BLOWUP_LIMIT,
        'closeness_lo': CLOSENESS_LO,
        'closeness_hi': CLOSENESS_HI,
        'closeness_count': CLOSENESS_COUNT,
        'max_workers': MAX_WORKERS,
    }
