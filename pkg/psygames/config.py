import os

from dotenv import load_dotenv

# Pick up a local .env before any attribute below is evaluated.
load_dotenv()

# Directory of the psygames package itself; bundled model sources live beneath it.
BASE_DIR = os.path.abspath(os.path.dirname(__file__))


def _env_bool(name: str, default: str) -> bool:
    return os.environ.get(name, default).lower() in ('1', 'true', 'yes')


class Config:
    """
    Base configuration for psygames.

    Holds the defaults shared by every environment. Each value can be
    overridden through an environment variable (or a .env file); the CLI
    flags override these again for a single invocation.
    """
    # --- Logging Configuration ---
    # Default logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL).
    LOG_LEVEL = os.environ.get('PG_LOG_LEVEL', 'WARNING').upper()
    # Optional rotating log file. Empty means stderr only.
    LOG_FILE_PATH = os.environ.get('PG_LOG_FILE', '')
    # Mirror log records on stderr.
    LOG_TO_STDERR = _env_bool('PG_LOG_TO_STDERR', 'True')

    # --- Solver Defaults ---
    # Worker threads for per-support and per-state solving.
    PG_THREADS = int(os.environ.get('PG_THREADS', 1))
    # Base seed for every random stream (multi-start points, equilibrium sampling).
    PG_SEED = int(os.environ.get('PG_SEED', 0))
    # Number of multi-start points per support program.
    PG_STARTS = int(os.environ.get('PG_STARTS', 64))
    # Projected-gradient iterations per start.
    PG_MAX_ITERS = int(os.environ.get('PG_MAX_ITERS', 2000))
    # Constraint residual accepted as feasible.
    PG_FEAS_TOL = float(os.environ.get('PG_FEAS_TOL', 1e-6))
    # Objective tolerance (projected-gradient stop, lexicographic gap, welfare ties).
    PG_OPT_TOL = float(os.environ.get('PG_OPT_TOL', 1e-6))
    # Lower bound replacing strict positivity of supported probabilities.
    PG_EPS_LOWER = float(os.environ.get('PG_EPS_LOWER', 1e-8))
    # Grid resolution of the infeasibility certificate.
    PG_GRID_CERT_RESOLUTION = int(os.environ.get('PG_GRID_CERT_RESOLUTION', 40))

    # --- Model Catalog ---
    PG_MODELS_DIR = os.environ.get('PG_MODELS_DIR', os.path.join(BASE_DIR, 'modelio', 'models'))


class DevelopmentConfig(Config):
    """
    Development configuration: verbose logging, otherwise identical to Config.
    """
    LOG_LEVEL = os.environ.get('PG_DEV_LOG_LEVEL', 'DEBUG').upper()


class TestingConfig(Config):
    """
    Configuration for the automated test suite.

    Fewer starts keep the suite fast; the bundled case studies are all solved
    reliably with 16 starts.
    """
    LOG_LEVEL = 'WARNING'
    LOG_FILE_PATH = ''
    LOG_TO_STDERR = False
    PG_STARTS = 16
    PG_THREADS = 1


config_by_name = {
    'default': Config,
    'development': DevelopmentConfig,
    'testing': TestingConfig,
}


def get_config(name: str = None):
    """
    Resolve a configuration class by name, falling back to PG_ENV and then 'default'.

    Args:
        name (str): One of the keys of ``config_by_name``.

    Returns:
        type: The selected configuration class.
    """
    name = name or os.environ.get('PG_ENV', 'default')
    return config_by_name.get(name, Config)
