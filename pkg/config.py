"""Configuration settings for sinkgp."""
import os


def _env_float(name, default):
    return float(os.environ.get(name, default))


def _env_int(name, default):
    return int(os.environ.get(name, default))


def _env_bool(name, default):
    return os.environ.get(name, str(default)).strip().lower() in ('1', 'true', 'yes', 'on')


class Config:
    """Base configuration."""
    # Sinkhorn
    EPSILON = _env_float('SINKGP_EPSILON', 1e-2)
    TOL = _env_float('SINKGP_TOL', 1e-6)
    MAX_ITER = _env_int('SINKGP_MAX_ITER', 1000)
    UNROLL_CAP = _env_int('SINKGP_UNROLL_CAP', 200)

    # Kernel / GP
    KERNEL = os.environ.get('SINKGP_KERNEL', 'sqexp')
    NOISE = os.environ.get('SINKGP_NOISE')  # None -> 1e-6 * variance
    REFERENCE_SIZE = _env_int('SINKGP_REFERENCE_SIZE', 6)

    # Training
    TRAIN_ITERS = _env_int('SINKGP_TRAIN_ITERS', 30)
    LBFGS_MEMORY = _env_int('SINKGP_LBFGS_MEMORY', 10)
    GRAD_TOL = _env_float('SINKGP_GRAD_TOL', 1e-5)

    # Execution
    SEED = _env_int('SINKGP_SEED', 0)
    THREADS = _env_int('SINKGP_THREADS', os.cpu_count() or 1)

    # Logging
    LOG_LEVEL = os.environ.get('SINKGP_LOG_LEVEL', 'INFO')
    LOG_JSON = _env_bool('SINKGP_LOG_JSON', False)
    LOG_FILE = os.environ.get('SINKGP_LOG_FILE')

    @classmethod
    def validate(cls):
        """Validate configuration values, reporting every problem at once."""
        errors = []

        if cls.EPSILON <= 0:
            errors.append("SINKGP_EPSILON must be positive")
        if cls.TOL <= 0:
            errors.append("SINKGP_TOL must be positive")
        if cls.MAX_ITER < 1:
            errors.append("SINKGP_MAX_ITER must be at least 1")
        if cls.UNROLL_CAP < 1:
            errors.append("SINKGP_UNROLL_CAP must be at least 1")
        if cls.KERNEL not in ('sqexp', 'exp_norm', 'matern32', 'matern52', 'sinkhorn'):
            errors.append(f"SINKGP_KERNEL '{cls.KERNEL}' is not a kernel family")
        if cls.NOISE is not None and float(cls.NOISE) < 0:
            errors.append("SINKGP_NOISE must be nonnegative")
        if cls.REFERENCE_SIZE < 1:
            errors.append("SINKGP_REFERENCE_SIZE must be at least 1")
        if cls.THREADS < 1:
            errors.append("SINKGP_THREADS must be at least 1")

        if errors:
            raise ValueError("Configuration errors:\n" + "\n".join(f"  - {e}" for e in errors))

        return True


class DevelopmentConfig(Config):
    """Development configuration."""
    LOG_LEVEL = os.environ.get('SINKGP_LOG_LEVEL', 'DEBUG')


class TestingConfig(Config):
    """Testing configuration."""
    THREADS = 1
    LOG_LEVEL = 'WARNING'
    LOG_JSON = False


class ProductionConfig(Config):
    """Batch runs: structured logs, everything else from the environment."""
    LOG_JSON = _env_bool('SINKGP_LOG_JSON', True)

    @classmethod
    def validate(cls):
        super().validate()
        if cls.LOG_FILE and not os.path.isdir(os.path.dirname(os.path.abspath(cls.LOG_FILE))):
            raise ValueError("Configuration errors:\n  - SINKGP_LOG_FILE directory does not exist")
        return True


config = {
    'development': DevelopmentConfig,
    'testing': TestingConfig,
    'production': ProductionConfig,
    'default': Config
}


def get_config(name=None):
    """Return the configuration class selected by name or ``SINKGP_ENV``."""
    name = name or os.environ.get('SINKGP_ENV', 'default')
    if name not in config:
        raise ValueError(f"Unknown configuration '{name}' (choose from {', '.join(sorted(config))})")
    return config[name]
