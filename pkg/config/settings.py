from dataclasses import dataclass
import logging
from dotenv import load_dotenv
import os

load_dotenv()

logger = logging.getLogger(__name__)

LOG_LEVEL = os.getenv('HOMLAB_LOG_LEVEL', 'info')
WORKERS = int(os.getenv('HOMLAB_WORKERS', '1'))
DETERMINISTIC = os.getenv('HOMLAB_DETERMINISTIC', 'false').lower() in {'1', 'true', 'yes'}
OUT_DIR = os.getenv('HOMLAB_OUT_DIR', 'results')
SEED = int(os.getenv('HOMLAB_SEED', '20240101'))
ORACLE_PATH = os.getenv('HOMLAB_ORACLE_PATH', os.path.join('reference', 'oracles.json'))

LOG_LEVELS = {
    'error': 40,
    'warn': 30,
    'info': 20,
    'debug': 10,
}


@dataclass(frozen=True)
class Settings:
    log_level: str
    workers: int
    deterministic: bool
    out_dir: str
    seed: int


def get_settings(**overrides) -> Settings:
    """Environment settings with CLI overrides applied (None means keep the env value)."""
    values = {
        'log_level': LOG_LEVEL,
        'workers': WORKERS,
        'deterministic': DETERMINISTIC,
        'out_dir': OUT_DIR,
        'seed': SEED,
    }
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    if values['log_level'] not in LOG_LEVELS:
        logger.warning("Unknown log level %r, using info", values["log_level"])
        values['log_level'] = 'info'
    if values['workers'] < 1:
        values['workers'] = 1
    return Settings(**values)
