"""Exit codes and the decorator that turns handler failures into them."""
from __future__ import annotations

import json
import logging
import sys
from functools import wraps

from errors import HomogenizationLabError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_ACCEPTANCE = 4

CATEGORY_CODES = {
    "config": EXIT_CONFIG,
    "solver": EXIT_SOLVER,
    "io": EXIT_SOLVER,
    "acceptance": EXIT_ACCEPTANCE,
}


def _report_failure(error: BaseException, category: str, code: int) -> int:
    payload = {"success": False, "error": str(error), "category": category, "exit_code": code}
    print(json.dumps(payload, indent=2), file=sys.stderr)
    return code


def cli_handler(f):
    """Run a subcommand handler and map its failure to an exit code.

    Handlers return None (success) or an explicit exit code.
    """
    @wraps(f)
    def decorated(*args, **kwargs):
        try:
            code = f(*args, **kwargs)
        except HomogenizationLabError as e:
            code = CATEGORY_CODES.get(e.category, EXIT_SOLVER)
            logger.error("%s failed (%s): %s", f.__name__, e.category, e)
            return _report_failure(e, e.category, code)
        except ValueError as e:
            logger.error("%s rejected its input: %s", f.__name__, e)
            return _report_failure(e, "config", EXIT_CONFIG)
        except Exception as e:
            logger.exception("%s failed", f.__name__)
            return _report_failure(e, "solver", EXIT_SOLVER)
        return EXIT_OK if code is None else int(code)

    return decorated
