import sys
import os
import logging
import traceback

# repository root on the path so `python main.py ...` works from anywhere
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler(sys.stdout)
    ]
)
logger = logging.getLogger("Main")

from cibsolver.cli.mainparser import run


def main():
    """
    CIB-PBE solver entry point.

    Exit codes: 0 success, 1 validation failure, 2 certification failure,
    3 budget exceeded.
    """
    try:
        code = run(sys.argv[1:])
    except SystemExit:
        raise
    except Exception as e:
        logger.error(f"Solver crashed: {e}")
        logger.error(traceback.format_exc())
        sys.exit(1)
    sys.exit(code)


if __name__ == "__main__":
    main()
