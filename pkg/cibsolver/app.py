import sys
import logging
from pathlib import Path
from typing import Any, Optional

from cibsolver.managers.bundlemanager import BundleManager
from cibsolver.managers.configmanager import ConfigManager
from cibsolver.managers.modelmanager import ModelManager

DEFAULT_CONFIG = "solver_config.json"


class SolverContext:
    """
    Owns every manager the command-line surface needs.

    Startup errors (e.g. a broken configuration file) are kept in
    ``init_error`` so the caller decides how to report them.
    """
    def __init__(self, base_dir: Optional[Path] = None, config_path: Optional[Any] = None):
        # 1. paths
        if base_dir is None:
            if getattr(sys, 'frozen', False):
                base_dir = Path(sys.executable).parent
            else:
                # cibsolver/app.py -> repository root
                base_dir = Path(__file__).resolve().parent.parent
        else:
            base_dir = Path(base_dir)

        self.base_dir = base_dir
        self.logger = logging.getLogger("CIBSolver")

        # 2. managers
        self.logger.debug("Initializing managers...")
        model_dir = self.base_dir / "model"
        self.models = ModelManager(model_dir)
        self.bundles = BundleManager()

        if config_path is None and (model_dir / DEFAULT_CONFIG).exists():
            config_path = model_dir / DEFAULT_CONFIG
        self.config = ConfigManager(config_path)

        # 3. configuration
        self.init_error = None
        try:
            self.config.load()
        except Exception as e:
            self.logger.error(f"Configuration loading failed: {e}")
            self.init_error = e

        self.logger.debug("All managers initialized.")

    def close(self):
        """Nothing is held open between commands; kept for symmetry with startup."""
        self.logger.debug("Context closed.")
