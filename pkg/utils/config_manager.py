import os
from typing import Dict, Any, Optional
from pathlib import Path

from dotenv import dotenv_values

from utils import logger

log = logger.customLogger()

DEFAULTS: Dict[str, Any] = {
    'LOG_LEVEL': 'INFO',
    'LOG_DIR': 'logs',
    'LOG_TO_FILE': True,
    'PARALLEL_WORKERS': 4,
    'OUTPUT_DIR': 'results',
    'CSV_FLOAT_DIGITS': 17,
    'ENUMERATION_LEAF_LIMIT': 14,
    'SCAN_TENSOR_EDGE_LIMIT': 6,
    'ENABLE_ALLURE': False,
}


class ConfigManager:
    """Manages runtime settings loaded from environment-specific .env files"""

    def __init__(self, environment: str = "dev"):
        self.environment = environment
        self.config: Dict[str, Any] = dict(DEFAULTS)
        self._load_config()

    def _load_config(self) -> None:
        """Load settings from .env.<environment> on top of the defaults"""
        project_root = Path(__file__).parent.parent
        env_file = project_root / f".env.{self.environment}"

        if not env_file.exists():
            log.warning(f"Environment file not found: {env_file}; using defaults")
            return

        for key, value in dotenv_values(env_file).items():
            if value is None:
                continue
            self.config[key] = self._convert_value(value)

    def _convert_value(self, value: str) -> Any:
        """Convert string values to appropriate Python types"""
        value = value.strip()

        if value.lower() in ('true', 'false'):
            return value.lower() == 'true'

        if value.isdigit():
            return int(value)

        try:
            return float(value)
        except ValueError:
            pass

        return value

    def get(self, key: str, default: Any = None) -> Any:
        """Get a setting; a variable exported in the process environment overrides the file"""
        if key in os.environ:
            return self._convert_value(os.environ[key])
        return self.config.get(key, default)

    def get_numerics_config(self) -> Dict[str, Any]:
        """Limits applied by enumeration oracles and landscape scans"""
        return {
            'enumeration_leaf_limit': int(self.get('ENUMERATION_LEAF_LIMIT')),
            'scan_tensor_edge_limit': int(self.get('SCAN_TENSOR_EDGE_LIMIT')),
        }

    def get_run_config(self) -> Dict[str, Any]:
        """Get experiment execution configuration"""
        return {
            'parallel_workers': int(self.get('PARALLEL_WORKERS')),
            'output_dir': str(self.get('OUTPUT_DIR')),
            'float_digits': int(self.get('CSV_FLOAT_DIGITS')),
            'log_level': str(self.get('LOG_LEVEL')),
        }

    @staticmethod
    def get_environment() -> str:
        """Get current environment from BRANCHFIT_ENV or default to 'dev'"""
        return os.environ.get('BRANCHFIT_ENV', 'dev')


# Global configuration instance
config_manager = None


def get_config(environment: Optional[str] = None) -> ConfigManager:
    """Get global configuration manager instance"""
    global config_manager

    if config_manager is None or (environment and environment != config_manager.environment):
        env = environment or ConfigManager.get_environment()
        config_manager = ConfigManager(env)

    return config_manager
